// Copyright 2026 The coopdet Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Training loop, multi-scene evaluation and parameter sweeps.

#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "coopdet/ad/optim.hpp"
#include "coopdet/checkpoint.hpp"
#include "coopdet/config.hpp"
#include "coopdet/model.hpp"

namespace coopdet {

// Non-finite loss or gradient. `dump` carries enough state to reproduce.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, json dump) : std::runtime_error(what), dump_(std::move(dump)) {}
  const json& dump() const { return dump_; }

 private:
  json dump_;
};

inline std::uint64_t split_seed(std::uint64_t root, std::uint64_t a, std::uint64_t b = 0) {
  return detail::noise_seed_for(root ^ 0x9e3779b97f4a7c15ull, a, int(b & 0x7fffffff));
}

inline Scene training_scene(const ExperimentConfig& c, long step) {
  const auto i = std::size_t(step % c.train.train_scenes);
  return generate_scene(c.scene_for(i), c.train.scene_seed + i);
}

inline Scene evaluation_scene(const ExperimentConfig& c, int i) {
  return generate_scene(c.scene_for(std::size_t(i)), c.eval.scene_seed + std::uint64_t(i));
}

// Targets for the fused output: boxes in the ego range that at least one
// agent actually sees.
inline std::vector<Box3D> cooperative_targets(const Scene& s, const DetectionRange& r, int min_points) {
  std::vector<Box3D> out;
  for (const auto& g : boxes_in_frame(s.boxes, s.agents[0], r)) {
    int best = 0;
    for (const auto& c : s.clouds) best = std::max(best, count_points_on(c, g.object_id));
    if (best >= min_points) out.push_back(g.box);
  }
  return out;
}

struct LossParts {
  double aux = 0, coop = 0;
};

template <typename T>
ad::Tensor<T> training_loss(const CoopModel<T>& model, const ExperimentConfig& c, const Scene& s,
                            std::uint64_t step_seed, LossParts* parts = nullptr) {
  const auto& t = c.train;
  const auto& range = model.range();
  std::vector<AgentQueries<T>> finals;
  std::vector<AgentPose> rel;
  ad::Tensor<T> aux;
  for (std::size_t a = 0; a < s.agents.size(); ++a) {
    const auto trace = model.perceive(s.clouds[a], split_seed(s.seed, a, 1));
    if (t.aux_loss) {
      std::vector<Box3D> gts;
      for (const auto& g : visible_boxes(s.boxes, s.clouds[a], range, c.scene.min_points)) gts.push_back(g.box);
      for (const auto& layer : trace.layers) {
        const auto l = set_loss(model.detect_local(layer), layer.refs, gts, t.loss).loss;
        aux = aux.defined() ? ad::add(aux, l) : l;
      }
    }
    finals.push_back(trace.layers.back());
    AgentPose p = s.agents[a];
    if (a > 0 && (t.pose_noise.sigma_xyz > 0 || t.pose_noise.sigma_heading > 0))
      p = apply_pose_noise(p, t.pose_noise, split_seed(step_seed, a, 2));
    rel.push_back(relative_pose(s.agents[0], p));
  }
  const auto fr = model.fuse(finals, rel, FusionMode::coop, c.model.fusion.mu);
  auto coop = set_loss(fr.head, fr.refs, cooperative_targets(s, range, c.scene.min_points), t.loss).loss;
  auto total = ad::scale(coop, T(t.coop_weight));
  if (aux.defined()) {
    aux = ad::scale(aux, T(t.aux_weight / double(s.agents.size())));
    total = ad::add(total, aux);
  }
  if (parts) {
    parts->coop = double(coop.item());
    parts->aux = aux.defined() ? double(aux.item()) : 0.0;
  }
  return total;
}

struct TrainLogRow {
  long step = 0;
  double loss = 0, aux = 0, coop = 0, lr = 0, grad_norm = 0, seconds = 0;
};

struct TrainResult {
  long steps = 0;
  bool time_limited = false;
  double seconds = 0;
  std::vector<TrainLogRow> log;  // every step
};

using TrainCallback = std::function<void(const TrainLogRow&)>;

inline TrainResult run_train(CoopModel<float>& model, const ExperimentConfig& c, const TrainCallback& on_log = {}) {
  const auto& t = c.train;
  auto& store = model.parameters();
  ad::AdamW<float> opt(store, {0.9, 0.999, 1e-8, t.weight_decay, t.grad_clip});
  const ad::CosineSchedule sched{t.lr, t.warmup_lr, t.min_lr, t.warmup_steps, t.steps};
  TrainResult res;
  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
  for (long step = 0; step < t.steps; ++step) {
    if (t.time_limit_s > 0 && elapsed() > t.time_limit_s) {
      res.time_limited = true;
      break;
    }
    const auto scene = training_scene(c, step);
    const auto step_seed = split_seed(c.seed, std::uint64_t(step));
    const double lr = sched.at(step);
    ad::Tape<float> tape;
    LossParts parts;
    double loss_value = 0;
    {
      ad::TapeScope<float> scope(tape);
      store.zero_grad();
      const auto loss = training_loss(model, c, scene, step_seed, &parts);
      loss_value = double(loss.item());
      if (!std::isfinite(loss_value))
        throw NumericalError("non-finite loss at step " + std::to_string(step),
                             {{"step", step}, {"scene_seed", scene.seed}, {"aux", parts.aux}, {"coop", parts.coop},
                              {"lr", lr}});
      tape.backward(loss);
    }
    if (!opt.step(lr)) {
      json bad = json::array();
      for (const auto& [name, p] : store.entries()) {
        if (!p.has_grad()) continue;
        for (const float g : p.grad())
          if (!std::isfinite(g)) {
            bad.push_back(name);
            break;
          }
      }
      throw NumericalError("non-finite gradient at step " + std::to_string(step),
                           {{"step", step}, {"scene_seed", scene.seed}, {"loss", loss_value}, {"lr", lr},
                            {"parameters", bad}});
    }
    TrainLogRow row{step, loss_value, parts.aux, parts.coop, lr, opt.last_grad_norm(), elapsed()};
    res.log.push_back(row);
    if (on_log && (step % t.log_every == 0 || step + 1 == t.steps)) on_log(row);
    res.steps = step + 1;
  }
  res.seconds = elapsed();
  return res;
}

inline void write_loss_curve(const std::string& path, const TrainResult& r) {
  std::ofstream o(path);
  o << "step,loss,aux,coop,lr,grad_norm,seconds\n" << std::setprecision(9);
  for (const auto& x : r.log)
    o << x.step << ',' << x.loss << ',' << x.aux << ',' << x.coop << ',' << x.lr << ',' << x.grad_norm << ','
      << x.seconds << '\n';
}

// ---------------------------------------------------------------------------
// Evaluation.

struct MethodReport {
  Method method = Method::coop;
  std::vector<ApResult> ap;  // one per IoU threshold
  CommReport comm;
};

struct EvalReport {
  std::vector<double> thresholds;
  int scenes = 0;
  std::vector<MethodReport> methods;

  const MethodReport& get(Method m) const {
    for (const auto& r : methods)
      if (r.method == m) return r;
    throw std::out_of_range("method not evaluated: " + to_string(m));
  }
  double ap(Method m, double thr) const {
    for (std::size_t i = 0; i < thresholds.size(); ++i)
      if (thresholds[i] == thr) return get(m).ap[i].ap;
    throw std::out_of_range("threshold not evaluated");
  }
};

inline PipelineOptions pipeline_options(const ExperimentConfig& c, Method m) {
  PipelineOptions o;
  o.method = m;
  o.mu = c.eval.mu.value_or(c.model.fusion.mu);
  o.budget_bytes = c.eval.budget_bytes;
  o.pose_noise = c.eval.pose_noise;
  o.noise_seed = c.eval.noise_seed;
  o.late_nms_iou = c.eval.late_nms_iou;
  o.coop_nms_iou = c.eval.coop_nms_iou;
  return o;
}

// Runs `fn(i)` for i in [0, n) on a pool; results must be written by index.
inline void parallel_for(int n, int workers, const std::function<void(int)>& fn) {
  if (workers <= 0) workers = int(std::max(1u, std::thread::hardware_concurrency()));
  workers = std::min(workers, std::max(n, 1));
  std::atomic<int> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto work = [&] {
    for (int i; (i = next.fetch_add(1)) < n;) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }
  if (error) std::rethrow_exception(error);
}

inline EvalReport run_eval(const CoopModel<float>& model, const ExperimentConfig& c,
                           const std::vector<Method>& methods) {
  const int n = c.eval.scenes;
  std::vector<std::vector<FrameResult>> frames(methods.size(), std::vector<FrameResult>(std::size_t(n)));
  std::vector<std::vector<FrameOutput>> outs(methods.size(), std::vector<FrameOutput>(std::size_t(n)));
  parallel_for(n, c.eval.workers, [&](int i) {
    const auto scene = evaluation_scene(c, i);
    const auto gts = ego_ground_truth(scene, model.range());
    for (std::size_t m = 0; m < methods.size(); ++m) {
      auto out = run_frame(model, scene, pipeline_options(c, methods[m]));
      frames[m][std::size_t(i)] = {out.detections, gts};
      out.detections.clear();
      outs[m][std::size_t(i)] = std::move(out);
    }
  });
  EvalReport rep;
  rep.thresholds = c.eval.iou_thresholds;
  rep.scenes = n;
  for (std::size_t m = 0; m < methods.size(); ++m) {
    MethodReport mr;
    mr.method = methods[m];
    for (const double thr : rep.thresholds) mr.ap.push_back(average_precision(frames[m], thr));
    for (const auto& o : outs[m]) {
      mr.comm.payload_per_frame.push_back(o.payload_bytes);
      mr.comm.metadata_per_frame.push_back(o.metadata_bytes);
    }
    rep.methods.push_back(std::move(mr));
  }
  return rep;
}

inline std::vector<Method> methods_of(const ExperimentConfig& c) {
  std::vector<Method> out;
  for (const auto& s : c.eval.methods) out.push_back(method_from_string(s));
  return out;
}

inline std::string threshold_label(double t) {
  std::ostringstream s;
  s << "ap@" << t;
  return s.str();
}

inline json to_json(const EvalReport& r) {
  json methods = json::array();
  for (const auto& m : r.methods) {
    json ap = json::object();
    for (std::size_t i = 0; i < r.thresholds.size(); ++i)
      ap[threshold_label(r.thresholds[i])] = {{"ap", m.ap[i].ap},
                                              {"num_gt", m.ap[i].num_gt},
                                              {"num_det", m.ap[i].num_det},
                                              {"true_positives", m.ap[i].true_positives}};
    const auto log2 = m.comm.log2_mean_payload();
    methods.push_back({{"method", to_string(m.method)},
                       {"ap", ap},
                       {"payload_bytes_total", m.comm.total_payload()},
                       {"metadata_bytes_total", m.comm.total_metadata()},
                       {"payload_bytes_mean", m.comm.mean_payload()},
                       {"payload_mb_mean", m.comm.mean_payload() / 1e6},
                       {"log2_payload_mean", log2 ? json(*log2) : json(nullptr)}});
  }
  return {{"scenes", r.scenes}, {"iou_thresholds", r.thresholds}, {"methods", methods}};
}

inline std::string eval_csv(const EvalReport& r) {
  std::ostringstream o;
  o << "method";
  for (const double t : r.thresholds) o << ',' << threshold_label(t);
  o << ",payload_bytes_mean,metadata_bytes_mean\n" << std::setprecision(6);
  for (const auto& m : r.methods) {
    o << to_string(m.method);
    for (const auto& a : m.ap) o << ',' << a.ap;
    const double frames = double(std::max<std::size_t>(m.comm.payload_per_frame.size(), 1));
    o << ',' << m.comm.mean_payload() << ',' << double(m.comm.total_metadata()) / frames << '\n';
  }
  return o.str();
}

// ---------------------------------------------------------------------------
// Sweeps. mu, noise and budget reuse the given weights; num_queries retrains.

struct SweepRow {
  double value = 0;
  EvalReport report;
};

using SweepProgress = std::function<void(double value, const EvalReport&)>;

inline ExperimentConfig with_setting(ExperimentConfig c, const std::string& axis, double v) {
  if (axis == "mu") {
    c.eval.mu = v;
  } else if (axis == "noise") {
    c.eval.pose_noise.sigma_xyz = v;
  } else if (axis == "budget") {
    c.eval.budget_bytes = std::uint64_t(std::llround(v));
  } else if (axis == "num_queries") {
    c.model.decoder.num_queries = int(std::llround(v));
  } else {
    throw ConfigError("unknown sweep axis " + axis);
  }
  return c;
}

inline std::vector<SweepRow> run_sweep(const CoopModel<float>* trained, const ExperimentConfig& c,
                                       const std::vector<Method>& methods, const SweepProgress& progress = {},
                                       const TrainCallback& on_log = {}) {
  std::vector<SweepRow> rows;
  for (const double v : c.sweep.values) {
    const auto cv = with_setting(c, c.sweep.axis, v);
    SweepRow row{v, {}};
    if (c.sweep.axis == "num_queries" || trained == nullptr) {
      CoopModel<float> model(cv.model);
      run_train(model, cv, on_log);
      row.report = run_eval(model, cv, methods);
    } else {
      row.report = run_eval(*trained, cv, methods);
    }
    if (progress) progress(v, row.report);
    rows.push_back(std::move(row));
  }
  return rows;
}

inline std::string sweep_csv(const std::string& axis, const std::vector<SweepRow>& rows) {
  std::ostringstream o;
  o << axis << ",method";
  if (!rows.empty())
    for (const double t : rows[0].report.thresholds) o << ',' << threshold_label(t);
  o << ",payload_bytes_mean,payload_mb_mean\n" << std::setprecision(6);
  for (const auto& r : rows)
    for (const auto& m : r.report.methods) {
      o << r.value << ',' << to_string(m.method);
      for (const auto& a : m.ap) o << ',' << a.ap;
      o << ',' << m.comm.mean_payload() << ',' << m.comm.mean_payload() / 1e6 << '\n';
    }
  return o.str();
}

}  // namespace coopdet
