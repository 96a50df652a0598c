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

// coopdet train | eval | sweep | report
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 numerical failure.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "coopdet/experiment.hpp"

namespace fs = std::filesystem;
using namespace coopdet;

namespace {

void write_text(const fs::path& p, const std::string& s) {
  std::ofstream o(p);
  if (!o) throw std::runtime_error("cannot write " + p.string());
  o << s;
}

void print_log(const TrainLogRow& r) {
  std::cout << "step " << r.step << "  loss " << r.loss << "  aux " << r.aux << "  coop " << r.coop << "  lr "
            << r.lr << "  |g| " << r.grad_norm << "  " << std::fixed << std::setprecision(1) << r.seconds << "s"
            << std::defaultfloat << std::setprecision(6) << std::endl;
}

void print_eval(const EvalReport& r) {
  std::cout << std::left << std::setw(14) << "method";
  for (const double t : r.thresholds) std::cout << std::setw(10) << threshold_label(t);
  std::cout << "payload MB/frame\n";
  for (const auto& m : r.methods) {
    std::cout << std::setw(14) << to_string(m.method) << std::fixed << std::setprecision(4);
    for (const auto& a : m.ap) std::cout << std::setw(10) << a.ap;
    std::cout << std::setprecision(6) << m.comm.mean_payload() / 1e6 << std::defaultfloat << '\n';
  }
  std::cout << std::right;
}

// Eval config: the checkpoint's own, or a file whose model section must agree.
ExperimentConfig eval_config(const LoadedModel& lm, const std::string& override_path) {
  if (override_path.empty()) return lm.config;
  auto c = load_experiment(override_path);
  if (to_json(c)["model"] != to_json(lm.config)["model"] || c.scene.range.x_max != lm.config.scene.range.x_max ||
      c.scene.range.y_max != lm.config.scene.range.y_max)
    throw ConfigError("config model section does not match the checkpoint");
  return c;
}

std::vector<Method> parse_methods(const std::vector<std::string>& names, const ExperimentConfig& c) {
  if (names.empty()) return methods_of(c);
  std::vector<Method> out;
  for (const auto& n : names) {
    try {
      out.push_back(method_from_string(n));
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  return out;
}

int train_cmd(const std::string& config, const std::string& out) {
  const auto c = load_experiment(config);
  fs::create_directories(out);
  write_text(fs::path(out) / "config.json", to_json(c).dump(2) + "\n");
  CoopModel<float> model(c.model);
  std::cout << "parameters: " << model.parameters().scalar_count() << std::endl;
  TrainResult r;
  try {
    r = run_train(model, c, print_log);
  } catch (const NumericalError& e) {
    write_text(fs::path(out) / "numerical_failure.json", e.dump().dump(2) + "\n");
    throw;
  }
  write_loss_curve((fs::path(out) / "loss_curve.csv").string(), r);
  save_checkpoint((fs::path(out) / "model.ckpt").string(), c, model);
  std::cout << "trained " << r.steps << " steps in " << r.seconds << " s" << (r.time_limited ? " (time limit)" : "")
            << "\n";
  return 0;
}

int eval_cmd(const std::string& ckpt, const std::string& config, const std::vector<std::string>& methods,
             const std::string& out) {
  const auto lm = load_checkpoint(ckpt);
  const auto c = eval_config(lm, config);
  const auto rep = run_eval(*lm.model, c, parse_methods(methods, c));
  print_eval(rep);
  fs::create_directories(out);
  write_text(fs::path(out) / "eval.json", to_json(rep).dump(2) + "\n");
  write_text(fs::path(out) / "eval.csv", eval_csv(rep));
  return 0;
}

int sweep_cmd(const std::string& ckpt, const std::string& config, const std::vector<std::string>& methods,
              const std::string& out) {
  std::optional<LoadedModel> lm;
  ExperimentConfig c;
  if (!ckpt.empty()) {
    lm = load_checkpoint(ckpt);
    c = eval_config(*lm, config);
  } else if (!config.empty()) {
    c = load_experiment(config);
  } else {
    throw ConfigError("sweep needs --checkpoint or --config");
  }
  if (c.sweep.axis != "num_queries" && !lm) throw ConfigError("sweep over " + c.sweep.axis + " needs --checkpoint");
  const auto rows = run_sweep(lm ? lm->model.get() : nullptr, c, parse_methods(methods, c),
                              [&](double v, const EvalReport& r) {
                                std::cout << c.sweep.axis << " = " << v << "\n";
                                print_eval(r);
                              });
  fs::create_directories(out);
  write_text(fs::path(out) / "sweep.csv", sweep_csv(c.sweep.axis, rows));
  json j = json::array();
  for (const auto& r : rows) j.push_back({{"value", r.value}, {"report", to_json(r.report)}});
  write_text(fs::path(out) / "sweep.json", json{{"axis", c.sweep.axis}, {"rows", j}}.dump(2) + "\n");
  return 0;
}

int report_cmd(const std::string& dir) {
  bool any = false;
  for (const auto* name : {"eval.csv", "sweep.csv", "loss_curve.csv"}) {
    const auto p = fs::path(dir) / name;
    if (!fs::exists(p)) continue;
    any = true;
    std::ifstream in(p);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    std::cout << "== " << name << " (" << (lines.empty() ? 0 : lines.size() - 1) << " rows)\n";
    if (std::string(name) == "loss_curve.csv" && lines.size() > 3) {
      std::cout << lines[0] << '\n' << lines[1] << "\n...\n" << lines.back() << '\n';
    } else {
      for (const auto& l : lines) std::cout << l << '\n';
    }
  }
  if (!any) throw std::runtime_error("no reports found in " + dir);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"coopdet: cooperative query-based 3D detection experiments"};
  app.require_subcommand(1);
  std::string config, out = "run", ckpt, dir = "run";
  std::vector<std::string> methods;

  auto* train = app.add_subcommand("train", "train a model and write a checkpoint and loss curve");
  train->add_option("-c,--config", config, "experiment JSON")->required()->check(CLI::ExistingFile);
  train->add_option("-o,--out", out, "run directory");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("-k,--checkpoint", ckpt, "checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("-c,--config", config, "eval config (model section must match)")->check(CLI::ExistingFile);
  eval->add_option("-m,--methods", methods, "coop, no_fusion, late_fusion, without_sqm");
  eval->add_option("-o,--out", out, "output directory");

  auto* sweep = app.add_subcommand("sweep", "evaluate across one axis (num_queries retrains)");
  sweep->add_option("-k,--checkpoint", ckpt, "checkpoint file")->check(CLI::ExistingFile);
  sweep->add_option("-c,--config", config, "experiment JSON with a sweep section")->check(CLI::ExistingFile);
  sweep->add_option("-m,--methods", methods, "methods to evaluate per setting");
  sweep->add_option("-o,--out", out, "output directory");

  auto* report = app.add_subcommand("report", "print the reports found in a run directory");
  report->add_option("-d,--dir", dir, "run directory");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return train_cmd(config, out);
    if (*eval) return eval_cmd(ckpt, config, methods, out);
    if (*sweep) return sweep_cmd(ckpt, config, methods, out);
    if (*report) return report_cmd(dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const SceneError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n' << e.dump().dump(2) << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
