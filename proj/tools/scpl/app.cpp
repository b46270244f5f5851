// Copyright 2026 The SCPL Authors
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

#include "app.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include "scpl/error.hpp"
#include "scpl/gradcheck.hpp"
#include "scpl/schedule_sim.hpp"

namespace scpl::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::string out = "out";
  std::vector<std::string> overrides;

  // simulate
  bool all = false;

  // gradcheck
  std::size_t cases = 100;
  std::uint64_t seed = 2024;
  bool inject_relu_fault = false;

  // bench
  std::vector<std::size_t> workers = {1, 2, 4};
  double inflation_ms = 5.0;
  std::string inflation_mode = "sleep";
  std::size_t bench_epochs = 1;
};

fs::path prepare_out(const std::string& dir) {
  fs::path p(dir);
  fs::create_directories(p);
  return p;
}

HiddenObjective objective_for(TrainStrategy s) {
  return s == TrainStrategy::kEarlyExit ? HiddenObjective::kAuxiliaryClassifier
                                        : HiddenObjective::kContrastive;
}

struct TrainSetup {
  nlohmann::json resolved;
  TrainConfig cfg;
  NetworkTemplate tmpl;
};

TrainSetup load_train_setup(const Options& o) {
  nlohmann::json file = o.config.empty() ? nlohmann::json::object() : read_json_file(o.config);
  TrainSetup s;
  s.resolved = resolve_train_config(file);
  apply_overrides(s.resolved, o.overrides);
  s.cfg = TrainConfig::from_json(s.resolved.at("train"));
  s.tmpl = template_from_config(s.resolved.at("model"));
  return s;
}

void check_shapes(const NetworkTemplate& t, const Dataset& data) {
  if (t.sample_shape() != data.sample_shape)
    throw ConfigError("model expects samples of shape " + to_string(t.sample_shape()) +
                      " but the data has " + to_string(data.sample_shape));
  if (data.num_classes > t.num_classes())
    throw ConfigError("data has " + std::to_string(data.num_classes) + " classes but the model only " +
                      std::to_string(t.num_classes()));
}

int cmd_train(const Options& o, std::ostream& out) {
  TrainSetup s = load_train_setup(o);
  const fs::path dir = prepare_out(o.out);
  write_json_file(s.resolved, (dir / "resolved_config.json").string());

  const Dataset data = dataset_from_config(s.resolved.at("data"));
  check_shapes(s.tmpl, data);
  ScplNetwork net = build_from_template(s.tmpl, s.cfg.seed, objective_for(s.cfg.strategy));
  s.cfg.validate_for(net);

  out << "strategy=" << to_string(s.cfg.strategy) << " components=" << net.components.size()
      << " train=" << data.train.size() << " test=" << data.test.size() << " tau=" << s.cfg.tau << '\n';
  const auto records = train(net, data, s.cfg, [&](const MetricsRecord& r) {
    out << "epoch " << r.epoch << " loss " << std::setprecision(6) << r.global_loss << " train_acc "
        << r.train_accuracy << " test_acc " << r.test_accuracy << '\n';
  });
  write_metrics_jsonl(records, (dir / "metrics.jsonl").string());
  write_summary_csv(records, (dir / "summary.csv").string());
  save_checkpoint(net, (dir / "checkpoint.bin").string());
  const double acc = records.empty() ? accuracy(net, data, data.test) : records.back().test_accuracy;
  out << "final test accuracy: " << std::fixed << std::setprecision(4) << acc << '\n';
  return kOk;
}

int cmd_simulate(const Options& o, std::ostream& out) {
  nlohmann::json spec_json = o.config.empty() ? sim::reference_workload().to_json() : read_json_file(o.config);
  apply_overrides(spec_json, o.overrides);
  const sim::WorkloadSpec spec = sim::WorkloadSpec::from_json(spec_json);
  const fs::path dir = prepare_out(o.out);
  write_json_file(spec.to_json(), (dir / "resolved_config.json").string());

  if (!o.all) {
    sim::GanttTrace trace;
    const auto summary = sim::summarize(spec, &trace);
    sim::export_gantt(trace, (dir / ("gantt_" + sim::to_string(spec.strategy) + ".json")).string());
    out << sim::format_summary(summary) << '\n';
    return kOk;
  }

  out << std::left << std::setw(12) << "strategy" << std::setw(10) << "makespan" << std::setw(14)
      << "bubble_ratio" << "speedup_vs_nmp\n";
  for (auto strategy : {sim::Strategy::kNmp, sim::Strategy::kGpipe, sim::Strategy::kScpl,
                        sim::Strategy::kScplGpipe}) {
    sim::WorkloadSpec row = spec;
    row.strategy = strategy;
    sim::GanttTrace trace;
    const auto summary = sim::summarize(row, &trace);
    sim::export_gantt(trace, (dir / ("gantt_" + sim::to_string(strategy) + ".json")).string());
    std::ostringstream ratio;
    ratio << std::fixed << std::setprecision(4) << summary.bubble_ratio;
    out << std::left << std::setw(12) << sim::to_string(strategy) << std::setw(10) << summary.makespan
        << std::setw(14) << ratio.str() << sim::format_ratio(summary.speedup_vs_nmp) << "x\n";
  }
  return kOk;
}

int cmd_gradcheck(const Options& o, std::ostream& out) {
  GradcheckOptions opts;
  opts.cases_per_check = o.cases;
  opts.seed = o.seed;
  debug::set_relu_gradient_fault(o.inject_relu_fault);
  const auto results = run_gradcheck_suite(opts);
  debug::set_relu_gradient_fault(false);

  std::vector<std::string> failed;
  for (const auto& r : results) {
    out << (r.passed ? "PASS " : "FAIL ") << std::left << std::setw(26) << r.name << " cases=" << r.cases
        << " max_error=" << std::scientific << std::setprecision(3) << r.max_error;
    if (r.tolerance > 0.0) out << " tol=" << r.tolerance;
    if (!r.detail.empty()) out << " (" << r.detail << ")";
    out << std::defaultfloat << '\n';
    if (!r.passed) failed.push_back(r.name);
  }
  if (failed.empty()) {
    out << "all " << results.size() << " checks passed\n";
    return kOk;
  }
  out << failed.size() << " check(s) failed:";
  for (const auto& f : failed) out << ' ' << f;
  out << '\n';
  return kVerificationFailed;
}

int cmd_bench(const Options& o, std::ostream& out, std::ostream& err) {
  TrainSetup s = load_train_setup(o);
  s.cfg.epochs = o.bench_epochs;
  s.cfg.inflation_ms = o.inflation_ms;
  s.cfg.inflation_mode = parse_inflation_mode(o.inflation_mode);
  s.cfg.validate();
  s.resolved["train"] = s.cfg.to_json();
  s.resolved["bench"] = {{"workers", o.workers}};
  const fs::path dir = prepare_out(o.out);
  write_json_file(s.resolved, (dir / "resolved_config.json").string());

  const Dataset data = dataset_from_config(s.resolved.at("data"));
  check_shapes(s.tmpl, data);
  const std::size_t comps = s.tmpl.hidden_components() + 1;
  const unsigned hw = std::thread::hardware_concurrency();

  struct Row {
    std::string mode;
    std::size_t workers;
    double seconds;
    double throughput;
  };
  std::vector<Row> rows;
  const auto run_once = [&](TrainStrategy strategy, std::size_t workers) {
    TrainConfig cfg = s.cfg;
    cfg.strategy = strategy;
    cfg.workers = workers;
    ScplNetwork net = build_from_template(s.tmpl, cfg.seed);
    const auto records = train(net, data, cfg);
    double seconds = 0.0, examples = 0.0;
    for (const auto& r : records) {
      seconds += r.wall_seconds;
      examples += r.examples_per_second * r.wall_seconds;
    }
    const double n = records.empty() ? 1.0 : static_cast<double>(records.size());
    rows.push_back({to_string(strategy), strategy == TrainStrategy::kScpl ? 1 : workers, seconds / n,
                    seconds > 0 ? examples / seconds : 0.0});
  };

  run_once(TrainStrategy::kScpl, 1);
  for (auto w : o.workers) {
    if (w == 0 || w > comps) {
      err << "warning: skipping workers=" << w << " (network has " << comps << " components)\n";
      continue;
    }
    if (hw != 0 && w > hw)
      err << "warning: workers=" << w << " exceeds the " << hw << " hardware thread(s) available\n";
    run_once(TrainStrategy::kScplPipelined, w);
  }

  const double base = rows.front().seconds;
  std::ofstream csv(dir / "bench.csv");
  csv << "mode,workers,epoch_seconds,examples_per_second,speedup_vs_sequential\n";
  out << std::left << std::setw(16) << "mode" << std::setw(9) << "workers" << std::setw(15) << "epoch_seconds"
      << std::setw(21) << "examples_per_second" << "speedup\n";
  for (const auto& r : rows) {
    const double speedup = r.seconds > 0 ? base / r.seconds : 0.0;
    out << std::left << std::setw(16) << r.mode << std::setw(9) << r.workers << std::setw(15) << std::fixed
        << std::setprecision(4) << r.seconds << std::setw(21) << std::setprecision(1) << r.throughput
        << std::setprecision(2) << speedup << "x\n";
    csv << r.mode << ',' << r.workers << ',' << r.seconds << ',' << r.throughput << ',' << speedup << '\n';
  }
  out << std::defaultfloat;
  return kOk;
}

int cmd_gen_data(const Options& o, std::ostream& out) {
  nlohmann::json data_cfg = {{"classes", 3}, {"dim", 16}, {"per_class", 300}, {"spread", 1.0}, {"seed", 0}};
  if (!o.config.empty()) {
    const auto file = read_json_file(o.config);
    const auto& body = file.contains("data") ? file["data"] : file;
    for (const auto& [key, value] : body.items())
      if (data_cfg.contains(key)) data_cfg[key] = value;
  }
  apply_overrides(data_cfg, o.overrides);
  const fs::path dir = prepare_out(o.out);
  write_json_file(data_cfg, (dir / "resolved_config.json").string());

  nlohmann::json full = {{"data", data_cfg}};
  full["data"]["source"] = "blobs";
  for (const char* key : {"path", "label_column", "images", "labels", "test_fraction", "split_seed"})
    full["data"][key] = resolve_train_config(nlohmann::json::object())["data"][key];
  const Dataset data = dataset_from_config(full["data"]);

  std::vector<std::size_t> all(data.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  write_csv(data, all, (dir / "data.csv").string());
  nlohmann::json sidecar = data.provenance;
  sidecar["train"] = data.train;
  sidecar["test"] = data.test;
  write_json_file(sidecar, (dir / "provenance.json").string());
  out << "wrote " << data.size() << " samples to " << (dir / "data.csv").string() << "\nchecksum "
      << data.provenance.value("checksum", std::string()) << '\n';
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Decoupled contrastive training engine and pipeline schedule simulator", "scpl"};
  app.require_subcommand(1);
  Options o;

  const auto common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("-c,--config", o.config, "JSON config file");
    if (needs_config) opt->required();
    sub->add_option("-o,--out", o.out, "Output directory (created if absent)");
    sub->add_option("overrides", o.overrides, "key=value overrides, dotted keys allowed");
  };

  auto* train = app.add_subcommand("train", "Train a network and write metrics and a checkpoint");
  common(train, true);

  auto* simulate = app.add_subcommand("simulate", "Simulate one training iteration's schedule");
  common(simulate, false);
  simulate->add_flag("--all", o.all, "Compare nmp, gpipe, scpl and scpl_gpipe on the workload");

  auto* gradcheck = app.add_subcommand("gradcheck", "Run the finite-difference gradient suite");
  gradcheck->add_option("--cases", o.cases, "Seeded cases per check")->check(CLI::PositiveNumber);
  gradcheck->add_option("--seed", o.seed, "Base seed");
  gradcheck->add_flag("--inject-relu-fault", o.inject_relu_fault,
                      "Use a wrong relu derivative to show the suite catches it");

  auto* bench = app.add_subcommand("bench", "Time sequential against pipelined training");
  common(bench, true);
  bench->add_option("--workers", o.workers, "Worker counts to time")->delimiter(',');
  bench->add_option("--inflation-ms", o.inflation_ms, "Artificial compute per component per batch");
  bench->add_option("--inflation-mode", o.inflation_mode, "sleep or spin")
      ->check(CLI::IsMember({"sleep", "spin"}));
  bench->add_option("--epochs", o.bench_epochs, "Epochs per timing run")->check(CLI::PositiveNumber);

  auto* gen = app.add_subcommand("gen-data", "Generate a Gaussian blob dataset");
  common(gen, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kConfigError;
  }

  try {
    if (*train) return cmd_train(o, out);
    if (*simulate) return cmd_simulate(o, out);
    if (*gradcheck) return cmd_gradcheck(o, out);
    if (*bench) return cmd_bench(o, out, err);
    if (*gen) return cmd_gen_data(o, out);
  } catch (const DivergenceError& e) {
    err << "error: " << e.what() << '\n';
    return kDiverged;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << '\n';
    return kConfigError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kVerificationFailed;
  }
  return kConfigError;
}

}  // namespace scpl::cli
