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

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scpl/data.hpp"
#include "scpl/network.hpp"

namespace scpl {

enum class TrainStrategy { kBp, kEarlyExit, kScpl, kScplPipelined };
enum class LrSchedule { kConstant, kCosine };

// How per-component artificial compute is burned. `sleep` stands in for work
// done on a separate device and overlaps even on one hardware thread; `spin`
// occupies the calling core.
enum class InflationMode { kSleep, kSpin };

std::string to_string(TrainStrategy s);
TrainStrategy parse_train_strategy(const std::string& name);
std::string to_string(LrSchedule s);
LrSchedule parse_lr_schedule(const std::string& name);
std::string to_string(InflationMode m);
InflationMode parse_inflation_mode(const std::string& name);
std::string to_string(SclVariant v);
SclVariant parse_scl_variant(const std::string& name);

struct TrainConfig {
  TrainStrategy strategy = TrainStrategy::kScpl;
  std::size_t epochs = 50;
  std::size_t batch_size = 64;
  std::size_t views = 2;
  double tau = 0.1;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  LrSchedule lr_schedule = LrSchedule::kCosine;
  std::uint64_t seed = 0;
  // Pipelined only. 0 means one worker per component; fewer workers own
  // contiguous runs of components.
  std::size_t workers = 0;
  // Pipelined only. 0 means unbounded.
  std::size_t queue_capacity = 2;
  SclVariant loss_variant = SclVariant::kPerAnchor;
  double aug_noise = 0.1;
  bool aug_flip = false;
  double inflation_ms = 0.0;
  InflationMode inflation_mode = InflationMode::kSleep;
  // Records every component of a mini-batch on one shared tape so the
  // cross-component gradient-buffer count is a real measurement.
  bool audit_blocking = false;
  // Test hook: the worker owning this component (1-based) fails on its first batch.
  std::optional<std::size_t> debug_fail_component;

  void validate() const;
  // Checks against a concrete network (worker count, head presence).
  void validate_for(const ScplNetwork& net) const;
  double learning_rate(std::size_t epoch) const;  // epoch is 0-based

  nlohmann::json to_json() const;
  // Unknown keys are rejected; missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json& j);
};

struct MetricsRecord {
  std::size_t epoch = 0;  // 1-based
  std::vector<double> component_losses;  // mean per mini-batch
  double global_loss = 0.0;              // mean per mini-batch of the summed local losses
  double lr = 0.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double wall_seconds = 0.0;
  double examples_per_second = 0.0;
  std::size_t cross_component_grad_buffers = 0;

  nlohmann::json to_json() const;
};

using EpochCallback = std::function<void(const MetricsRecord&)>;

/// End-to-end backprop through the encoders with one cross-entropy loss.
/// Projection heads, if any, are dropped from `net` first.
std::vector<MetricsRecord> train_bp(ScplNetwork& net, const Dataset& data, const TrainConfig& cfg,
                                    const EpochCallback& on_epoch = {});

/// Local cross-entropy through an auxiliary classifier per hidden component.
/// `net` must be built with HiddenObjective::kAuxiliaryClassifier.
std::vector<MetricsRecord> train_early_exit(ScplNetwork& net, const Dataset& data,
                                            const TrainConfig& cfg,
                                            const EpochCallback& on_epoch = {});

std::vector<MetricsRecord> train_scpl_sequential(ScplNetwork& net, const Dataset& data,
                                                 const TrainConfig& cfg,
                                                 const EpochCallback& on_epoch = {});

/// One thread per worker, bounded queues between consecutive workers, and an
/// epoch barrier before metrics are taken.
std::vector<MetricsRecord> train_scpl_pipelined(ScplNetwork& net, const Dataset& data,
                                                const TrainConfig& cfg,
                                                const EpochCallback& on_epoch = {});

// Dispatches on cfg.strategy.
std::vector<MetricsRecord> train(ScplNetwork& net, const Dataset& data, const TrainConfig& cfg,
                                 const EpochCallback& on_epoch = {});

double accuracy(const ScplNetwork& net, const Dataset& data, const std::vector<std::size_t>& split);

void write_metrics_jsonl(const std::vector<MetricsRecord>& records, const std::string& path);
void write_summary_csv(const std::vector<MetricsRecord>& records, const std::string& path);

}  // namespace scpl
