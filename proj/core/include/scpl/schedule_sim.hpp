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
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

namespace scpl::sim {

enum class Strategy { kBpSingleDevice, kNmp, kGpipe, kScpl, kScplGpipe };
enum class Phase { kFw, kLoss, kBw, kUp };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& name);
std::string to_string(Phase p);
Phase parse_phase(const std::string& name);

// Costs in integer time units.
struct LayerCost {
  std::int64_t fw = 0;
  std::int64_t bw = 0;
  std::int64_t loss = 0;
  std::int64_t update = 0;
  std::size_t device = 0;
};

/// One training iteration's workload.
///
/// `loss` is the per-layer local objective cost. End-to-end strategies
/// (bp_single_device, nmp, gpipe) evaluate only the last layer's loss; the
/// decoupled strategies evaluate every layer's. Micro-batching applies to
/// gpipe and scpl_gpipe only and splits fw/bw/loss evenly; updates run once
/// per layer.
struct WorkloadSpec {
  std::vector<LayerCost> layers;
  Strategy strategy = Strategy::kNmp;
  std::size_t micro_batches = 1;
  std::int64_t comm_cost = 0;

  void validate() const;
  std::size_t device_count() const;
  std::size_t effective_micro_batches() const;

  static WorkloadSpec from_json(const nlohmann::json& j);
  nlohmann::json to_json() const;
};

struct Task {
  std::size_t id = 0;
  std::size_t device = 0;
  std::int64_t duration = 0;
  Phase kind = Phase::kFw;
  std::size_t layer = 0;        // 0-based
  std::size_t micro_batch = 0;  // 0-based
};

struct TaskGraph {
  std::vector<Task> tasks;
  std::vector<std::pair<std::size_t, std::size_t>> edges;  // (before, after)
  std::size_t devices = 1;

  bool has_edge(std::size_t before, std::size_t after) const;
  // Id of the task matching (kind, layer, micro_batch); throws when absent.
  std::size_t find(Phase kind, std::size_t layer, std::size_t micro_batch = 0) const;
  std::int64_t total_work() const;
};

struct Interval {
  std::int64_t start = 0;
  std::int64_t end = 0;
  std::size_t task = 0;
  Phase kind = Phase::kFw;
  std::size_t layer = 0;
  std::size_t micro_batch = 0;

  bool operator==(const Interval&) const = default;
};

struct GanttTrace {
  std::vector<std::vector<Interval>> devices;
  std::int64_t makespan = 0;
  std::vector<std::int64_t> busy;

  bool operator==(const GanttTrace&) const = default;
};

TaskGraph build_task_graph(const WorkloadSpec& spec);

/// Deterministic list scheduling: whenever a device is idle it starts the
/// ready task with the smallest (micro_batch, layer, phase, id). Transfers
/// between devices delay successors by `comm_cost`.
GanttTrace simulate(const TaskGraph& graph, const WorkloadSpec& spec);

/// 1 - busy / (devices * makespan); 0 for an empty or zero-length trace.
double bubble_ratio(const GanttTrace& trace);

/// Longest weighted path through the graph, including transfer delays.
std::int64_t critical_path_length(const TaskGraph& graph, std::int64_t comm_cost = 0);

inline constexpr int kGanttSchemaVersion = 1;

nlohmann::json gantt_to_json(const GanttTrace& trace);
GanttTrace gantt_from_json(const nlohmann::json& j);
void export_gantt(const GanttTrace& trace, const std::string& path);
GanttTrace import_gantt(const std::string& path);

struct Summary {
  Strategy strategy = Strategy::kNmp;
  std::int64_t makespan = 0;
  double bubble_ratio = 0.0;
  double speedup_vs_nmp = 1.0;
};

/// Simulates `spec` and the same workload under nmp for the speedup column.
Summary summarize(const WorkloadSpec& spec, GanttTrace* trace = nullptr);

// Two decimals, halves rounded away from zero (2.125 -> "2.13").
std::string format_ratio(double value);
std::string format_summary(const Summary& s);

/// Reference four-layer workload: fw 3, loss 3 and update 3 TU per layer,
/// backward 12, 12, 6, 3 TU from the input layer outward, one layer per
/// device, 3 micro-batches.
WorkloadSpec reference_workload(Strategy strategy = Strategy::kNmp);

}  // namespace scpl::sim
