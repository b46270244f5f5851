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

#include "scpl/schedule_sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <queue>
#include <sstream>
#include <tuple>

#include "scpl/error.hpp"

namespace scpl::sim {

namespace {

bool micro_batched(Strategy s) { return s == Strategy::kGpipe || s == Strategy::kScplGpipe; }
bool decoupled(Strategy s) { return s == Strategy::kScpl || s == Strategy::kScplGpipe; }

class GraphBuilder {
 public:
  GraphBuilder(TaskGraph& graph) : graph_(graph) {}

  std::size_t add(Phase kind, std::size_t layer, std::size_t mb, std::size_t device,
                  std::int64_t duration) {
    const std::size_t id = graph_.tasks.size();
    graph_.tasks.push_back(Task{id, device, duration, kind, layer, mb});
    index_[{kind, layer, mb}] = id;
    return id;
  }

  std::size_t at(Phase kind, std::size_t layer, std::size_t mb) const {
    return index_.at({kind, layer, mb});
  }

  void edge(std::size_t before, std::size_t after) { graph_.edges.emplace_back(before, after); }

 private:
  TaskGraph& graph_;
  std::map<std::tuple<Phase, std::size_t, std::size_t>, std::size_t> index_;
};

std::vector<std::vector<std::size_t>> predecessors(const TaskGraph& g) {
  std::vector<std::vector<std::size_t>> preds(g.tasks.size());
  for (const auto& [a, b] : g.edges) preds.at(b).push_back(a);
  return preds;
}

std::vector<std::vector<std::size_t>> successors(const TaskGraph& g) {
  std::vector<std::vector<std::size_t>> succ(g.tasks.size());
  for (const auto& [a, b] : g.edges) succ.at(a).push_back(b);
  return succ;
}

// Kahn order; throws on a cycle.
std::vector<std::size_t> topological_order(const TaskGraph& g) {
  const auto succ = successors(g);
  std::vector<std::size_t> indegree(g.tasks.size(), 0);
  for (const auto& e : g.edges) ++indegree[e.second];
  std::vector<std::size_t> order, frontier;
  for (std::size_t i = 0; i < g.tasks.size(); ++i)
    if (indegree[i] == 0) frontier.push_back(i);
  while (!frontier.empty()) {
    const auto t = frontier.back();
    frontier.pop_back();
    order.push_back(t);
    for (auto s : succ[t])
      if (--indegree[s] == 0) frontier.push_back(s);
  }
  if (order.size() != g.tasks.size()) throw Error("task graph has a cycle");
  return order;
}

std::int64_t transfer(const TaskGraph& g, std::size_t a, std::size_t b, std::int64_t comm) {
  return g.tasks[a].device == g.tasks[b].device ? 0 : comm;
}

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::kBpSingleDevice: return "bp_single_device";
    case Strategy::kNmp: return "nmp";
    case Strategy::kGpipe: return "gpipe";
    case Strategy::kScpl: return "scpl";
    case Strategy::kScplGpipe: return "scpl_gpipe";
  }
  return "nmp";
}

Strategy parse_strategy(const std::string& name) {
  for (auto s : {Strategy::kBpSingleDevice, Strategy::kNmp, Strategy::kGpipe, Strategy::kScpl,
                 Strategy::kScplGpipe})
    if (to_string(s) == name) return s;
  throw ConfigError("unknown schedule strategy '" + name + "'");
}

std::string to_string(Phase p) {
  switch (p) {
    case Phase::kFw: return "FW";
    case Phase::kLoss: return "LOSS";
    case Phase::kBw: return "BW";
    case Phase::kUp: return "UP";
  }
  return "FW";
}

Phase parse_phase(const std::string& name) {
  for (auto p : {Phase::kFw, Phase::kLoss, Phase::kBw, Phase::kUp})
    if (to_string(p) == name) return p;
  throw ConfigError("unknown phase '" + name + "'");
}

// ---------------------------------------------------------------------------
// WorkloadSpec

void WorkloadSpec::validate() const {
  if (layers.empty()) throw ConfigError("workload needs at least one layer");
  if (micro_batches < 1) throw ConfigError("micro_batches must be >= 1");
  if (comm_cost < 0) throw ConfigError("comm_cost must be >= 0");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& c = layers[l];
    if (c.fw < 0 || c.bw < 0 || c.loss < 0 || c.update < 0)
      throw ConfigError("layer " + std::to_string(l) + " has a negative cost");
  }
  if (strategy != Strategy::kBpSingleDevice) {
    std::vector<bool> used(layers.size(), false);
    for (const auto& c : layers) {
      if (c.device >= layers.size())
        throw ConfigError("device " + std::to_string(c.device) + " leaves a gap in the device map");
      used[c.device] = true;
    }
    const std::size_t count = device_count();
    for (std::size_t d = 0; d < count; ++d)
      if (!used[d]) throw ConfigError("device " + std::to_string(d) + " has no layer assigned");
  }
  const std::size_t m = effective_micro_batches();
  if (m > 1) {
    const auto divisible = [m](std::int64_t v) { return v % static_cast<std::int64_t>(m) == 0; };
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto& c = layers[l];
      const bool loss_used = decoupled(strategy) || l + 1 == layers.size();
      if (!divisible(c.fw) || !divisible(c.bw) || (loss_used && !divisible(c.loss)))
        throw ConfigError("layer " + std::to_string(l) + " costs are not divisible by " +
                          std::to_string(m) + " micro-batches");
    }
  }
}

std::size_t WorkloadSpec::device_count() const {
  if (strategy == Strategy::kBpSingleDevice) return 1;
  std::size_t hi = 0;
  for (const auto& c : layers) hi = std::max(hi, c.device);
  return layers.empty() ? 0 : hi + 1;
}

std::size_t WorkloadSpec::effective_micro_batches() const {
  return micro_batched(strategy) ? micro_batches : 1;
}

WorkloadSpec WorkloadSpec::from_json(const nlohmann::json& j) {
  WorkloadSpec spec;
  try {
    spec.strategy = parse_strategy(j.value("strategy", std::string("nmp")));
    spec.micro_batches = j.value("micro_batches", std::size_t{1});
    spec.comm_cost = j.value("comm_cost", std::int64_t{0});
    for (std::size_t l = 0; l < j.at("layers").size(); ++l) {
      const auto& lj = j.at("layers").at(l);
      LayerCost c;
      c.fw = lj.value("fw", std::int64_t{0});
      c.bw = lj.value("bw", std::int64_t{0});
      c.loss = lj.value("loss", std::int64_t{0});
      c.update = lj.value("update", std::int64_t{0});
      c.device = lj.value("device", l);
      spec.layers.push_back(c);
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("workload config: ") + e.what());
  }
  spec.validate();
  return spec;
}

nlohmann::json WorkloadSpec::to_json() const {
  nlohmann::json layers_json = nlohmann::json::array();
  for (const auto& c : layers)
    layers_json.push_back(
        {{"fw", c.fw}, {"bw", c.bw}, {"loss", c.loss}, {"update", c.update}, {"device", c.device}});
  return {{"strategy", to_string(strategy)},
          {"micro_batches", micro_batches},
          {"comm_cost", comm_cost},
          {"layers", layers_json}};
}

// ---------------------------------------------------------------------------
// Graph construction

bool TaskGraph::has_edge(std::size_t before, std::size_t after) const {
  return std::find(edges.begin(), edges.end(), std::make_pair(before, after)) != edges.end();
}

std::size_t TaskGraph::find(Phase kind, std::size_t layer, std::size_t micro_batch) const {
  for (const auto& t : tasks)
    if (t.kind == kind && t.layer == layer && t.micro_batch == micro_batch) return t.id;
  throw Error("no " + to_string(kind) + " task for layer " + std::to_string(layer) +
              ", micro-batch " + std::to_string(micro_batch));
}

std::int64_t TaskGraph::total_work() const {
  std::int64_t total = 0;
  for (const auto& t : tasks) total += t.duration;
  return total;
}

TaskGraph build_task_graph(const WorkloadSpec& spec) {
  spec.validate();
  TaskGraph graph;
  graph.devices = spec.device_count();
  GraphBuilder b(graph);
  const std::size_t layers = spec.layers.size();
  const std::size_t last = layers - 1;
  const std::size_t m = spec.effective_micro_batches();
  const auto mm = static_cast<std::int64_t>(m);
  const auto device = [&](std::size_t l) {
    return spec.strategy == Strategy::kBpSingleDevice ? 0 : spec.layers[l].device;
  };

  // Forward: each micro-batch flows through the layers in order, and a
  // layer handles micro-batches in order.
  for (std::size_t k = 0; k < m; ++k)
    for (std::size_t l = 0; l < layers; ++l) {
      const auto t = b.add(Phase::kFw, l, k, device(l), spec.layers[l].fw / mm);
      if (l > 0) b.edge(b.at(Phase::kFw, l - 1, k), t);
      if (k > 0) b.edge(b.at(Phase::kFw, l, k - 1), t);
    }

  if (decoupled(spec.strategy)) {
    // Local objective per layer: loss and backward depend only on the
    // layer's own forward.
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t l = 0; l < layers; ++l) {
        const auto loss = b.add(Phase::kLoss, l, k, device(l), spec.layers[l].loss / mm);
        b.edge(b.at(Phase::kFw, l, k), loss);
        const auto bw = b.add(Phase::kBw, l, k, device(l), spec.layers[l].bw / mm);
        b.edge(loss, bw);
      }
  } else {
    // One loss at the output; backward follows the chain rule from the last
    // layer inward. With micro-batches, backward starts once every
    // micro-batch's loss is in (the forward/backward flush).
    for (std::size_t k = 0; k < m; ++k) {
      const auto loss = b.add(Phase::kLoss, last, k, device(last), spec.layers[last].loss / mm);
      b.edge(b.at(Phase::kFw, last, k), loss);
    }
    for (std::size_t k = 0; k < m; ++k)
      for (std::size_t l = layers; l-- > 0;) {
        const auto bw = b.add(Phase::kBw, l, k, device(l), spec.layers[l].bw / mm);
        if (l == last) {
          for (std::size_t j = 0; j < m; ++j) b.edge(b.at(Phase::kLoss, last, j), bw);
        } else {
          b.edge(b.at(Phase::kBw, l + 1, k), bw);
        }
      }
  }

  for (std::size_t l = 0; l < layers; ++l) {
    const auto up = b.add(Phase::kUp, l, 0, device(l), spec.layers[l].update);
    for (std::size_t k = 0; k < m; ++k) b.edge(b.at(Phase::kBw, l, k), up);
  }
  return graph;
}

// ---------------------------------------------------------------------------
// Simulation

GanttTrace simulate(const TaskGraph& graph, const WorkloadSpec& spec) {
  topological_order(graph);
  const std::size_t n = graph.tasks.size();
  const auto preds = predecessors(graph);
  const auto succ = successors(graph);
  const std::int64_t comm = spec.comm_cost;

  GanttTrace trace;
  trace.devices.resize(graph.devices);
  trace.busy.assign(graph.devices, 0);

  std::vector<std::size_t> waiting(n);
  std::vector<std::int64_t> ready_at(n, 0);
  std::vector<bool> ready(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    waiting[i] = preds[i].size();
    ready[i] = waiting[i] == 0;
  }
  std::vector<std::int64_t> device_free(graph.devices, 0);
  using Event = std::pair<std::int64_t, std::size_t>;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> running;
  std::size_t done = 0;

  const auto complete = [&](std::size_t id, std::int64_t finish) {
    ++done;
    for (auto s : succ[id]) {
      ready_at[s] = std::max(ready_at[s], finish + transfer(graph, id, s, comm));
      if (--waiting[s] == 0) ready[s] = true;
    }
  };
  const auto priority = [&](std::size_t id) {
    const Task& t = graph.tasks[id];
    return std::make_tuple(t.micro_batch, t.layer, static_cast<int>(t.kind), t.id);
  };

  std::int64_t now = 0;
  while (done < n) {
    while (!running.empty() && running.top().first <= now) {
      complete(running.top().second, running.top().first);
      running.pop();
    }
    bool started = true;
    while (started) {
      started = false;
      for (std::size_t d = 0; d < graph.devices; ++d) {
        if (device_free[d] > now) continue;
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
          if (!ready[i] || graph.tasks[i].device != d || ready_at[i] > now) continue;
          if (best == n || priority(i) < priority(best)) best = i;
        }
        if (best == n) continue;
        const Task& t = graph.tasks[best];
        ready[best] = false;
        const std::int64_t finish = now + t.duration;
        trace.devices[d].push_back(Interval{now, finish, t.id, t.kind, t.layer, t.micro_batch});
        trace.busy[d] += t.duration;
        trace.makespan = std::max(trace.makespan, finish);
        device_free[d] = finish;
        if (t.duration == 0) {
          complete(best, finish);
        } else {
          running.emplace(finish, best);
        }
        started = true;
      }
    }
    if (done == n) break;

    std::int64_t next = running.empty() ? -1 : running.top().first;
    for (std::size_t i = 0; i < n; ++i)
      if (ready[i] && ready_at[i] > now && (next < 0 || ready_at[i] < next)) next = ready_at[i];
    for (std::size_t d = 0; d < graph.devices; ++d)
      if (device_free[d] > now && (next < 0 || device_free[d] < next)) next = device_free[d];
    if (next < 0) throw Error("simulation stalled with " + std::to_string(n - done) + " tasks left");
    now = next;
  }
  return trace;
}

double bubble_ratio(const GanttTrace& trace) {
  if (trace.makespan <= 0 || trace.devices.empty()) return 0.0;
  std::int64_t busy = 0;
  for (auto b : trace.busy) busy += b;
  return 1.0 - static_cast<double>(busy) /
                   (static_cast<double>(trace.devices.size()) * static_cast<double>(trace.makespan));
}

std::int64_t critical_path_length(const TaskGraph& graph, std::int64_t comm_cost) {
  const auto order = topological_order(graph);
  const auto preds = predecessors(graph);
  std::vector<std::int64_t> finish(graph.tasks.size(), 0);
  std::int64_t longest = 0;
  for (auto id : order) {
    std::int64_t start = 0;
    for (auto p : preds[id]) start = std::max(start, finish[p] + transfer(graph, p, id, comm_cost));
    finish[id] = start + graph.tasks[id].duration;
    longest = std::max(longest, finish[id]);
  }
  return longest;
}

// ---------------------------------------------------------------------------
// Gantt I/O

nlohmann::json gantt_to_json(const GanttTrace& trace) {
  nlohmann::json devices = nlohmann::json::array();
  for (std::size_t d = 0; d < trace.devices.size(); ++d) {
    nlohmann::json intervals = nlohmann::json::array();
    for (const auto& iv : trace.devices[d])
      intervals.push_back({{"start", iv.start},
                           {"end", iv.end},
                           {"task", iv.task},
                           {"kind", to_string(iv.kind)},
                           {"layer", iv.layer},
                           {"micro_batch", iv.micro_batch}});
    devices.push_back({{"id", d}, {"busy", trace.busy[d]}, {"intervals", intervals}});
  }
  return {{"schema_version", kGanttSchemaVersion}, {"makespan", trace.makespan}, {"devices", devices}};
}

GanttTrace gantt_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kGanttSchemaVersion)
      throw IoError("unsupported gantt schema version " + j.at("schema_version").dump());
    GanttTrace trace;
    trace.makespan = j.at("makespan").get<std::int64_t>();
    for (const auto& dj : j.at("devices")) {
      std::vector<Interval> intervals;
      for (const auto& ij : dj.at("intervals"))
        intervals.push_back(Interval{ij.at("start").get<std::int64_t>(), ij.at("end").get<std::int64_t>(),
                                     ij.at("task").get<std::size_t>(),
                                     parse_phase(ij.at("kind").get<std::string>()),
                                     ij.at("layer").get<std::size_t>(),
                                     ij.at("micro_batch").get<std::size_t>()});
      trace.devices.push_back(std::move(intervals));
      trace.busy.push_back(dj.at("busy").get<std::int64_t>());
    }
    return trace;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("gantt json: ") + e.what());
  }
}

void export_gantt(const GanttTrace& trace, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << gantt_to_json(trace).dump(2) << '\n';
  if (!os) throw IoError("failed writing " + path);
}

GanttTrace import_gantt(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open " + path);
  try {
    return gantt_from_json(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("gantt json: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Summaries

Summary summarize(const WorkloadSpec& spec, GanttTrace* trace) {
  const GanttTrace t = simulate(build_task_graph(spec), spec);
  WorkloadSpec baseline = spec;
  baseline.strategy = Strategy::kNmp;
  const GanttTrace base = simulate(build_task_graph(baseline), baseline);

  Summary s;
  s.strategy = spec.strategy;
  s.makespan = t.makespan;
  s.bubble_ratio = bubble_ratio(t);
  s.speedup_vs_nmp = t.makespan > 0 ? static_cast<double>(base.makespan) / static_cast<double>(t.makespan) : 1.0;
  if (trace) *trace = t;
  return s;
}

std::string format_ratio(double value) {
  const double rounded = std::round(value * 100.0) / 100.0;
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(2);
  os << rounded;
  return os.str();
}

std::string format_summary(const Summary& s) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(4);
  os << "strategy=" << to_string(s.strategy) << " makespan=" << s.makespan
     << " bubble_ratio=" << s.bubble_ratio << " speedup_vs_nmp=" << format_ratio(s.speedup_vs_nmp) << "x";
  return os.str();
}

WorkloadSpec reference_workload(Strategy strategy) {
  WorkloadSpec spec;
  spec.strategy = strategy;
  spec.micro_batches = 3;
  const std::int64_t backward[] = {12, 12, 6, 3};
  for (std::size_t l = 0; l < 4; ++l) spec.layers.push_back(LayerCost{3, backward[l], 3, 3, l});
  return spec;
}

}  // namespace scpl::sim
