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

#include "scpl/trainers.hpp"

#include <chrono>
#include <cmath>
#include <condition_variable>
#include <deque>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "scpl/error.hpp"
#include "scpl/rng.hpp"

namespace scpl {

namespace {

using Clock = std::chrono::steady_clock;

template <class Enum, std::size_t N>
Enum parse_enum(const std::string& name, const std::pair<Enum, const char*> (&table)[N],
                const char* what) {
  for (const auto& [value, text] : table)
    if (name == text) return value;
  throw ConfigError(std::string("unknown ") + what + " '" + name + "'");
}

template <class Enum, std::size_t N>
std::string enum_name(Enum value, const std::pair<Enum, const char*> (&table)[N]) {
  for (const auto& [v, text] : table)
    if (v == value) return text;
  return "?";
}

constexpr std::pair<TrainStrategy, const char*> kStrategies[] = {
    {TrainStrategy::kBp, "bp"},
    {TrainStrategy::kEarlyExit, "early_exit"},
    {TrainStrategy::kScpl, "scpl"},
    {TrainStrategy::kScplPipelined, "scpl_pipelined"},
};
constexpr std::pair<LrSchedule, const char*> kSchedules[] = {
    {LrSchedule::kConstant, "constant"},
    {LrSchedule::kCosine, "cosine"},
};
constexpr std::pair<InflationMode, const char*> kInflation[] = {
    {InflationMode::kSleep, "sleep"},
    {InflationMode::kSpin, "spin"},
};
constexpr std::pair<SclVariant, const char*> kVariants[] = {
    {SclVariant::kPerAnchor, "per_anchor"},
    {SclVariant::kGlobalMaskSum, "global_mask_sum"},
};

void burn(const TrainConfig& cfg) {
  if (cfg.inflation_ms <= 0.0) return;
  const auto span = std::chrono::duration<double, std::milli>(cfg.inflation_ms);
  if (cfg.inflation_mode == InflationMode::kSleep) {
    std::this_thread::sleep_for(span);
    return;
  }
  const auto until = Clock::now() + std::chrono::duration_cast<Clock::duration>(span);
  volatile double sink = 0.0;
  while (Clock::now() < until) sink = sink + 1.0;
}

std::vector<ViewBatch> epoch_batches(const Dataset& data, const TrainConfig& cfg, std::size_t epoch) {
  return batches(data, cfg.batch_size, derive_seed(cfg.seed, {0xba7c4}), epoch, cfg.views,
                 AugmentOptions{cfg.aug_noise, cfg.aug_flip});
}

struct EpochStats {
  std::vector<double> loss_sum;
  std::size_t batches = 0;
  std::size_t examples = 0;
  std::size_t foreign = 0;
};

// Forward through one component, hand the detached output to `emit`, then
// the local loss, backward and Adam update.
Tensor process_component(Component& c, const Tensor& input, const std::vector<int>& labels,
                         const TrainConfig& cfg, double lr, Tape* shared, double& loss_sum,
                         std::size_t& foreign, const std::function<void(const Tensor&)>& emit = {}) {
  burn(cfg);
  if (cfg.debug_fail_component && *cfg.debug_fail_component == c.index)
    throw Error("injected failure");
  Tape local;
  Tape& tape = shared ? *shared : local;
  const Tensor encoded = component_encode(tape, c, input);
  const Tensor out = detach(encoded);
  if (emit) emit(out);
  const StepResult r = component_learn(tape, c, encoded, labels, {cfg.tau, cfg.loss_variant});
  if (!std::isfinite(r.loss))
    throw NumericError("component " + std::to_string(c.index) + " loss is not finite");
  apply_update(c, r.grads, lr);
  loss_sum += r.loss;
  foreign += r.foreign_grad_buffers;
  return out;
}

MetricsRecord make_record(const ScplNetwork& net, const Dataset& data, std::size_t epoch, double lr,
                          const EpochStats& stats, double seconds) {
  MetricsRecord rec;
  rec.epoch = epoch + 1;
  rec.lr = lr;
  const double n = stats.batches ? static_cast<double>(stats.batches) : 1.0;
  for (double s : stats.loss_sum) {
    rec.component_losses.push_back(s / n);
    rec.global_loss += s / n;
  }
  rec.cross_component_grad_buffers = stats.foreign;
  rec.wall_seconds = seconds;
  rec.examples_per_second = seconds > 0.0 ? static_cast<double>(stats.examples) / seconds : 0.0;
  try {
    rec.train_accuracy = accuracy(net, data, data.train);
    rec.test_accuracy = accuracy(net, data, data.test);
  } catch (const NumericError& err) {
    throw DivergenceError(epoch + 1, std::string("evaluation: ") + err.what());
  }
  return rec;
}

using BatchFn = std::function<void(const ViewBatch&, double lr, EpochStats&)>;

std::vector<MetricsRecord> run_epochs(ScplNetwork& net, const Dataset& data, const TrainConfig& cfg,
                                      std::size_t loss_slots, const EpochCallback& on_epoch,
                                      const BatchFn& step) {
  std::vector<MetricsRecord> records;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    const double lr = cfg.learning_rate(e);
    const auto bs = epoch_batches(data, cfg, e);
    EpochStats stats;
    stats.loss_sum.assign(loss_slots, 0.0);
    const auto start = Clock::now();
    try {
      for (const auto& b : bs) {
        step(b, lr, stats);
        ++stats.batches;
        stats.examples += b.size() / b.views;
      }
    } catch (const NumericError& err) {
      throw DivergenceError(e + 1, err.what());
    }
    const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
    records.push_back(make_record(net, data, e, lr, stats, seconds));
    if (on_epoch) on_epoch(records.back());
  }
  return records;
}

std::vector<MetricsRecord> train_local(ScplNetwork& net, const Dataset& data, const TrainConfig& cfg,
                                       const EpochCallback& on_epoch) {
  return run_epochs(net, data, cfg, net.components.size(), on_epoch,
                    [&](const ViewBatch& b, double lr, EpochStats& stats) {
                      Tape shared;
                      Tensor h = b.features;
                      for (std::size_t k = 0; k < net.components.size(); ++k)
                        h = process_component(net.components[k], h, b.labels, cfg, lr,
                                              cfg.audit_blocking ? &shared : nullptr,
                                              stats.loss_sum[k], stats.foreign);
                    });
}

// ---------------------------------------------------------------------------
// Pipeline plumbing

// FIFO with optional capacity. close() aborts: blocked callers wake up, push
// fails and pop returns nothing.
template <class T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  bool push(T value) {
    std::unique_lock lock(mu_);
    not_full_.wait(lock, [&] { return closed_ || capacity_ == 0 || items_.size() < capacity_; });
    if (closed_) return false;
    items_.push_back(std::move(value));
    not_empty_.notify_one();
    return true;
  }

  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    not_empty_.wait(lock, [&] { return closed_ || !items_.empty(); });
    if (closed_) return std::nullopt;
    T value = std::move(items_.front());
    items_.pop_front();
    not_full_.notify_one();
    return value;
  }

  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    not_full_.notify_all();
    not_empty_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
  std::deque<T> items_;
  bool closed_ = false;
};

struct Packet {
  enum class Kind { kBatch, kEpochEnd, kStop };
  Kind kind = Kind::kBatch;
  std::size_t epoch = 0;
  Tensor features;
  std::vector<int> labels;
};

struct Report {
  std::size_t worker = 0;
  std::size_t epoch = 0;
  std::vector<double> loss_sum;  // one per owned component
  std::size_t foreign = 0;
  std::exception_ptr error;
  std::size_t failed_component = 0;
};

}  // namespace

// ---------------------------------------------------------------------------
// Config

std::string to_string(TrainStrategy s) { return enum_name(s, kStrategies); }
TrainStrategy parse_train_strategy(const std::string& name) {
  return parse_enum(name, kStrategies, "training strategy");
}
std::string to_string(LrSchedule s) { return enum_name(s, kSchedules); }
LrSchedule parse_lr_schedule(const std::string& name) {
  return parse_enum(name, kSchedules, "lr schedule");
}
std::string to_string(InflationMode m) { return enum_name(m, kInflation); }
InflationMode parse_inflation_mode(const std::string& name) {
  return parse_enum(name, kInflation, "inflation mode");
}
std::string to_string(SclVariant v) { return enum_name(v, kVariants); }
SclVariant parse_scl_variant(const std::string& name) {
  return parse_enum(name, kVariants, "loss variant");
}

void TrainConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("tau must be positive");
  if (lr_min < 0.0 || lr_max <= 0.0) throw ConfigError("learning rates must be positive");
  if (lr_min > lr_max) throw ConfigError("lr_min must not exceed lr_max");
  if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
  if (views != 1 && views != 2) throw ConfigError("views must be 1 or 2");
  if (aug_noise < 0.0) throw ConfigError("aug_noise must be >= 0");
  if (inflation_ms < 0.0) throw ConfigError("inflation_ms must be >= 0");
}

void TrainConfig::validate_for(const ScplNetwork& net) const {
  validate();
  const std::size_t comps = net.components.size();
  switch (strategy) {
    case TrainStrategy::kBp:
      break;
    case TrainStrategy::kEarlyExit:
      if (net.hidden_count() > 0 && net.hidden_objective != HiddenObjective::kAuxiliaryClassifier)
        throw ConfigError("early_exit needs a network built with auxiliary classifiers");
      break;
    case TrainStrategy::kScpl:
    case TrainStrategy::kScplPipelined:
      if (net.hidden_count() > 0 && net.hidden_objective != HiddenObjective::kContrastive)
        throw ConfigError(to_string(strategy) + " needs a network built with projection heads");
      if (strategy == TrainStrategy::kScplPipelined && workers > comps)
        throw ConfigError("workers (" + std::to_string(workers) + ") exceeds the component count (" +
                          std::to_string(comps) + ")");
      break;
  }
}

double TrainConfig::learning_rate(std::size_t epoch) const {
  if (lr_schedule == LrSchedule::kConstant) return lr_max;
  return cosine_lr(static_cast<double>(epoch), static_cast<double>(std::max<std::size_t>(epochs, 1)),
                   lr_max, lr_min);
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json j = {
      {"strategy", to_string(strategy)},
      {"epochs", epochs},
      {"batch_size", batch_size},
      {"views", views},
      {"tau", tau},
      {"lr_max", lr_max},
      {"lr_min", lr_min},
      {"lr_schedule", to_string(lr_schedule)},
      {"seed", seed},
      {"workers", workers},
      {"queue_capacity", queue_capacity},
      {"loss_variant", to_string(loss_variant)},
      {"aug_noise", aug_noise},
      {"aug_flip", aug_flip},
      {"inflation_ms", inflation_ms},
      {"inflation_mode", to_string(inflation_mode)},
      {"audit_blocking", audit_blocking},
  };
  j["debug_fail_component"] =
      debug_fail_component ? nlohmann::json(*debug_fail_component) : nlohmann::json(nullptr);
  return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config must be an object");
  TrainConfig c;
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "strategy") c.strategy = parse_train_strategy(v.get<std::string>());
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "views") c.views = v.get<std::size_t>();
      else if (key == "tau") c.tau = v.get<double>();
      else if (key == "lr_max") c.lr_max = v.get<double>();
      else if (key == "lr_min") c.lr_min = v.get<double>();
      else if (key == "lr_schedule") c.lr_schedule = parse_lr_schedule(v.get<std::string>());
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "workers") c.workers = v.get<std::size_t>();
      else if (key == "queue_capacity") c.queue_capacity = v.get<std::size_t>();
      else if (key == "loss_variant") c.loss_variant = parse_scl_variant(v.get<std::string>());
      else if (key == "aug_noise") c.aug_noise = v.get<double>();
      else if (key == "aug_flip") c.aug_flip = v.get<bool>();
      else if (key == "inflation_ms") c.inflation_ms = v.get<double>();
      else if (key == "inflation_mode") c.inflation_mode = parse_inflation_mode(v.get<std::string>());
      else if (key == "audit_blocking") c.audit_blocking = v.get<bool>();
      else if (key == "debug_fail_component") {
        if (v.is_null()) c.debug_fail_component.reset();
        else c.debug_fail_component = v.get<std::size_t>();
      } else {
        throw ConfigError("unknown train key '" + key + "'");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json MetricsRecord::to_json() const {
  return {{"epoch", epoch},
          {"component_losses", component_losses},
          {"global_loss", global_loss},
          {"lr", lr},
          {"train_accuracy", train_accuracy},
          {"test_accuracy", test_accuracy},
          {"wall_seconds", wall_seconds},
          {"examples_per_second", examples_per_second},
          {"cross_component_grad_buffers", cross_component_grad_buffers}};
}

// ---------------------------------------------------------------------------
// Trainers

double accuracy(const ScplNetwork& net, const Dataset& data, const std::vector<std::size_t>& split) {
  if (split.empty()) return 0.0;
  constexpr std::size_t kChunk = 512;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < split.size(); start += kChunk) {
    const std::size_t len = std::min(kChunk, split.size() - start);
    std::span<const std::size_t> idx(split.data() + start, len);
    const auto pred = predict(net, data.gather(idx));
    for (std::size_t i = 0; i < len; ++i)
      if (pred[i] == data.labels[idx[i]]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(split.size());
}

std::vector<MetricsRecord> train_bp(ScplNetwork& net, const Dataset& data, const TrainConfig& cfg,
                                    const EpochCallback& on_epoch) {
  cfg.validate_for(net);
  if (net.has_heads()) net = strip_heads(net);
  return run_epochs(net, data, cfg, 1, on_epoch, [&](const ViewBatch& b, double lr, EpochStats& stats) {
    Tape tape;
    Tensor h = b.features;
    for (const auto& c : net.components) {
      burn(cfg);
      h = forward(tape, c.encoder, h);
    }
    const Tensor loss = cross_entropy(tape, h, b.labels);
    if (!std::isfinite(loss.item())) throw NumericError("loss is not finite");
    const Gradients grads = tape.backward(loss);
    for (auto& c : net.components) {
      GradMap g;
      for (const auto* p : c.parameters())
        if (const auto node = tape.keyed_node(p->id))
          if (const auto buf = grads.of(*node)) g.emplace(p->id, std::vector<double>(buf->begin(), buf->end()));
      apply_update(c, g, lr);
    }
    stats.loss_sum[0] += loss.item();
  });
}

std::vector<MetricsRecord> train_early_exit(ScplNetwork& net, const Dataset& data,
                                            const TrainConfig& cfg, const EpochCallback& on_epoch) {
  cfg.validate_for(net);
  if (net.hidden_count() > 0 && net.hidden_objective != HiddenObjective::kAuxiliaryClassifier)
    throw ConfigError("early_exit needs a network built with auxiliary classifiers");
  return train_local(net, data, cfg, on_epoch);
}

std::vector<MetricsRecord> train_scpl_sequential(ScplNetwork& net, const Dataset& data,
                                                 const TrainConfig& cfg,
                                                 const EpochCallback& on_epoch) {
  cfg.validate_for(net);
  return train_local(net, data, cfg, on_epoch);
}

std::vector<MetricsRecord> train_scpl_pipelined(ScplNetwork& net, const Dataset& data,
                                                const TrainConfig& cfg,
                                                const EpochCallback& on_epoch) {
  cfg.validate_for(net);
  const std::size_t comps = net.components.size();
  const std::size_t workers = cfg.workers == 0 ? comps : cfg.workers;

  // Worker w owns components [first[w], first[w + 1]).
  std::vector<std::size_t> first(workers + 1);
  for (std::size_t w = 0; w <= workers; ++w) first[w] = w * comps / workers;

  std::vector<std::unique_ptr<BoundedQueue<Packet>>> inbox;
  for (std::size_t w = 0; w < workers; ++w)
    inbox.push_back(std::make_unique<BoundedQueue<Packet>>(cfg.queue_capacity));
  BoundedQueue<Report> reports(0);

  const auto worker_loop = [&](std::size_t w) {
    BoundedQueue<Packet>* next = w + 1 < workers ? inbox[w + 1].get() : nullptr;
    Report pending{w, 0, std::vector<double>(first[w + 1] - first[w], 0.0), 0, nullptr, 0};
    std::size_t current = first[w];
    try {
      while (auto packet = inbox[w]->pop()) {
        if (packet->kind == Packet::Kind::kStop) {
          if (next) next->push(std::move(*packet));
          return;
        }
        if (packet->kind == Packet::Kind::kEpochEnd) {
          pending.epoch = packet->epoch;
          if (next && !next->push(*packet)) return;
          reports.push(pending);
          std::fill(pending.loss_sum.begin(), pending.loss_sum.end(), 0.0);
          pending.foreign = 0;
          continue;
        }
        const double lr = cfg.learning_rate(packet->epoch);
        Tape shared;
        Tensor h = packet->features;
        for (std::size_t k = first[w]; k < first[w + 1]; ++k) {
          current = k;
          const bool last_owned = k + 1 == first[w + 1];
          std::function<void(const Tensor&)> emit;
          if (last_owned && next)
            emit = [&](const Tensor& out) { next->push(Packet{Packet::Kind::kBatch, packet->epoch, out, packet->labels}); };
          h = process_component(net.components[k], h, packet->labels, cfg, lr,
                                cfg.audit_blocking ? &shared : nullptr, pending.loss_sum[k - first[w]],
                                pending.foreign, emit);
        }
      }
    } catch (...) {
      Report failure{w, 0, {}, 0, std::current_exception(), net.components[current].index};
      reports.push(std::move(failure));
      // Unblock every other stage and the feeder.
      for (auto& q : inbox) q->close();
    }
  };

  std::vector<std::thread> threads;
  for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(worker_loop, w);

  const auto shutdown = [&](bool abort) {
    if (abort) {
      for (auto& q : inbox) q->close();
    } else {
      inbox[0]->push(Packet{Packet::Kind::kStop, 0, {}, {}});
    }
    for (auto& t : threads) t.join();
  };

  std::vector<MetricsRecord> records;
  try {
    for (std::size_t e = 0; e < cfg.epochs; ++e) {
      const double lr = cfg.learning_rate(e);
      const auto bs = epoch_batches(data, cfg, e);
      EpochStats stats;
      stats.loss_sum.assign(comps, 0.0);
      const auto start = Clock::now();
      for (const auto& b : bs) {
        if (!inbox[0]->push(Packet{Packet::Kind::kBatch, e, b.features, b.labels})) break;
        ++stats.batches;
        stats.examples += b.size() / b.views;
      }
      inbox[0]->push(Packet{Packet::Kind::kEpochEnd, e, {}, {}});

      // Epoch barrier: every worker has drained its inbox once all reports are in.
      for (std::size_t got = 0; got < workers; ++got) {
        auto r = reports.pop();
        if (r->error) {
          const std::size_t failed = r->failed_component;
          try {
            std::rethrow_exception(r->error);
          } catch (const NumericError& err) {
            throw DivergenceError(e + 1, "component " + std::to_string(failed) + ": " + err.what());
          } catch (const std::exception& err) {
            throw Error("pipeline worker for component " + std::to_string(failed) +
                        " failed: " + err.what());
          }
        }
        for (std::size_t k = 0; k < r->loss_sum.size(); ++k)
          stats.loss_sum[first[r->worker] + k] = r->loss_sum[k];
        stats.foreign += r->foreign;
      }
      const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
      records.push_back(make_record(net, data, e, lr, stats, seconds));
      if (on_epoch) on_epoch(records.back());
    }
  } catch (...) {
    shutdown(true);
    throw;
  }
  shutdown(false);
  return records;
}

std::vector<MetricsRecord> train(ScplNetwork& net, const Dataset& data, const TrainConfig& cfg,
                                 const EpochCallback& on_epoch) {
  switch (cfg.strategy) {
    case TrainStrategy::kBp: return train_bp(net, data, cfg, on_epoch);
    case TrainStrategy::kEarlyExit: return train_early_exit(net, data, cfg, on_epoch);
    case TrainStrategy::kScpl: return train_scpl_sequential(net, data, cfg, on_epoch);
    case TrainStrategy::kScplPipelined: return train_scpl_pipelined(net, data, cfg, on_epoch);
  }
  throw ConfigError("unknown training strategy");
}

void write_metrics_jsonl(const std::vector<MetricsRecord>& records, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  for (const auto& r : records) os << r.to_json().dump() << '\n';
  if (!os) throw IoError("failed writing " + path);
}

void write_summary_csv(const std::vector<MetricsRecord>& records, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "epoch,global_loss,lr,train_accuracy,test_accuracy,wall_seconds,examples_per_second\n";
  os.precision(10);
  for (const auto& r : records)
    os << r.epoch << ',' << r.global_loss << ',' << r.lr << ',' << r.train_accuracy << ','
       << r.test_accuracy << ',' << r.wall_seconds << ',' << r.examples_per_second << '\n';
  if (!os) throw IoError("failed writing " + path);
}

}  // namespace scpl
