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

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "scpl/error.hpp"
#include "scpl/optim.hpp"
#include "scpl/trainers.hpp"

namespace scpl {
namespace {

const HeadSpec kSmallHead{HeadKind::kMlp, 16, 8};

std::vector<double> flat_parameters(const ScplNetwork& net) {
  std::vector<double> out;
  for (const auto& c : net.components)
    for (const auto* p : c.parameters()) out.insert(out.end(), p->value.data().begin(), p->value.data().end());
  return out;
}

Dataset small_blobs(std::size_t classes = 3, std::uint64_t seed = 3) {
  return gen_blobs(BlobParams{classes, 8, 60, 1.0, seed});
}

TrainConfig quick_config(TrainStrategy s, std::size_t epochs = 3) {
  TrainConfig cfg;
  cfg.strategy = s;
  cfg.epochs = epochs;
  cfg.batch_size = 32;
  cfg.seed = 5;
  return cfg;
}

TEST(Adam, FirstStepMovesEachWeightByLr) {
  Parameter p = make_parameter("w", Tensor({3}, {1.0, -2.0, 0.5}));
  AdamState state;
  GradMap g{{p.id, {0.3, -7.0, 1e-3}}};
  Parameter* ps[] = {&p};
  adam_step(state, ps, g, 0.01);
  // Bias correction makes the first step sign(g) * lr up to eps.
  EXPECT_NEAR(p.value[0], 1.0 - 0.01, 1e-7);
  EXPECT_NEAR(p.value[1], -2.0 + 0.01, 1e-7);
  EXPECT_NEAR(p.value[2], 0.5 - 0.01, 1e-4);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, ZeroGradientLeavesParameterUnchanged) {
  Parameter p = make_parameter("w", Tensor({2}, {4.0, -1.0}));
  AdamState state;
  Parameter* ps[] = {&p};
  for (int i = 0; i < 5; ++i) adam_step(state, ps, GradMap{{p.id, {0.0, 0.0}}}, 0.1);
  EXPECT_EQ(p.value[0], 4.0);
  EXPECT_EQ(p.value[1], -1.0);
}

TEST(Adam, MinimisesQuadratic) {
  Parameter p = make_parameter("w", Tensor({1}, {3.0}));
  AdamState state;
  Parameter* ps[] = {&p};
  double prev = 9.0;
  for (int i = 0; i < 200; ++i) {
    adam_step(state, ps, GradMap{{p.id, {2.0 * p.value[0]}}}, 0.05);
    const double now = p.value[0] * p.value[0];
    if (i < 40) EXPECT_LT(now, prev);
    prev = now;
  }
  EXPECT_LT(std::abs(p.value[0]), 0.1);
}

TEST(Adam, MissingGradientNamesParameter) {
  Parameter p = make_parameter("c2.f.linear.bias", Tensor({1}, {0.0}));
  AdamState state;
  Parameter* ps[] = {&p};
  try {
    adam_step(state, ps, GradMap{}, 0.1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("c2.f.linear.bias"), std::string::npos);
  }
}

TEST(Schedule, CosineEndpointsAndMidpoint) {
  EXPECT_DOUBLE_EQ(cosine_lr(0, 50, 1e-3, 1e-5), 1e-3);
  EXPECT_NEAR(cosine_lr(50, 50, 1e-3, 1e-5), 1e-5, 1e-18);
  EXPECT_NEAR(cosine_lr(25, 50, 1e-3, 1e-5), 5.05e-4, 1e-15);
  TrainConfig cfg;
  cfg.lr_schedule = LrSchedule::kConstant;
  EXPECT_EQ(cfg.learning_rate(17), cfg.lr_max);
}

TEST(Config, JsonRoundTripAndUnknownKeys) {
  TrainConfig cfg = quick_config(TrainStrategy::kScplPipelined, 7);
  cfg.loss_variant = SclVariant::kGlobalMaskSum;
  cfg.debug_fail_component = 2;
  const TrainConfig back = TrainConfig::from_json(cfg.to_json());
  EXPECT_EQ(back.to_json(), cfg.to_json());
  auto j = cfg.to_json();
  j["epochz"] = 3;
  EXPECT_THROW(TrainConfig::from_json(j), ConfigError);
}

TEST(Config, InvalidValuesRejected) {
  TrainConfig cfg;
  cfg.tau = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.views = 3;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = TrainConfig{};
  cfg.strategy = TrainStrategy::kScplPipelined;
  cfg.workers = 9;
  EXPECT_THROW(cfg.validate_for(build_from_template(NetworkTemplate::mlp({8, 8, 3}), 1)), ConfigError);
  EXPECT_THROW(parse_train_strategy("backprop"), ConfigError);
}

TEST(Bp, SeparatesTwoBlobs) {
  const Dataset data = gen_blobs(BlobParams{2, 8, 150, 1.0, 4});
  auto net = build_from_template(NetworkTemplate::mlp({8, 16, 2}, Activation::kRelu, kSmallHead), 2);
  auto cfg = quick_config(TrainStrategy::kBp, 20);
  cfg.lr_max = 1e-2;
  const auto records = train(net, data, cfg);
  EXPECT_FALSE(net.has_heads());
  EXPECT_GE(records.back().test_accuracy, 0.99);
}

TEST(Trainers, ZeroEpochsLeaveParametersUntouched) {
  const Dataset data = small_blobs();
  for (auto s : {TrainStrategy::kScpl, TrainStrategy::kScplPipelined}) {
    auto net = build_from_template(NetworkTemplate::mlp({8, 8, 3}, Activation::kRelu, kSmallHead), 2);
    const auto before = flat_parameters(net);
    auto cfg = quick_config(s, 0);
    EXPECT_TRUE(train(net, data, cfg).empty());
    EXPECT_EQ(flat_parameters(net), before);
  }
}

TEST(Trainers, MemorisesTinyDataset) {
  Dataset data;
  data.sample_shape = {2};
  data.features = {1.0, 0.2, -0.4, 1.0, 0.3, -1.0, -1.0, -0.1};
  data.labels = {0, 1, 2, 3};
  data.num_classes = 4;
  data.train = {0, 1, 2, 3};
  auto net = build_from_template(NetworkTemplate::mlp({2, 16, 4}), 1);
  auto cfg = quick_config(TrainStrategy::kBp, 300);
  cfg.views = 1;
  cfg.batch_size = 4;
  cfg.lr_max = 5e-2;
  cfg.lr_schedule = LrSchedule::kConstant;
  train(net, data, cfg);
  EXPECT_EQ(accuracy(net, data, data.train), 1.0);
}

TEST(Scpl, WithoutHiddenComponentsMatchesBpBitwise) {
  const Dataset data = small_blobs();
  auto a = build_from_template(NetworkTemplate::mlp({8, 3}), 7);
  auto b = build_from_template(NetworkTemplate::mlp({8, 3}), 7);
  auto cfg = quick_config(TrainStrategy::kScpl, 2);
  const auto ra = train_scpl_sequential(a, data, cfg);
  const auto rb = train_bp(b, data, cfg);
  EXPECT_EQ(flat_parameters(a), flat_parameters(b));
  EXPECT_EQ(ra.back().global_loss, rb.back().global_loss);
}

TEST(Scpl, PipelineMatchesSequentialBitwise) {
  const Dataset data = small_blobs();
  const auto tmpl = NetworkTemplate::mlp({8, 12, 12, 12, 3}, Activation::kRelu, kSmallHead);
  auto seq = build_from_template(tmpl, 3);
  const auto rs = train_scpl_sequential(seq, data, quick_config(TrainStrategy::kScpl));
  for (std::size_t workers : {1u, 2u, 4u})
    for (std::size_t capacity : {0u, 1u, 3u}) {
      auto pip = build_from_template(tmpl, 3);
      auto cfg = quick_config(TrainStrategy::kScplPipelined);
      cfg.workers = workers;
      cfg.queue_capacity = capacity;
      const auto rp = train_scpl_pipelined(pip, data, cfg);
      EXPECT_EQ(flat_parameters(pip), flat_parameters(seq)) << workers << " workers, capacity " << capacity;
      ASSERT_EQ(rp.size(), rs.size());
      EXPECT_EQ(rp.back().component_losses, rs.back().component_losses);
    }
}

TEST(Scpl, SameSeedSameRun) {
  const Dataset data = small_blobs();
  const auto tmpl = NetworkTemplate::mlp({8, 8, 3}, Activation::kRelu, kSmallHead);
  auto a = build_from_template(tmpl, 1);
  auto b = build_from_template(tmpl, 1);
  const auto ra = train(a, data, quick_config(TrainStrategy::kScpl));
  const auto rb = train(b, data, quick_config(TrainStrategy::kScpl));
  EXPECT_EQ(flat_parameters(a), flat_parameters(b));
  for (std::size_t e = 0; e < ra.size(); ++e) EXPECT_EQ(ra[e].global_loss, rb[e].global_loss);
}

TEST(Scpl, AuditFindsNoCrossComponentBuffers) {
  const Dataset data = small_blobs();
  auto net = build_from_template(NetworkTemplate::mlp({8, 8, 8, 3}, Activation::kRelu, kSmallHead), 1);
  auto cfg = quick_config(TrainStrategy::kScpl, 1);
  cfg.audit_blocking = true;
  const auto records = train(net, data, cfg);
  EXPECT_EQ(records.back().cross_component_grad_buffers, 0u);
  EXPECT_EQ(records.back().component_losses.size(), 3u);
}

TEST(Scpl, NonFiniteInputReportsDivergence) {
  Dataset data = small_blobs();
  for (std::size_t i : data.train) {
    data.features[i * data.sample_size()] = std::numeric_limits<double>::quiet_NaN();
    break;
  }
  for (auto s : {TrainStrategy::kScpl, TrainStrategy::kScplPipelined, TrainStrategy::kBp}) {
    auto net = build_from_template(NetworkTemplate::mlp({8, 8, 3}, Activation::kRelu, kSmallHead), 1);
    try {
      train(net, data, quick_config(s, 2));
      FAIL() << to_string(s);
    } catch (const DivergenceError& e) {
      EXPECT_EQ(e.epoch(), 1u);
      if (s == TrainStrategy::kScplPipelined)
        EXPECT_NE(std::string(e.what()).find("component 1"), std::string::npos) << e.what();
    }
  }
}

TEST(Scpl, WorkerFailureStopsPipeline) {
  const Dataset data = small_blobs();
  auto net = build_from_template(NetworkTemplate::mlp({8, 8, 8, 3}, Activation::kRelu, kSmallHead), 1);
  auto cfg = quick_config(TrainStrategy::kScplPipelined, 2);
  cfg.debug_fail_component = 2;
  try {
    train(net, data, cfg);
    FAIL();
  } catch (const DivergenceError&) {
    FAIL() << "a plain failure is not a divergence";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("pipeline worker for component 2 failed"), std::string::npos) << e.what();
  }
}

TEST(EarlyExit, OneClassifierPerHiddenComponent) {
  const Dataset data = small_blobs();
  const auto tmpl = NetworkTemplate::mlp({8, 8, 8, 3});
  auto net = build_from_template(tmpl, 1, HiddenObjective::kAuxiliaryClassifier);
  std::size_t aux = 0;
  for (const auto& c : net.components)
    if (c.head) {
      ++aux;
      EXPECT_EQ(c.objective, Objective::kCrossEntropy);
    }
  EXPECT_EQ(aux, net.hidden_count());
  auto cfg = quick_config(TrainStrategy::kEarlyExit, 20);
  cfg.lr_max = 1e-2;
  const auto records = train(net, data, cfg);
  EXPECT_EQ(records.back().component_losses.size(), 3u);
  EXPECT_GT(records.back().test_accuracy, 0.9);

  auto contrastive = build_from_template(tmpl, 1);
  EXPECT_THROW(train(contrastive, data, quick_config(TrainStrategy::kEarlyExit, 1)), ConfigError);
}

TEST(Metrics, RecordsCarryEpochAndLr) {
  const Dataset data = small_blobs();
  auto net = build_from_template(NetworkTemplate::mlp({8, 8, 3}, Activation::kRelu, kSmallHead), 1);
  auto cfg = quick_config(TrainStrategy::kScpl, 4);
  std::size_t seen = 0;
  const auto records = train(net, data, cfg, [&](const MetricsRecord& r) { EXPECT_EQ(r.epoch, ++seen); });
  ASSERT_EQ(records.size(), 4u);
  for (std::size_t e = 0; e < 4; ++e) {
    EXPECT_EQ(records[e].lr, cfg.learning_rate(e));
    double sum = 0.0;
    for (double l : records[e].component_losses) sum += l;
    EXPECT_NEAR(records[e].global_loss, sum, 1e-9);
    EXPECT_GT(records[e].examples_per_second, 0.0);
  }
  const auto j = records[0].to_json();
  EXPECT_EQ(j.at("epoch"), 1);
}

}  // namespace
}  // namespace scpl
