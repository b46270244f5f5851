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

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "scpl/error.hpp"
#include "scpl/gradcheck.hpp"
#include "scpl/network.hpp"

namespace scpl {
namespace {

const HeadSpec kSmallHead{HeadKind::kMlp, 8, 6};

Tensor random_tensor(std::mt19937_64& rng, Shape s) {
  const auto v = oracle::random_matrix(rng, numel(s));
  return Tensor(std::move(s), v);
}

TEST(Template, MlpComponents) {
  const auto net = build_from_template(NetworkTemplate::mlp({4, 8, 8, 3}), 1);
  ASSERT_EQ(net.components.size(), 3u);
  EXPECT_EQ(net.hidden_count(), 2u);
  EXPECT_EQ(net.components.back().output_shape, (Shape{3}));
  EXPECT_EQ(net.components.back().objective, Objective::kCrossEntropy);
  EXPECT_FALSE(net.components.back().head.has_value());
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_TRUE(net.components[l].head.has_value());
    EXPECT_EQ(net.components[l].objective, Objective::kSupCon);
  }
}

TEST(Template, ShapesChain) {
  const auto net = build_from_template(NetworkTemplate::convnet({2, 3, 4}, 5, 4, kSmallHead), 2);
  for (std::size_t l = 1; l < net.components.size(); ++l)
    EXPECT_EQ(net.components[l].input_shape, net.components[l - 1].output_shape);
}

TEST(Template, InvalidDimsRejected) {
  EXPECT_THROW(NetworkTemplate::mlp({4}), ConfigError);
  EXPECT_THROW(NetworkTemplate::mlp({4, 0, 3}), ConfigError);
  EXPECT_THROW(NetworkTemplate::convnet({3, 8}, 0, 10), ConfigError);
}

TEST(Template, SameSeedBitwiseIdentical) {
  const auto a = build_from_template(NetworkTemplate::mlp({4, 8, 3}, Activation::kRelu, kSmallHead), 9);
  const auto b = build_from_template(NetworkTemplate::mlp({4, 8, 3}, Activation::kRelu, kSmallHead), 9);
  for (std::size_t c = 0; c < a.components.size(); ++c) {
    const auto pa = a.components[c].parameters();
    const auto pb = b.components[c].parameters();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t k = 0; k < pa.size(); ++k)
      for (std::size_t i = 0; i < pa[k]->value.size(); ++i) EXPECT_EQ(pa[k]->value[i], pb[k]->value[i]);
  }
}

TEST(Template, VanillaConvNetLayout) {
  const auto t = NetworkTemplate::vanilla_convnet();
  EXPECT_EQ(t.hidden_components(), 3u);
  EXPECT_EQ(t.channels, (std::vector<std::size_t>{3, 128, 256, 512}));
  const std::size_t channels[] = {3, 128, 256, 512};
  for (std::size_t l = 1; l <= 3; ++l) EXPECT_EQ(t.hidden_width(l), 32u * 32u * channels[l]);
  const auto layout = parameter_layout(t);
  // Head input width equals the flattened encoder output.
  for (const auto& p : layout)
    if (p.name == "c2.g.0.weight") EXPECT_EQ(p.shape, (Shape{512, 32 * 32 * 256}));
  bool classifier = false;
  for (const auto& p : layout)
    if (p.name == "c4.f.linear.weight") {
      classifier = true;
      EXPECT_EQ(p.shape, (Shape{10, 32 * 32 * 512}));
    }
  EXPECT_TRUE(classifier);
}

TEST(Parameters, EffectiveCountEqualsBpNetwork) {
  const auto t = NetworkTemplate::mlp({16, 32, 32, 3}, Activation::kRelu, kSmallHead);
  const auto scpl = build_from_template(t, 1);
  const auto bp = strip_heads(scpl);
  EXPECT_FALSE(bp.has_heads());
  EXPECT_EQ(scpl.effective_parameter_count(), bp.effective_parameter_count() + bp.affiliated_parameter_count());
  EXPECT_EQ(scpl.effective_parameter_count(), count_parameters(parameter_layout(t, false)));
  EXPECT_GT(scpl.affiliated_parameter_count(), 0u);
}

TEST(Parameters, LayoutMatchesMaterialisedNetwork) {
  const auto t = NetworkTemplate::convnet({3, 4, 5}, 6, 10, kSmallHead);
  const auto net = build_from_template(t, 3);
  const auto layout = parameter_layout(t);
  std::size_t k = 0;
  for (const auto& c : net.components)
    for (const auto* p : c.parameters()) {
      ASSERT_LT(k, layout.size());
      EXPECT_EQ(layout[k].name, p->name);
      EXPECT_EQ(layout[k].shape, p->value.shape());
      ++k;
    }
  EXPECT_EQ(k, layout.size());
  EXPECT_EQ(count_parameters(layout, ParamRole::kEffective), net.effective_parameter_count());
  EXPECT_EQ(count_parameters(layout, ParamRole::kAffiliated), net.affiliated_parameter_count());
}

TEST(Step, GradientsStayInsideTheComponent) {
  std::mt19937_64 rng(1);
  const auto net = build_from_template(NetworkTemplate::mlp({4, 6, 6, 3}, Activation::kTanh, kSmallHead), 5);
  const std::vector<int> labels = {0, 0, 1, 1, 2, 2};
  Tape shared;
  Tensor h = random_tensor(rng, {6, 4});
  for (const auto& c : net.components) {
    const auto r = component_step(c, h, labels, {}, &shared);
    EXPECT_EQ(r.foreign_grad_buffers, 0u) << "component " << c.index;
    for (const auto* p : c.parameters()) EXPECT_TRUE(r.grads.contains(p->id)) << p->name;
    EXPECT_EQ(r.grads.size(), c.parameters().size());
    h = r.output;
  }
}

TEST(Step, RejectsTrackedInput) {
  const auto net = build_from_template(NetworkTemplate::mlp({2, 3}), 1);
  Tape tape;
  const Tensor x = tape.watch(Tensor({2, 2}, {1, 2, 3, 4}));
  EXPECT_THROW(component_step(net.components[0], x, {0, 1}, {}), Error);
}

TEST(Step, RejectsWrongShape) {
  const auto net = build_from_template(NetworkTemplate::mlp({2, 3}), 1);
  EXPECT_THROW(component_step(net.components[0], Tensor::zeros({2, 5}), {0, 1}, {}), ShapeError);
}

TEST(Step, IdentityEncoderAndHeadTwoSameLabelIsZero) {
  Component c;
  c.index = 1;
  c.input_shape = {3};
  c.output_shape = {3};
  LinearLayer enc = make_linear(3, 3, "f");
  enc.weight.value = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  c.encoder.push_back(enc);
  c.head = make_projection_head(HeadSpec{HeadKind::kIdentity, 0, 0}, 3, "g");
  c.objective = Objective::kSupCon;
  const auto r = component_step(c, Tensor({2, 3}, {1, 2, 3, -1, 0.5, 2}), {7, 7}, {});
  EXPECT_NEAR(r.loss, 0.0, 1e-15);
  EXPECT_EQ(r.output[1], 2.0);
}

TEST(Step, BlockedGradientAbsentWhileTrueGradientNonzero) {
  // Two-layer linear composition: the loss of component 2 depends on W1.
  std::mt19937_64 rng(4);
  auto net = build_from_template(NetworkTemplate::mlp({3, 4, 4, 2}, Activation::kTanh, HeadSpec{HeadKind::kLinear, 0, 3}), 6);
  const std::vector<int> labels = {0, 0, 1, 1, 0};
  const Tensor x = random_tensor(rng, {5, 3});

  Tape tape;
  const auto r1 = component_step(net.components[0], x, labels, {}, &tape);
  const auto r2 = component_step(net.components[1], r1.output, labels, {}, &tape);
  Parameter* w1 = net.components[0].parameters()[0];
  EXPECT_FALSE(r2.grads.contains(w1->id));
  EXPECT_EQ(r2.foreign_grad_buffers, 0u);

  std::vector<double> w(w1->value.data().begin(), w1->value.data().end());
  const auto numeric = oracle::central_difference(
      [&](const std::vector<double>& v) {
        w1->value = Tensor(w1->value.shape(), v);
        Tape t(Tape::Mode::kInference);
        const Tensor h1 = forward(t, net.components[0].encoder, x);
        const Tensor h2 = forward(t, net.components[1].encoder, h1);
        return supcon_loss(t, forward(t, *net.components[1].head, h2), labels, 0.1).item();
      },
      w, 1e-6);
  double largest = 0.0;
  for (double g : numeric) largest = std::max(largest, std::abs(g));
  EXPECT_GT(largest, 1e-4);
}

TEST(Step, GradientPathLengthIndependentOfDepth) {
  std::mt19937_64 rng(2);
  std::size_t first = 0;
  for (std::size_t hidden : {1u, 3u, 6u}) {
    std::vector<std::size_t> dims(hidden + 2, 5);
    dims.front() = 4;
    dims.back() = 3;
    const auto net =
        build_from_template(NetworkTemplate::mlp(dims, Activation::kTanh, HeadSpec{HeadKind::kLinear, 0, 4}), 1);
    std::size_t deepest = 0;
    Tensor h = random_tensor(rng, {4, 4});
    for (const auto& c : net.components) {
      const auto r = component_step(c, h, {0, 0, 1, 2}, {});
      deepest = std::max(deepest, r.gradient_path_length);
      h = r.output;
    }
    if (first == 0) first = deepest;
    EXPECT_EQ(deepest, first) << "H=" << hidden;
  }
}

TEST(GlobalLoss, SumsLocalLosses) {
  std::mt19937_64 rng(3);
  const auto net = build_from_template(NetworkTemplate::mlp({4, 6, 6, 3}, Activation::kRelu, kSmallHead), 2);
  const std::vector<int> labels = {0, 1, 2, 0, 1, 2};
  const Tensor x = random_tensor(rng, {6, 4});
  const auto g = global_loss(net, x, labels, {});
  double sum = 0.0;
  Tensor h = x;
  for (std::size_t k = 0; k < net.components.size(); ++k) {
    const auto r = component_step(net.components[k], h, labels, {});
    EXPECT_NEAR(g.per_component[k], r.loss, 1e-12);
    sum += r.loss;
    h = r.output;
  }
  EXPECT_NEAR(g.total, sum, 1e-12);
}

TEST(GlobalLoss, NoHiddenComponentsIsPlainCrossEntropy) {
  std::mt19937_64 rng(7);
  auto net = build_from_template(NetworkTemplate::mlp({3, 4}), 2);
  ASSERT_EQ(net.hidden_count(), 0u);
  const std::vector<int> labels = {0, 3, 1};
  const Tensor x = random_tensor(rng, {3, 3});
  const Tensor logits = infer(net, x);
  const auto g = global_loss(net, x, labels, {});
  EXPECT_NEAR(g.total, oracle::cross_entropy({logits.data().begin(), logits.data().end()}, labels, 4), 1e-12);
}

TEST(GlobalLoss, SaturatedPerfectClassifierIsNearZero) {
  auto net = build_from_template(NetworkTemplate::mlp({2, 2}), 2);
  auto& lin = std::get<LinearLayer>(net.components[0].encoder[0]);
  lin.weight.value = Tensor({2, 2}, {60, 0, 0, 60});
  const auto g = global_loss(net, Tensor({2, 2}, {1, 0, 0, 1}), {0, 1}, {});
  EXPECT_LT(g.total, 1e-20);
}

TEST(Infer, UsesEncodersOnly) {
  std::mt19937_64 rng(8);
  const auto net = build_from_template(NetworkTemplate::mlp({4, 6, 3}, Activation::kRelu, kSmallHead), 4);
  const Tensor x = random_tensor(rng, {5, 4});
  const Tensor with = infer(net, x);
  const Tensor without = infer(strip_heads(net), x);
  for (std::size_t i = 0; i < with.size(); ++i) EXPECT_EQ(with[i], without[i]);
}

TEST(Infer, IdentityEncodersReduceToClassifier) {
  auto net = build_from_template(NetworkTemplate::mlp({3, 3, 3, 2}, Activation::kRelu, kSmallHead), 4);
  for (std::size_t l = 0; l < 2; ++l) {
    auto& lin = std::get<LinearLayer>(net.components[l].encoder[0]);
    lin.weight.value = Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  }
  const Tensor x({2, 3}, {0.5, 1, 2, 3, 0.25, 1});  // non-negative, so relu is identity
  Tape tape(Tape::Mode::kInference);
  const Tensor expected = forward(tape, net.components.back().encoder, x);
  const Tensor got = infer(net, x);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_EQ(got[i], expected[i]);
}

TEST(Checkpoint, RoundTripWithAndWithoutHeads) {
  std::mt19937_64 rng(9);
  auto net = build_from_template(NetworkTemplate::mlp({4, 6, 6, 3}, Activation::kRelu, kSmallHead), 11);
  for (auto& c : net.components)
    for (auto* p : c.parameters()) p->value = random_tensor(rng, p->value.shape());
  const Tensor x = random_tensor(rng, {3, 4});
  const Tensor reference = infer(net, x);
  for (bool heads : {true, false}) {
    std::stringstream ss;
    save_checkpoint(net, ss, heads);
    const auto back = load_checkpoint(ss);
    EXPECT_EQ(back.has_heads(), heads);
    const Tensor y = infer(back, x);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], reference[i]);
  }
}

TEST(Checkpoint, BadMagicRejected) {
  std::stringstream ss("SCPLPAR1garbage");
  EXPECT_THROW(load_checkpoint(ss), IoError);
}

}  // namespace
}  // namespace scpl
