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
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "scpl/layers.hpp"
#include "scpl/optim.hpp"
#include "scpl/scl_loss.hpp"
#include "scpl/tensor.hpp"

namespace scpl {

enum class ModelKind { kMlp, kConvNet };

/// Declarative description of a component-split network.
///
/// mlp: `dims` = {input, hidden_1, ..., hidden_H, classes}. Hidden component
/// l is Linear(dims[l-1], dims[l]) followed by `activation`; the output
/// component is Linear(dims[H], classes).
///
/// convnet: `channels` = {input, c_1, ..., c_H}. Hidden component l is a 3x3
/// same-padding conv followed by ReLU on image_size x image_size maps; the
/// output component flattens and applies Linear(image_size^2 * c_H, classes).
struct NetworkTemplate {
  ModelKind kind = ModelKind::kMlp;
  std::vector<std::size_t> dims;
  Activation activation = Activation::kRelu;
  std::vector<std::size_t> channels;
  std::size_t image_size = 32;
  std::size_t classes = 10;
  HeadSpec head;

  static NetworkTemplate mlp(std::vector<std::size_t> dims, Activation activation = Activation::kRelu,
                             HeadSpec head = {});
  static NetworkTemplate convnet(std::vector<std::size_t> channels, std::size_t image_size,
                                 std::size_t classes, HeadSpec head = {});
  // Three conv components with channels 3 -> 128 -> 256 -> 512 on 32x32
  // inputs and a 10-way classifier.
  static NetworkTemplate vanilla_convnet();

  void validate() const;
  std::size_t hidden_components() const;
  std::size_t num_classes() const;
  Shape sample_shape() const;
  // Flattened width of hidden component `l`'s output (1-based).
  std::size_t hidden_width(std::size_t l) const;
};

// What the hidden components optimise locally.
enum class HiddenObjective { kContrastive, kAuxiliaryClassifier };

enum class ParamRole { kEffective, kAffiliated };

struct ParamInfo {
  std::size_t component = 0;
  ParamRole role = ParamRole::kEffective;
  std::string name;
  Shape shape;
};

/// Parameter shapes of the network a template describes, without allocating
/// it. Heads are included when `with_heads` is set.
std::vector<ParamInfo> parameter_layout(const NetworkTemplate& t, bool with_heads = true,
                                        HiddenObjective objective = HiddenObjective::kContrastive);
std::size_t count_parameters(const std::vector<ParamInfo>& layout,
                             std::optional<ParamRole> role = std::nullopt);

enum class Objective { kSupCon, kCrossEntropy };

/// One decoupled unit: encoder f, optional head g and a local objective. The
/// optimizer state covers this component's parameters only.
struct Component {
  std::size_t index = 0;  // 1-based; the output component is H + 1
  Shape input_shape;      // per sample
  Shape output_shape;     // per sample
  std::vector<Layer> encoder;
  std::optional<std::vector<Layer>> head;
  Objective objective = Objective::kCrossEntropy;
  AdamState optimizer;

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::size_t effective_parameter_count() const;
  std::size_t affiliated_parameter_count() const;
};

struct ScplNetwork {
  NetworkTemplate spec;
  std::uint64_t seed = 0;
  HiddenObjective hidden_objective = HiddenObjective::kContrastive;
  std::vector<Component> components;

  std::size_t hidden_count() const { return components.empty() ? 0 : components.size() - 1; }
  std::size_t effective_parameter_count() const;
  std::size_t affiliated_parameter_count() const;
  bool has_heads() const;
};

ScplNetwork build_from_template(const NetworkTemplate& t, std::uint64_t seed,
                                HiddenObjective objective = HiddenObjective::kContrastive);

// Copy without projection heads or auxiliary classifiers: the inference-path
// network, also used as the end-to-end baseline.
ScplNetwork strip_heads(const ScplNetwork& net);

struct LossOptions {
  double tau = 0.1;
  SclVariant variant = SclVariant::kPerAnchor;
};

struct StepResult {
  Tensor output;  // detached encoder output
  double loss = 0.0;
  GradMap grads;
  // Gradient buffers allocated for parameters bound on the tape that belong
  // to other components. Zero whenever gradients are blocked.
  std::size_t foreign_grad_buffers = 0;
  std::size_t gradient_path_length = 0;
};

// Encoder forward on `tape`; `input` must carry no tape linkage.
Tensor component_encode(Tape& tape, const Component& c, const Tensor& input);

// Local objective and backward from an encoder output recorded on `tape`.
StepResult component_learn(Tape& tape, const Component& c, const Tensor& encoded,
                           const std::vector<int>& labels, const LossOptions& options);

/// Forward, local loss and local backward of one component on a fresh tape
/// (or `shared`, when given). Does not update parameters.
StepResult component_step(const Component& c, const Tensor& input, const std::vector<int>& labels,
                          const LossOptions& options, Tape* shared = nullptr);

void apply_update(Component& c, const GradMap& grads, double lr);

struct GlobalLoss {
  std::vector<double> per_component;
  double total = 0.0;
};

/// Sum of every local loss on one batch, forward only.
GlobalLoss global_loss(const ScplNetwork& net, const Tensor& x, const std::vector<int>& labels,
                       const LossOptions& options);

/// Class scores from the encoders and classifier only.
Tensor infer(const ScplNetwork& net, const Tensor& x);
std::vector<int> predict(const ScplNetwork& net, const Tensor& x);

void save_checkpoint(const ScplNetwork& net, std::ostream& os, bool include_heads = true);
void save_checkpoint(const ScplNetwork& net, const std::string& path, bool include_heads = true);
ScplNetwork load_checkpoint(std::istream& is);
ScplNetwork load_checkpoint(const std::string& path);

}  // namespace scpl
