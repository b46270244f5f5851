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

#include "scpl/network.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "scpl/error.hpp"
#include "scpl/rng.hpp"

namespace scpl {

namespace {

constexpr std::array<char, 8> kNetMagic = {'S', 'C', 'P', 'L', 'N', 'E', 'T', '1'};

std::string prefix(std::size_t component) { return "c" + std::to_string(component); }

Tensor require_detached(const Tensor& input, const Component& c) {
  if (input.tracked())
    throw Error("component " + std::to_string(c.index) +
                ": input must be detached from any upstream tape");
  if (input.rank() != c.input_shape.size() + 1 ||
      !std::equal(c.input_shape.begin(), c.input_shape.end(), input.shape().begin() + 1))
    throw ShapeError("component " + std::to_string(c.index) + ": expected per-sample shape " +
                     to_string(c.input_shape) + " but got batch shape " +
                     to_string(input.shape()));
  return input;
}

nlohmann::json template_to_json(const NetworkTemplate& t) {
  return {{"kind", t.kind == ModelKind::kMlp ? "mlp" : "convnet"},
          {"dims", t.dims},
          {"activation", to_string(t.activation)},
          {"channels", t.channels},
          {"image_size", t.image_size},
          {"classes", t.classes},
          {"head", {{"kind", to_string(t.head.kind)}, {"hidden", t.head.hidden}, {"out", t.head.out}}}};
}

NetworkTemplate template_from_json(const nlohmann::json& j) {
  NetworkTemplate t;
  t.kind = j.at("kind").get<std::string>() == "mlp" ? ModelKind::kMlp : ModelKind::kConvNet;
  t.dims = j.at("dims").get<std::vector<std::size_t>>();
  t.activation = parse_activation(j.at("activation").get<std::string>());
  t.channels = j.at("channels").get<std::vector<std::size_t>>();
  t.image_size = j.at("image_size").get<std::size_t>();
  t.classes = j.at("classes").get<std::size_t>();
  const auto& h = j.at("head");
  t.head = HeadSpec{parse_head_kind(h.at("kind").get<std::string>()), h.at("hidden").get<std::size_t>(),
                    h.at("out").get<std::size_t>()};
  return t;
}

void write_u32(std::ostream& os, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    const int c = is.get();
    if (c == std::char_traits<char>::eof()) throw IoError("checkpoint truncated");
    v |= static_cast<std::uint32_t>(c & 0xff) << (8 * i);
  }
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// NetworkTemplate

NetworkTemplate NetworkTemplate::mlp(std::vector<std::size_t> dims, Activation activation,
                                     HeadSpec head) {
  NetworkTemplate t;
  t.kind = ModelKind::kMlp;
  t.dims = std::move(dims);
  t.activation = activation;
  t.head = head;
  if (!t.dims.empty()) t.classes = t.dims.back();
  t.validate();
  return t;
}

NetworkTemplate NetworkTemplate::convnet(std::vector<std::size_t> channels, std::size_t image_size,
                                         std::size_t classes, HeadSpec head) {
  NetworkTemplate t;
  t.kind = ModelKind::kConvNet;
  t.channels = std::move(channels);
  t.image_size = image_size;
  t.classes = classes;
  t.activation = Activation::kRelu;
  t.head = head;
  t.validate();
  return t;
}

NetworkTemplate NetworkTemplate::vanilla_convnet() {
  return convnet({3, 128, 256, 512}, 32, 10, HeadSpec{HeadKind::kMlp, 512, 1024});
}

void NetworkTemplate::validate() const {
  if (kind == ModelKind::kMlp) {
    if (dims.size() < 2) throw ConfigError("mlp template needs at least input and class dims");
    if (std::find(dims.begin(), dims.end(), 0u) != dims.end())
      throw ConfigError("mlp template dims must be positive");
    if (dims.back() < 2) throw ConfigError("mlp template needs at least 2 classes");
  } else {
    if (channels.empty()) throw ConfigError("convnet template needs input channels");
    if (std::find(channels.begin(), channels.end(), 0u) != channels.end())
      throw ConfigError("convnet channels must be positive");
    if (image_size == 0) throw ConfigError("convnet image size must be positive");
    if (classes < 2) throw ConfigError("convnet template needs at least 2 classes");
  }
  if (head.kind != HeadKind::kIdentity && head.out == 0)
    throw ConfigError("projection head output width must be positive");
  if (head.kind == HeadKind::kMlp && head.hidden == 0)
    throw ConfigError("projection head hidden width must be positive");
}

std::size_t NetworkTemplate::hidden_components() const {
  return kind == ModelKind::kMlp ? dims.size() - 2 : channels.size() - 1;
}

std::size_t NetworkTemplate::num_classes() const {
  return kind == ModelKind::kMlp ? dims.back() : classes;
}

Shape NetworkTemplate::sample_shape() const {
  if (kind == ModelKind::kMlp) return {dims.front()};
  return {channels.front(), image_size, image_size};
}

std::size_t NetworkTemplate::hidden_width(std::size_t l) const {
  if (kind == ModelKind::kMlp) return dims.at(l);
  return image_size * image_size * channels.at(l);
}

std::vector<ParamInfo> parameter_layout(const NetworkTemplate& t, bool with_heads,
                                        HiddenObjective objective) {
  t.validate();
  std::vector<ParamInfo> out;
  const std::size_t hidden = t.hidden_components();
  for (std::size_t l = 1; l <= hidden; ++l) {
    const auto p = prefix(l);
    if (t.kind == ModelKind::kMlp) {
      out.push_back({l, ParamRole::kEffective, p + ".f.linear.weight", {t.dims[l], t.dims[l - 1]}});
      out.push_back({l, ParamRole::kEffective, p + ".f.linear.bias", {t.dims[l]}});
    } else {
      out.push_back({l, ParamRole::kEffective, p + ".f.conv.kernels",
                     {t.channels[l], t.channels[l - 1], 3, 3}});
      out.push_back({l, ParamRole::kEffective, p + ".f.conv.bias", {t.channels[l]}});
    }
    if (!with_heads) continue;
    const std::size_t dim = t.hidden_width(l);
    if (objective == HiddenObjective::kAuxiliaryClassifier) {
      out.push_back({l, ParamRole::kAffiliated, p + ".aux.weight", {t.num_classes(), dim}});
      out.push_back({l, ParamRole::kAffiliated, p + ".aux.bias", {t.num_classes()}});
      continue;
    }
    switch (t.head.kind) {
      case HeadKind::kIdentity:
        break;
      case HeadKind::kLinear:
        out.push_back({l, ParamRole::kAffiliated, p + ".g.0.weight", {t.head.out, dim}});
        out.push_back({l, ParamRole::kAffiliated, p + ".g.0.bias", {t.head.out}});
        break;
      case HeadKind::kMlp:
        out.push_back({l, ParamRole::kAffiliated, p + ".g.0.weight", {t.head.hidden, dim}});
        out.push_back({l, ParamRole::kAffiliated, p + ".g.0.bias", {t.head.hidden}});
        out.push_back({l, ParamRole::kAffiliated, p + ".g.2.weight", {t.head.out, t.head.hidden}});
        out.push_back({l, ParamRole::kAffiliated, p + ".g.2.bias", {t.head.out}});
        break;
    }
  }
  const auto p = prefix(hidden + 1);
  const std::size_t last = hidden == 0 ? numel(t.sample_shape()) : t.hidden_width(hidden);
  out.push_back({hidden + 1, ParamRole::kEffective, p + ".f.linear.weight", {t.num_classes(), last}});
  out.push_back({hidden + 1, ParamRole::kEffective, p + ".f.linear.bias", {t.num_classes()}});
  return out;
}

std::size_t count_parameters(const std::vector<ParamInfo>& layout, std::optional<ParamRole> role) {
  std::size_t n = 0;
  for (const auto& info : layout)
    if (!role || info.role == *role) n += numel(info.shape);
  return n;
}

// ---------------------------------------------------------------------------
// Component / network

std::vector<Parameter*> Component::parameters() {
  auto out = scpl::parameters(encoder);
  if (head)
    for (auto* p : scpl::parameters(*head)) out.push_back(p);
  return out;
}

std::vector<const Parameter*> Component::parameters() const {
  auto out = scpl::parameters(encoder);
  if (head)
    for (const auto* p : scpl::parameters(*head)) out.push_back(p);
  return out;
}

std::size_t Component::effective_parameter_count() const { return parameter_count(encoder); }

std::size_t Component::affiliated_parameter_count() const {
  return head ? parameter_count(*head) : 0;
}

std::size_t ScplNetwork::effective_parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : components) n += c.effective_parameter_count();
  return n;
}

std::size_t ScplNetwork::affiliated_parameter_count() const {
  std::size_t n = 0;
  for (const auto& c : components) n += c.affiliated_parameter_count();
  return n;
}

bool ScplNetwork::has_heads() const {
  return std::any_of(components.begin(), components.end(),
                     [](const Component& c) { return c.head.has_value(); });
}

ScplNetwork build_from_template(const NetworkTemplate& t, std::uint64_t seed,
                                HiddenObjective objective) {
  t.validate();
  ScplNetwork net;
  net.spec = t;
  net.seed = seed;
  net.hidden_objective = objective;
  const std::size_t hidden = t.hidden_components();
  Shape shape = t.sample_shape();

  for (std::size_t l = 1; l <= hidden; ++l) {
    Component c;
    c.index = l;
    c.input_shape = shape;
    const auto p = prefix(l);
    if (t.kind == ModelKind::kMlp) {
      c.encoder.emplace_back(make_linear(t.dims[l - 1], t.dims[l], p + ".f.linear"));
      c.encoder.emplace_back(ActivationLayer{t.activation});
      shape = {t.dims[l]};
    } else {
      c.encoder.emplace_back(make_conv2d(t.channels[l - 1], t.channels[l], p + ".f.conv"));
      c.encoder.emplace_back(ActivationLayer{Activation::kRelu});
      shape = {t.channels[l], t.image_size, t.image_size};
    }
    c.output_shape = shape;
    init_params(c.encoder, derive_seed(seed, {l, 0}));

    const std::size_t dim = t.hidden_width(l);
    if (objective == HiddenObjective::kAuxiliaryClassifier) {
      std::vector<Layer> aux;
      aux.emplace_back(FlattenLayer{});
      aux.emplace_back(make_linear(dim, t.num_classes(), p + ".aux"));
      c.head = std::move(aux);
      c.objective = Objective::kCrossEntropy;
    } else {
      c.head = make_projection_head(t.head, dim, p + ".g");
      c.objective = Objective::kSupCon;
    }
    init_params(*c.head, derive_seed(seed, {l, 1}));
    net.components.push_back(std::move(c));
  }

  Component out;
  out.index = hidden + 1;
  out.input_shape = shape;
  const auto p = prefix(hidden + 1);
  if (shape.size() > 1) out.encoder.emplace_back(FlattenLayer{});
  out.encoder.emplace_back(make_linear(numel(shape), t.num_classes(), p + ".f.linear"));
  out.output_shape = {t.num_classes()};
  out.objective = Objective::kCrossEntropy;
  init_params(out.encoder, derive_seed(seed, {hidden + 1, 0}));
  net.components.push_back(std::move(out));
  return net;
}

ScplNetwork strip_heads(const ScplNetwork& net) {
  ScplNetwork out = net;
  for (auto& c : out.components) {
    if (!c.head) continue;
    for (const auto* p : parameters(*c.head)) c.optimizer.moments.erase(p->id);
    c.head.reset();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training step

Tensor component_encode(Tape& tape, const Component& c, const Tensor& input) {
  return forward(tape, c.encoder, require_detached(input, c));
}

StepResult component_learn(Tape& tape, const Component& c, const Tensor& encoded,
                           const std::vector<int>& labels, const LossOptions& options) {
  Tensor loss;
  if (c.objective == Objective::kSupCon) {
    if (!c.head) throw Error("component " + std::to_string(c.index) + " has no projection head");
    const Tensor z = forward(tape, *c.head, encoded);
    loss = supcon_loss(tape, z, labels, options.tau, options.variant);
  } else {
    const Tensor logits = c.head ? forward(tape, *c.head, encoded) : encoded;
    loss = cross_entropy(tape, logits, labels);
  }

  StepResult result;
  result.output = detach(encoded);
  result.loss = loss.item();
  if (!tape.recording()) return result;

  const Gradients grads = tape.backward(loss);
  std::unordered_set<ParamId> own;
  for (const auto* p : c.parameters()) {
    own.insert(p->id);
    const auto node = tape.keyed_node(p->id);
    if (!node) continue;
    if (auto g = grads.of(*node)) result.grads.emplace(p->id, std::vector<double>(g->begin(), g->end()));
  }
  for (const auto& [key, node] : tape.keyed_nodes())
    if (!own.contains(key) && grads.has(node)) ++result.foreign_grad_buffers;
  result.gradient_path_length = tape.gradient_path_length(loss);
  return result;
}

StepResult component_step(const Component& c, const Tensor& input, const std::vector<int>& labels,
                          const LossOptions& options, Tape* shared) {
  Tape local;
  Tape& tape = shared ? *shared : local;
  const Tensor encoded = component_encode(tape, c, input);
  return component_learn(tape, c, encoded, labels, options);
}

void apply_update(Component& c, const GradMap& grads, double lr) {
  auto params = c.parameters();
  adam_step(c.optimizer, params, grads, lr);
}

GlobalLoss global_loss(const ScplNetwork& net, const Tensor& x, const std::vector<int>& labels,
                       const LossOptions& options) {
  Tape tape(Tape::Mode::kInference);
  GlobalLoss out;
  Tensor h = detach(x);
  for (const auto& c : net.components) {
    const Tensor encoded = component_encode(tape, c, h);
    const StepResult r = component_learn(tape, c, encoded, labels, options);
    out.per_component.push_back(r.loss);
    out.total += r.loss;
    h = r.output;
  }
  return out;
}

Tensor infer(const ScplNetwork& net, const Tensor& x) {
  Tape tape(Tape::Mode::kInference);
  Tensor h = detach(x);
  for (const auto& c : net.components) h = component_encode(tape, c, h);
  return h;
}

std::vector<int> predict(const ScplNetwork& net, const Tensor& x) {
  const Tensor scores = infer(net, x);
  const std::size_t rows = scores.dim(0), cols = scores.dim(1);
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c)
      if (scores[r * cols + c] > scores[r * cols + best]) best = c;
    out[r] = static_cast<int>(best);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

void save_checkpoint(const ScplNetwork& net, std::ostream& os, bool include_heads) {
  const nlohmann::json header = {
      {"format_version", 1},
      {"template", template_to_json(net.spec)},
      {"hidden_components", net.hidden_count()},
      {"seed", net.seed},
      {"hidden_objective",
       net.hidden_objective == HiddenObjective::kContrastive ? "contrastive" : "auxiliary_classifier"},
      {"has_heads", include_heads && net.has_heads()}};
  const std::string text = header.dump();
  os.write(kNetMagic.data(), kNetMagic.size());
  write_u32(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_u32(os, static_cast<std::uint32_t>(net.components.size()));
  for (const auto& c : net.components) {
    std::vector<NamedTensor> records;
    for (const auto* p : parameters(c.encoder)) records.push_back({p->name, p->value});
    if (include_heads && c.head)
      for (const auto* p : parameters(*c.head)) records.push_back({p->name, p->value});
    write_parameters(os, records);
  }
  if (!os) throw IoError("failed writing checkpoint");
}

void save_checkpoint(const ScplNetwork& net, const std::string& path, bool include_heads) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  save_checkpoint(net, os, include_heads);
}

ScplNetwork load_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kNetMagic) throw IoError("checkpoint: bad magic");
  const auto header_len = read_u32(is);
  std::string text(header_len, '\0');
  is.read(text.data(), header_len);
  if (!is) throw IoError("checkpoint truncated");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint header: ") + e.what());
  }
  const auto objective = header.at("hidden_objective").get<std::string>() == "contrastive"
                             ? HiddenObjective::kContrastive
                             : HiddenObjective::kAuxiliaryClassifier;
  ScplNetwork net = build_from_template(template_from_json(header.at("template")),
                                        header.at("seed").get<std::uint64_t>(), objective);
  if (!header.at("has_heads").get<bool>()) net = strip_heads(net);

  const auto count = read_u32(is);
  if (count != net.components.size())
    throw IoError("checkpoint holds " + std::to_string(count) + " components, template implies " +
                  std::to_string(net.components.size()));
  for (auto& c : net.components) {
    const auto records = read_parameters(is);
    auto params = c.parameters();
    if (records.size() != params.size())
      throw IoError("checkpoint component " + std::to_string(c.index) + " has " +
                    std::to_string(records.size()) + " tensors, expected " +
                    std::to_string(params.size()));
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (records[i].name != params[i]->name || records[i].value.shape() != params[i]->value.shape())
        throw IoError("checkpoint tensor " + records[i].name + " does not match " + params[i]->name);
      params[i]->value = records[i].value;
    }
  }
  return net;
}

ScplNetwork load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint " + path);
  return load_checkpoint(is);
}

}  // namespace scpl
