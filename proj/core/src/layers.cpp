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

#include "scpl/layers.hpp"

#include <array>
#include <atomic>
#include <bit>
#include <cmath>
#include <istream>
#include <ostream>
#include <random>

#include "scpl/error.hpp"

namespace scpl {

namespace {

std::atomic<ParamId> next_param_id{1};

constexpr std::array<char, 8> kParamMagic = {'S', 'C', 'P', 'L', 'P', 'A', 'R', '1'};

template <typename T>
void write_le(std::ostream& os, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = std::bit_cast<U>(value);
  std::array<char, sizeof(U)> bytes{};
  for (std::size_t i = 0; i < sizeof(U); ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  os.write(bytes.data(), bytes.size());
}

template <typename T>
T read_le(std::istream& is) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  std::array<unsigned char, sizeof(U)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!is) throw IoError("parameter container truncated");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) bits |= static_cast<U>(bytes[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

void fill_uniform(Tensor& t, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : t.mutable_data()) v = dist(rng);
}

}  // namespace

Parameter make_parameter(std::string name, Tensor value) {
  return Parameter{next_param_id.fetch_add(1), std::move(name), std::move(value)};
}

Tensor bind(Tape& tape, const Parameter& p) { return tape.watch_keyed(p.id, p.value); }

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kLeakyRelu: return "leaky_relu";
    case Activation::kTanh: return "tanh";
  }
  return "relu";
}

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::kRelu;
  if (name == "leaky_relu") return Activation::kLeakyRelu;
  if (name == "tanh") return Activation::kTanh;
  throw ConfigError("unknown activation '" + name + "'");
}

LinearLayer make_linear(std::size_t in, std::size_t out, const std::string& name) {
  if (in == 0 || out == 0) throw ConfigError("linear layer " + name + " needs non-zero dims");
  return LinearLayer{in, out, make_parameter(name + ".weight", Tensor::zeros({out, in})),
                     make_parameter(name + ".bias", Tensor::zeros({out}))};
}

Conv2dLayer make_conv2d(std::size_t in_channels, std::size_t out_channels,
                        const std::string& name) {
  if (in_channels == 0 || out_channels == 0)
    throw ConfigError("conv layer " + name + " needs non-zero channels");
  return Conv2dLayer{
      in_channels, out_channels,
      make_parameter(name + ".kernels", Tensor::zeros({out_channels, in_channels, 3, 3})),
      make_parameter(name + ".bias", Tensor::zeros({out_channels}))};
}

Tensor linear_forward(Tape& tape, const LinearLayer& layer, const Tensor& x) {
  if (x.rank() != 2 || x.dim(1) != layer.in)
    throw ShapeError("linear " + layer.weight.name + ": expected batch x " +
                     std::to_string(layer.in) + " input, got " + to_string(x.shape()));
  const Tensor w = bind(tape, layer.weight);
  const Tensor b = bind(tape, layer.bias);
  return add_row_vector(tape, matmul(tape, x, transpose(tape, w)), b);
}

Tensor conv2d_forward(Tape& tape, const Conv2dLayer& layer, const Tensor& x) {
  if (x.rank() != 4 || x.dim(1) != layer.in_channels)
    throw ShapeError("conv " + layer.kernels.name + ": expected batch x " +
                     std::to_string(layer.in_channels) + " x h x w input, got " +
                     to_string(x.shape()));
  return conv2d_3x3(tape, x, bind(tape, layer.kernels), bind(tape, layer.bias));
}

Tensor forward(Tape& tape, const Layer& layer, const Tensor& x) {
  return std::visit(
      [&](const auto& l) -> Tensor {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, LinearLayer>) {
          return linear_forward(tape, l, x);
        } else if constexpr (std::is_same_v<T, Conv2dLayer>) {
          return conv2d_forward(tape, l, x);
        } else if constexpr (std::is_same_v<T, FlattenLayer>) {
          if (x.rank() < 1) throw ShapeError("flatten: scalar input");
          if (x.rank() == 2) return x;
          return reshape(tape, x, {x.dim(0), x.size() / std::max<std::size_t>(x.dim(0), 1)});
        } else {
          switch (l.kind) {
            case Activation::kRelu: return relu(tape, x);
            case Activation::kLeakyRelu: return leaky_relu(tape, x);
            case Activation::kTanh: return tanh(tape, x);
          }
          return x;
        }
      },
      layer);
}

Tensor forward(Tape& tape, const std::vector<Layer>& layers, const Tensor& x) {
  Tensor h = x;
  for (const auto& layer : layers) h = forward(tape, layer, h);
  return h;
}

std::vector<Parameter*> parameters(Layer& layer) {
  if (auto* l = std::get_if<LinearLayer>(&layer)) return {&l->weight, &l->bias};
  if (auto* c = std::get_if<Conv2dLayer>(&layer)) return {&c->kernels, &c->bias};
  return {};
}

std::vector<const Parameter*> parameters(const Layer& layer) {
  if (const auto* l = std::get_if<LinearLayer>(&layer)) return {&l->weight, &l->bias};
  if (const auto* c = std::get_if<Conv2dLayer>(&layer)) return {&c->kernels, &c->bias};
  return {};
}

std::vector<Parameter*> parameters(std::vector<Layer>& layers) {
  std::vector<Parameter*> out;
  for (auto& layer : layers)
    for (auto* p : parameters(layer)) out.push_back(p);
  return out;
}

std::vector<const Parameter*> parameters(const std::vector<Layer>& layers) {
  std::vector<const Parameter*> out;
  for (const auto& layer : layers)
    for (const auto* p : parameters(layer)) out.push_back(p);
  return out;
}

std::size_t parameter_count(const std::vector<Layer>& layers) {
  std::size_t n = 0;
  for (const auto* p : parameters(layers)) n += p->value.size();
  return n;
}

void init_params(Layer& layer, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  if (auto* l = std::get_if<LinearLayer>(&layer)) {
    fill_uniform(l->weight.value, std::sqrt(1.0 / static_cast<double>(l->in)), rng);
    l->bias.value = Tensor::zeros({l->out});
  } else if (auto* c = std::get_if<Conv2dLayer>(&layer)) {
    fill_uniform(c->kernels.value, std::sqrt(1.0 / static_cast<double>(c->in_channels * 9)), rng);
    c->bias.value = Tensor::zeros({c->out_channels});
  }
}

void init_params(std::vector<Layer>& layers, std::uint64_t seed) {
  std::seed_seq seq{seed, static_cast<std::uint64_t>(layers.size())};
  std::vector<std::uint64_t> seeds(layers.size());
  seq.generate(seeds.begin(), seeds.end());
  for (std::size_t i = 0; i < layers.size(); ++i) init_params(layers[i], seeds[i]);
}

std::string to_string(HeadKind kind) {
  switch (kind) {
    case HeadKind::kIdentity: return "identity";
    case HeadKind::kLinear: return "linear";
    case HeadKind::kMlp: return "mlp";
  }
  return "mlp";
}

HeadKind parse_head_kind(const std::string& name) {
  if (name == "identity") return HeadKind::kIdentity;
  if (name == "linear") return HeadKind::kLinear;
  if (name == "mlp") return HeadKind::kMlp;
  throw ConfigError("unknown projection head '" + name + "' (expected identity, linear or mlp)");
}

std::vector<Layer> make_projection_head(const HeadSpec& spec, std::size_t dim,
                                        const std::string& name) {
  std::vector<Layer> layers;
  layers.emplace_back(FlattenLayer{});
  switch (spec.kind) {
    case HeadKind::kIdentity:
      break;
    case HeadKind::kLinear:
      layers.emplace_back(make_linear(dim, spec.out, name + ".0"));
      break;
    case HeadKind::kMlp:
      layers.emplace_back(make_linear(dim, spec.hidden, name + ".0"));
      layers.emplace_back(ActivationLayer{Activation::kRelu});
      layers.emplace_back(make_linear(spec.hidden, spec.out, name + ".2"));
      break;
  }
  return layers;
}

std::size_t projection_head_parameter_count(const HeadSpec& spec, std::size_t dim) {
  switch (spec.kind) {
    case HeadKind::kIdentity: return 0;
    case HeadKind::kLinear: return dim * spec.out + spec.out;
    case HeadKind::kMlp: return dim * spec.hidden + spec.hidden + spec.hidden * spec.out + spec.out;
  }
  return 0;
}

void write_parameters(std::ostream& os, const std::vector<NamedTensor>& records) {
  os.write(kParamMagic.data(), kParamMagic.size());
  write_le<std::uint32_t>(os, static_cast<std::uint32_t>(records.size()));
  for (const auto& r : records) {
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.name.size()));
    os.write(r.name.data(), static_cast<std::streamsize>(r.name.size()));
    write_le<std::uint32_t>(os, static_cast<std::uint32_t>(r.value.rank()));
    for (auto d : r.value.shape()) write_le<std::uint64_t>(os, d);
    for (double v : r.value.data()) write_le<double>(os, v);
  }
  if (!os) throw IoError("failed writing parameter container");
}

std::vector<NamedTensor> read_parameters(std::istream& is) {
  std::array<char, 8> magic{};
  is.read(magic.data(), magic.size());
  if (!is || magic != kParamMagic) throw IoError("parameter container: bad magic");
  const auto count = read_le<std::uint32_t>(is);
  std::vector<NamedTensor> records;
  records.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = read_le<std::uint32_t>(is);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw IoError("parameter container truncated");
    const auto rank = read_le<std::uint32_t>(is);
    Shape shape(rank);
    for (auto& d : shape) d = read_le<std::uint64_t>(is);
    std::vector<double> data(numel(shape));
    for (auto& v : data) v = read_le<double>(is);
    records.push_back({std::move(name), Tensor(std::move(shape), std::move(data))});
  }
  return records;
}

}  // namespace scpl
