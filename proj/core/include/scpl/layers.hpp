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
#include <string>
#include <variant>
#include <vector>

#include "scpl/tensor.hpp"

namespace scpl {

using ParamId = std::uint64_t;

/// A named trainable tensor. `id` keys the parameter on a tape and in
/// optimizer state; copies of a layer keep the id of the slot they copy.
struct Parameter {
  ParamId id = 0;
  std::string name;
  Tensor value;
};

Parameter make_parameter(std::string name, Tensor value);

// Tracked view of `p` on `tape`, or its plain value on an inference tape.
Tensor bind(Tape& tape, const Parameter& p);

enum class Activation { kRelu, kLeakyRelu, kTanh };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

struct LinearLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  Parameter weight;  // out x in
  Parameter bias;    // out
};

struct Conv2dLayer {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  Parameter kernels;  // out x in x 3 x 3
  Parameter bias;     // out
};

// batch x d1 x ... -> batch x (d1 * ...)
struct FlattenLayer {};

struct ActivationLayer {
  Activation kind = Activation::kRelu;
};

using Layer = std::variant<LinearLayer, Conv2dLayer, FlattenLayer, ActivationLayer>;

LinearLayer make_linear(std::size_t in, std::size_t out, const std::string& name);
Conv2dLayer make_conv2d(std::size_t in_channels, std::size_t out_channels, const std::string& name);

Tensor linear_forward(Tape& tape, const LinearLayer& layer, const Tensor& x);
Tensor conv2d_forward(Tape& tape, const Conv2dLayer& layer, const Tensor& x);
Tensor forward(Tape& tape, const Layer& layer, const Tensor& x);
Tensor forward(Tape& tape, const std::vector<Layer>& layers, const Tensor& x);

std::vector<Parameter*> parameters(Layer& layer);
std::vector<const Parameter*> parameters(const Layer& layer);
std::vector<Parameter*> parameters(std::vector<Layer>& layers);
std::vector<const Parameter*> parameters(const std::vector<Layer>& layers);
std::size_t parameter_count(const std::vector<Layer>& layers);

/// Weights ~ Uniform(-s, s) with s = sqrt(1 / fan_in); biases zero.
void init_params(Layer& layer, std::uint64_t seed);
void init_params(std::vector<Layer>& layers, std::uint64_t seed);

enum class HeadKind { kIdentity, kLinear, kMlp };

std::string to_string(HeadKind kind);
HeadKind parse_head_kind(const std::string& name);

struct HeadSpec {
  HeadKind kind = HeadKind::kMlp;
  std::size_t hidden = 512;
  std::size_t out = 1024;
};

/// Projection head on flattened `dim`-wide features:
/// identity, Linear(dim, out), or Linear(dim, hidden)-ReLU-Linear(hidden, out).
std::vector<Layer> make_projection_head(const HeadSpec& spec, std::size_t dim,
                                        const std::string& name);
std::size_t projection_head_parameter_count(const HeadSpec& spec, std::size_t dim);

// Flat parameter container: a sequence of (name, shape, f64 little-endian) records.
struct NamedTensor {
  std::string name;
  Tensor value;
};

void write_parameters(std::ostream& os, const std::vector<NamedTensor>& records);
std::vector<NamedTensor> read_parameters(std::istream& is);

}  // namespace scpl
