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

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace scpl {

using Shape = std::vector<std::size_t>;
using NodeId = std::uint32_t;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

class Tape;

/// Dense row-major array of doubles. A tensor produced by an op on a recording
/// tape carries a handle to the node that produced it; everything else is a
/// plain value. Storage is shared between copies and cloned on write.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor scalar(double value);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_->size(); }

  std::span<const double> data() const { return *data_; }
  std::span<double> mutable_data();

  double operator[](std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t row, std::size_t col) const;
  double item() const;

  bool tracked() const { return node_.has_value(); }
  std::optional<NodeId> node() const { return node_; }
  std::uint64_t tape_id() const { return tape_id_; }

  // True when both tensors view the same storage.
  bool shares_storage_with(const Tensor& other) const { return data_ == other.data_; }

 private:
  friend class Tape;
  friend Tensor detach(const Tensor& t);
  friend Tensor reshape(Tape& tape, const Tensor& x, Shape shape);

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::optional<NodeId> node_;
  std::uint64_t tape_id_ = 0;
};

enum class OpKind {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kScale,
  kAddRowVector,
  kExp,
  kLog,
  kRelu,
  kLeakyRelu,
  kTanh,
  kMatmul,
  kTranspose,
  kSum,
  kMean,
  kSumAll,
  kL2NormalizeRows,
  kLogSumExp,
  kReshape,
  kConv2d,
};

std::string_view op_name(OpKind kind);

// Accumulates the vector-Jacobian product of one node into its inputs' buffers.
// grad_in[k] is null when input k is not tracked.
using Vjp = std::function<void(std::span<const double> grad_out,
                               std::span<double* const> grad_in)>;

/// Gradient buffers produced by one backward pass. A buffer is present only
/// for nodes reachable backward from the root.
class Gradients {
 public:
  bool has(const Tensor& t) const;
  bool has(NodeId id) const;
  std::optional<std::span<const double>> of(const Tensor& t) const;
  std::optional<std::span<const double>> of(NodeId id) const;
  std::size_t allocated() const;

 private:
  friend class Tape;
  std::uint64_t tape_id_ = 0;
  std::vector<std::optional<std::vector<double>>> buffers_;
};

/// Append-only record of tracked operations. Each training component owns its
/// own tape; a tape is confined to one thread at a time.
class Tape {
 public:
  enum class Mode { kRecord, kInference };

  struct Node {
    OpKind kind;
    std::vector<std::optional<NodeId>> inputs;
    Shape shape;
    Vjp vjp;
  };

  explicit Tape(Mode mode = Mode::kRecord);

  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  Mode mode() const { return mode_; }
  bool recording() const { return mode_ == Mode::kRecord; }
  std::uint64_t id() const { return id_; }
  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const { return nodes_.at(id); }

  // Registers a leaf. In inference mode the value is returned untracked.
  Tensor watch(const Tensor& value);

  // Registers a leaf once per key; later calls with the same key return the
  // same node. Used to bind model parameters.
  Tensor watch_keyed(std::uint64_t key, const Tensor& value);
  std::optional<NodeId> keyed_node(std::uint64_t key) const;
  const std::unordered_map<std::uint64_t, NodeId>& keyed_nodes() const { return keyed_; }

  // Records `out` as the result of `kind` applied to `inputs` when any input
  // is tracked on this tape; otherwise returns `out` untouched.
  Tensor record(OpKind kind, std::initializer_list<const Tensor*> inputs, Tensor out, Vjp vjp);

  Gradients backward(const Tensor& root) const;

  // Longest chain of ops from `root` to any leaf it depends on.
  std::size_t gradient_path_length(const Tensor& root) const;

 private:
  void check_owned(const Tensor& t) const;

  Mode mode_;
  std::uint64_t id_;
  std::vector<Node> nodes_;
  std::unordered_map<std::uint64_t, NodeId> keyed_;
};

/// Same values, no tape linkage. Backward never crosses this boundary.
Tensor detach(const Tensor& t);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double s);
// x: rows x n, v: n. Adds v to every row.
Tensor add_row_vector(Tape& tape, const Tensor& x, const Tensor& v);
Tensor exp(Tape& tape, const Tensor& x);
Tensor log(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);
Tensor leaky_relu(Tape& tape, const Tensor& x, double slope = 0.01);
Tensor tanh(Tape& tape, const Tensor& x);
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor transpose(Tape& tape, const Tensor& x);
// Reduces a rank-1 or rank-2 tensor over `axis`.
Tensor sum(Tape& tape, const Tensor& x, std::size_t axis);
Tensor mean(Tape& tape, const Tensor& x, std::size_t axis);
Tensor sum_all(Tape& tape, const Tensor& x);
Tensor l2_normalize_rows(Tape& tape, const Tensor& x);
// Stable log(sum(exp(x))) over `axis`. Entries where `mask` is false are
// excluded; every reduced slice must keep at least one entry.
Tensor log_sum_exp(Tape& tape, const Tensor& x, std::size_t axis,
                   const std::vector<bool>* mask = nullptr);
Tensor reshape(Tape& tape, const Tensor& x, Shape shape);
// Same-padding 3x3 cross-correlation with stride 1.
// x: batch x in_ch x h x w, kernels: out_ch x in_ch x 3 x 3, bias: out_ch.
Tensor conv2d_3x3(Tape& tape, const Tensor& x, const Tensor& kernels, const Tensor& bias);

namespace debug {
// Test hook: when set, relu's backward pass uses a wrong derivative. Lets the
// gradient-check suite prove it detects faults.
void set_relu_gradient_fault(bool enabled);
bool relu_gradient_fault();
}  // namespace debug

}  // namespace scpl
