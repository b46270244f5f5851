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

#include "scpl/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>

#include "scpl/error.hpp"

namespace scpl {

namespace {

std::atomic<std::uint64_t> next_tape_id{1};
std::atomic<bool> relu_fault{false};

void require(bool ok, const std::string& message) {
  if (!ok) throw ShapeError(message);
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view op) {
  require(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + to_string(a.shape()) +
                                      " vs " + to_string(b.shape()));
}

void require_rank(const Tensor& t, std::size_t rank, std::string_view op) {
  require(t.rank() == rank, std::string(op) + ": expected rank " + std::to_string(rank) +
                                " but got shape " + to_string(t.shape()));
}

// C (m x n) += op(A) * op(B) where op transposes when the flag is set.
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
              std::size_t n, bool trans_a, bool trans_b) {
  if (!trans_a && !trans_b) {
    for (std::size_t i = 0; i < m; ++i) {
      double* crow = c + i * n;
      for (std::size_t p = 0; p < k; ++p) {
        const double av = a[i * k + p];
        if (av == 0.0) continue;
        const double* brow = b + p * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!trans_a && trans_b) {
    // B stored n x k.
    for (std::size_t i = 0; i < m; ++i) {
      const double* arow = a + i * k;
      for (std::size_t j = 0; j < n; ++j) {
        const double* brow = b + j * k;
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
        c[i * n + j] += acc;
      }
    }
  } else if (trans_a && !trans_b) {
    // A stored k x m.
    for (std::size_t p = 0; p < k; ++p) {
      const double* arow = a + p * m;
      const double* brow = b + p * n;
      for (std::size_t i = 0; i < m; ++i) {
        const double av = arow[i];
        if (av == 0.0) continue;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      }
    }
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0.0;
        for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[j * k + p];
        c[i * n + j] += acc;
      }
  }
}

// Rows/cols view of a rank-1 or rank-2 tensor for reductions.
struct Matrix2d {
  std::size_t rows;
  std::size_t cols;
};

Matrix2d as_matrix(const Tensor& x, std::string_view op) {
  require(x.rank() == 1 || x.rank() == 2,
          std::string(op) + ": expected rank 1 or 2 but got shape " + to_string(x.shape()));
  if (x.rank() == 1) return {1, x.dim(0)};
  return {x.dim(0), x.dim(1)};
}

Shape reduced_shape(const Tensor& x, std::size_t axis) {
  if (x.rank() == 1) return {};
  return {axis == 0 ? x.dim(1) : x.dim(0)};
}

void require_axis(const Tensor& x, std::size_t axis, std::string_view op) {
  require(axis < x.rank(), std::string(op) + ": axis " + std::to_string(axis) +
                               " out of range for shape " + to_string(x.shape()));
}

template <typename F>
Tensor map_unary(const Tensor& x, F f) {
  std::vector<double> out(x.size());
  auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return Tensor(x.shape(), std::move(out));
}

}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor() : shape_{0}, data_(std::make_shared<std::vector<double>>()) {}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::make_shared<std::vector<double>>(std::move(data))) {
  if (numel(shape_) != data_->size())
    throw ShapeError("tensor shape " + to_string(shape_) + " holds " +
                     std::to_string(numel(shape_)) + " values but " +
                     std::to_string(data_->size()) + " were given");
}

Tensor Tensor::zeros(Shape shape) { return full(std::move(shape), 0.0); }

Tensor Tensor::full(Shape shape, double value) {
  const auto n = numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return Tensor({}, {value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape_));
  return shape_[axis];
}

std::span<double> Tensor::mutable_data() {
  if (data_.use_count() > 1) data_ = std::make_shared<std::vector<double>>(*data_);
  // A tracked tensor's value is saved on its tape; writing it would desync.
  node_.reset();
  tape_id_ = 0;
  return *data_;
}

double Tensor::at(std::size_t row, std::size_t col) const {
  if (rank() != 2) throw ShapeError("at(row, col) needs a rank-2 tensor, got " + to_string(shape_));
  return (*data_)[row * shape_[1] + col];
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape_));
  return (*data_)[0];
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kLeaf: return "leaf";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kAddRowVector: return "add_row_vector";
    case OpKind::kExp: return "exp";
    case OpKind::kLog: return "log";
    case OpKind::kRelu: return "relu";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kTanh: return "tanh";
    case OpKind::kMatmul: return "matmul";
    case OpKind::kTranspose: return "transpose";
    case OpKind::kSum: return "sum";
    case OpKind::kMean: return "mean";
    case OpKind::kSumAll: return "sum_all";
    case OpKind::kL2NormalizeRows: return "l2_normalize_rows";
    case OpKind::kLogSumExp: return "log_sum_exp";
    case OpKind::kReshape: return "reshape";
    case OpKind::kConv2d: return "conv2d_3x3";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Gradients

bool Gradients::has(NodeId id) const { return id < buffers_.size() && buffers_[id].has_value(); }

bool Gradients::has(const Tensor& t) const {
  return t.tracked() && t.tape_id() == tape_id_ && has(*t.node());
}

std::optional<std::span<const double>> Gradients::of(NodeId id) const {
  if (!has(id)) return std::nullopt;
  return std::span<const double>(*buffers_[id]);
}

std::optional<std::span<const double>> Gradients::of(const Tensor& t) const {
  if (!has(t)) return std::nullopt;
  return of(*t.node());
}

std::size_t Gradients::allocated() const {
  return static_cast<std::size_t>(
      std::count_if(buffers_.begin(), buffers_.end(), [](const auto& b) { return b.has_value(); }));
}

// ---------------------------------------------------------------------------
// Tape

Tape::Tape(Mode mode) : mode_(mode), id_(next_tape_id.fetch_add(1)) {}

void Tape::check_owned(const Tensor& t) const {
  if (t.tracked() && t.tape_id() != id_)
    throw Error("tensor is tracked on a different tape; detach it before crossing tapes");
}

Tensor Tape::watch(const Tensor& value) {
  Tensor out = value;
  out.node_.reset();
  out.tape_id_ = 0;
  if (!recording()) return out;
  const auto id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(Node{OpKind::kLeaf, {}, value.shape(), nullptr});
  out.node_ = id;
  out.tape_id_ = id_;
  return out;
}

Tensor Tape::watch_keyed(std::uint64_t key, const Tensor& value) {
  if (!recording()) return detach(value);
  if (auto it = keyed_.find(key); it != keyed_.end()) {
    Tensor out = value;
    out.node_ = it->second;
    out.tape_id_ = id_;
    return out;
  }
  Tensor out = watch(value);
  keyed_.emplace(key, *out.node());
  return out;
}

std::optional<NodeId> Tape::keyed_node(std::uint64_t key) const {
  if (auto it = keyed_.find(key); it != keyed_.end()) return it->second;
  return std::nullopt;
}

Tensor Tape::record(OpKind kind, std::initializer_list<const Tensor*> inputs, Tensor out, Vjp vjp) {
  for (double v : out.data()) {
    if (!std::isfinite(v))
      throw NumericError(std::string("non-finite value produced by ") + std::string(op_name(kind)));
  }
  bool any_tracked = false;
  for (const Tensor* in : inputs) {
    check_owned(*in);
    any_tracked = any_tracked || in->tracked();
  }
  if (!recording() || !any_tracked) return out;

  Node node{kind, {}, out.shape(), std::move(vjp)};
  node.inputs.reserve(inputs.size());
  for (const Tensor* in : inputs) node.inputs.push_back(in->node());
  const auto id = static_cast<NodeId>(nodes_.size());
  nodes_.push_back(std::move(node));
  out.node_ = id;
  out.tape_id_ = id_;
  return out;
}

Gradients Tape::backward(const Tensor& root) const {
  if (!root.tracked() || root.tape_id() != id_)
    throw Error("backward: root is not tracked on this tape");
  if (root.size() != 1)
    throw ShapeError("backward: root must be a scalar, got shape " + to_string(root.shape()));

  Gradients grads;
  grads.tape_id_ = id_;
  grads.buffers_.resize(nodes_.size());
  const NodeId root_id = *root.node();
  grads.buffers_[root_id] = std::vector<double>{1.0};

  std::vector<double*> grad_in;
  for (std::int64_t i = root_id; i >= 0; --i) {
    const auto id = static_cast<NodeId>(i);
    if (!grads.buffers_[id]) continue;
    const Node& n = nodes_[id];
    if (n.kind == OpKind::kLeaf) continue;
    grad_in.assign(n.inputs.size(), nullptr);
    for (std::size_t k = 0; k < n.inputs.size(); ++k) {
      if (!n.inputs[k]) continue;
      auto& buf = grads.buffers_[*n.inputs[k]];
      if (!buf) buf.emplace(numel(nodes_[*n.inputs[k]].shape), 0.0);
      grad_in[k] = buf->data();
    }
    n.vjp(*grads.buffers_[id], grad_in);
  }
  return grads;
}

std::size_t Tape::gradient_path_length(const Tensor& root) const {
  if (!root.tracked() || root.tape_id() != id_) return 0;
  const NodeId root_id = *root.node();
  std::vector<std::int64_t> depth(root_id + 1, -1);
  depth[root_id] = 0;
  std::size_t longest = 0;
  for (std::int64_t i = root_id; i >= 0; --i) {
    if (depth[i] < 0) continue;
    const Node& n = nodes_[i];
    if (n.kind == OpKind::kLeaf) {
      longest = std::max(longest, static_cast<std::size_t>(depth[i]));
      continue;
    }
    for (const auto& in : n.inputs)
      if (in) depth[*in] = std::max(depth[*in], depth[i] + 1);
  }
  return longest;
}

Tensor detach(const Tensor& t) {
  Tensor out = t;
  out.node_.reset();
  out.tape_id_ = 0;
  return out;
}

// ---------------------------------------------------------------------------
// Elementwise ops

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return tape.record(OpKind::kAdd, {&a, &b}, Tensor(a.shape(), std::move(out)),
                     [](std::span<const double> g, std::span<double* const> gi) {
                       for (auto* d : gi)
                         if (d)
                           for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                     });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return tape.record(OpKind::kSub, {&a, &b}, Tensor(a.shape(), std::move(out)),
                     [](std::span<const double> g, std::span<double* const> gi) {
                       if (gi[0])
                         for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                       if (gi[1])
                         for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] -= g[i];
                     });
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return tape.record(OpKind::kMul, {&a, &b}, Tensor(a.shape(), std::move(out)),
                     [av = detach(a), bv = detach(b)](std::span<const double> g,
                                                      std::span<double* const> gi) {
                       if (gi[0])
                         for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * bv[i];
                       if (gi[1])
                         for (std::size_t i = 0; i < g.size(); ++i) gi[1][i] += g[i] * av[i];
                     });
}

Tensor scale(Tape& tape, const Tensor& a, double s) {
  Tensor out = map_unary(a, [s](double v) { return v * s; });
  return tape.record(OpKind::kScale, {&a}, std::move(out),
                     [s](std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += s * g[i];
                     });
}

Tensor add_row_vector(Tape& tape, const Tensor& x, const Tensor& v) {
  require_rank(x, 2, "add_row_vector");
  require_rank(v, 1, "add_row_vector");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  require(v.dim(0) == cols, "add_row_vector: vector length " + std::to_string(v.dim(0)) +
                                " does not match row width " + std::to_string(cols));
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + v[c];
  return tape.record(OpKind::kAddRowVector, {&x, &v}, Tensor(x.shape(), std::move(out)),
                     [rows, cols](std::span<const double> g, std::span<double* const> gi) {
                       if (gi[0])
                         for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                       if (gi[1])
                         for (std::size_t r = 0; r < rows; ++r)
                           for (std::size_t c = 0; c < cols; ++c) gi[1][c] += g[r * cols + c];
                     });
}

Tensor exp(Tape& tape, const Tensor& x) {
  Tensor out = map_unary(x, [](double v) { return std::exp(v); });
  return tape.record(OpKind::kExp, {&x}, out,
                     [y = detach(out)](std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] * y[i];
                     });
}

Tensor log(Tape& tape, const Tensor& x) {
  Tensor out = map_unary(x, [](double v) { return std::log(v); });
  return tape.record(OpKind::kLog, {&x}, std::move(out),
                     [xv = detach(x)](std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i] / xv[i];
                     });
}

Tensor relu(Tape& tape, const Tensor& x) {
  Tensor out = map_unary(x, [](double v) { return v > 0.0 ? v : 0.0; });
  const bool fault = relu_fault.load();
  return tape.record(OpKind::kRelu, {&x}, std::move(out),
                     [xv = detach(x), fault](std::span<const double> g,
                                             std::span<double* const> gi) {
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         // relu'(0) is taken as 0.
                         const double d = xv[i] > 0.0 ? 1.0 : 0.0;
                         gi[0][i] += g[i] * (fault ? 1.0 - d : d);
                       }
                     });
}

Tensor leaky_relu(Tape& tape, const Tensor& x, double slope) {
  Tensor out = map_unary(x, [slope](double v) { return v > 0.0 ? v : slope * v; });
  return tape.record(OpKind::kLeakyRelu, {&x}, std::move(out),
                     [xv = detach(x), slope](std::span<const double> g,
                                             std::span<double* const> gi) {
                       for (std::size_t i = 0; i < g.size(); ++i)
                         gi[0][i] += g[i] * (xv[i] > 0.0 ? 1.0 : slope);
                     });
}

Tensor tanh(Tape& tape, const Tensor& x) {
  Tensor out = map_unary(x, [](double v) { return std::tanh(v); });
  return tape.record(OpKind::kTanh, {&x}, out,
                     [y = detach(out)](std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < g.size(); ++i)
                         gi[0][i] += g[i] * (1.0 - y[i] * y[i]);
                     });
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  require(b.dim(0) == k, "matmul: inner dimensions differ, " + to_string(a.shape()) + " x " +
                             to_string(b.shape()));
  std::vector<double> out(m * n, 0.0);
  gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n, false, false);
  return tape.record(
      OpKind::kMatmul, {&a, &b}, Tensor({m, n}, std::move(out)),
      [av = detach(a), bv = detach(b), m, k, n](std::span<const double> g,
                                                std::span<double* const> gi) {
        // dA = G B^T, dB = A^T G
        if (gi[0]) gemm_acc(g.data(), bv.data().data(), gi[0], m, n, k, false, true);
        if (gi[1]) gemm_acc(av.data().data(), g.data(), gi[1], k, m, n, true, false);
      });
}

Tensor transpose(Tape& tape, const Tensor& x) {
  require_rank(x, 2, "transpose");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = x[r * cols + c];
  return tape.record(OpKind::kTranspose, {&x}, Tensor({cols, rows}, std::move(out)),
                     [rows, cols](std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c)
                           gi[0][r * cols + c] += g[c * rows + r];
                     });
}

// ---------------------------------------------------------------------------
// Reductions

namespace {

Tensor reduce_sum(Tape& tape, const Tensor& x, std::size_t axis, double factor, OpKind kind) {
  const auto [rows, cols] = as_matrix(x, op_name(kind));
  require_axis(x, axis, op_name(kind));
  // Rank 1 reduces its only axis; treat it as the column axis of a 1 x n matrix.
  const bool over_cols = x.rank() == 1 || axis == 1;
  std::vector<double> out(over_cols ? rows : cols, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[over_cols ? r : c] += x[r * cols + c];
  for (auto& v : out) v *= factor;
  return tape.record(kind, {&x}, Tensor(reduced_shape(x, axis), std::move(out)),
                     [rows, cols, over_cols, factor](std::span<const double> g,
                                                     std::span<double* const> gi) {
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c)
                           gi[0][r * cols + c] += factor * g[over_cols ? r : c];
                     });
}

}  // namespace

Tensor sum(Tape& tape, const Tensor& x, std::size_t axis) {
  return reduce_sum(tape, x, axis, 1.0, OpKind::kSum);
}

Tensor mean(Tape& tape, const Tensor& x, std::size_t axis) {
  require_axis(x, axis, "mean");
  const std::size_t count = x.dim(axis);
  require(count > 0, "mean: empty axis");
  return reduce_sum(tape, x, axis, 1.0 / static_cast<double>(count), OpKind::kMean);
}

Tensor sum_all(Tape& tape, const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  return tape.record(OpKind::kSumAll, {&x}, Tensor::scalar(total),
                     [n = x.size()](std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < n; ++i) gi[0][i] += g[0];
                     });
}

Tensor l2_normalize_rows(Tape& tape, const Tensor& x) {
  require_rank(x, 2, "l2_normalize_rows");
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  std::vector<double> norms(rows);
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double sq = 0.0;
    for (std::size_t c = 0; c < cols; ++c) sq += x[r * cols + c] * x[r * cols + c];
    const double norm = std::sqrt(sq);
    if (!(norm > 0.0))
      throw NumericError("l2_normalize_rows: row " + std::to_string(r) + " has zero norm");
    norms[r] = norm;
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] / norm;
  }
  Tensor y(x.shape(), std::move(out));
  return tape.record(OpKind::kL2NormalizeRows, {&x}, y,
                     [yv = detach(y), norms = std::move(norms), rows, cols](
                         std::span<const double> g, std::span<double* const> gi) {
                       // dx = (g - y <y, g>) / |x|
                       for (std::size_t r = 0; r < rows; ++r) {
                         double dot = 0.0;
                         for (std::size_t c = 0; c < cols; ++c)
                           dot += yv[r * cols + c] * g[r * cols + c];
                         for (std::size_t c = 0; c < cols; ++c)
                           gi[0][r * cols + c] +=
                               (g[r * cols + c] - yv[r * cols + c] * dot) / norms[r];
                       }
                     });
}

Tensor log_sum_exp(Tape& tape, const Tensor& x, std::size_t axis, const std::vector<bool>* mask) {
  const auto [rows, cols] = as_matrix(x, "log_sum_exp");
  require_axis(x, axis, "log_sum_exp");
  if (mask)
    require(mask->size() == x.size(), "log_sum_exp: mask has " + std::to_string(mask->size()) +
                                          " entries for shape " + to_string(x.shape()));
  const bool over_cols = x.rank() == 1 || axis == 1;
  const std::size_t slices = over_cols ? rows : cols;
  const std::size_t len = over_cols ? cols : rows;
  auto index = [=](std::size_t s, std::size_t j) { return over_cols ? s * cols + j : j * cols + s; };
  auto kept = [&](std::size_t i) { return mask == nullptr || (*mask)[i]; };

  std::vector<double> out(slices);
  std::vector<double> softmax(x.size(), 0.0);
  for (std::size_t s = 0; s < slices; ++s) {
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < len; ++j)
      if (kept(index(s, j))) hi = std::max(hi, x[index(s, j)]);
    if (hi == -std::numeric_limits<double>::infinity())
      throw ShapeError("log_sum_exp: slice " + std::to_string(s) + " has no unmasked entries");
    double acc = 0.0;
    for (std::size_t j = 0; j < len; ++j)
      if (kept(index(s, j))) acc += std::exp(x[index(s, j)] - hi);
    out[s] = hi + std::log(acc);
    for (std::size_t j = 0; j < len; ++j)
      if (kept(index(s, j))) softmax[index(s, j)] = std::exp(x[index(s, j)] - out[s]);
  }
  return tape.record(OpKind::kLogSumExp, {&x}, Tensor(reduced_shape(x, axis), std::move(out)),
                     [softmax = std::move(softmax), slices, len, index](
                         std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t s = 0; s < slices; ++s)
                         for (std::size_t j = 0; j < len; ++j)
                           gi[0][index(s, j)] += g[s] * softmax[index(s, j)];
                     });
}

Tensor reshape(Tape& tape, const Tensor& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape: cannot view " + to_string(x.shape()) + " as " +
                                        to_string(shape));
  Tensor out = detach(x);
  out.shape_ = std::move(shape);
  return tape.record(OpKind::kReshape, {&x}, std::move(out),
                     [](std::span<const double> g, std::span<double* const> gi) {
                       for (std::size_t i = 0; i < g.size(); ++i) gi[0][i] += g[i];
                     });
}

// ---------------------------------------------------------------------------
// Convolution

Tensor conv2d_3x3(Tape& tape, const Tensor& x, const Tensor& kernels, const Tensor& bias) {
  require_rank(x, 4, "conv2d_3x3");
  require_rank(kernels, 4, "conv2d_3x3");
  require_rank(bias, 1, "conv2d_3x3");
  const std::size_t batch = x.dim(0), in_ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t out_ch = kernels.dim(0);
  require(kernels.dim(1) == in_ch, "conv2d_3x3: input has " + std::to_string(in_ch) +
                                       " channels but kernels expect " +
                                       std::to_string(kernels.dim(1)));
  require(kernels.dim(2) == 3 && kernels.dim(3) == 3,
          "conv2d_3x3: kernels must be 3x3, got " + to_string(kernels.shape()));
  require(bias.dim(0) == out_ch, "conv2d_3x3: bias length does not match output channels");
  require(h >= 1 && w >= 1, "conv2d_3x3: empty spatial extent");

  const auto xi = [=](std::size_t n, std::size_t c, std::size_t y, std::size_t xx) {
    return ((n * in_ch + c) * h + y) * w + xx;
  };
  const auto oi = [=](std::size_t n, std::size_t o, std::size_t y, std::size_t xx) {
    return ((n * out_ch + o) * h + y) * w + xx;
  };
  const auto ki = [=](std::size_t o, std::size_t c, std::size_t ky, std::size_t kx) {
    return ((o * in_ch + c) * 3 + ky) * 3 + kx;
  };

  // Visits every (output pixel, kernel tap) pair whose input pixel lies inside
  // the zero-padded border.
  auto for_each_tap = [=](auto&& fn) {
    for (std::size_t n = 0; n < batch; ++n)
      for (std::size_t o = 0; o < out_ch; ++o)
        for (std::size_t c = 0; c < in_ch; ++c)
          for (std::size_t ky = 0; ky < 3; ++ky)
            for (std::size_t kx = 0; kx < 3; ++kx)
              for (std::size_t y = 0; y < h; ++y) {
                const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
                if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
                for (std::size_t xx = 0; xx < w; ++xx) {
                  const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(xx + kx) - 1;
                  if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                  fn(oi(n, o, y, xx), xi(n, c, static_cast<std::size_t>(sy),
                                         static_cast<std::size_t>(sx)),
                     ki(o, c, ky, kx));
                }
              }
  };

  std::vector<double> out(batch * out_ch * h * w);
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t o = 0; o < out_ch; ++o)
      for (std::size_t p = 0; p < h * w; ++p) out[oi(n, o, 0, 0) + p] = bias[o];
  auto xd = x.data();
  auto kd = kernels.data();
  for_each_tap([&](std::size_t o_idx, std::size_t x_idx, std::size_t k_idx) {
    out[o_idx] += xd[x_idx] * kd[k_idx];
  });

  return tape.record(
      OpKind::kConv2d, {&x, &kernels, &bias}, Tensor({batch, out_ch, h, w}, std::move(out)),
      [xv = detach(x), kv = detach(kernels), for_each_tap, batch, out_ch, h, w](
          std::span<const double> g, std::span<double* const> gi) {
        auto xd = xv.data();
        auto kd = kv.data();
        if (gi[0] || gi[1]) {
          for_each_tap([&](std::size_t o_idx, std::size_t x_idx, std::size_t k_idx) {
            if (gi[0]) gi[0][x_idx] += g[o_idx] * kd[k_idx];
            if (gi[1]) gi[1][k_idx] += g[o_idx] * xd[x_idx];
          });
        }
        if (gi[2])
          for (std::size_t n = 0; n < batch; ++n)
            for (std::size_t o = 0; o < out_ch; ++o)
              for (std::size_t p = 0; p < h * w; ++p)
                gi[2][o] += g[((n * out_ch + o) * h) * w + p];
      });
}

namespace debug {
void set_relu_gradient_fault(bool enabled) { relu_fault.store(enabled); }
bool relu_gradient_fault() { return relu_fault.load(); }
}  // namespace debug

}  // namespace scpl
