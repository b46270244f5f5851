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

#include "scpl/scl_loss.hpp"

#include <string>

#include "scpl/error.hpp"

namespace scpl {

std::size_t PositiveMask::positives_of(std::size_t anchor) const {
  std::size_t n = 0;
  for (std::size_t j = 0; j < batch; ++j) n += positive(anchor, j) ? 1 : 0;
  return n;
}

std::size_t PositiveMask::same_label_total() const {
  std::size_t n = 0;
  for (bool v : same_label) n += v ? 1 : 0;
  return n;
}

PositiveMask build_positive_mask(const std::vector<int>& labels) {
  const std::size_t b = labels.size();
  if (b < 2) throw ShapeError("contrastive batch needs at least 2 samples, got " + std::to_string(b));
  PositiveMask m;
  m.batch = b;
  m.same_label.resize(b * b);
  m.not_self.resize(b * b);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < b; ++j) {
      m.same_label[i * b + j] = labels[i] == labels[j];
      m.not_self[i * b + j] = i != j;
    }
  return m;
}

Tensor supcon_loss(Tape& tape, const Tensor& z, const std::vector<int>& labels, double tau,
                   SclVariant variant) {
  if (!(tau > 0.0)) throw ConfigError("temperature must be positive, got " + std::to_string(tau));
  if (z.rank() != 2 || z.dim(0) != labels.size())
    throw ShapeError("supcon_loss: embeddings " + to_string(z.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  const PositiveMask mask = build_positive_mask(labels);
  const std::size_t b = mask.batch;

  std::vector<double> positives(b);
  std::size_t anchors_with_positives = 0;
  for (std::size_t i = 0; i < b; ++i) {
    positives[i] = static_cast<double>(mask.positives_of(i));
    anchors_with_positives += positives[i] > 0 ? 1 : 0;
  }
  if (anchors_with_positives == 0) throw Error("no positive pairs in batch");

  const Tensor zn = l2_normalize_rows(tape, z);
  const Tensor sim = scale(tape, matmul(tape, zn, transpose(tape, zn)), 1.0 / tau);
  // log sum_{j != i} exp(s_ij), max-shifted.
  const Tensor lse = log_sum_exp(tape, sim, 1, &mask.not_self);

  // loss = sum_i c_i * lse_i - sum_{i,j} w_ij * s_ij
  std::vector<double> anchor_weight(b, 0.0);
  std::vector<double> pair_weight(b * b, 0.0);
  const double global = static_cast<double>(b * mask.same_label_total());
  for (std::size_t i = 0; i < b; ++i) {
    if (positives[i] == 0) continue;
    const double per_pair = variant == SclVariant::kPerAnchor ? 1.0 / positives[i] : 1.0 / global;
    anchor_weight[i] = per_pair * positives[i];
    for (std::size_t j = 0; j < b; ++j)
      if (mask.positive(i, j)) pair_weight[i * b + j] = per_pair;
  }
  const Tensor denominators = sum_all(tape, mul(tape, lse, Tensor({b}, std::move(anchor_weight))));
  const Tensor numerators = sum_all(tape, mul(tape, sim, Tensor({b, b}, std::move(pair_weight))));
  return sub(tape, denominators, numerators);
}

Tensor supcon_loss_global_mask_sum(Tape& tape, const Tensor& z, const std::vector<int>& labels,
                                double tau) {
  return supcon_loss(tape, z, labels, tau, SclVariant::kGlobalMaskSum);
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ShapeError("cross_entropy: logits " + to_string(logits.shape()) + " do not match " +
                     std::to_string(labels.size()) + " labels");
  const std::size_t b = logits.dim(0), classes = logits.dim(1);
  std::vector<double> onehot(b * classes, 0.0);
  for (std::size_t i = 0; i < b; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw ShapeError("cross_entropy: label " + std::to_string(labels[i]) + " outside [0, " +
                       std::to_string(classes) + ")");
    onehot[i * classes + static_cast<std::size_t>(labels[i])] = 1.0;
  }
  const Tensor lse = sum_all(tape, log_sum_exp(tape, logits, 1));
  const Tensor picked = sum_all(tape, mul(tape, logits, Tensor({b, classes}, std::move(onehot))));
  return sub(tape, lse, picked);
}

}  // namespace scpl
