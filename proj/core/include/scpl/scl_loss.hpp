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

#include <vector>

#include "scpl/tensor.hpp"

namespace scpl {

/// Same-label relation of a batch. `same_label[i*b+j]` is labels[i]==labels[j];
/// `not_self[i*b+j]` is i != j.
struct PositiveMask {
  std::size_t batch = 0;
  std::vector<bool> same_label;
  std::vector<bool> not_self;

  bool positive(std::size_t i, std::size_t j) const {
    return same_label[i * batch + j] && not_self[i * batch + j];
  }
  std::size_t positives_of(std::size_t anchor) const;
  std::size_t same_label_total() const;
};

PositiveMask build_positive_mask(const std::vector<int>& labels);

enum class SclVariant {
  // Per-anchor 1/|P(i)| normalisation, summed over anchors.
  kPerAnchor,
  // One global divisor, the count of same-label pairs (diagonal included),
  // then the mean over anchors.
  kGlobalMaskSum,
};

/// Supervised contrastive loss on raw embeddings `z` (b x d). Rows are
/// L2-normalised internally; anchors without positives contribute nothing.
/// Throws when no anchor has a positive or tau <= 0.
Tensor supcon_loss(Tape& tape, const Tensor& z, const std::vector<int>& labels, double tau,
                   SclVariant variant = SclVariant::kPerAnchor);

Tensor supcon_loss_global_mask_sum(Tape& tape, const Tensor& z, const std::vector<int>& labels,
                                double tau);

/// Summed softmax cross-entropy of `logits` (b x C) against `labels`.
Tensor cross_entropy(Tape& tape, const Tensor& logits, const std::vector<int>& labels);

}  // namespace scpl
