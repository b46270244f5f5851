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
#include <span>
#include <unordered_map>
#include <vector>

#include "scpl/layers.hpp"

namespace scpl {

using GradMap = std::unordered_map<ParamId, std::vector<double>>;

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;

  struct Moments {
    std::vector<double> first;
    std::vector<double> second;
  };
  std::unordered_map<ParamId, Moments> moments;
};

/// One bias-corrected Adam update of `params`. Every parameter must have an
/// entry in `grads`; a missing one raises an error naming it.
void adam_step(AdamState& state, std::span<Parameter* const> params, const GradMap& grads,
               double lr);

/// lr_min + (lr_max - lr_min) * (1 + cos(pi * t / total)) / 2
double cosine_lr(double t, double total, double lr_max, double lr_min);

}  // namespace scpl
