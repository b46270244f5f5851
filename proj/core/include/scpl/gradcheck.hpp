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
#include <functional>
#include <string>
#include <vector>

#include "scpl/tensor.hpp"

namespace scpl {

using ScalarFn = std::function<Tensor(Tape&, const Tensor&)>;

/// Compares the tape gradient of `f` at `x` against central differences with
/// step `h`. Returns max_i |analytic_i - numeric_i| / max(1, |analytic_i|).
/// A coordinate with no gradient buffer counts as analytic 0.
double finite_diff_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

/// Central-difference gradient only; no tape involved.
std::vector<double> numeric_gradient(const ScalarFn& f, const Tensor& x, double h = 1e-5);

struct GradcheckResult {
  std::string name;
  std::size_t cases = 0;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
  std::string detail;
};

struct GradcheckOptions {
  std::size_t cases_per_check = 100;
  std::uint64_t seed = 2024;
  double step = 1e-5;
  double smooth_tolerance = 1e-6;
  double kinked_tolerance = 1e-4;
  double loss_tolerance = 1e-4;
};

/// Finite-difference suite over every primitive op, the layers, both
/// contrastive loss variants and the component blocking check.
std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace scpl
