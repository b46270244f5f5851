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

#include "scpl/optim.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "scpl/error.hpp"

namespace scpl {

void adam_step(AdamState& state, std::span<Parameter* const> params, const GradMap& grads,
               double lr) {
  for (const Parameter* p : params) {
    auto it = grads.find(p->id);
    if (it == grads.end()) throw Error("adam_step: no gradient for parameter " + p->name);
    if (it->second.size() != p->value.size())
      throw ShapeError("adam_step: gradient size mismatch for parameter " + p->name);
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(state.beta1, t);
  const double correction2 = 1.0 - std::pow(state.beta2, t);
  for (Parameter* p : params) {
    const auto& g = grads.at(p->id);
    auto& m = state.moments[p->id];
    if (m.first.empty()) {
      m.first.assign(g.size(), 0.0);
      m.second.assign(g.size(), 0.0);
    }
    auto w = p->value.mutable_data();
    for (std::size_t i = 0; i < g.size(); ++i) {
      m.first[i] = state.beta1 * m.first[i] + (1.0 - state.beta1) * g[i];
      m.second[i] = state.beta2 * m.second[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double m_hat = m.first[i] / correction1;
      const double v_hat = m.second[i] / correction2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + state.eps);
    }
  }
}

double cosine_lr(double t, double total, double lr_max, double lr_min) {
  if (total <= 0.0) return lr_max;
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t / total));
}

}  // namespace scpl
