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

#include "scpl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "scpl/error.hpp"
#include "scpl/layers.hpp"
#include "scpl/network.hpp"
#include "scpl/rng.hpp"
#include "scpl/scl_loss.hpp"

namespace scpl {

namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
  Tape tape(Tape::Mode::kInference);
  const Tensor y = f(tape, x);
  if (y.size() != 1) throw ShapeError("gradcheck: function output has shape " + to_string(y.shape()));
  return y.item();
}

double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i)
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / std::max(1.0, std::abs(analytic[i])));
  return worst;
}

Tensor random_tensor(std::mt19937_64& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = u(rng);
  return Tensor(std::move(shape), std::move(data));
}

// Values bounded away from zero so kinked ops stay differentiable under the
// finite-difference step.
Tensor away_from_zero(std::mt19937_64& rng, Shape shape) {
  std::uniform_real_distribution<double> u(1e-3, 1.0);
  std::bernoulli_distribution sign(0.5);
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = sign(rng) ? u(rng) : -u(rng);
  return Tensor(std::move(shape), std::move(data));
}

std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// Random linear functional of y: keeps every output coordinate in play.
Tensor contract(Tape& tape, const Tensor& y, const Tensor& weights) {
  return sum_all(tape, mul(tape, y, weights));
}

std::vector<int> labels_with_positive(std::mt19937_64& rng, std::size_t b, std::size_t classes) {
  std::vector<int> labels(b);
  for (auto& l : labels) l = static_cast<int>(pick(rng, 0, classes - 1));
  labels[1] = labels[0];
  return labels;
}

// Gradient of `loss` with respect to every parameter in `params`, comparing
// the tape against central differences on the parameter values.
using ParamLoss = std::function<Tensor(Tape&)>;

double param_check(const ParamLoss& loss, const std::vector<Parameter*>& params, double h) {
  Tape tape;
  const Tensor root = loss(tape);
  const Gradients grads = tape.backward(root);
  double worst = 0.0;
  for (Parameter* p : params) {
    std::vector<double> analytic(p->value.size(), 0.0);
    if (const auto node = tape.keyed_node(p->id))
      if (const auto g = grads.of(*node)) std::copy(g->begin(), g->end(), analytic.begin());
    std::vector<double> numeric(p->value.size());
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      const double original = p->value[i];
      p->value.mutable_data()[i] = original + h;
      Tape plus(Tape::Mode::kInference);
      const double up = loss(plus).item();
      p->value.mutable_data()[i] = original - h;
      Tape minus(Tape::Mode::kInference);
      const double down = loss(minus).item();
      p->value.mutable_data()[i] = original;
      numeric[i] = (up - down) / (2.0 * h);
    }
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  return worst;
}

struct Check {
  std::string name;
  double tolerance;
  // Returns the worst error of one seeded case.
  std::function<double(std::mt19937_64&, double)> run;
};

std::vector<Check> make_checks(const GradcheckOptions& o) {
  const double smooth = o.smooth_tolerance;
  const double kinked = o.kinked_tolerance;
  const double lossy = o.loss_tolerance;
  std::vector<Check> checks;

  const auto binary = [](auto op, bool positive_b = false) {
    return [op, positive_b](std::mt19937_64& rng, double h) {
      const std::size_t r = pick(rng, 1, 4), c = pick(rng, 1, 4);
      const Tensor a = random_tensor(rng, {r, c});
      const Tensor b = positive_b ? random_tensor(rng, {r, c}, 0.5, 2.0) : random_tensor(rng, {r, c});
      const Tensor w = random_tensor(rng, {r, c});
      const double ea = finite_diff_check(
          [&](Tape& t, const Tensor& x) { return contract(t, op(t, x, b), w); }, a, h);
      const double eb = finite_diff_check(
          [&](Tape& t, const Tensor& x) { return contract(t, op(t, a, x), w); }, b, h);
      return std::max(ea, eb);
    };
  };
  const auto unary = [](auto op, auto make_input) {
    return [op, make_input](std::mt19937_64& rng, double h) {
      const std::size_t r = pick(rng, 1, 4), c = pick(rng, 1, 5);
      const Tensor x = make_input(rng, Shape{r, c});
      const Tensor w = random_tensor(rng, {r, c});
      return finite_diff_check([&](Tape& t, const Tensor& v) { return contract(t, op(t, v), w); },
                               x, h);
    };
  };
  const auto uniform = [](std::mt19937_64& rng, Shape s) { return random_tensor(rng, s, -2.0, 2.0); };
  const auto positive = [](std::mt19937_64& rng, Shape s) { return random_tensor(rng, s, 0.5, 3.0); };
  const auto kinks = [](std::mt19937_64& rng, Shape s) { return away_from_zero(rng, s); };

  checks.push_back({"add", smooth, binary([](Tape& t, const Tensor& a, const Tensor& b) { return add(t, a, b); })});
  checks.push_back({"sub", smooth, binary([](Tape& t, const Tensor& a, const Tensor& b) { return sub(t, a, b); })});
  checks.push_back({"mul", smooth, binary([](Tape& t, const Tensor& a, const Tensor& b) { return mul(t, a, b); })});
  checks.push_back({"scale", smooth, unary([](Tape& t, const Tensor& x) { return scale(t, x, -1.7); }, uniform)});
  checks.push_back({"exp", smooth, unary([](Tape& t, const Tensor& x) { return exp(t, x); }, uniform)});
  checks.push_back({"log", smooth, unary([](Tape& t, const Tensor& x) { return log(t, x); }, positive)});
  checks.push_back({"tanh", smooth, unary([](Tape& t, const Tensor& x) { return tanh(t, x); }, uniform)});
  checks.push_back({"relu", kinked, unary([](Tape& t, const Tensor& x) { return relu(t, x); }, kinks)});
  checks.push_back(
      {"leaky_relu", kinked, unary([](Tape& t, const Tensor& x) { return leaky_relu(t, x); }, kinks)});

  checks.push_back({"add_row_vector", smooth, [](std::mt19937_64& rng, double h) {
                      const std::size_t r = pick(rng, 1, 4), c = pick(rng, 1, 4);
                      const Tensor x = random_tensor(rng, {r, c});
                      const Tensor v = random_tensor(rng, {c});
                      const Tensor w = random_tensor(rng, {r, c});
                      return std::max(
                          finite_diff_check([&](Tape& t, const Tensor& a) { return contract(t, add_row_vector(t, a, v), w); }, x, h),
                          finite_diff_check([&](Tape& t, const Tensor& a) { return contract(t, add_row_vector(t, x, a), w); }, v, h));
                    }});
  checks.push_back({"matmul", smooth, [](std::mt19937_64& rng, double h) {
                      const std::size_t n = pick(rng, 1, 4), k = pick(rng, 1, 4), m = pick(rng, 1, 4);
                      const Tensor a = random_tensor(rng, {n, k});
                      const Tensor b = random_tensor(rng, {k, m});
                      const Tensor w = random_tensor(rng, {n, m});
                      return std::max(
                          finite_diff_check([&](Tape& t, const Tensor& x) { return contract(t, matmul(t, x, b), w); }, a, h),
                          finite_diff_check([&](Tape& t, const Tensor& x) { return contract(t, matmul(t, a, x), w); }, b, h));
                    }});
  checks.push_back({"transpose", smooth, [](std::mt19937_64& rng, double h) {
                      const std::size_t r = pick(rng, 1, 4), c = pick(rng, 1, 4);
                      const Tensor x = random_tensor(rng, {r, c});
                      const Tensor w = random_tensor(rng, {c, r});
                      return finite_diff_check([&](Tape& t, const Tensor& v) { return contract(t, transpose(t, v), w); }, x, h);
                    }});
  for (std::size_t axis : {0, 1}) {
    checks.push_back({"sum_axis" + std::to_string(axis), smooth, [axis](std::mt19937_64& rng, double h) {
                        const std::size_t r = pick(rng, 1, 4), c = pick(rng, 1, 4);
                        const Tensor x = random_tensor(rng, {r, c});
                        const Tensor w = random_tensor(rng, {axis == 0 ? c : r});
                        return finite_diff_check([&](Tape& t, const Tensor& v) { return contract(t, sum(t, v, axis), w); }, x, h);
                      }});
    checks.push_back({"mean_axis" + std::to_string(axis), smooth, [axis](std::mt19937_64& rng, double h) {
                        const std::size_t r = pick(rng, 1, 4), c = pick(rng, 1, 4);
                        const Tensor x = random_tensor(rng, {r, c});
                        const Tensor w = random_tensor(rng, {axis == 0 ? c : r});
                        return finite_diff_check([&](Tape& t, const Tensor& v) { return contract(t, mean(t, v, axis), w); }, x, h);
                      }});
    checks.push_back({"log_sum_exp_axis" + std::to_string(axis), smooth, [axis](std::mt19937_64& rng, double h) {
                        const std::size_t r = pick(rng, 1, 4), c = pick(rng, 1, 4);
                        const Tensor x = random_tensor(rng, {r, c}, -3.0, 3.0);
                        const Tensor w = random_tensor(rng, {axis == 0 ? c : r});
                        return finite_diff_check([&](Tape& t, const Tensor& v) { return contract(t, log_sum_exp(t, v, axis), w); }, x, h);
                      }});
  }
  checks.push_back({"log_sum_exp_masked", smooth, [](std::mt19937_64& rng, double h) {
                      const std::size_t n = pick(rng, 2, 5);
                      const Tensor x = random_tensor(rng, {n, n}, -3.0, 3.0);
                      std::vector<bool> mask(n * n);
                      for (std::size_t i = 0; i < n; ++i)
                        for (std::size_t j = 0; j < n; ++j) mask[i * n + j] = i != j;
                      const Tensor w = random_tensor(rng, {n});
                      return finite_diff_check(
                          [&](Tape& t, const Tensor& v) { return contract(t, log_sum_exp(t, v, 1, &mask), w); }, x, h);
                    }});
  checks.push_back({"sum_all", smooth, [](std::mt19937_64& rng, double h) {
                      const Tensor x = random_tensor(rng, {pick(rng, 1, 4), pick(rng, 1, 4)});
                      return finite_diff_check([](Tape& t, const Tensor& v) { return sum_all(t, mul(t, v, v)); }, x, h);
                    }});
  checks.push_back({"l2_normalize_rows", smooth, [](std::mt19937_64& rng, double h) {
                      const std::size_t r = pick(rng, 1, 4), c = pick(rng, 2, 5);
                      const Tensor x = away_from_zero(rng, {r, c});
                      const Tensor w = random_tensor(rng, {r, c});
                      return finite_diff_check(
                          [&](Tape& t, const Tensor& v) { return contract(t, l2_normalize_rows(t, v), w); }, x, h);
                    }});
  checks.push_back({"reshape", smooth, [](std::mt19937_64& rng, double h) {
                      const std::size_t r = pick(rng, 1, 4), c = pick(rng, 1, 4);
                      const Tensor x = random_tensor(rng, {r, c});
                      const Tensor w = random_tensor(rng, {r * c});
                      return finite_diff_check(
                          [&](Tape& t, const Tensor& v) { return contract(t, reshape(t, v, {r * c}), w); }, x, h);
                    }});
  checks.push_back({"conv2d_3x3", smooth, [](std::mt19937_64& rng, double h) {
                      const std::size_t b = pick(rng, 1, 2), ci = pick(rng, 1, 2), co = pick(rng, 1, 2);
                      const std::size_t hh = pick(rng, 1, 4), ww = pick(rng, 1, 4);
                      const Tensor x = random_tensor(rng, {b, ci, hh, ww});
                      const Tensor k = random_tensor(rng, {co, ci, 3, 3});
                      const Tensor bias = random_tensor(rng, {co});
                      const Tensor w = random_tensor(rng, {b, co, hh, ww});
                      const auto f = [&](const Tensor& xv, const Tensor& kv, const Tensor& bv, Tape& t) {
                        return contract(t, conv2d_3x3(t, xv, kv, bv), w);
                      };
                      return std::max({
                          finite_diff_check([&](Tape& t, const Tensor& v) { return f(v, k, bias, t); }, x, h),
                          finite_diff_check([&](Tape& t, const Tensor& v) { return f(x, v, bias, t); }, k, h),
                          finite_diff_check([&](Tape& t, const Tensor& v) { return f(x, k, v, t); }, bias, h),
                      });
                    }});

  checks.push_back({"linear_layer", smooth, [](std::mt19937_64& rng, double h) {
                      const std::size_t in = pick(rng, 1, 5), out = pick(rng, 1, 5), b = pick(rng, 1, 4);
                      Layer layer = make_linear(in, out, "gc.linear");
                      init_params(layer, rng());
                      parameters(layer)[1]->value = random_tensor(rng, {out});
                      const Tensor x = random_tensor(rng, {b, in});
                      const Tensor w = random_tensor(rng, {b, out});
                      const double ep = param_check(
                          [&](Tape& t) { return contract(t, forward(t, layer, x), w); }, parameters(layer), h);
                      const double ex = finite_diff_check(
                          [&](Tape& t, const Tensor& v) { return contract(t, forward(t, layer, v), w); }, x, h);
                      return std::max(ep, ex);
                    }});
  checks.push_back({"conv2d_layer", smooth, [](std::mt19937_64& rng, double h) {
                      const std::size_t ci = pick(rng, 1, 2), co = pick(rng, 1, 2), s = pick(rng, 2, 4);
                      Layer layer = make_conv2d(ci, co, "gc.conv");
                      init_params(layer, rng());
                      parameters(layer)[1]->value = random_tensor(rng, {co});
                      const Tensor x = random_tensor(rng, {1, ci, s, s});
                      const Tensor w = random_tensor(rng, {1, co, s, s});
                      return param_check([&](Tape& t) { return contract(t, forward(t, layer, x), w); },
                                         parameters(layer), h);
                    }});
  checks.push_back({"projection_head_mlp", kinked, [](std::mt19937_64& rng, double h) {
                      const std::size_t dim = pick(rng, 2, 5), b = pick(rng, 1, 4);
                      auto head = make_projection_head(HeadSpec{HeadKind::kMlp, 6, 3}, dim, "gc.g");
                      init_params(head, rng());
                      const Tensor x = random_tensor(rng, {b, dim});
                      const Tensor w = random_tensor(rng, {b, 3});
                      return param_check([&](Tape& t) { return contract(t, forward(t, head, x), w); },
                                         parameters(head), h);
                    }});

  for (auto variant : {SclVariant::kPerAnchor, SclVariant::kGlobalMaskSum}) {
    const std::string name =
        variant == SclVariant::kPerAnchor ? "supcon_per_anchor" : "supcon_global_mask_sum";
    checks.push_back({name, lossy, [variant](std::mt19937_64& rng, double h) {
                        const std::size_t b = pick(rng, 2, 16), d = pick(rng, 2, 8);
                        const auto labels = labels_with_positive(rng, b, pick(rng, 1, 4));
                        const Tensor z = away_from_zero(rng, {b, d});
                        return finite_diff_check(
                            [&](Tape& t, const Tensor& v) { return supcon_loss(t, v, labels, 0.1, variant); }, z, h);
                      }});
  }
  checks.push_back({"cross_entropy", lossy, [](std::mt19937_64& rng, double h) {
                      const std::size_t b = pick(rng, 1, 6), c = pick(rng, 2, 5);
                      std::vector<int> labels(b);
                      for (auto& l : labels) l = static_cast<int>(pick(rng, 0, c - 1));
                      const Tensor logits = random_tensor(rng, {b, c}, -3.0, 3.0);
                      return finite_diff_check(
                          [&](Tape& t, const Tensor& v) { return cross_entropy(t, v, labels); }, logits, h);
                    }});
  return checks;
}

// Two hidden SCL components and a classifier recorded on one shared tape: the
// second component's backward must not touch the first's parameters, while
// the unblocked composition does depend on them.
GradcheckResult blocking_check(const GradcheckOptions& o) {
  GradcheckResult result{"component_blocking", o.cases_per_check, 0.0, 0.0, true, {}};
  std::size_t foreign = 0;
  double weakest_coupling = INFINITY;
  for (std::size_t k = 0; k < o.cases_per_check; ++k) {
    std::mt19937_64 rng(derive_seed(o.seed, {0xb10c, k}));
    auto net = build_from_template(NetworkTemplate::mlp({4, 5, 5, 3}, Activation::kTanh, HeadSpec{HeadKind::kLinear, 0, 4}),
                                   rng());
    const std::size_t b = 6;
    const auto labels = labels_with_positive(rng, b, 3);
    const Tensor x = random_tensor(rng, {b, 4});
    const LossOptions opts;

    Tape shared;
    Tensor h = x;
    for (const auto& c : net.components) {
      const StepResult r = component_step(c, h, labels, opts, &shared);
      foreign += r.foreign_grad_buffers;
      h = r.output;
    }

    // Unblocked composition: the second component's loss as a function of
    // the first component's weights.
    Parameter& w1 = *net.components[0].parameters()[0];
    const ScalarFn composed = [&](Tape& t, const Tensor& weights) {
      Tensor saved = w1.value;
      w1.value = weights;
      const Tensor r1 = forward(t, net.components[0].encoder, x);
      const Tensor r2 = forward(t, net.components[1].encoder, detach(r1));
      const Tensor z2 = forward(t, *net.components[1].head, r2);
      w1.value = saved;
      return supcon_loss(t, z2, labels, opts.tau);
    };
    const auto numeric = numeric_gradient(composed, w1.value, o.step);
    double coupling = 0.0;
    for (double g : numeric) coupling = std::max(coupling, std::abs(g));
    weakest_coupling = std::min(weakest_coupling, coupling);
  }
  result.max_error = static_cast<double>(foreign);
  result.passed = foreign == 0 && weakest_coupling > 1e-8;
  std::ostringstream os;
  os << "cross-component gradient buffers " << foreign << ", smallest end-to-end coupling "
     << weakest_coupling;
  result.detail = os.str();
  return result;
}

}  // namespace

std::vector<double> numeric_gradient(const ScalarFn& f, const Tensor& x, double h) {
  if (h <= 0.0) throw ConfigError("finite-difference step must be positive");
  std::vector<double> out(x.size());
  Tensor probe = detach(x);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double original = probe[i];
    probe.mutable_data()[i] = original + h;
    const double up = evaluate(f, probe);
    probe.mutable_data()[i] = original - h;
    const double down = evaluate(f, probe);
    probe.mutable_data()[i] = original;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

double finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  Tape tape;
  const Tensor watched = tape.watch(detach(x));
  const Tensor y = f(tape, watched);
  if (y.size() != 1) throw ShapeError("gradcheck: function output has shape " + to_string(y.shape()));

  std::vector<double> analytic(x.size(), 0.0);
  if (y.tracked()) {
    const Gradients grads = tape.backward(y);
    if (const auto g = grads.of(watched)) std::copy(g->begin(), g->end(), analytic.begin());
  }
  return relative_error(analytic, numeric_gradient(f, x, h));
}

std::vector<GradcheckResult> run_gradcheck_suite(const GradcheckOptions& options) {
  std::vector<GradcheckResult> results;
  const auto checks = make_checks(options);
  for (std::size_t c = 0; c < checks.size(); ++c) {
    const Check& check = checks[c];
    GradcheckResult r{check.name, options.cases_per_check, 0.0, check.tolerance, true, {}};
    for (std::size_t k = 0; k < options.cases_per_check; ++k) {
      std::mt19937_64 rng(derive_seed(options.seed, {c, k}));
      const double err = check.run(rng, options.step);
      if (err > r.max_error) {
        r.max_error = err;
        r.detail = "worst case " + std::to_string(k);
      }
    }
    r.passed = r.max_error < check.tolerance;
    results.push_back(std::move(r));
  }
  results.push_back(blocking_check(options));
  return results;
}

}  // namespace scpl
