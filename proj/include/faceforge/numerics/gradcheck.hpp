#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "faceforge/numerics/parameters.hpp"
#include "faceforge/numerics/tape.hpp"

namespace faceforge {

// Central-difference gradient estimate of a scalar function:
//   (f(p + h e_k) - f(p - h e_k)) / 2h  for every coordinate k.
template <typename F>
Tensor finite_difference_grad(F&& f, const Tensor& p, double h = 1e-5) {
  Tensor probe(p.shape(), std::vector<double>(p.values().begin(), p.values().end()));
  Tensor out(p.shape());
  for (std::size_t k = 0; k < p.size(); ++k) {
    const double orig = probe[k];
    probe[k] = orig + h;
    const double up = f(static_cast<const Tensor&>(probe));
    probe[k] = orig - h;
    const double down = f(static_cast<const Tensor&>(probe));
    probe[k] = orig;
    out[k] = (up - down) / (2.0 * h);
  }
  return out;
}

// ‖a − b‖ / max(‖a‖, ‖b‖, floor)
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-8) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

struct GradCheckEntry {
  std::string name;
  double relative_error = 0.0;
  double analytic_norm = 0.0;
  double numeric_norm = 0.0;
};

// Builds the loss on a fresh tape from the current parameter values.
using LossBuilder = std::function<Var(Tape&, Parameters&)>;

struct GradientPair {
  std::string name;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

// Reverse-mode and central-difference gradients for every parameter whose
// name starts with one of `prefixes` (all when empty).
inline std::vector<GradientPair> gradient_pairs(Parameters& params, const LossBuilder& build, double h = 1e-5,
                                                const std::vector<std::string>& prefixes = {}) {
  params.zero_grad();
  {
    Tape tape;
    Var loss = build(tape, params);
    tape.backward(loss);
  }
  auto eval = [&]() {
    Tape tape(false);
    return build(tape, params).item();
  };
  std::vector<GradientPair> out;
  for (auto& [name, tensor] : params) {
    const bool selected =
        prefixes.empty() || std::any_of(prefixes.begin(), prefixes.end(),
                                        [&](const std::string& p) { return name.rfind(p, 0) == 0; });
    if (!selected) continue;
    Tensor& live = tensor;
    GradientPair pair;
    pair.name = name;
    pair.analytic.assign(live.grad().begin(), live.grad().end());
    const Tensor numeric = finite_difference_grad(
        [&](const Tensor& probe) {
          std::vector<double> saved(live.values().begin(), live.values().end());
          std::copy(probe.values().begin(), probe.values().end(), live.values().begin());
          const double v = eval();
          std::copy(saved.begin(), saved.end(), live.values().begin());
          return v;
        },
        live, h);
    pair.numeric.assign(numeric.values().begin(), numeric.values().end());
    out.push_back(std::move(pair));
  }
  return out;
}

inline GradCheckEntry compare(std::string name, std::span<const double> analytic, std::span<const double> numeric) {
  GradCheckEntry e;
  e.name = std::move(name);
  e.relative_error = relative_error(analytic, numeric);
  for (double v : analytic) e.analytic_norm += v * v;
  for (double v : numeric) e.numeric_norm += v * v;
  e.analytic_norm = std::sqrt(e.analytic_norm);
  e.numeric_norm = std::sqrt(e.numeric_norm);
  return e;
}

// One entry per parameter.
inline std::vector<GradCheckEntry> check_gradients(Parameters& params, const LossBuilder& build, double h = 1e-5,
                                                   const std::vector<std::string>& prefixes = {}) {
  std::vector<GradCheckEntry> out;
  for (const auto& p : gradient_pairs(params, build, h, prefixes)) out.push_back(compare(p.name, p.analytic, p.numeric));
  return out;
}

// One entry per group: the gradients of all parameters named `<group>.*`
// are compared as a single concatenated vector.
inline std::vector<GradCheckEntry> check_gradient_groups(Parameters& params, const LossBuilder& build,
                                                         const std::vector<std::string>& groups, double h = 1e-5) {
  std::vector<std::string> prefixes;
  for (const auto& g : groups) prefixes.push_back(g + ".");
  const auto pairs = gradient_pairs(params, build, h, prefixes);
  std::vector<GradCheckEntry> out;
  for (const auto& g : groups) {
    std::vector<double> a, n;
    for (const auto& p : pairs) {
      if (p.name.rfind(g + ".", 0) != 0) continue;
      a.insert(a.end(), p.analytic.begin(), p.analytic.end());
      n.insert(n.end(), p.numeric.begin(), p.numeric.end());
    }
    if (a.empty()) throw UsageError("check_gradient_groups: no parameters in group '" + g + "'");
    out.push_back(compare(g, a, n));
  }
  return out;
}

}  // namespace faceforge
