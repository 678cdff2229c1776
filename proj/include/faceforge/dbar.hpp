#pragma once

// Dynamic bias adjustment routing.
//
//   F̄ = mean_i F_i, Ē = mean_i E_i
//   B_f = tanh(mean(F̄ U_f + Ē R_f + b_f)),  B_e = tanh(mean(F̄ U_e + Ē R_e + b_e))
//   G = softmax_i(mean_rows(H_i) · W_g)
//   M = [B_f Σ g_i F_i ; B_e Σ g_i E_i]   (2N×d)

#include <cmath>
#include <string>
#include <vector>

#include "faceforge/numerics/nn.hpp"
#include "faceforge/numerics/parameters.hpp"

namespace faceforge::dbar {

inline constexpr double kWeakGate = 1e-3;

inline const std::vector<std::string>& parameter_names() {
  static const std::vector<std::string> names = {"dbar.b_e", "dbar.b_f", "dbar.r_e", "dbar.r_f",
                                                 "dbar.u_e", "dbar.u_f", "dbar.w_g"};
  return names;
}

inline void init_parameters(Parameters& params, std::size_t d, Rng& rng) {
  params.add("dbar.u_f", glorot_uniform(d, d, rng));
  params.add("dbar.r_f", glorot_uniform(d, d, rng));
  params.add("dbar.u_e", glorot_uniform(d, d, rng));
  params.add("dbar.r_e", glorot_uniform(d, d, rng));
  params.add("dbar.b_f", Tensor(Shape{d}));
  params.add("dbar.b_e", Tensor(Shape{d}));
  params.add("dbar.w_g", glorot_uniform(d, 1, rng));
}

struct Weights {
  Var u_f, r_f, u_e, r_e, b_f, b_e, w_g;

  static Weights bind(Tape& tape, Parameters& p) {
    return {tape.param(p.at("dbar.u_f")), tape.param(p.at("dbar.r_f")), tape.param(p.at("dbar.u_e")),
            tape.param(p.at("dbar.r_e")), tape.param(p.at("dbar.b_f")), tape.param(p.at("dbar.b_e")),
            tape.param(p.at("dbar.w_g"))};
  }
};

inline Var group_mean(const std::vector<Var>& groups) {
  if (groups.empty()) throw UsageError("dbar: at least one retrieval group required");
  Var acc = groups[0];
  for (std::size_t i = 1; i < groups.size(); ++i) acc = add(acc, groups[i]);
  return scale(acc, 1.0 / static_cast<double>(groups.size()));
}

struct Gates {
  Var fact;     // B_f, scalar
  Var emotion;  // B_e, scalar
};

inline Gates compute_gates(const std::vector<Var>& factual, const std::vector<Var>& emotional, const Weights& w) {
  if (factual.size() != emotional.size()) throw UsageError("compute_gates: group counts differ");
  Var f_bar = group_mean(factual);
  Var e_bar = group_mean(emotional);
  Var inner_f = add_row(add(matmul(f_bar, w.u_f), matmul(e_bar, w.r_f)), w.b_f);
  Var inner_e = add_row(add(matmul(f_bar, w.u_e), matmul(e_bar, w.r_e)), w.b_e);
  return {tanh(mean(inner_f)), tanh(mean(inner_e))};
}

// Per-group router logit: frame-mean of H_i mapped by the shared d→1 W_g.
inline Var route_logits(const std::vector<Var>& hidden, const Var& w_g) {
  if (hidden.empty()) throw UsageError("compute_routes: at least one retrieval group required");
  std::vector<Var> logits;
  for (const Var& h : hidden) {
    Var pooled = reshape(mean_axis(h, 0), Shape{1, h.cols()});
    logits.push_back(matmul(pooled, w_g));  // 1×1
  }
  return reshape(concat(std::span<const Var>(logits), 0), Shape{hidden.size()});
}

inline Var compute_routes(const std::vector<Var>& hidden, const Weights& w) {
  return softmax(route_logits(hidden, w.w_g), 0);
}

struct Aggregate {
  Var representation;   // M, 2N×d
  bool weak_gate = false;  // some |gate| < kWeakGate
};

inline Aggregate aggregate(const std::vector<Var>& factual, const std::vector<Var>& emotional, const Var& routes,
                           const Gates& gates) {
  const std::size_t k = factual.size();
  if (k == 0 || emotional.size() != k || routes.size() != k) {
    throw UsageError("aggregate: need matching group counts and one route weight per group");
  }
  Var f_sum = scale_by(factual[0], element(routes, 0));
  Var e_sum = scale_by(emotional[0], element(routes, 0));
  for (std::size_t i = 1; i < k; ++i) {
    Var g = element(routes, i);
    f_sum = add(f_sum, scale_by(factual[i], g));
    e_sum = add(e_sum, scale_by(emotional[i], g));
  }
  Aggregate out;
  out.representation = concat({scale_by(f_sum, gates.fact), scale_by(e_sum, gates.emotion)}, 0);
  out.weak_gate = std::abs(gates.fact.item()) < kWeakGate || std::abs(gates.emotion.item()) < kWeakGate;
  return out;
}

// Ablated routing: both gates fixed to 1 and uniform routes 1/K.
inline Aggregate aggregate_unadjusted(const std::vector<Var>& factual, const std::vector<Var>& emotional) {
  Tape& tape = factual.at(0).tape();
  const std::size_t k = factual.size();
  Var routes = tape.constant(Tensor(Shape{k}, 1.0 / static_cast<double>(k)));
  Gates unit{tape.constant(Tensor::scalar(1.0)), tape.constant(Tensor::scalar(1.0))};
  return aggregate(factual, emotional, routes, unit);
}

}  // namespace faceforge::dbar
