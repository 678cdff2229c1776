#pragma once

// Factual calibration via uncertainty estimation.
//
//   self-refinement   p_i^c = softmax(T_i^c), H = -Σ p log p,
//                     α_i^c = H(T_i^c) / Σ_c' H(T_i^c'),   T' = α ⊙ T
//   cross-refinement  s_i = max(sim_i, ε), p_i = s_i / Σ s,
//                     θ_i = -p_i log p_i / Σ_j -p_j log p_j,   T̄ = θ ⊙ T'
//   expert fusion     H_i = Attn(Q = V, K = V = T̄_i W_T)
//                     F_i = LayerNorm(FFN([V, H_i]) + V)

#include <cmath>
#include <string>
#include <vector>

#include "faceforge/numerics/nn.hpp"
#include "faceforge/numerics/parameters.hpp"

namespace faceforge::fcue {

inline constexpr double kSimilarityFloor = 1e-6;

struct SelfRefinement {
  std::vector<Var> alpha;    // per triplet, length 3 (S, P, O)
  std::vector<Var> refined;  // per triplet, 3×d
};

// Entropy-weighted reweighting of each triplet's S/P/O rows.
inline SelfRefinement self_refine(const std::vector<Var>& triplets) {
  if (triplets.empty()) throw UsageError("self_refine: K must be at least 1");
  SelfRefinement out;
  for (const Var& t : triplets) {
    if (t.value().rank() != 2 || t.rows() != 3) throw UsageError("self_refine: triplet features must be 3×d");
    if (t.cols() < 2) throw UsageError("self_refine: feature width must be at least 2");
    if (!t.value().all_finite()) throw UsageError("self_refine: non-finite triplet features");
    Var logp = log_softmax(t, 1);
    Var entropy = scale(sum_axis(mul(exp(logp), logp), 1), -1.0);  // 3
    Var total = sum(entropy);
    // all three rows saturated (zero entropy): no preference, weight them equally
    Var alpha = total.item() > 0.0 ? scale_by(entropy, reciprocal(total))
                                   : t.tape().constant(Tensor(Shape{3}, 1.0 / 3.0));
    out.refined.push_back(scale_rows(t, alpha));
    out.alpha.push_back(alpha);
  }
  return out;
}

struct CrossRefinement {
  std::vector<double> mass;   // p_i, similarity-mass share
  std::vector<double> theta;  // θ_i
  std::vector<Var> calibrated;
};

// Cross weights from retrieval similarities. Isolated so an alternative
// reading of the normalization can be swapped in.
inline std::vector<double> similarity_mass(std::span<const double> sims) {
  std::vector<double> p(sims.size());
  double total = 0.0;
  for (std::size_t i = 0; i < sims.size(); ++i) {
    if (!std::isfinite(sims[i])) throw UsageError("cross_refine: non-finite similarity score");
    p[i] = std::max(sims[i], kSimilarityFloor);
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

inline std::vector<double> entropy_weights(std::span<const double> mass) {
  if (mass.size() == 1) return {1.0};
  std::vector<double> theta(mass.size());
  double total = 0.0;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    theta[i] = -mass[i] * std::log(mass[i]);
    total += theta[i];
  }
  for (double& x : theta) x /= total;
  return theta;
}

inline CrossRefinement cross_refine(const std::vector<Var>& refined, std::span<const double> sims) {
  if (refined.empty()) throw UsageError("cross_refine: K must be at least 1");
  if (sims.size() != refined.size()) throw UsageError("cross_refine: one similarity per triplet required");
  CrossRefinement out;
  out.mass = similarity_mass(sims);
  out.theta = entropy_weights(out.mass);
  for (std::size_t i = 0; i < refined.size(); ++i) out.calibrated.push_back(scale(refined[i], out.theta[i]));
  return out;
}

inline const std::vector<std::string>& parameter_names() {
  static const std::vector<std::string> names = {"fcue.w_t",   "fcue.ffn.w1", "fcue.ffn.b1", "fcue.ffn.w2",
                                                 "fcue.ffn.b2", "fcue.ln.gain", "fcue.ln.bias"};
  return names;
}

inline void init_parameters(Parameters& params, std::size_t d, Rng& rng) {
  params.add("fcue.w_t", glorot_uniform(d, d, rng));
  params.add("fcue.ffn.w1", glorot_uniform(2 * d, 2 * d, rng));
  params.add("fcue.ffn.b1", Tensor(Shape{2 * d}));
  params.add("fcue.ffn.w2", glorot_uniform(2 * d, d, rng));
  params.add("fcue.ffn.b2", Tensor(Shape{d}));
  params.add("fcue.ln.gain", Tensor(Shape{d}, 1.0));
  params.add("fcue.ln.bias", Tensor(Shape{d}));
}

struct Weights {
  Var w_t, w1, b1, w2, b2, gain, bias;

  static Weights bind(Tape& tape, Parameters& p) {
    return {tape.param(p.at("fcue.w_t")),   tape.param(p.at("fcue.ffn.w1")),  tape.param(p.at("fcue.ffn.b1")),
            tape.param(p.at("fcue.ffn.w2")), tape.param(p.at("fcue.ffn.b2")),  tape.param(p.at("fcue.ln.gain")),
            tape.param(p.at("fcue.ln.bias"))};
  }
};

// H_i alone: frames attend over the projected triplet rows.
inline Var expert_features(const Var& frames, const Var& triplet, const Weights& w) {
  Var projected = matmul(triplet, w.w_t);
  return cross_attention(frames, projected, projected);
}

// F_i = LayerNorm(FFN([V, H]) + V), concatenation along the feature axis.
inline Var factual_semantics(const Var& frames, const Var& hidden, const Weights& w) {
  Var joined = concat({frames, hidden}, 1);
  Var ffn = feed_forward(joined, w.w1, w.b1, w.w2, w.b2);
  return layer_norm(add(ffn, frames), 1, w.gain, w.bias);
}

struct Fusion {
  Var hidden;    // H_i, N×d
  Var factual;   // F_i, N×d
};

inline Fusion fuse_factual(const Var& frames, const Var& triplet, const Weights& w) {
  if (frames.value().rank() != 2 || triplet.value().rank() != 2 || frames.cols() != triplet.cols()) {
    throw UsageError("fuse_factual: frames " + shape_string(frames.shape()) + " and triplet " +
                     shape_string(triplet.shape()) + " must share the feature width");
  }
  Var hidden = expert_features(frames, triplet, w);
  return {hidden, factual_semantics(frames, hidden, w)};
}

}  // namespace faceforge::fcue
