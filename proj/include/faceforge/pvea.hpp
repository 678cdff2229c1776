#pragma once

// Progressive visual emotion augmentation: factual semantics mine candidate
// emotions from the dictionary, combine with the video into a row-stochastic
// frame query, and the query filters the projected candidates.

#include <string>
#include <vector>

#include "faceforge/numerics/nn.hpp"
#include "faceforge/numerics/parameters.hpp"

namespace faceforge::pvea {

inline const std::vector<std::string>& parameter_names() {
  static const std::vector<std::string> names = {"pvea.phi_e", "pvea.phi_f", "pvea.phi_v"};
  return names;
}

// ϕ maps are bias-free d×d linear projections.
inline void init_parameters(Parameters& params, std::size_t d, Rng& rng) {
  params.add("pvea.phi_f", glorot_uniform(d, d, rng));
  params.add("pvea.phi_v", glorot_uniform(d, d, rng));
  params.add("pvea.phi_e", glorot_uniform(d, d, rng));
}

struct Weights {
  Var phi_f, phi_v, phi_e;

  static Weights bind(Tape& tape, Parameters& p) {
    return {tape.param(p.at("pvea.phi_f")), tape.param(p.at("pvea.phi_v")), tape.param(p.at("pvea.phi_e"))};
  }
};

// Ẽ_i = Attn(Q = F_i, K = V = E_0).
inline Var mine_candidates(const Var& factual, const Var& dictionary) {
  return cross_attention(factual, dictionary, dictionary);
}

// q_v = softmax over frames of ϕ_F(F_i) · ϕ_V(V)ᵀ  (N×N, rows sum to 1).
inline Var visual_query(const Var& factual, const Var& frames, const Weights& w) {
  if (factual.shape() != frames.shape()) {
    throw UsageError("visual_query: factual " + shape_string(factual.shape()) + " and frames " +
                     shape_string(frames.shape()) + " differ");
  }
  return softmax(matmul_nt(matmul(factual, w.phi_f), matmul(frames, w.phi_v)), 1);
}

// E_i = q_v · ϕ_E(Ẽ_i).
inline Var augment_emotion(const Var& query, const Var& candidates, const Weights& w) {
  if (query.value().rank() != 2 || query.cols() != candidates.rows()) {
    throw UsageError("augment_emotion: query " + shape_string(query.shape()) + " does not match candidates " +
                     shape_string(candidates.shape()));
  }
  return matmul(query, matmul(candidates, w.phi_e));
}

struct Augmentation {
  Var candidates;  // Ẽ_i
  Var query;       // q_v
  Var emotion;     // E_i
};

inline Augmentation augment(const Var& factual, const Var& frames, const Var& dictionary, const Weights& w) {
  Augmentation a;
  a.candidates = mine_candidates(factual, dictionary);
  a.query = visual_query(factual, frames, w);
  a.emotion = augment_emotion(a.query, a.candidates, w);
  return a;
}

// Diagnostic only: softmax over dictionary words of E_0 · mean_rows(E_i).
inline std::vector<double> emotion_distribution(const Tensor& emotion, const Tensor& dictionary) {
  Tape tape(false);
  Var pooled = reshape(mean_axis(tape.constant(emotion), 0), Shape{1, emotion.cols()});
  Var scores = matmul_nt(pooled, tape.constant(dictionary));
  Var dist = softmax(scores, 1);
  return dist.value().data();
}

}  // namespace faceforge::pvea
