#pragma once

#include <cmath>
#include <limits>
#include <string>

#include "faceforge/numerics/ops.hpp"

namespace faceforge {

// Single-head scaled dot-product attention:
//   out = softmax(Q·Kᵀ / sqrt(d)) · V
// Every output row is a convex combination of the rows of V.
inline Var cross_attention(const Var& q, const Var& k, const Var& v) {
  detail::require_matrix("cross_attention", q);
  detail::require_matrix("cross_attention", k);
  detail::require_matrix("cross_attention", v);
  if (q.cols() != k.cols()) {
    throw UsageError("cross_attention: query width " + std::to_string(q.cols()) + " != key width " +
                     std::to_string(k.cols()));
  }
  if (k.rows() != v.rows()) {
    throw UsageError("cross_attention: " + std::to_string(k.rows()) + " keys but " + std::to_string(v.rows()) +
                     " values");
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Var weights = softmax(scale(matmul_nt(q, k), inv_sqrt_d), 1);
  return matmul(weights, v);
}

// Attention where query row t only sees key rows 0..t.
inline Var causal_self_attention(const Var& q, const Var& k, const Var& v) {
  detail::require_matrix("causal_self_attention", q);
  const std::size_t n = q.rows();
  if (k.rows() != n || v.rows() != n || k.cols() != q.cols()) {
    throw UsageError("causal_self_attention: q, k, v must share the sequence length");
  }
  Tensor mask(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) mask(i, j) = -1e30;
  }
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Var scores = add(scale(matmul_nt(q, k), inv_sqrt_d), q.tape().constant(std::move(mask)));
  return matmul(softmax(scores, 1), v);
}

// x·W (+ b). W is in×out.
inline Var linear(const Var& x, const Var& w) { return matmul(x, w); }
inline Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

// Two-layer feed-forward map with tanh hidden activation.
inline Var feed_forward(const Var& x, const Var& w1, const Var& b1, const Var& w2, const Var& b2) {
  return linear(tanh(linear(x, w1, b1)), w2, b2);
}

// Tensor-level conveniences for callers that do not need gradients.
inline Tensor softmax(const Tensor& x, std::size_t axis) {
  Tape tape;
  return softmax(tape.constant(x), axis).value();
}

inline Tensor cross_attention(const Tensor& q, const Tensor& k, const Tensor& v) {
  Tape tape;
  return cross_attention(tape.constant(q), tape.constant(k), tape.constant(v)).value();
}

inline Tensor layer_norm(const Tensor& x, std::size_t axis, const Tensor& gain, const Tensor& bias) {
  Tape tape;
  return layer_norm(tape.constant(x), axis, tape.constant(gain), tape.constant(bias)).value();
}

}  // namespace faceforge
