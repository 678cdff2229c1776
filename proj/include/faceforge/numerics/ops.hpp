#pragma once

// Differentiable primitives over Tape variables. Every op records its result
// together with a closure that propagates the output gradient to its operands.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "faceforge/numerics/tape.hpp"

namespace faceforge {

namespace kernel {

// C[m×n] += A[m×k] · B[k×n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m×n] += A[m×k] · B[n×k]^T
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C[k×n] += A[m×k]^T · B[m×n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    const double* bi = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      double* cp = c + p * n;
      for (std::size_t j = 0; j < n; ++j) cp[j] += av * bi[j];
    }
  }
}

}  // namespace kernel

namespace detail {

inline void same_tape(const Var& a, const Var& b) {
  if (&a.tape() != &b.tape()) throw UsageError("operands live on different tapes");
}

inline void same_shape(const char* op, const Var& a, const Var& b) {
  same_tape(a, b);
  if (a.shape() != b.shape()) {
    throw UsageError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

inline void require_matrix(const char* op, const Var& a) {
  if (a.value().rank() != 2) {
    throw UsageError(std::string(op) + ": expected a matrix, got shape " + shape_string(a.shape()));
  }
}

inline Tensor blank_like(const Tensor& t) { return Tensor(t.shape()); }

// Applies a unary elementwise map; `deriv(x, y)` gives dy/dx from input and output.
template <typename F, typename D>
Var unary(const Var& a, F f, D deriv) {
  Tensor out = blank_like(a.value());
  auto av = a.value().values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = f(av[i]);
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, deriv](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    auto x = t.value(ia).values();
    auto y = t.value(self).values();
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * deriv(x[i], y[i]);
  });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  detail::same_shape("add", a, b);
  Tensor out = detail::blank_like(a.value());
  auto av = a.value().values(), bv = b.value().values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    for (std::size_t id : {ia, ib}) {
      auto gx = t.grad(id);
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
    }
  });
}

inline Var sub(const Var& a, const Var& b) {
  detail::same_shape("sub", a, b);
  Tensor out = detail::blank_like(a.value());
  auto av = a.value().values(), bv = b.value().values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    auto gb = t.grad(ib);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= g[i];
  });
}

// Elementwise (Hadamard) product.
inline Var mul(const Var& a, const Var& b) {
  detail::same_shape("mul", a, b);
  Tensor out = detail::blank_like(a.value());
  auto av = a.value().values(), bv = b.value().values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    auto gb = t.grad(ib);
    auto av = t.value(ia).values();
    auto bv = t.value(ib).values();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * bv[i];
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[i] * av[i];
  });
}

inline Var scale(const Var& a, double c) {
  return detail::unary(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

inline Var add_scalar(const Var& a, double c) {
  return detail::unary(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

// Multiplies every entry of `a` by the single entry of `s`.
inline Var scale_by(const Var& a, const Var& s) {
  detail::same_tape(a, s);
  if (s.size() != 1) throw UsageError("scale_by: scale must hold exactly one value");
  const double c = s.value()[0];
  Tensor out = detail::blank_like(a.value());
  auto av = a.value().values();
  auto ov = out.values();
  for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = c * av[i];
  const std::size_t ia = a.id(), is = s.id();
  return a.tape().record(std::move(out), {a, s}, [ia, is](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    auto gs = t.grad(is);
    const double c = t.value(is)[0];
    auto av = t.value(ia).values();
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i] * c;
    if (!gs.empty()) {
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      gs[0] += acc;
    }
  });
}

// Adds vector `v` (length = cols) to every row of matrix `m`.
inline Var add_row(const Var& m, const Var& v) {
  detail::same_tape(m, v);
  detail::require_matrix("add_row", m);
  const std::size_t rows = m.rows(), cols = m.cols();
  if (v.size() != cols) {
    throw UsageError("add_row: vector length " + std::to_string(v.size()) + " does not match " +
                     std::to_string(cols) + " columns");
  }
  Tensor out = m.value();
  out.set_requires_grad(false);
  auto vv = v.value().values();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out(r, c) += vv[c];
  }
  const std::size_t im = m.id(), iv = v.id();
  return m.tape().record(std::move(out), {m, v}, [im, iv, rows, cols](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gm = t.grad(im);
    auto gv = t.grad(iv);
    for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += g[i];
    if (!gv.empty()) {
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) gv[c] += g[r * cols + c];
      }
    }
  });
}

inline Var matmul(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  detail::require_matrix("matmul", a);
  detail::require_matrix("matmul", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw UsageError("matmul: inner dimensions differ " + shape_string(a.shape()) + " · " +
                     shape_string(b.shape()));
  }
  Tensor out(Shape{m, n});
  kernel::gemm_nn(a.value().values().data(), b.value().values().data(), out.values().data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const double* g = t.grad(self).data();
    auto ga = t.grad(ia);
    auto gb = t.grad(ib);
    if (!ga.empty()) kernel::gemm_nt(g, t.value(ib).values().data(), ga.data(), m, n, k);
    if (!gb.empty()) kernel::gemm_tn(t.value(ia).values().data(), g, gb.data(), m, k, n);
  });
}

// a · bᵀ for a[m×k], b[n×k].
inline Var matmul_nt(const Var& a, const Var& b) {
  detail::same_tape(a, b);
  detail::require_matrix("matmul_nt", a);
  detail::require_matrix("matmul_nt", b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  if (b.cols() != k) {
    throw UsageError("matmul_nt: inner dimensions differ " + shape_string(a.shape()) + " · " +
                     shape_string(b.shape()) + "ᵀ");
  }
  Tensor out(Shape{m, n});
  kernel::gemm_nt(a.value().values().data(), b.value().values().data(), out.values().data(), m, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape().record(std::move(out), {a, b}, [ia, ib, m, k, n](Tape& t, std::size_t self) {
    const double* g = t.grad(self).data();
    auto ga = t.grad(ia);
    auto gb = t.grad(ib);
    // dA = G·B, dB = Gᵀ·A
    if (!ga.empty()) kernel::gemm_nn(g, t.value(ib).values().data(), ga.data(), m, n, k);
    if (!gb.empty()) kernel::gemm_tn(g, t.value(ia).values().data(), gb.data(), m, n, k);
  });
}

inline Var transpose(const Var& a) {
  detail::require_matrix("transpose", a);
  const std::size_t r = a.rows(), c = a.cols();
  Tensor out(Shape{c, r});
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) out(j, i) = a.value()(i, j);
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, r, c](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += g[j * r + i];
    }
  });
}

inline Var tanh(const Var& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

inline Var exp(const Var& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

inline Var log(const Var& a) {
  for (double v : a.value().values()) {
    if (!(v > 0.0)) throw UsageError("log: non-positive input");
  }
  return detail::unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

inline Var reciprocal(const Var& a) {
  for (double v : a.value().values()) {
    if (v == 0.0) throw UsageError("reciprocal: zero input");
  }
  return detail::unary(a, [](double x) { return 1.0 / x; }, [](double, double y) { return -y * y; });
}

// Scales row r of matrix `m` by s[r].
inline Var scale_rows(const Var& m, const Var& s) {
  detail::same_tape(m, s);
  detail::require_matrix("scale_rows", m);
  const std::size_t rows = m.rows(), cols = m.cols();
  if (s.size() != rows) throw UsageError("scale_rows: need one scale per row");
  Tensor out(Shape{rows, cols});
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out(r, c) = s.value()[r] * m.value()(r, c);
  }
  const std::size_t im = m.id(), is = s.id();
  return m.tape().record(std::move(out), {m, s}, [im, is, rows, cols](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gm = t.grad(im);
    auto gs = t.grad(is);
    const Tensor& mv = t.value(im);
    const Tensor& sv = t.value(is);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const std::size_t k = r * cols + c;
        if (!gm.empty()) gm[k] += g[k] * sv[r];
        if (!gs.empty()) gs[r] += g[k] * mv[k];
      }
    }
  });
}

inline Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(s), {a}, [ia](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (double& x : t.grad(ia)) x += g;
  });
}

inline Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// Mean over one axis; the axis is removed from the result shape.
inline Var mean_axis(const Var& a, std::size_t axis) {
  const Shape& shape = a.shape();
  const AxisSplit s = split_axis(shape, axis);
  Shape out_shape;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out_shape.push_back(shape[i]);
  }
  Tensor out(out_shape);
  auto av = a.value().values();
  auto ov = out.values();
  const double inv = 1.0 / static_cast<double>(s.length);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t l = 0; l < s.length; ++l) {
      for (std::size_t in = 0; in < s.inner; ++in) ov[o * s.inner + in] += av[(o * s.length + l) * s.inner + in];
    }
  }
  for (double& v : ov) v *= inv;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, s, inv](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t l = 0; l < s.length; ++l) {
        for (std::size_t in = 0; in < s.inner; ++in) ga[(o * s.length + l) * s.inner + in] += g[o * s.inner + in] * inv;
      }
    }
  });
}

inline Var sum_axis(const Var& a, std::size_t axis) {
  return scale(mean_axis(a, axis), static_cast<double>(a.shape().at(axis)));
}

// Numerically stable softmax along `axis` (max-subtracted).
inline Var softmax(const Var& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  Tensor out = detail::blank_like(a.value());
  auto x = a.value().values();
  auto y = out.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      double mx = x[base];
      for (std::size_t l = 1; l < s.length; ++l) mx = std::max(mx, x[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.length; ++l) {
        const double e = std::exp(x[base + l * s.inner] - mx);
        y[base + l * s.inner] = e;
        z += e;
      }
      for (std::size_t l = 0; l < s.length; ++l) y[base + l * s.inner] /= z;
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, s](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    auto y = t.value(self).values();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.length * s.inner + in;
        double dot = 0.0;
        for (std::size_t l = 0; l < s.length; ++l) dot += g[base + l * s.inner] * y[base + l * s.inner];
        for (std::size_t l = 0; l < s.length; ++l) {
          const std::size_t k = base + l * s.inner;
          ga[k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

inline Var log_softmax(const Var& a, std::size_t axis) {
  const AxisSplit s = split_axis(a.shape(), axis);
  Tensor out = detail::blank_like(a.value());
  auto x = a.value().values();
  auto y = out.values();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      double mx = x[base];
      for (std::size_t l = 1; l < s.length; ++l) mx = std::max(mx, x[base + l * s.inner]);
      double z = 0.0;
      for (std::size_t l = 0; l < s.length; ++l) z += std::exp(x[base + l * s.inner] - mx);
      const double lse = mx + std::log(z);
      for (std::size_t l = 0; l < s.length; ++l) y[base + l * s.inner] = x[base + l * s.inner] - lse;
    }
  }
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia, s](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    auto y = t.value(self).values();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.length * s.inner + in;
        double gs = 0.0;
        for (std::size_t l = 0; l < s.length; ++l) gs += g[base + l * s.inner];
        for (std::size_t l = 0; l < s.length; ++l) {
          const std::size_t k = base + l * s.inner;
          ga[k] += g[k] - std::exp(y[k]) * gs;
        }
      }
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes each slice along `axis` to zero mean and unit variance
// (population variance, epsilon inside the root), then applies gain and bias.
inline Var layer_norm(const Var& x, std::size_t axis, const Var& gain, const Var& bias) {
  detail::same_tape(x, gain);
  detail::same_tape(x, bias);
  const AxisSplit s = split_axis(x.shape(), axis);
  if (gain.size() != s.length || bias.size() != s.length) {
    throw UsageError("layer_norm: gain/bias length must equal normalized axis length " + std::to_string(s.length));
  }
  const std::size_t slices = s.outer * s.inner;
  std::vector<double> inv_std(slices);
  Tensor xhat = detail::blank_like(x.value());
  Tensor out = detail::blank_like(x.value());
  auto xv = x.value().values();
  auto hv = xhat.values();
  auto ov = out.values();
  auto gv = gain.value().values();
  auto bv = bias.value().values();
  const double n = static_cast<double>(s.length);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.length * s.inner + in;
      double mu = 0.0;
      for (std::size_t l = 0; l < s.length; ++l) mu += xv[base + l * s.inner];
      mu /= n;
      double var = 0.0;
      for (std::size_t l = 0; l < s.length; ++l) {
        const double d = xv[base + l * s.inner] - mu;
        var += d * d;
      }
      var /= n;
      const double is = 1.0 / std::sqrt(var + kLayerNormEps);
      inv_std[o * s.inner + in] = is;
      for (std::size_t l = 0; l < s.length; ++l) {
        const std::size_t k = base + l * s.inner;
        hv[k] = (xv[k] - mu) * is;
        ov[k] = hv[k] * gv[l] + bv[l];
      }
    }
  }
  const std::size_t ix = x.id(), ig = gain.id(), ib = bias.id();
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [ix, ig, ib, s, n, inv_std = std::move(inv_std), xhat = std::move(xhat)](Tape& t, std::size_t self) {
        auto g = t.grad(self);
        auto gx = t.grad(ix);
        auto gg = t.grad(ig);
        auto gb = t.grad(ib);
        auto gain = t.value(ig).values();
        auto h = xhat.values();
        for (std::size_t o = 0; o < s.outer; ++o) {
          for (std::size_t in = 0; in < s.inner; ++in) {
            const std::size_t base = o * s.length * s.inner + in;
            double sum_dh = 0.0, sum_dh_h = 0.0;
            for (std::size_t l = 0; l < s.length; ++l) {
              const std::size_t k = base + l * s.inner;
              if (!gg.empty()) gg[l] += g[k] * h[k];
              if (!gb.empty()) gb[l] += g[k];
              const double dh = g[k] * gain[l];
              sum_dh += dh;
              sum_dh_h += dh * h[k];
            }
            if (gx.empty()) continue;
            const double is = inv_std[o * s.inner + in];
            for (std::size_t l = 0; l < s.length; ++l) {
              const std::size_t k = base + l * s.inner;
              const double dh = g[k] * gain[l];
              gx[k] += is * (dh - sum_dh / n - h[k] * sum_dh_h / n);
            }
          }
        }
      });
}

// Concatenates along `axis`; all other dimensions must agree.
inline Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw UsageError("concat: no operands");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw UsageError("concat: axis out of range for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Var& p : parts) {
    detail::same_tape(parts[0], p);
    const Shape& sh = p.shape();
    if (sh.size() != first.size()) throw UsageError("concat: rank mismatch");
    for (std::size_t i = 0; i < sh.size(); ++i) {
      if (i != axis && sh[i] != first[i]) {
        throw UsageError("concat: shape mismatch " + shape_string(first) + " vs " + shape_string(sh));
      }
    }
    out_shape[axis] += sh[axis];
  }
  const AxisSplit so = split_axis(out_shape, axis);
  Tensor out(out_shape);
  auto ov = out.values();
  std::vector<std::size_t> ids, offsets, lengths;
  std::size_t off = 0;
  for (const Var& p : parts) {
    const std::size_t len = p.shape()[axis];
    auto pv = p.value().values();
    for (std::size_t o = 0; o < so.outer; ++o) {
      for (std::size_t l = 0; l < len; ++l) {
        for (std::size_t in = 0; in < so.inner; ++in) {
          ov[(o * so.length + off + l) * so.inner + in] = pv[(o * len + l) * so.inner + in];
        }
      }
    }
    ids.push_back(p.id());
    offsets.push_back(off);
    lengths.push_back(len);
    off += len;
  }
  return parts[0].tape().record(std::move(out), parts, [ids, offsets, lengths, so](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    for (std::size_t p = 0; p < ids.size(); ++p) {
      auto gp = t.grad(ids[p]);
      if (gp.empty()) continue;
      const std::size_t len = lengths[p], off = offsets[p];
      for (std::size_t o = 0; o < so.outer; ++o) {
        for (std::size_t l = 0; l < len; ++l) {
          for (std::size_t in = 0; in < so.inner; ++in) {
            gp[(o * len + l) * so.inner + in] += g[(o * so.length + off + l) * so.inner + in];
          }
        }
      }
    }
  });
}

inline Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

inline Var reshape(const Var& a, Shape shape) {
  if (shape_size(shape) != a.size()) {
    throw UsageError("reshape: " + shape_string(a.shape()) + " cannot become " + shape_string(shape));
  }
  Tensor out(std::move(shape), a.value().data());
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {a}, [ia](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[i];
  });
}

// Single entry of `a` (flat index) as a scalar.
inline Var element(const Var& a, std::size_t index) {
  if (index >= a.size()) throw UsageError("element: index out of range");
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::scalar(a.value()[index]), {a}, [ia, index](Tape& t, std::size_t self) {
    t.grad(ia)[index] += t.grad(self)[0];
  });
}

// For a[T×V] returns the vector (a[t, index[t]])_t.
inline Var pick(const Var& a, std::span<const std::size_t> index) {
  detail::require_matrix("pick", a);
  const std::size_t rows = a.rows(), cols = a.cols();
  if (index.size() != rows) throw UsageError("pick: one index per row required");
  std::vector<std::size_t> idx(index.begin(), index.end());
  std::vector<double> vals(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    if (idx[r] >= cols) throw UsageError("pick: column index out of range");
    vals[r] = a.value()(r, idx[r]);
  }
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::vector(std::move(vals)), {a}, [ia, idx, cols](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t r = 0; r < idx.size(); ++r) ga[r * cols + idx[r]] += g[r];
  });
}

// Rows of `table` selected by `ids`, in order (embedding lookup).
inline Var gather_rows(const Var& table, std::span<const std::size_t> ids) {
  detail::require_matrix("gather_rows", table);
  const std::size_t n = table.rows(), d = table.cols();
  if (ids.empty()) throw UsageError("gather_rows: empty index list");
  std::vector<std::size_t> idx(ids.begin(), ids.end());
  Tensor out(Shape{idx.size(), d});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] >= n) throw UsageError("gather_rows: row index out of range");
    auto src = table.value().row(idx[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  const std::size_t it = table.id();
  return table.tape().record(std::move(out), {table}, [it, idx, d](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto gt = t.grad(it);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      for (std::size_t c = 0; c < d; ++c) gt[idx[r] * d + c] += g[r * d + c];
    }
  });
}

// Contiguous block of rows [begin, begin + count).
inline Var slice_rows(const Var& a, std::size_t begin, std::size_t count) {
  detail::require_matrix("slice_rows", a);
  const std::size_t d = a.cols();
  if (count == 0 || begin + count > a.rows()) throw UsageError("slice_rows: range out of bounds");
  std::vector<double> vals(a.value().values().begin() + static_cast<std::ptrdiff_t>(begin * d),
                           a.value().values().begin() + static_cast<std::ptrdiff_t>((begin + count) * d));
  const std::size_t ia = a.id();
  return a.tape().record(Tensor::matrix(count, d, std::move(vals)), {a}, [ia, begin, d](Tape& t, std::size_t self) {
    auto g = t.grad(self);
    auto ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[begin * d + i] += g[i];
  });
}

}  // namespace faceforge
