// SPDX-License-Identifier: Apache-2.0
#pragma once

// Complex arithmetic on (re, im) tensor pairs, plus the fused kernels the
// receiver needs: csolve, modReLU, threshold masking, power normalisation and
// the sparse DD lift.

#include "otfs/autodiff.hpp"

#include <Eigen/LU>

namespace otfs::ad {

struct CTensor {
  Tensor re;
  Tensor im;

  const Shape& shape() const { return re.shape(); }
  int dim(std::size_t i) const { return re.dim(i); }
  std::size_t numel() const { return re.numel(); }
  cplx at(std::size_t i) const { return {re.data()[i], im.data()[i]}; }
};

namespace detail {
inline void require_pair(const char* k, const CTensor& z) {
  if (z.re.shape() != z.im.shape()) throw ShapeError(k, z.re.shape(), z.im.shape());
}
}  // namespace detail

/// Constant pair from a complex matrix, row-major [rows, cols].
inline CTensor cconst(const CMatrix& m, bool requires_grad = false) {
  const int R = static_cast<int>(m.rows()), C = static_cast<int>(m.cols());
  std::vector<double> re(static_cast<std::size_t>(R) * C), im(re.size());
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) {
      re[r * C + c] = m(r, c).real();
      im[r * C + c] = m(r, c).imag();
    }
  return {Tensor::from({R, C}, std::move(re), requires_grad), Tensor::from({R, C}, std::move(im), requires_grad)};
}

inline CMatrix to_cmatrix(const CTensor& z) {
  detail::require_pair("to_cmatrix", z);
  if (z.re.rank() != 2) throw ShapeError("to_cmatrix", "expects a 2-D pair, got " + shape_str(z.shape()));
  const int R = z.dim(0), C = z.dim(1);
  CMatrix m(R, C);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) m(r, c) = z.at(static_cast<std::size_t>(r) * C + c);
  return m;
}

inline CTensor cadd(const CTensor& a, const CTensor& b) { return {add(a.re, b.re), add(a.im, b.im)}; }
inline CTensor csub(const CTensor& a, const CTensor& b) { return {sub(a.re, b.re), sub(a.im, b.im)}; }
inline CTensor cscale(const CTensor& a, double c) { return {scale(a.re, c), scale(a.im, c)}; }
inline CTensor creshape(const CTensor& a, Shape s) { return {reshape(a.re, s), reshape(a.im, s)}; }
inline CTensor ctranspose(const CTensor& a) { return {transpose(a.re), transpose(a.im)}; }
inline CTensor cslice(const CTensor& a, int axis, int start, int len) {
  return {slice(a.re, axis, start, len), slice(a.im, axis, start, len)};
}
inline CTensor cconj(const CTensor& a) { return {a.re, scale(a.im, -1.0)}; }

/// Elementwise product via the four-real-product expansion.
inline CTensor cmul(const CTensor& a, const CTensor& b) {
  detail::require_pair("cmul", a);
  detail::require_pair("cmul", b);
  detail::require_same("cmul", a.re, b.re);
  return {sub(mul(a.re, b.re), mul(a.im, b.im)), add(mul(a.re, b.im), mul(a.im, b.re))};
}

/// a * s for a single-element pair s.
inline CTensor cmul_scalar(const CTensor& a, const CTensor& s) {
  return {sub(mul_scalar(a.re, s.re), mul_scalar(a.im, s.im)), add(mul_scalar(a.re, s.im), mul_scalar(a.im, s.re))};
}

inline CTensor cmatmul(const CTensor& a, const CTensor& b) {
  detail::require_pair("cmatmul", a);
  detail::require_pair("cmatmul", b);
  return {sub(matmul(a.re, b.re), matmul(a.im, b.im)), add(matmul(a.re, b.im), matmul(a.im, b.re))};
}

inline CTensor cconj_transpose(const CTensor& a) { return {transpose(a.re), scale(transpose(a.im), -1.0)}; }

/// Column-major vec of an [M, N] pair, returned as [MN, 1].
inline CTensor cvec(const CTensor& frame) {
  const int M = frame.dim(0), N = frame.dim(1);
  return creshape(ctranspose(frame), {M * N, 1});
}

inline CTensor cunvec(const CTensor& v, int M, int N) { return ctranspose(creshape(v, {N, M})); }

/// |z| elementwise; the gradient at z = 0 is taken as 0.
inline Tensor cabs(const CTensor& z) {
  detail::require_pair("cabs", z);
  std::vector<double> v(z.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::hypot(z.re.data()[i], z.im.data()[i]);
  return detail::make_result(z.shape(), v, {z.re, z.im}, "cabs", [a = v](Node& s) {
    const auto& xr = s.parents[0]->value;
    const auto& xi = s.parents[1]->value;
    double* gr = detail::pgrad(s, 0);
    double* gi = detail::pgrad(s, 1);
    for (std::size_t i = 0; i < a.size(); ++i) {
      if (a[i] == 0.0) continue;
      if (gr) gr[i] += s.grad[i] * xr[i] / a[i];
      if (gi) gi[i] += s.grad[i] * xi[i] / a[i];
    }
  });
}

/// Squared Frobenius norm of a pair.
inline Tensor cnorm2(const CTensor& z) { return add(square_sum(z.re), square_sum(z.im)); }

inline Tensor reciprocal(const Tensor& a) {
  std::vector<double> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (a.data()[i] == 0.0) throw NumericalError("reciprocal: division by zero");
    v[i] = 1.0 / a.data()[i];
  }
  return detail::make_result(a.shape(), v, {a}, "reciprocal", [y = v](Node& s) {
    if (double* g = detail::pgrad(s, 0))
      for (std::size_t i = 0; i < y.size(); ++i) g[i] -= s.grad[i] * y[i] * y[i];
  });
}

/**
 * LU solve that throws NumericalError when the reciprocal condition estimate
 * is <= 1e-12 or the solution is not finite.
 */
inline CMatrix checked_solve(const CMatrix& a, const CMatrix& b, const std::string& who) {
  Eigen::PartialPivLU<CMatrix> lu(a);
  // the LU estimator misreports exact zero pivots, so screen them first
  const double pmax = lu.matrixLU().diagonal().cwiseAbs().maxCoeff();
  const double pmin = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
  const double rc = (pmin > 0.0 && std::isfinite(pmax)) ? std::min(lu.rcond(), pmin / pmax) : 0.0;
  if (!(rc > 1e-12)) {
    const double cond = rc > 0.0 ? 1.0 / rc : std::numeric_limits<double>::infinity();
    throw NumericalError(who + ": matrix is singular or ill-conditioned (condition estimate " + std::to_string(cond) + ")",
                         cond);
  }
  CMatrix x = lu.solve(b);
  if (!x.allFinite()) throw NumericalError(who + ": non-finite solution", 1.0 / rc);
  return x;
}

/**
 * Solves A X = B for complex A (n x n) and B (n x m).
 *
 * Backward with G = dL/dXr + i dL/dXi: dB = A^{-H} G and dA = -dB X^H.
 * Throws NumericalError when the reciprocal condition estimate is <= 1e-12.
 */
inline CTensor csolve(const CTensor& A, const CTensor& B) {
  detail::require_pair("csolve", A);
  detail::require_pair("csolve", B);
  if (A.re.rank() != 2 || B.re.rank() != 2 || A.dim(0) != A.dim(1) || B.dim(0) != A.dim(0)) {
    throw ShapeError("csolve", A.shape(), B.shape());
  }
  const CMatrix a = to_cmatrix(A);
  const CMatrix x = checked_solve(a, to_cmatrix(B), "csolve");
  const CTensor xt = cconst(x);
  const int n = A.dim(0), m = B.dim(1);

  // one shared node computes both components; re/im outputs are views of it
  auto packed = detail::make_result({2, n, m}, [&] {
    std::vector<double> v(xt.re.data());
    v.insert(v.end(), xt.im.data().begin(), xt.im.data().end());
    return v;
  }(), {A.re, A.im, B.re, B.im}, "csolve", [a, x, n, m](Node& s) {
    CMatrix g(n, m);
    const std::size_t half = static_cast<std::size_t>(n) * m;
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < m; ++c) g(r, c) = cplx(s.grad[r * m + c], s.grad[half + r * m + c]);
    const CMatrix bbar = a.adjoint().partialPivLu().solve(g);
    const CMatrix abar = -bbar * x.adjoint();
    auto put = [](double* dst, const CMatrix& src, bool imag) {
      if (!dst) return;
      const int C = static_cast<int>(src.cols());
      for (Eigen::Index r = 0; r < src.rows(); ++r)
        for (Eigen::Index c = 0; c < src.cols(); ++c) dst[r * C + c] += imag ? src(r, c).imag() : src(r, c).real();
    };
    put(detail::pgrad(s, 0), abar, false);
    put(detail::pgrad(s, 1), abar, true);
    put(detail::pgrad(s, 2), bbar, false);
    put(detail::pgrad(s, 3), bbar, true);
  });
  return {reshape(slice(packed, 0, 0, 1), {n, m}), reshape(slice(packed, 0, 1, 1), {n, m})};
}

// ---------------------------------------------------------------------------
// Stacked complex feature maps: [2C, H, W], real parts in channels [0, C).
// ---------------------------------------------------------------------------

/// modReLU: z * relu(|z| + b) / |z| per complex channel, b: [C].
inline Tensor modrelu(const Tensor& x, const Tensor& b) {
  if (x.rank() != 3 || x.dim(0) % 2 != 0 || b.numel() * 2 != static_cast<std::size_t>(x.dim(0))) {
    throw ShapeError("modrelu", x.shape(), b.shape());
  }
  const int C = x.dim(0) / 2;
  const std::size_t plane = static_cast<std::size_t>(x.dim(1)) * x.dim(2);
  std::vector<double> v(x.numel(), 0.0);
  for (int c = 0; c < C; ++c)
    for (std::size_t i = 0; i < plane; ++i) {
      const double re = x.data()[c * plane + i], im = x.data()[(C + c) * plane + i];
      const double a = std::hypot(re, im);
      if (a < 1e-12 || a + b.data()[c] <= 0.0) continue;
      const double sc = (a + b.data()[c]) / a;
      v[c * plane + i] = re * sc;
      v[(C + c) * plane + i] = im * sc;
    }
  return detail::make_result(x.shape(), std::move(v), {x, b}, "modrelu", [C, plane](Node& s) {
    const auto& xv = s.parents[0]->value;
    const auto& bv = s.parents[1]->value;
    double* gx = detail::pgrad(s, 0);
    double* gb = detail::pgrad(s, 1);
    for (int c = 0; c < C; ++c)
      for (std::size_t i = 0; i < plane; ++i) {
        const std::size_t ir = c * plane + i, ii = (C + c) * plane + i;
        const double re = xv[ir], im = xv[ii];
        const double a = std::hypot(re, im);
        if (a < 1e-12 || a + bv[c] <= 0.0) continue;
        const double gr = s.grad[ir], gi = s.grad[ii];
        if (gx) {
          const double base = 1.0 + bv[c] / a;
          const double k = bv[c] / (a * a * a);
          gx[ir] += gr * (base - k * re * re) - gi * k * re * im;
          gx[ii] += gi * (base - k * im * im) - gr * k * re * im;
        }
        if (gb) gb[c] += (gr * re + gi * im) / a;
      }
  });
}

namespace detail {
/// Real weight of the complex convolution: [[Wr, -Wi], [Wi, Wr]] over (out, in) blocks.
inline Tensor complex_conv_weight(const Tensor& wr, const Tensor& wi) {
  const Tensor nwi = scale(wi, -1.0);
  return concat({concat({wr, nwi}, 1), concat({wi, wr}, 1)}, 0);
}
}  // namespace detail

/// Complex convolution on stacked maps; wr, wi: [Cout, Cin, k, k].
inline Tensor cconv2d(const Tensor& x, const Tensor& wr, const Tensor& wi, int stride = 1) {
  if (wr.shape() != wi.shape()) throw ShapeError("cconv2d", wr.shape(), wi.shape());
  return conv2d(x, detail::complex_conv_weight(wr, wi), stride);
}

/// Complex transposed convolution on stacked maps; wr, wi: [Cin, Cout, k, k].
inline Tensor cconv2d_transpose(const Tensor& x, const Tensor& wr, const Tensor& wi, int stride = 2) {
  if (wr.shape() != wi.shape()) throw ShapeError("cconv2d_transpose", wr.shape(), wi.shape());
  const Tensor w = concat({concat({wr, wi}, 1), concat({scale(wi, -1.0), wr}, 1)}, 0);
  return conv2d_transpose(x, w, stride);
}

inline Tensor stack_pair(const CTensor& z) {
  Shape s{1};
  for (int d : z.shape()) s.push_back(d);
  return concat({reshape(z.re, s), reshape(z.im, s)}, 0);
}

inline CTensor unstack_pair(const Tensor& x) {
  if (x.rank() != 3 || x.dim(0) != 2) throw ShapeError("unstack_pair", "expects [2, H, W], got " + shape_str(x.shape()));
  const Shape s{x.dim(1), x.dim(2)};
  return {reshape(slice(x, 0, 0, 1), s), reshape(slice(x, 0, 1, 1), s)};
}

// ---------------------------------------------------------------------------
// Receiver kernels
// ---------------------------------------------------------------------------

/**
 * Hard threshold Y * 1{|Y| >= lambda} with a straight-through backward:
 * the mask is constant for Y, and lambda receives the gradient of the steep
 * surrogate Y * sigmoid(s (|Y| - lambda)), s = 50 / max|Y|.
 */
inline CTensor threshold_mask(const CTensor& y, const Tensor& lambda) {
  detail::require_pair("threshold_mask", y);
  if (lambda.numel() != 1) throw ShapeError("threshold_mask", y.shape(), lambda.shape());
  const std::size_t n = y.numel();
  std::vector<double> a(n);
  double mx = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    a[i] = std::hypot(y.re.data()[i], y.im.data()[i]);
    mx = std::max(mx, a[i]);
  }
  const double lam = lambda.item();
  std::vector<double> v(2 * n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (a[i] >= lam) {
      v[i] = y.re.data()[i];
      v[n + i] = y.im.data()[i];
    }
  const double steep = mx > 0.0 ? 50.0 / mx : 0.0;
  Shape s2{2};
  for (int d : y.shape()) s2.push_back(d);
  auto packed = detail::make_result(s2, std::move(v), {y.re, y.im, lambda}, "threshold_mask",
                                    [a = std::move(a), lam, steep, n](Node& s) {
                                      const auto& yr = s.parents[0]->value;
                                      const auto& yi = s.parents[1]->value;
                                      double* gr = detail::pgrad(s, 0);
                                      double* gi = detail::pgrad(s, 1);
                                      double* gl = detail::pgrad(s, 2);
                                      double acc = 0.0;
                                      for (std::size_t i = 0; i < n; ++i) {
                                        const double g_r = s.grad[i], g_i = s.grad[n + i];
                                        if (a[i] >= lam) {
                                          if (gr) gr[i] += g_r;
                                          if (gi) gi[i] += g_i;
                                        }
                                        const double sg = sigmoid_scalar(steep * (a[i] - lam));
                                        acc -= (g_r * yr[i] + g_i * yi[i]) * sg * (1.0 - sg) * steep;
                                      }
                                      if (gl) gl[0] += acc;
                                    });
  const Shape s = y.shape();
  return {reshape(slice(packed, 0, 0, 1), s), reshape(slice(packed, 0, 1, 1), s)};
}

/// Scales points [R, 2] to unit mean power (1/R) sum |p|^2 = 1.
inline Tensor normalize_power(const Tensor& p) {
  if (p.rank() != 2 || p.dim(1) != 2) throw ShapeError("normalize_power", "expects [R, 2], got " + shape_str(p.shape()));
  const double R = p.dim(0);
  double ssum = 0.0;
  for (double x : p.data()) ssum += x * x;
  if (!(ssum > 0.0)) throw ConfigError("normalize_power: all points are zero");
  const double c = 1.0 / std::sqrt(ssum / R);
  std::vector<double> v(p.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = c * p.data()[i];
  return detail::make_result(p.shape(), std::move(v), {p}, "normalize_power", [c, R](Node& s) {
    const auto& x = s.parents[0]->value;
    double* g = detail::pgrad(s, 0);
    if (!g) return;
    double dot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) dot += s.grad[i] * x[i];
    for (std::size_t i = 0; i < x.size(); ++i) g[i] += c * s.grad[i] - c * c * c / R * x[i] * dot;
  });
}

/// magnitude * exp(j theta) for a single-element theta.
inline CTensor phasor(const Tensor& theta, double magnitude) {
  if (theta.numel() != 1) throw ShapeError("phasor", "theta must be a scalar");
  const double t = theta.item();
  auto packed = detail::make_result({2}, {magnitude * std::cos(t), magnitude * std::sin(t)}, {theta}, "phasor",
                                    [t, magnitude](Node& s) {
                                      if (double* g = detail::pgrad(s, 0))
                                        g[0] += magnitude * (-s.grad[0] * std::sin(t) + s.grad[1] * std::cos(t));
                                    });
  return {slice(packed, 0, 0, 1), slice(packed, 0, 1, 1)};
}

/// Zero tensor of `shape` holding the single element of `x` at flat index `at`.
inline Tensor embed_scalar(const Tensor& x, const Shape& shape, std::size_t at) {
  if (x.numel() != 1 || at >= numel_of(shape)) throw ShapeError("embed_scalar", x.shape(), shape);
  std::vector<double> v(numel_of(shape), 0.0);
  v[at] = x.item();
  return detail::make_result(shape, std::move(v), {x}, "embed_scalar", [at](Node& s) {
    if (double* g = detail::pgrad(s, 0)) g[0] += s.grad[at];
  });
}

/**
 * Fixed sparse complex linear map from a stacked [2, H, W] input to a stacked
 * [2, R, C] output: out[dst] += val * in[src].
 */
struct SparseLift {
  struct Term {
    std::size_t src;
    std::size_t dst;
    cplx val;
  };
  Shape in_shape;   // [H, W]
  Shape out_shape;  // [R, C]
  std::vector<Term> terms;
};

inline Tensor apply_lift(const Tensor& x, const SparseLift& op) {
  const Shape want{2, op.in_shape[0], op.in_shape[1]};
  if (x.shape() != want) throw ShapeError("apply_lift", x.shape(), want);
  const std::size_t nin = numel_of(op.in_shape);
  const std::size_t nout = numel_of(op.out_shape);
  std::vector<double> v(2 * nout, 0.0);
  for (const auto& t : op.terms) {
    const cplx z(x.data()[t.src], x.data()[nin + t.src]);
    const cplx o = t.val * z;
    v[t.dst] += o.real();
    v[nout + t.dst] += o.imag();
  }
  // the operator outlives every graph built from it
  const SparseLift* opp = &op;
  return detail::make_result({2, op.out_shape[0], op.out_shape[1]}, std::move(v), {x}, "apply_lift",
                             [opp, nin, nout](Node& s) {
                               double* g = detail::pgrad(s, 0);
                               if (!g) return;
                               for (const auto& t : opp->terms) {
                                 const cplx go(s.grad[t.dst], s.grad[nout + t.dst]);
                                 const cplx gi = std::conj(t.val) * go;
                                 g[t.src] += gi.real();
                                 g[nin + t.src] += gi.imag();
                               }
                             });
}

}  // namespace otfs::ad
