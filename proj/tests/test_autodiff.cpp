#include "otfs/complex_ops.hpp"

#include <gtest/gtest.h>

#include <functional>

using namespace otfs;
using namespace otfs::ad;

namespace {

constexpr double kTol = 1e-4;
constexpr int kSeeds = 10;

/// Random values with |x| >= 0.1 so piecewise kernels stay away from kinks.
Tensor rand_tensor(Rng& rng, Shape s, bool rg = true) {
  std::vector<double> v(numel_of(s));
  for (auto& x : v) {
    x = rng.uniform(0.1, 1.0);
    if (rng.bit()) x = -x;
  }
  return Tensor::from(std::move(s), std::move(v), rg);
}

Tensor rand_positive(Rng& rng, Shape s) {
  std::vector<double> v(numel_of(s));
  for (auto& x : v) x = rng.uniform(0.2, 2.0);
  return Tensor::from(std::move(s), std::move(v), true);
}

/// Scalar probe: sum_i c_i * out_i with fixed random weights.
Tensor probe(const Tensor& out, std::uint64_t seed) {
  Rng r(seed, 99);
  std::vector<double> c(out.numel());
  for (auto& x : c) x = r.uniform(-1.0, 1.0);
  return sum_reduce(mul(out, Tensor::from(out.shape(), c)));
}

/// FD check of `f` with respect to each of `params`.
void check(const std::function<Tensor()>& f, const std::vector<Tensor>& params, const std::string& name) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto r = finite_difference_check(f, params[i]);
    EXPECT_LT(r.max_error, kTol) << name << " param " << i;
    EXPECT_GT(r.checked, 0u);
  }
}

}  // namespace

TEST(Kernels, ReluPiecewise) {
  Tensor x = Tensor::from({2}, {-1.0, 2.0}, true);
  Tensor y = relu(x);
  backward(sum_reduce(scale(y, 3.0)));
  EXPECT_EQ(x.grad()[0], 0.0);
  EXPECT_EQ(x.grad()[1], 3.0);
}

TEST(Kernels, MatmulIdentity) {
  Rng rng(1);
  Tensor A = rand_tensor(rng, {3, 3});
  Tensor I = Tensor::from_matrix(RMatrix::Identity(3, 3));
  Tensor B = matmul(A, I);
  EXPECT_EQ(B.data(), A.data());
  backward(scale(square_sum(B), 0.5));
  for (std::size_t i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(A.grad()[i], A.data()[i]);
}

TEST(Kernels, ShapeErrorsNameKernel) {
  Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({2, 2});
  try {
    add(a, b);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("[2,3]"), std::string::npos);
  }
  EXPECT_THROW(matmul(a, a), ShapeError);
  EXPECT_THROW(conv2d(Tensor::zeros({1, 4, 4}), Tensor::zeros({2, 3, 3, 3})), ShapeError);
  EXPECT_THROW(slice(a, 1, 2, 2), ShapeError);
}

TEST(Kernels, FiniteDifferenceElementwise) {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(100 + s);
    Tensor a = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {3, 4});
    Tensor p = rand_positive(rng, {3, 4});
    Tensor c = rand_tensor(rng, {1});
    Tensor rv = rand_tensor(rng, {4});
    check([&] { return probe(add(a, b), s); }, {a, b}, "add");
    check([&] { return probe(sub(a, b), s); }, {a, b}, "sub");
    check([&] { return probe(scale(a, -1.7), s); }, {a}, "scale");
    check([&] { return probe(mul(a, b), s); }, {a, b}, "mul");
    check([&] { return probe(mul_scalar(a, c), s); }, {a, c}, "mul_scalar");
    check([&] { return probe(add_rowvec(a, rv), s); }, {a, rv}, "add_rowvec");
    check([&] { return probe(mul_rowvec(a, rv), s); }, {a, rv}, "mul_rowvec");
    check([&] { return probe(relu(a), s); }, {a}, "relu");
    check([&] { return probe(sigmoid(a), s); }, {a}, "sigmoid");
    check([&] { return probe(softmax_rows(scale(a, 3.0)), s); }, {a}, "softmax_rows");
    check([&] { return probe(log(p), s); }, {p}, "log");
    check([&] { return probe(abs(a), s); }, {a}, "abs");
    check([&] { return probe(reciprocal(p), s); }, {p}, "reciprocal");
    check([&] { return max_reduce(a); }, {a}, "max_reduce");
    check([&] { return mean_reduce(mul(a, b)); }, {a, b}, "mean_reduce");
    check([&] { return square_sum(a); }, {a}, "square_sum");
  }
}

TEST(Kernels, SoftmaxRowsSumToOne) {
  Tensor a = Tensor::from({2, 3}, {1000.0, 1001.0, 999.0, -2.0, 0.0, 2.0});
  const Tensor y = softmax_rows(a);
  for (int r = 0; r < 2; ++r) EXPECT_NEAR(y.data()[3 * r] + y.data()[3 * r + 1] + y.data()[3 * r + 2], 1.0, 1e-15);
  const double e2 = std::exp(2.0), z = std::exp(-2.0) + 1.0 + e2;
  EXPECT_NEAR(y.data()[5], e2 / z, 1e-15);
}

TEST(Kernels, FiniteDifferenceShapes) {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(200 + s);
    Tensor a = rand_tensor(rng, {3, 4}), b = rand_tensor(rng, {4, 2}), c = rand_tensor(rng, {3, 2});
    Tensor x = rand_tensor(rng, {2, 3, 4}), y = rand_tensor(rng, {2, 1, 4});
    check([&] { return probe(matmul(a, b), s); }, {a, b}, "matmul");
    check([&] { return probe(transpose(a), s); }, {a}, "transpose");
    check([&] { return probe(reshape(a, {2, 6}), s); }, {a}, "reshape");
    check([&] { return probe(concat({a, c}, 1), s); }, {a, c}, "concat1");
    check([&] { return probe(concat({x, y}, 1), s); }, {x, y}, "concat3d");
    check([&] { return probe(slice(x, 2, 1, 2), s); }, {x}, "slice");
    check([&] { return probe(slice(x, 0, 1, 1), s); }, {x}, "slice0");
  }
}

TEST(Kernels, FiniteDifferenceConv) {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(300 + s);
    Tensor x = rand_tensor(rng, {2, 5, 6}), w = rand_tensor(rng, {3, 2, 3, 3});
    Tensor w1 = rand_tensor(rng, {3, 2, 1, 1});
    Tensor b = rand_tensor(rng, {3});
    Tensor xt = rand_tensor(rng, {2, 3, 2}), wt = rand_tensor(rng, {2, 3, 3, 3});
    check([&] { return probe(conv2d(x, w, 1), s); }, {x, w}, "conv2d s1");
    check([&] { return probe(conv2d(x, w, 2), s); }, {x, w}, "conv2d s2");
    check([&] { return probe(conv2d(x, w1, 1), s); }, {x, w1}, "conv2d 1x1");
    check([&] { return probe(add_channel_bias(conv2d(x, w, 1), b), s); }, {b}, "channel_bias");
    check([&] { return probe(conv2d_transpose(xt, wt, 2), s); }, {xt, wt}, "conv2d_transpose s2");
    check([&] { return probe(conv2d_transpose(xt, wt, 1), s); }, {xt, wt}, "conv2d_transpose s1");
  }
}

TEST(Kernels, ConvShapes) {
  Tensor x = Tensor::zeros({1, 8, 8}), w = Tensor::zeros({4, 1, 3, 3});
  EXPECT_EQ(conv2d(x, w, 2).shape(), (Shape{4, 4, 4}));
  Tensor wt = Tensor::zeros({1, 2, 3, 3});
  EXPECT_EQ(conv2d_transpose(x, wt, 2).shape(), (Shape{2, 16, 16}));
}

TEST(Kernels, ConvMatchesDirectSum) {
  Rng rng(5);
  Tensor x = rand_tensor(rng, {2, 4, 5}, false), w = rand_tensor(rng, {3, 2, 3, 3}, false);
  Tensor y = conv2d(x, w, 2);
  auto X = [&](int c, int i, int j) { return (i < 0 || j < 0 || i >= 4 || j >= 5) ? 0.0 : x.data()[(c * 4 + i) * 5 + j]; };
  for (int o = 0; o < 3; ++o)
    for (int i = 0; i < y.dim(1); ++i)
      for (int j = 0; j < y.dim(2); ++j) {
        double acc = 0.0;
        for (int c = 0; c < 2; ++c)
          for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) acc += w.data()[((o * 2 + c) * 3 + a) * 3 + b] * X(c, 2 * i + a - 1, 2 * j + b - 1);
        EXPECT_NEAR(y.data()[(o * y.dim(1) + i) * y.dim(2) + j], acc, 1e-12);
      }
}

TEST(Kernels, TransposedConvIsAdjoint) {
  // <conv(u), v> == <u, convT(v)> with the same weights
  Rng rng(6);
  Tensor u = rand_tensor(rng, {2, 8, 8}, false), w = rand_tensor(rng, {3, 2, 3, 3}, false);
  Tensor v = rand_tensor(rng, {3, 4, 4}, false);
  Tensor cu = conv2d(u, w, 2);
  std::vector<double> wt(w.numel());
  // [Cout, Cin, k, k] -> [Cin(=3 as input of convT), Cout(=2), k, k] is the same memory order
  Tensor ct = conv2d_transpose(v, Tensor::from({3, 2, 3, 3}, w.data()), 2, 1, 1);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < v.numel(); ++i) lhs += cu.data()[i] * v.data()[i];
  for (std::size_t i = 0; i < u.numel(); ++i) rhs += u.data()[i] * ct.data()[i];
  EXPECT_NEAR(lhs, rhs, 1e-10);
}

TEST(Kernels, BceValues) {
  Tensor half = Tensor::from({4}, {0.5, 0.5, 0.5, 0.5});
  EXPECT_NEAR(bce_loss(half, {0, 1, 1, 0}).item(), std::log(2.0), 1e-12);
  Tensor p = Tensor::from({3}, {0.9, 0.2, 0.8});
  const double hand = -(std::log(0.9) + std::log(1.0 - 0.2) + std::log(0.8)) / 3.0;
  EXPECT_NEAR(bce_loss(p, {1, 0, 1}).item(), hand, 1e-12);
  EXPECT_NEAR(hand, 0.1839, 1e-4);
  Tensor exact = Tensor::from({2}, {1.0, 0.0});
  EXPECT_NEAR(bce_loss(exact, {1, 0}).item(), 1e-7, 1e-9);
  EXPECT_THROW(bce_loss(p, {1, 0}), ShapeError);
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(400 + s);
    std::vector<double> v(6);
    for (auto& x : v) x = rng.uniform(0.05, 0.95);
    Tensor q = Tensor::from({6}, v, true);
    Bits bits = random_bits(rng, 6);
    check([&] { return bce_loss(q, bits); }, {q}, "bce");
  }
}

TEST(Complex, CmulAndCmatmulOracle) {
  CTensor one{Tensor::scalar(1.0), Tensor::scalar(0.0)}, i{Tensor::scalar(0.0), Tensor::scalar(1.0)};
  CTensor z = cmul(one, i);
  EXPECT_EQ(z.re.item(), 0.0);
  EXPECT_EQ(z.im.item(), 1.0);
  Rng rng(7);
  CVector va = standard_complex_gaussian(rng, 16), vb = standard_complex_gaussian(rng, 16);
  CMatrix A = Eigen::Map<CMatrix>(va.data(), 4, 4), B = Eigen::Map<CMatrix>(vb.data(), 4, 4);
  CMatrix got = to_cmatrix(cmatmul(cconst(A), cconst(B)));
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      cplx acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += A(r, k) * B(k, c);
      EXPECT_LT(std::abs(got(r, c) - acc), 1e-10);
    }
  EXPECT_LT((to_cmatrix(cconj_transpose(cconst(A))) - A.adjoint()).norm(), 1e-15);
}

TEST(Complex, FiniteDifference) {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(500 + s);
    CTensor a{rand_tensor(rng, {3, 3}), rand_tensor(rng, {3, 3})};
    CTensor b{rand_tensor(rng, {3, 3}), rand_tensor(rng, {3, 3})};
    CTensor sc{rand_tensor(rng, {1}), rand_tensor(rng, {1})};
    auto cprobe = [s](const CTensor& z) { return add(probe(z.re, s), probe(z.im, s + 1000)); };
    check([&] { return cprobe(cmul(a, b)); }, {a.re, a.im, b.re, b.im}, "cmul");
    check([&] { return cprobe(cmatmul(a, b)); }, {a.re, a.im, b.re, b.im}, "cmatmul");
    check([&] { return cprobe(cconj_transpose(a)); }, {a.re, a.im}, "cconj_transpose");
    check([&] { return cprobe(cmul_scalar(a, sc)); }, {a.re, a.im, sc.re, sc.im}, "cmul_scalar");
    check([&] { return probe(cabs(a), s); }, {a.re, a.im}, "cabs");
    check([&] { return cnorm2(a); }, {a.re, a.im}, "cnorm2");
  }
}

TEST(Csolve, IdentityAndResidual) {
  Rng rng(8);
  CVector vb = standard_complex_gaussian(rng, 8);
  CTensor B = cconst(Eigen::Map<CMatrix>(vb.data(), 4, 2), true);
  CTensor I = cconst(CMatrix::Identity(4, 4));
  CTensor X = csolve(I, B);
  EXPECT_EQ(X.re.data(), B.re.data());
  backward(add(probe(X.re, 1), probe(X.im, 2)));
  Tensor pr = probe(B.re, 1);  // same weights, gradient of the probe is its weight vector
  Rng w(1, 99);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(B.re.grad()[i], w.uniform(-1.0, 1.0), 1e-14);

  CVector va = standard_complex_gaussian(rng, 64);
  CMatrix A = Eigen::Map<CMatrix>(va.data(), 8, 8) + 4.0 * CMatrix::Identity(8, 8);
  CVector v2 = standard_complex_gaussian(rng, 24);
  CMatrix Bm = Eigen::Map<CMatrix>(v2.data(), 8, 3);
  CMatrix Xm = to_cmatrix(csolve(cconst(A), cconst(Bm)));
  EXPECT_LT((A * Xm - Bm).norm() / Bm.norm(), 1e-10);
}

TEST(Csolve, FiniteDifference) {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(600 + s);
    CTensor A{rand_tensor(rng, {4, 4}), rand_tensor(rng, {4, 4})};
    for (int i = 0; i < 4; ++i) A.re.data()[i * 5] += 3.0;
    CTensor B{rand_tensor(rng, {4, 2}), rand_tensor(rng, {4, 2})};
    auto f = [&] {
      CTensor X = csolve(A, B);
      return add(probe(X.re, s), probe(X.im, s + 1000));
    };
    check(f, {A.re, A.im, B.re, B.im}, "csolve");
  }
}

TEST(Csolve, SingularCarriesCondition) {
  CMatrix A = CMatrix::Zero(3, 3);
  A(0, 0) = 1.0;
  try {
    csolve(cconst(A), cconst(CMatrix::Ones(3, 1)));
    FAIL();
  } catch (const NumericalError& e) {
    EXPECT_GT(e.condition(), 1e12);
  }
}

TEST(Fused, ModreluFiniteDifference) {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(700 + s);
    Tensor x = rand_tensor(rng, {4, 3, 3});
    Tensor b = Tensor::from({2}, {rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1)}, true);
    check([&] { return probe(modrelu(x, b), s); }, {x, b}, "modrelu");
  }
  // zero bias is the identity on nonzero inputs
  Rng rng(9);
  Tensor x = rand_tensor(rng, {2, 2, 2}, false);
  EXPECT_EQ(modrelu(x, Tensor::zeros({1})).data(), x.data());
}

TEST(Fused, ComplexConvMatchesFourRealConvs) {
  Rng rng(10);
  Tensor xr = rand_tensor(rng, {2, 4, 4}, false), xi = rand_tensor(rng, {2, 4, 4}, false);
  Tensor wr = rand_tensor(rng, {3, 2, 3, 3}, false), wi = rand_tensor(rng, {3, 2, 3, 3}, false);
  Tensor y = cconv2d(concat({xr, xi}, 0), wr, wi, 1);
  Tensor re = sub(conv2d(xr, wr), conv2d(xi, wi));
  Tensor im = add(conv2d(xi, wr), conv2d(xr, wi));
  for (std::size_t i = 0; i < re.numel(); ++i) {
    EXPECT_NEAR(y.data()[i], re.data()[i], 1e-12);
    EXPECT_NEAR(y.data()[re.numel() + i], im.data()[i], 1e-12);
  }
  Tensor xs = rand_tensor(rng, {4, 2, 2}, false);
  Tensor tr = rand_tensor(rng, {2, 3, 3, 3}, false), ti = rand_tensor(rng, {2, 3, 3, 3}, false);
  Tensor t = cconv2d_transpose(xs, tr, ti, 2);
  Tensor a = slice(xs, 0, 0, 2), b = slice(xs, 0, 2, 2);
  Tensor tre = sub(conv2d_transpose(a, tr), conv2d_transpose(b, ti));
  Tensor tim = add(conv2d_transpose(b, tr), conv2d_transpose(a, ti));
  for (std::size_t i = 0; i < tre.numel(); ++i) {
    EXPECT_NEAR(t.data()[i], tre.data()[i], 1e-12);
    EXPECT_NEAR(t.data()[tre.numel() + i], tim.data()[i], 1e-12);
  }
}

TEST(Fused, NormalizePowerAndPhasor) {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(800 + s);
    Tensor p = rand_tensor(rng, {4, 2});
    check([&] { return probe(normalize_power(p), s); }, {p}, "normalize_power");
    Tensor q = normalize_power(p);
    double pw = 0.0;
    for (double x : q.data()) pw += x * x;
    EXPECT_NEAR(pw / 4, 1.0, 1e-12);
    Tensor th = rand_tensor(rng, {1});
    check([&] {
      CTensor z = phasor(th, 3.0);
      return add(scale(z.re, 0.7), scale(z.im, -1.3));
    }, {th}, "phasor");
    Tensor e = rand_tensor(rng, {1});
    check([&] { return probe(embed_scalar(e, {3, 3}, 4), s); }, {e}, "embed_scalar");
  }
}

TEST(Fused, ThresholdMaskStraightThrough) {
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(900 + s);
    CTensor y{rand_tensor(rng, {3, 3}), rand_tensor(rng, {3, 3})};
    // place lambda between two magnitudes so the mask is locally constant
    std::vector<double> mags;
    for (std::size_t i = 0; i < 9; ++i) mags.push_back(std::hypot(y.re.data()[i], y.im.data()[i]));
    std::sort(mags.begin(), mags.end());
    std::size_t gap = 0;
    for (std::size_t i = 1; i + 1 < mags.size(); ++i)
      if (mags[i + 1] - mags[i] > mags[gap + 1] - mags[gap]) gap = i;
    Tensor lam = Tensor::scalar(0.5 * (mags[gap] + mags[gap + 1]), true);
    auto f = [&] {
      CTensor o = threshold_mask(y, lam);
      return add(probe(o.re, s), probe(o.im, s + 1000));
    };
    check(f, {y.re, y.im}, "threshold_mask Y");
    // lambda gradient equals the gradient of the steep-sigmoid surrogate
    const double mx = mags.back();
    auto surrogate = [&](double l) {
      Rng r1(s, 99), r2(s + 1000, 99);
      std::vector<double> c1(9), c2(9);
      for (auto& x : c1) x = r1.uniform(-1.0, 1.0);
      for (auto& x : c2) x = r2.uniform(-1.0, 1.0);
      double acc = 0.0;
      for (std::size_t i = 0; i < 9; ++i) {
        const double a = std::hypot(y.re.data()[i], y.im.data()[i]);
        const double sg = sigmoid_scalar(50.0 / mx * (a - l));
        acc += sg * (c1[i] * y.re.data()[i] + c2[i] * y.im.data()[i]);
      }
      return acc;
    };
    lam.zero_grad();
    backward(f());
    const double h = 1e-6, l0 = lam.item();
    const double fd = (surrogate(l0 + h) - surrogate(l0 - h)) / (2 * h);
    EXPECT_NEAR(lam.grad()[0], fd, 1e-4 * std::max(1e-2, std::abs(fd)));
  }
  CTensor y{Tensor::from({3}, {0.1, 2.0, -0.5}), Tensor::from({3}, {0.0, 0.0, 0.0})};
  CTensor o = threshold_mask(y, Tensor::scalar(0.0));
  EXPECT_EQ(o.re.data(), y.re.data());
  o = threshold_mask(y, Tensor::scalar(3.0));
  EXPECT_EQ(o.re.data(), (std::vector<double>{0, 0, 0}));
}

TEST(Fused, SparseLift) {
  SparseLift op;
  op.in_shape = {2, 2};
  op.out_shape = {3, 3};
  op.terms = {{0, 0, cplx(1.0, 2.0)}, {3, 4, cplx(-0.5, 0.3)}, {0, 8, cplx(0.0, 1.0)}};
  for (int s = 0; s < kSeeds; ++s) {
    Rng rng(1000 + s);
    Tensor x = rand_tensor(rng, {2, 2, 2});
    check([&] { return probe(apply_lift(x, op), s); }, {x}, "apply_lift");
  }
  Tensor x = Tensor::from({2, 2, 2}, {1, 0, 0, 2, 0, 0, 0, 1});
  Tensor o = apply_lift(x, op);
  EXPECT_EQ(o.data()[0], 1.0);
  EXPECT_EQ(o.data()[9], 2.0);
  // (-0.5 + 0.3i) * (2 + 1i) = -1.3 + 0.1i
  EXPECT_NEAR(o.data()[4], -1.3, 1e-15);
  EXPECT_NEAR(o.data()[9 + 4], 0.1, 1e-15);
}

TEST(Tape, OrderIndependent) {
  Rng rng(11);
  Tensor a = rand_tensor(rng, {4, 4}), b = rand_tensor(rng, {4, 4});
  auto build = [&] {
    Tensor h = matmul(a, b);
    Tensor u = add(sigmoid(h), mul(h, a));
    Tensor v = matmul(transpose(u), relu(h));
    return add(sum_reduce(mul(v, v)), mean_reduce(concat({u, h}, 0)));
  };
  backward(build(), TopoOrder::DepthFirst);
  auto ga = a.grad(), gb = b.grad();
  a.zero_grad();
  b.zero_grad();
  backward(build(), TopoOrder::Kahn);
  for (std::size_t i = 0; i < ga.size(); ++i) {
    EXPECT_NEAR(ga[i], a.grad()[i], 1e-12 * std::max(1.0, std::abs(ga[i])));
    EXPECT_NEAR(gb[i], b.grad()[i], 1e-12 * std::max(1.0, std::abs(gb[i])));
  }
}

TEST(Tape, NoGradRecordsNothing) {
  Tensor a = Tensor::scalar(2.0, true);
  {
    NoGradGuard g;
    Tensor y = mul(a, a);
    EXPECT_FALSE(y.requires_grad());
  }
  EXPECT_TRUE(mul(a, a).requires_grad());
}

TEST(Adam, ZeroGradientNoDecayIsNoop) {
  Tensor x = Tensor::from({3}, {1.0, -2.0, 3.0}, true);
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  Adam opt({x}, cfg);
  for (int i = 0; i < 5; ++i) opt.step(1e-3);
  EXPECT_EQ(x.data(), (std::vector<double>{1.0, -2.0, 3.0}));
  EXPECT_EQ(opt.steps(), 5);
}

TEST(Adam, QuadraticConverges) {
  Tensor x = Tensor::scalar(0.0, true);
  AdamConfig cfg;
  cfg.weight_decay = 0.0;
  Adam opt({x}, cfg);
  for (int i = 0; i < 2000; ++i) {
    opt.zero_grad();
    Tensor d = add_const(x, -3.0);
    backward(mul(d, d));
    opt.step(1e-2);
  }
  EXPECT_LT(std::abs(x.item() - 3.0), 1e-3);
}

TEST(Adam, LinearSchedule) {
  AdamConfig cfg;
  cfg.lr_start = 1e-3;
  cfg.lr_end = 1e-4;
  cfg.total_epochs = 300;
  EXPECT_DOUBLE_EQ(cfg.lr_at(0), 1e-3);
  EXPECT_NEAR(cfg.lr_at(299), 1e-4, 1e-18);
  EXPECT_LT(cfg.lr_at(150), cfg.lr_at(149));
}
