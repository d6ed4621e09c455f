#include "otfs/core.hpp"

#include <gtest/gtest.h>

using namespace otfs;

TEST(Vec, ColumnMajorOrder) {
  GridConfig cfg{2, 2, 15e3, 0};
  DDFrame f(cfg);
  const cplx a(1, 0), b(2, 0), c(3, 0), d(4, 0);
  f(0, 0) = a;
  f(1, 0) = b;
  f(0, 1) = c;
  f(1, 1) = d;
  CVector v = vec(f, cfg);
  EXPECT_EQ(v(0), a);
  EXPECT_EQ(v(1), b);
  EXPECT_EQ(v(2), c);
  EXPECT_EQ(v(3), d);
}

TEST(Vec, ZeroFrame) {
  GridConfig cfg;
  EXPECT_EQ(vec(DDFrame(cfg), cfg), CVector::Zero(64));
}

TEST(Vec, RoundTrip) {
  Rng rng(11);
  for (auto cfg : {GridConfig{8, 8, 15e3, 4}, GridConfig{16, 16, 15e3, 4}, GridConfig{4, 6, 15e3, 1}}) {
    for (int t = 0; t < 100; ++t) {
      CVector v = standard_complex_gaussian(rng, cfg.size());
      DDFrame f = unvec(v, cfg);
      EXPECT_EQ(vec(f, cfg), v);
      EXPECT_EQ(unvec(vec(f, cfg), cfg).values, f.values);
    }
  }
}

TEST(Vec, UnvecExample) {
  GridConfig cfg{2, 2, 15e3, 0};
  CVector v(4);
  v << 1.0, 2.0, 3.0, 4.0;
  DDFrame f = unvec(v, cfg);
  EXPECT_EQ(f(0, 1), cplx(3.0));
  EXPECT_EQ(f(1, 0), cplx(2.0));
}

TEST(Vec, LengthMismatchThrows) {
  GridConfig cfg;
  EXPECT_THROW(unvec(CVector::Zero(63), cfg), ConfigError);
  EXPECT_THROW(vec(DDFrame(CMatrix::Zero(7, 8)), cfg), ConfigError);
}

TEST(Grid, Validation) {
  EXPECT_NO_THROW((GridConfig{8, 8, 15e3, 4}.validate()));
  EXPECT_THROW((GridConfig{1, 8, 15e3, 0}.validate()), ConfigError);
  EXPECT_THROW((GridConfig{8, 8, 15e3, 8}.validate()), ConfigError);
  EXPECT_THROW((GridConfig{8, 8, 0.0, 1}.validate()), ConfigError);
  GridConfig g;
  EXPECT_DOUBLE_EQ(g.symbol_duration() * g.delta_f, 1.0);
  EXPECT_DOUBLE_EQ(g.delay_resolution(), 1.0 / (8 * 15e3));
  EXPECT_DOUBLE_EQ(g.doppler_resolution(), 15e3 / 8);
}

TEST(Gaussian, Moments) {
  Rng rng(3, 1);
  const int n = 1000000;
  CVector z = standard_complex_gaussian(rng, n);
  const cplx mean = z.mean();
  EXPECT_LT(std::abs(mean.real()), 5e-3);
  EXPECT_LT(std::abs(mean.imag()), 5e-3);
  const double var = z.squaredNorm() / n;
  EXPECT_NEAR(var, 1.0, 0.01);
  double vr = 0.0;
  for (int i = 0; i < n; ++i) vr += z(i).real() * z(i).real();
  EXPECT_NEAR(vr / n, 0.5, 0.01);
}

TEST(Gaussian, Deterministic) {
  Rng a(42, 7), b(42, 7), c(42, 8);
  CVector x = standard_complex_gaussian(a, 100);
  EXPECT_EQ(x, standard_complex_gaussian(b, 100));
  EXPECT_NE(x, standard_complex_gaussian(c, 100));
  EXPECT_THROW(standard_complex_gaussian(a, 0), ConfigError);
}

TEST(Rng, ForkIsDeterministicAndDistinct) {
  Rng p(5);
  Rng f1 = p.fork(1), f1b = p.fork(1), f2 = p.fork(2);
  const double x = f1.uniform();
  EXPECT_EQ(x, f1b.uniform());
  EXPECT_NE(x, f2.uniform());
}
