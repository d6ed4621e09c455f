#include "otfs/receivers.hpp"

#include <gtest/gtest.h>

using namespace otfs;

namespace {

GridConfig grid(int side) {
  GridConfig g;
  g.M = side;
  g.N = side;
  return g;
}

double nmse(const CMatrix& G, const CMatrix& Gh) { return (G - Gh).squaredNorm() / G.squaredNorm(); }

CVector noise(Rng& rng, int n, double var) { return std::sqrt(var) * standard_complex_gaussian(rng, n); }

struct Fixture {
  GridConfig cfg = grid(8);
  PulseShapes pulses = PulseShapes::identity(8);
  TapDictionary dict{cfg, pulses};
  PilotConfig pilot = PilotConfig::centered(cfg, 10.0);
};

}  // namespace

TEST(SeparatePilot, TrivialThresholds) {
  Rng rng(1);
  DDFrame y(unvec(standard_complex_gaussian(rng, 64), grid(8)));
  EXPECT_EQ(separate_pilot(y, 0.0).yp, y.values);
  EXPECT_TRUE(separate_pilot(y, y.values.cwiseAbs().maxCoeff() * 1.01).yp.isZero(0.0));
  EXPECT_THROW(separate_pilot(y, -1.0), ConfigError);
}

TEST(SeparatePilot, StrongPilotLeavesOneEntry) {
  Fixture f;
  f.pilot = PilotConfig::centered(f.cfg, 100.0);
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    const ChannelRealization chan{{ChannelPath{cplx(rng.normal(), rng.normal()), rng.uniform_int(0, 3),
                                               rng.uniform_int(-2, 2), 0.0}}};
    const CMatrix G = build_g(chan, f.pulses, f.cfg);
    const DDFrame x = insert_pilot(map_bits(random_bits(rng, 64), bpsk(), f.cfg), f.pilot, f.cfg);
    const DDFrame y = unvec(G * vec(x, f.cfg), f.cfg);
    const auto obs = separate_pilot(y, fixed_threshold(y, 0.5));
    int kept = 0, at_l = -1, at_k = -1;
    for (int l = 0; l < 8; ++l)
      for (int k = 0; k < 8; ++k)
        if (obs.yp(l, k) != cplx(0.0)) {
          ++kept;
          at_l = l;
          at_k = k;
        }
    EXPECT_EQ(kept, 1);
    EXPECT_EQ(at_l, (f.pilot.l + chan.paths[0].delay_tap) % 8);
    EXPECT_EQ(at_k, (f.pilot.k + chan.paths[0].doppler_tap + 8) % 8);
    for (Eigen::Index i = 0; i < obs.yp.size(); ++i) {
      if (obs.yp(i) != cplx(0.0)) {
        EXPECT_GE(std::abs(obs.yp(i)), obs.lambda);
      }
    }
  }
}

TEST(Omp, ExactRecoveryNoiselessIntegerPilotOnly) {
  Fixture f;
  Rng rng(3);
  const ChannelParams params{2, 3, 2, false};
  for (int t = 0; t < 50; ++t) {
    const auto chan = sample_channel(rng, params, f.cfg);
    const CMatrix G = build_g(chan, f.pulses, f.cfg);
    const CVector y = G * vec(pilot_frame(f.pilot, f.cfg), f.cfg);
    const auto est = omp_estimate(y, f.pilot, f.dict, 3, 2, 2);
    ASSERT_EQ(est.taps.size(), 2u);
    for (const auto& p : chan.paths) {
      auto it = std::find_if(est.taps.begin(), est.taps.end(), [&](const ChannelPath& q) {
        return q.delay_tap == p.delay_tap && q.doppler_tap == p.doppler_tap;
      });
      ASSERT_NE(it, est.taps.end());
      EXPECT_LT(std::abs(it->gain - p.gain), 1e-8);
    }
    EXPECT_LT(nmse(G, est.G), 1e-16);
  }
}

TEST(Omp, ZeroInputAndBadSparsity) {
  Fixture f;
  EXPECT_TRUE(omp_estimate(CVector::Zero(64), f.pilot, f.dict, 3, 2, 2).G.isZero(0.0));
  EXPECT_THROW(omp_estimate(CVector::Zero(64), f.pilot, f.dict, 3, 2, 21), ConfigError);
  EXPECT_THROW(omp_estimate(CVector::Zero(64), f.pilot, f.dict, 3, 2, 0), ConfigError);
  EXPECT_THROW(omp_estimate(CVector::Zero(64), f.pilot, f.dict, 5, 2, 1), ConfigError);
}

TEST(Omp, FractionalDopplerFloor) {
  Fixture f;
  Rng rng(4);
  double e = 0.0, n = 0.0;
  for (int t = 0; t < 100; ++t) {
    auto chan = sample_channel(rng, ChannelParams{2, 3, 2, false}, f.cfg);
    for (auto& p : chan.paths) p.doppler_frac = 0.5;
    const CMatrix G = build_g(chan, f.pulses, f.cfg);
    const auto est = omp_estimate(G * vec(pilot_frame(f.pilot, f.cfg), f.cfg), f.pilot, f.dict, 3, 2, 2);
    e += (G - est.G).squaredNorm();
    n += G.squaredNorm();
  }
  EXPECT_GT(e / n, 1e-2);
}

TEST(EpGuard, LayoutAndValidation) {
  Fixture f;
  const EpGuard g{3, 2};
  const auto m = g.mask(f.pilot, f.cfg);
  EXPECT_EQ(m.count(), 7 * 8);  // Doppler span clipped to N
  const GridConfig g16 = grid(16);
  EXPECT_EQ(g.mask(PilotConfig::centered(g16, 10.0), g16).count(), 7 * 9);
  EXPECT_THROW((EpGuard{4, 1}.validate(f.cfg)), ConfigError);
  Rng rng(5);
  const DDFrame x = ep_frame(map_bits(random_bits(rng, 64), bpsk(), f.cfg), f.pilot, g, f.cfg);
  EXPECT_EQ(x(f.pilot.l, f.pilot.k), f.pilot.value);
  for (int l = 0; l < 8; ++l)
    for (int k = 0; k < 8; ++k) {
      if (m(l, k) && !(l == f.pilot.l && k == f.pilot.k)) {
        EXPECT_EQ(x(l, k), cplx(0.0));
      } else if (!m(l, k)) {
        EXPECT_EQ(std::abs(x(l, k)), 1.0);
      }
    }
}

TEST(EpLmmse, NoiselessIntegerReadOffIsExact) {
  Fixture f;
  const EpGuard guard{3, 2};
  Rng rng(6);
  for (int t = 0; t < 50; ++t) {
    const ChannelRealization chan{{ChannelPath{cplx(rng.normal(), rng.normal()), rng.uniform_int(0, 3),
                                               rng.uniform_int(-2, 2), 0.0}}};
    const CMatrix G = build_g(chan, f.pulses, f.cfg);
    const DDFrame x = ep_frame(map_bits(random_bits(rng, 64), bpsk(), f.cfg), f.pilot, guard, f.cfg);
    const DDFrame y = unvec(G * vec(x, f.cfg), f.cfg);
    const auto est = ep_lmmse_estimate(y, f.pilot, guard, f.dict, 0.0);
    EXPECT_LT(nmse(G, est.G), 1e-20);
  }
}

TEST(EpLmmse, PureNoiseKeepsNoTaps) {
  Fixture f;
  const EpGuard guard{3, 2};
  Rng rng(7);
  const int trials = 4000;
  int empty = 0;
  for (int t = 0; t < trials; ++t) {
    const DDFrame y = unvec(noise(rng, 64, 1.0), f.cfg);
    if (ep_lmmse_estimate(y, f.pilot, guard, f.dict, 1.0).taps.empty()) ++empty;
  }
  // 28 cells, each exceeding 3 sigma with probability exp(-9)
  EXPECT_GT(static_cast<double>(empty) / trials, 0.99);
}

TEST(CancelPilot, ExactWithTrueChannel) {
  Fixture f;
  Rng rng(8);
  for (int t = 0; t < 20; ++t) {
    const CMatrix G = build_g(sample_channel(rng, ChannelParams{}, f.cfg), f.pulses, f.cfg);
    const CVector y = G * vec(pilot_frame(f.pilot, f.cfg), f.cfg);
    EXPECT_LT(cancel_pilot(y, G, f.pilot, f.cfg).squaredNorm(), 1e-20);
  }
  PilotConfig zero = f.pilot;
  zero.value = 0.0;
  const CVector y = standard_complex_gaussian(rng, 64);
  EXPECT_EQ(cancel_pilot(y, CMatrix::Random(64, 64), zero, f.cfg), y);
  EXPECT_THROW(cancel_pilot(y, CMatrix::Identity(32, 32), f.pilot, f.cfg), ConfigError);
}

TEST(Lmmse, IdentityLimitLinearityAndShrinkage) {
  Rng rng(9);
  const CVector y = standard_complex_gaussian(rng, 16);
  EXPECT_LT((lmmse_detect(y, CMatrix::Identity(16, 16), 1e-14) - y).norm(), 1e-12);

  CMatrix G(16, 16);
  for (Eigen::Index i = 0; i < G.size(); ++i) G(i) = cplx(rng.normal(), rng.normal());
  const CVector y2 = standard_complex_gaussian(rng, 16);
  const cplx a(0.3, -1.2), b(-0.7, 0.4);
  const CVector lhs = lmmse_detect(a * y + b * y2, G, 0.5);
  const CVector rhs = a * lmmse_detect(y, G, 0.5) + b * lmmse_detect(y2, G, 0.5);
  EXPECT_LT((lhs - rhs).norm(), 1e-10);

  double prev = std::numeric_limits<double>::infinity();
  for (double s2 : {1e-3, 1e-1, 1.0, 10.0, 1e3, 1e6}) {
    const double n = lmmse_detect(y, G, s2).norm();
    EXPECT_LT(n, prev);
    prev = n;
  }
  EXPECT_LT(prev, 1e-3);
}

TEST(Lmmse, SingularWithoutRegularisation) {
  CMatrix G = CMatrix::Zero(8, 8);
  G(0, 0) = 1.0;
  EXPECT_THROW(lmmse_detect(CVector::Ones(8), G, 0.0), NumericalError);
  EXPECT_NO_THROW(lmmse_detect(CVector::Ones(8), G, 0.1));
}

TEST(Lmmse, DifferentiableMatchesClassical) {
  Rng rng(10);
  CMatrix G(8, 8);
  for (Eigen::Index i = 0; i < G.size(); ++i) G(i) = cplx(rng.normal(), rng.normal());
  const CVector y = standard_complex_gaussian(rng, 8);
  const CMatrix got = ad::to_cmatrix(lmmse_detect(ad::cconst(CMatrix(y)), ad::cconst(G), 0.3));
  EXPECT_LT((CVector(got.col(0)) - lmmse_detect(y, G, 0.3)).norm(), 1e-12);
}

TEST(PerfectCsi, NoiselessIsErrorFree) {
  Fixture f;
  Rng rng(11);
  for (int t = 0; t < 20; ++t) {
    const CMatrix G = build_g(sample_channel(rng, ChannelParams{}, f.cfg), f.pulses, f.cfg);
    const Bits bits = random_bits(rng, 64);
    const CVector y = G * vec(insert_pilot(map_bits(bits, bpsk(), f.cfg), f.pilot, f.cfg), f.cfg);
    EXPECT_EQ(perfect_csi_detect(y, G, f.pilot, 1e-12, bpsk(), f.cfg), bits);
  }
}

TEST(PerfectCsi, HighSnrBer) {
  Fixture f;
  Rng rng(12);
  long errors = 0, total = 0;
  for (int t = 0; t < 300; ++t) {
    const CMatrix G = build_g(sample_channel(rng, ChannelParams{}, f.cfg), f.pulses, f.cfg);
    const Bits bits = random_bits(rng, 64);
    const double s2 = noise_variance(20.0, 1.0);
    const CVector y = G * vec(insert_pilot(map_bits(bits, bpsk(), f.cfg), f.pilot, f.cfg), f.cfg) + noise(rng, 64, s2);
    const Bits got = perfect_csi_detect(y, G, f.pilot, s2, bpsk(), f.cfg);
    for (std::size_t i = 0; i < bits.size(); ++i) errors += got[i] != bits[i];
    total += static_cast<long>(bits.size());
  }
  EXPECT_LT(static_cast<double>(errors) / total, 1e-2);
}
