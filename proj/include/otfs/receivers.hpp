// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "otfs/channel.hpp"
#include "otfs/complex_ops.hpp"
#include "otfs/modem.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <string_view>

namespace otfs {

enum class Estimator { Omp, EpLmmse, Cenet, Perfect };

inline std::string_view estimator_name(Estimator e) {
  switch (e) {
    case Estimator::Omp: return "omp";
    case Estimator::EpLmmse: return "ep-lmmse";
    case Estimator::Cenet: return "cenet";
    case Estimator::Perfect: return "perfect";
  }
  return "?";
}

/// Thresholded copy of the received frame; only the pilot's footprint should survive.
struct PilotObservation {
  CMatrix yp;
  double lambda = 0.0;
};

struct ChannelEstimate {
  CMatrix G;
  Estimator method = Estimator::Perfect;
  std::vector<ChannelPath> taps;  // integer taps when the estimator is tap-based
};

inline PilotObservation separate_pilot(const DDFrame& y, double lambda) {
  if (!(lambda >= 0.0)) throw ConfigError("separate_pilot: lambda must be >= 0");
  PilotObservation o{y.values, lambda};
  for (Eigen::Index i = 0; i < o.yp.size(); ++i)
    if (std::abs(o.yp(i)) < lambda) o.yp(i) = 0.0;
  return o;
}

/// Fixed baseline threshold alpha * max|Y|.
inline double fixed_threshold(const DDFrame& y, double alpha) {
  return y.values.size() ? alpha * y.values.cwiseAbs().maxCoeff() : 0.0;
}

inline int pilot_index(const PilotConfig& pilot, const GridConfig& cfg) { return pilot.k * cfg.M + pilot.l; }

/// G from a list of integer taps.
inline CMatrix assemble_g(const std::vector<ChannelPath>& taps, const TapDictionary& dict) {
  const int MN = dict.grid().size();
  CMatrix G = CMatrix::Zero(MN, MN);
  for (const auto& t : taps) G += t.gain * CMatrix(dict.at(t.delay_tap, t.doppler_tap));
  return G;
}

// ---------------------------------------------------------------------------
// OMP
// ---------------------------------------------------------------------------

/**
 * Orthogonal matching pursuit over integer taps l in [0, l_max],
 * k in [-k_max, k_max]; atom (l, k) = G_{l,k} x_p. The whole received vector
 * is used, so data symbols act as interference.
 */
inline ChannelEstimate omp_estimate(const CVector& y, const PilotConfig& pilot, const TapDictionary& dict, int l_max,
                                    int k_max, int sparsity) {
  const GridConfig& cfg = dict.grid();
  const int MN = cfg.size();
  if (y.size() != MN) throw ConfigError("omp: received vector length != M*N");
  if (l_max < 0 || l_max > cfg.l_cp || k_max < 0 || 2 * k_max + 1 > cfg.N) {
    throw ConfigError("omp: tap range l_max=" + std::to_string(l_max) + ", k_max=" + std::to_string(k_max) +
                      " does not fit the grid");
  }
  const int atoms = (l_max + 1) * (2 * k_max + 1);
  if (sparsity < 1 || sparsity > atoms) {
    throw ConfigError("omp: sparsity " + std::to_string(sparsity) + " outside [1, " + std::to_string(atoms) + "]");
  }
  pilot.validate(cfg);
  const int pp = pilot_index(pilot, cfg);

  CMatrix D(MN, atoms);
  std::vector<std::pair<int, int>> idx;
  for (int l = 0; l <= l_max; ++l) {
    for (int k = -k_max; k <= k_max; ++k) {
      const SparseCMatrix& G = dict.at(l, dict.wrap_doppler(k));
      D.col(static_cast<Eigen::Index>(idx.size())) = pilot.value * CVector(G.col(pp));
      idx.emplace_back(l, k);
    }
  }

  ChannelEstimate est{CMatrix::Zero(MN, MN), Estimator::Omp, {}};
  if (y.squaredNorm() == 0.0 || pilot.value == cplx(0.0)) return est;

  std::vector<int> support;
  CVector r = y, gains;
  for (int it = 0; it < sparsity; ++it) {
    Eigen::VectorXd c = (D.adjoint() * r).cwiseAbs();
    for (int s : support) c(s) = -1.0;
    Eigen::Index best = 0;
    c.maxCoeff(&best);
    support.push_back(static_cast<int>(best));
    CMatrix A(MN, static_cast<Eigen::Index>(support.size()));
    for (std::size_t j = 0; j < support.size(); ++j) A.col(static_cast<Eigen::Index>(j)) = D.col(support[j]);
    gains = A.colPivHouseholderQr().solve(y);
    r = y - A * gains;
  }
  for (std::size_t j = 0; j < support.size(); ++j) {
    const auto [l, k] = idx[support[j]];
    est.taps.push_back(ChannelPath{gains(static_cast<Eigen::Index>(j)), l, k, 0.0});
  }
  est.G = assemble_g(est.taps, dict);
  return est;
}

// ---------------------------------------------------------------------------
// Embedded pilot
// ---------------------------------------------------------------------------

/// Guard of an embedded-pilot frame: rows l_p +- l_max, columns k_p +- 2 k_max (cyclic, clipped to N).
struct EpGuard {
  int l_max = 3;
  int k_max = 2;

  void validate(const GridConfig& cfg) const {
    if (l_max < 0 || k_max < 0) throw ConfigError("ep guard: l_max and k_max must be >= 0");
    if (2 * l_max + 1 > cfg.M) {
      throw ConfigError("ep guard: " + std::to_string(2 * l_max + 1) + " delay rows exceed M=" + std::to_string(cfg.M));
    }
    if (l_max > cfg.l_cp) throw ConfigError("ep guard: l_max exceeds the cyclic prefix");
  }

  /// Half-width of the Doppler read-off window.
  int window(const GridConfig& cfg) const { return std::min(2 * k_max, cfg.N / 2 - 1); }

  Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> mask(const PilotConfig& pilot, const GridConfig& cfg) const {
    validate(cfg);
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> m = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>::Constant(cfg.M, cfg.N, false);
    for (int dl = -l_max; dl <= l_max; ++dl)
      for (int dk = -2 * k_max; dk <= 2 * k_max; ++dk)
        m(((pilot.l + dl) % cfg.M + cfg.M) % cfg.M, ((pilot.k + dk) % cfg.N + cfg.N) % cfg.N) = true;
    return m;
  }
};

/// Data frame with the guard zeroed and the pilot placed alone inside it.
inline DDFrame ep_frame(const DDFrame& data, const PilotConfig& pilot, const EpGuard& guard, const GridConfig& cfg) {
  check_frame(data.values, cfg, "ep_frame");
  pilot.validate(cfg);
  const auto m = guard.mask(pilot, cfg);
  DDFrame out = data;
  for (int l = 0; l < cfg.M; ++l)
    for (int k = 0; k < cfg.N; ++k)
      if (m(l, k)) out(l, k) = 0.0;
  out(pilot.l, pilot.k) = pilot.value;
  return out;
}

/**
 * Threshold read-off inside the guard: for delay dl in [0, l_max] and Doppler
 * dk in [-W, W] the received cell divided by the pilot's unit-tap response is
 * a gain estimate, kept when its magnitude exceeds 3 sigma / |x_p|.
 */
inline ChannelEstimate ep_lmmse_estimate(const DDFrame& y, const PilotConfig& pilot, const EpGuard& guard,
                                         const TapDictionary& dict, double noise_var) {
  const GridConfig& cfg = dict.grid();
  check_frame(y.values, cfg, "ep_lmmse_estimate");
  guard.validate(cfg);
  pilot.validate(cfg);
  if (!(noise_var >= 0.0)) throw ConfigError("ep_lmmse_estimate: noise variance must be >= 0");
  ChannelEstimate est{CMatrix::Zero(cfg.size(), cfg.size()), Estimator::EpLmmse, {}};
  const double xp = std::abs(pilot.value);
  if (xp == 0.0) return est;
  const double thr = 3.0 * std::sqrt(noise_var) / xp;
  const int pp = pilot_index(pilot, cfg);
  const int W = guard.window(cfg);
  for (int dl = 0; dl <= guard.l_max; ++dl) {
    for (int dk = -W; dk <= W; ++dk) {
      const int row = (pilot.l + dl) % cfg.M;
      const int col = ((pilot.k + dk) % cfg.N + cfg.N) % cfg.N;
      const int k = dict.wrap_doppler(dk);
      const cplx a = pilot.value * dict.at(dl, k).coeff(col * cfg.M + row, pp);
      const cplx c = y(row, col) / a;
      if (std::abs(c) > thr) est.taps.push_back(ChannelPath{c, dl, k, 0.0});
    }
  }
  est.G = assemble_g(est.taps, dict);
  return est;
}

// ---------------------------------------------------------------------------
// Detection
// ---------------------------------------------------------------------------

/// y_d = y - G x_p.
inline CVector cancel_pilot(const CVector& y, const CMatrix& G, const PilotConfig& pilot, const GridConfig& cfg) {
  if (y.size() != cfg.size() || G.rows() != cfg.size() || G.cols() != cfg.size()) {
    throw ConfigError("cancel_pilot: expected length " + std::to_string(cfg.size()) + " and a square G of that size");
  }
  pilot.validate(cfg);
  return y - pilot.value * G.col(pilot_index(pilot, cfg));
}

/// (G^H G + s2 I)^{-1} G^H y_d.
inline CVector lmmse_detect(const CVector& y_d, const CMatrix& G, double noise_var) {
  if (G.rows() != y_d.size() || G.rows() != G.cols()) throw ConfigError("lmmse_detect: dimension mismatch");
  if (!(noise_var >= 0.0)) throw ConfigError("lmmse_detect: noise variance must be >= 0");
  CMatrix A = G.adjoint() * G;
  A.diagonal().array() += noise_var;
  return ad::checked_solve(A, G.adjoint() * y_d, "lmmse_detect");
}

/// Differentiable variant; y_d is [MN, 1].
inline ad::CTensor lmmse_detect(const ad::CTensor& y_d, const ad::CTensor& G, double noise_var) {
  const int n = G.dim(0);
  const ad::CTensor Gh = ad::cconj_transpose(G);
  ad::CTensor A = ad::cmatmul(Gh, G);
  A.re = ad::add(A.re, ad::Tensor::from_matrix(RMatrix::Identity(n, n) * noise_var));
  return ad::csolve(A, ad::cmatmul(Gh, y_d));
}

inline Bits perfect_csi_detect(const CVector& y, const CMatrix& G, const PilotConfig& pilot, double noise_var,
                               const Constellation& c, const GridConfig& cfg) {
  return hard_demap(lmmse_detect(cancel_pilot(y, G, pilot, cfg), G, noise_var), c);
}

}  // namespace otfs
