// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "otfs/core.hpp"
#include "otfs/transforms.hpp"

#include <Eigen/Sparse>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <utility>

namespace otfs {

struct ChannelPath {
  cplx gain{1.0, 0.0};
  int delay_tap = 0;
  int doppler_tap = 0;
  double doppler_frac = 0.0;

  double doppler() const { return doppler_tap + doppler_frac; }
};

struct ChannelRealization {
  std::vector<ChannelPath> paths;

  std::size_t size() const { return paths.size(); }
  double total_power() const {
    double p = 0.0;
    for (const auto& path : paths) p += std::norm(path.gain);
    return p;
  }
};

/// Generator parameters for random realizations.
struct ChannelParams {
  int paths = 2;
  int l_max = 3;
  int k_max = 2;
  bool fractional = true;

  void validate(const GridConfig& cfg) const {
    if (paths < 1) throw ConfigError("channel: path count must be >= 1");
    if (l_max < 0 || l_max > cfg.l_cp) throw ConfigError("channel: need 0 <= l_max <= l_cp");
    if (k_max < 0) throw ConfigError("channel: k_max must be >= 0");
    if (paths > l_max + 1) {
      throw ConfigError("channel: " + std::to_string(paths) + " paths need distinct delays but only " +
                        std::to_string(l_max + 1) + " taps exist");
    }
  }
  bool operator==(const ChannelParams&) const = default;
};

/**
 * Draws a realization: distinct delay taps with tap 0 always present, integer
 * Doppler uniform on [-k_max, k_max], fractional offset uniform on [-1/2, 1/2]
 * (or 0), gains CN(0, 1/P).
 */
inline ChannelRealization sample_channel(Rng& rng, const ChannelParams& params, const GridConfig& cfg) {
  params.validate(cfg);
  std::vector<int> pool;
  for (int l = 1; l <= params.l_max; ++l) pool.push_back(l);
  std::vector<int> delays{0};
  for (int i = 1; i < params.paths; ++i) {
    const int j = rng.uniform_int(0, static_cast<int>(pool.size()) - 1);
    delays.push_back(pool[j]);
    pool.erase(pool.begin() + j);
  }
  const double sigma = std::sqrt(0.5 / params.paths);
  ChannelRealization chan;
  for (int l : delays) {
    ChannelPath p;
    const double re = rng.normal();
    const double im = rng.normal();
    p.gain = cplx(sigma * re, sigma * im);
    p.delay_tap = l;
    p.doppler_tap = rng.uniform_int(-params.k_max, params.k_max);
    p.doppler_frac = params.fractional ? rng.uniform(-0.5, 0.5) : 0.0;
    chan.paths.push_back(p);
  }
  return chan;
}

inline void check_realization(const ChannelRealization& chan, const GridConfig& cfg) {
  if (chan.paths.empty()) throw ConfigError("channel: realization has no paths");
  for (const auto& p : chan.paths) {
    if (p.delay_tap < 0 || p.delay_tap > cfg.l_cp) {
      throw ModelError("channel: delay tap " + std::to_string(p.delay_tap) +
                       " is not covered by the cyclic prefix (l_cp=" + std::to_string(cfg.l_cp) + ")");
    }
    if (p.doppler_frac < -0.5 || p.doppler_frac > 0.5) {
      throw ModelError("channel: fractional Doppler outside [-1/2, 1/2]");
    }
  }
}

namespace detail {
/// w^e with w = exp(j 2 pi (k + kappa) / ((M + L_cp) N)).
inline cplx doppler_phase(const ChannelPath& p, const GridConfig& cfg, long exponent) {
  const double denom = static_cast<double>(cfg.M + cfg.l_cp) * cfg.N;
  return std::polar(1.0, 2.0 * std::numbers::pi * p.doppler() * static_cast<double>(exponent) / denom);
}
}  // namespace detail

/**
 * Time-domain effective channel H_eff = sum_i h_i Delta_i Pi_i.
 *
 * Pi_i is a per-block forward cyclic shift by the delay tap and Delta_i applies
 * the Doppler phase of the transmitted CP-extended sample; CP insertion and
 * removal are folded in.
 */
inline CMatrix build_h_eff(const ChannelRealization& chan, const GridConfig& cfg) {
  check_realization(chan, cfg);
  const int M = cfg.M;
  const int MN = cfg.size();
  CMatrix H = CMatrix::Zero(MN, MN);
  for (const auto& p : chan.paths) {
    for (int n = 0; n < cfg.N; ++n) {
      for (int m = 0; m < M; ++m) {
        const long e = static_cast<long>(M + cfg.l_cp) * n + cfg.l_cp + m - p.delay_tap;
        const int src = ((m - p.delay_tap) % M + M) % M;
        H(n * M + m, n * M + src) += p.gain * detail::doppler_phase(p, cfg, e);
      }
    }
  }
  return H;
}

/// Applies H_eff to a time-domain vector without forming the matrix (Pi then Delta per path).
inline CVector apply_paths(const ChannelRealization& chan, const GridConfig& cfg, const CVector& s) {
  check_realization(chan, cfg);
  if (s.size() != cfg.size()) throw ConfigError("apply_paths: vector length != M*N");
  const int M = cfg.M;
  CVector r = CVector::Zero(s.size());
  for (const auto& p : chan.paths) {
    for (int n = 0; n < cfg.N; ++n) {
      for (int m = 0; m < M; ++m) {
        const long e = static_cast<long>(M + cfg.l_cp) * n + cfg.l_cp + m - p.delay_tap;
        const int src = ((m - p.delay_tap) % M + M) % M;
        r(n * M + m) += p.gain * detail::doppler_phase(p, cfg, e) * s(n * M + src);
      }
    }
  }
  return r;
}

/// G = (U_N kron P_rx) H_eff (U_N^H kron P_tx), evaluated block-wise.
inline CMatrix build_g(const CMatrix& h_eff, const PulseShapes& pulses, const GridConfig& cfg) {
  const int M = cfg.M;
  const int N = cfg.N;
  const int MN = cfg.size();
  if (h_eff.rows() != MN || h_eff.cols() != MN) {
    throw ConfigError("build_g: H_eff must be MN x MN");
  }
  check_pulses(pulses, cfg);
  const CMatrix UN = unitary_dft(N);
  const CMatrix UNh = UN.adjoint();

  CMatrix right(MN, MN);
  for (int j = 0; j < N; ++j) {
    CMatrix acc = CMatrix::Zero(MN, M);
    for (int n = 0; n < N; ++n) acc.noalias() += UNh(n, j) * h_eff.middleCols(n * M, M);
    right.middleCols(j * M, M) = acc * pulses.tx.asDiagonal();
  }
  CMatrix G(MN, MN);
  for (int i = 0; i < N; ++i) {
    CMatrix acc = CMatrix::Zero(M, MN);
    for (int n = 0; n < N; ++n) acc.noalias() += UN(i, n) * right.middleRows(n * M, M);
    G.middleRows(i * M, M) = pulses.rx.asDiagonal() * acc;
  }
  return G;
}

inline CMatrix build_g(const ChannelRealization& chan, const PulseShapes& pulses, const GridConfig& cfg) {
  return build_g(build_h_eff(chan, cfg), pulses, cfg);
}

inline double noise_variance(double snr_db, double data_energy) {
  if (std::isinf(snr_db) && snr_db > 0) return 0.0;
  return data_energy / std::pow(10.0, snr_db / 10.0);
}

/// r = H_eff s + w; snr_db = +inf disables the noise.
inline CVector apply_channel(const CVector& s, const CMatrix& h_eff, double snr_db, double data_energy,
                             Rng& rng) {
  if (std::isnan(snr_db)) throw ConfigError("apply_channel: snr_db is NaN");
  CVector r = h_eff * s;
  const double var = noise_variance(snr_db, data_energy);
  if (var > 0.0) r += std::sqrt(var) * standard_complex_gaussian(rng, r.size());
  return r;
}

using SparseCMatrix = Eigen::SparseMatrix<cplx, Eigen::RowMajor>;

/**
 * Equivalent DD channels of unit-gain integer taps, G_{l,k}, for every delay
 * l in [0, l_cp] and Doppler k in [-N/2, N/2). Shared by OMP, the EP read-off
 * and the CENet lift. Entries below 1e-12 are dropped.
 */
class TapDictionary {
 public:
  TapDictionary(const GridConfig& cfg, const PulseShapes& pulses) : cfg_(cfg) {
    cfg.validate();
    k_lo_ = -(cfg.N / 2);
    k_hi_ = k_lo_ + cfg.N - 1;
    for (int l = 0; l <= cfg.l_cp; ++l) {
      for (int k = k_lo_; k <= k_hi_; ++k) {
        ChannelRealization unit{{ChannelPath{cplx(1.0, 0.0), l, k, 0.0}}};
        const CMatrix G = build_g(unit, pulses, cfg);
        taps_.emplace(std::make_pair(l, k), G.sparseView(1.0, 1e-12));
      }
    }
  }

  const GridConfig& grid() const { return cfg_; }
  int k_min() const { return k_lo_; }
  int k_max() const { return k_hi_; }
  bool contains(int l, int k) const { return taps_.count({l, k}) != 0; }

  const SparseCMatrix& at(int l, int k) const {
    auto it = taps_.find({l, k});
    if (it == taps_.end()) {
      throw ConfigError("tap dictionary: no tap (" + std::to_string(l) + "," + std::to_string(k) + ")");
    }
    return it->second;
  }

  /// Maps a signed Doppler offset onto the dictionary range (mod N).
  int wrap_doppler(int k) const {
    const int N = cfg_.N;
    int r = ((k - k_lo_) % N + N) % N;
    return r + k_lo_;
  }

 private:
  GridConfig cfg_;
  int k_lo_ = 0;
  int k_hi_ = 0;
  std::map<std::pair<int, int>, SparseCMatrix> taps_;
};

inline nlohmann::json channel_to_json(const ChannelRealization& chan) {
  nlohmann::json paths = nlohmann::json::array();
  for (const auto& p : chan.paths) {
    paths.push_back({{"gain_re", p.gain.real()},
                     {"gain_im", p.gain.imag()},
                     {"delay", p.delay_tap},
                     {"doppler_int", p.doppler_tap},
                     {"doppler_frac", p.doppler_frac}});
  }
  return {{"paths", paths}};
}

inline ChannelRealization channel_from_json(const nlohmann::json& j) {
  ChannelRealization chan;
  for (const auto& e : j.at("paths")) {
    ChannelPath p;
    p.gain = cplx(e.at("gain_re").get<double>(), e.at("gain_im").get<double>());
    p.delay_tap = e.at("delay").get<int>();
    p.doppler_tap = e.at("doppler_int").get<int>();
    p.doppler_frac = e.at("doppler_frac").get<double>();
    chan.paths.push_back(p);
  }
  return chan;
}

}  // namespace otfs
