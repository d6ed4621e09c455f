// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace otfs {

using cplx = std::complex<double>;
using CMatrix = Eigen::MatrixXcd;
using CVector = Eigen::VectorXcd;
using RMatrix = Eigen::MatrixXd;
using Bits = std::vector<std::uint8_t>;

/// Raised for invalid configuration values or inconsistent sizes.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a physical model assumption is violated (e.g. a delay tap outside the CP).
class ModelError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised for singular or ill-conditioned numerics.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(const std::string& what, double condition = 0.0)
      : std::runtime_error(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

/**
 * Delay-Doppler grid geometry.
 *
 * M delay bins by N Doppler bins, critically sampled (T * delta_f = 1), with a
 * per-block cyclic prefix of l_cp samples.
 */
struct GridConfig {
  int M = 8;
  int N = 8;
  double delta_f = 15e3;
  int l_cp = 4;

  double symbol_duration() const { return 1.0 / delta_f; }
  double delay_resolution() const { return 1.0 / (M * delta_f); }
  double doppler_resolution() const { return 1.0 / (N * symbol_duration()); }
  int size() const { return M * N; }

  void validate() const {
    if (M < 2 || N < 2) throw ConfigError("grid: M and N must be >= 2");
    if (l_cp < 0 || l_cp >= M) throw ConfigError("grid: l_cp must satisfy 0 <= l_cp < M");
    if (!(delta_f > 0.0)) throw ConfigError("grid: delta_f must be positive");
  }

  bool operator==(const GridConfig&) const = default;
};

/// M x N complex symbols; row = delay index l, column = Doppler index k.
struct DDFrame {
  CMatrix values;

  DDFrame() = default;
  explicit DDFrame(const GridConfig& cfg) : values(CMatrix::Zero(cfg.M, cfg.N)) {}
  explicit DDFrame(CMatrix v) : values(std::move(v)) {}

  Eigen::Index rows() const { return values.rows(); }
  Eigen::Index cols() const { return values.cols(); }
  cplx& operator()(Eigen::Index l, Eigen::Index k) { return values(l, k); }
  cplx operator()(Eigen::Index l, Eigen::Index k) const { return values(l, k); }
};

inline void check_frame(const CMatrix& m, const GridConfig& cfg, const char* what) {
  if (m.rows() != cfg.M || m.cols() != cfg.N) {
    throw ConfigError(std::string(what) + ": frame is " + std::to_string(m.rows()) + "x" +
                      std::to_string(m.cols()) + ", grid is " + std::to_string(cfg.M) + "x" +
                      std::to_string(cfg.N));
  }
}

/// Column-major stacking: element (l, k) lands at index k*M + l.
inline CVector vec(const DDFrame& frame, const GridConfig& cfg) {
  check_frame(frame.values, cfg, "vec");
  return Eigen::Map<const CVector>(frame.values.data(), frame.values.size());
}

inline DDFrame unvec(const CVector& v, const GridConfig& cfg) {
  if (v.size() != cfg.size()) {
    throw ConfigError("unvec: vector length " + std::to_string(v.size()) + " != M*N = " +
                      std::to_string(cfg.size()));
  }
  return DDFrame(Eigen::Map<const CMatrix>(v.data(), cfg.M, cfg.N));
}

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Deterministic random stream keyed by (seed, stream_id).
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream_id = 0)
      : seed_(seed),
        stream_(stream_id),
        engine_(detail::splitmix64(seed ^ detail::splitmix64(stream_id + 0x632be59bd9b4e019ULL))) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream_id() const { return stream_; }

  /// A child stream; children with different keys are independent of each other and of the parent.
  Rng fork(std::uint64_t key) const {
    return Rng(detail::splitmix64(seed_ ^ 0xd1b54a32d192ed03ULL) ^ stream_, key);
  }

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }
  double normal() { return std::normal_distribution<double>(0.0, 1.0)(engine_); }
  std::uint8_t bit() { return static_cast<std::uint8_t>(engine_() >> 63); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
};

/// i.i.d. circularly symmetric complex Gaussian, unit variance per entry.
inline CVector standard_complex_gaussian(Rng& rng, Eigen::Index n) {
  if (n < 1) throw ConfigError("standard_complex_gaussian: n must be >= 1");
  CVector out(n);
  const double s = std::sqrt(0.5);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double re = rng.normal();
    const double im = rng.normal();
    out(i) = cplx(s * re, s * im);
  }
  return out;
}

inline Bits random_bits(Rng& rng, std::size_t n) {
  Bits b(n);
  for (auto& x : b) x = rng.bit();
  return b;
}

}  // namespace otfs
