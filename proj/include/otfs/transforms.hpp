// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "otfs/core.hpp"

#include <cmath>
#include <numbers>

namespace otfs {

/// Unnormalised DFT matrix, entry (n, k) = exp(-j 2 pi n k / size).
inline CMatrix dft_matrix(int size) {
  CMatrix F(size, size);
  for (int n = 0; n < size; ++n) {
    for (int k = 0; k < size; ++k) {
      // reduce the exponent first so large grids keep full phase accuracy
      const double phase = -2.0 * std::numbers::pi * static_cast<double>((n * k) % size) / size;
      F(n, k) = std::polar(1.0, phase);
    }
  }
  return F;
}

inline CMatrix unitary_dft(int size) { return dft_matrix(size) / std::sqrt(static_cast<double>(size)); }

/// Diagonal transmit / receive pulse-shaping filters, stored as their diagonals.
struct PulseShapes {
  CVector tx;
  CVector rx;

  static PulseShapes identity(int M) {
    return {CVector::Ones(M), CVector::Ones(M)};
  }
  bool is_identity() const {
    return tx.isApproxToConstant(cplx(1.0, 0.0), 0.0) && rx.isApproxToConstant(cplx(1.0, 0.0), 0.0);
  }
};

inline void check_pulses(const PulseShapes& p, const GridConfig& cfg) {
  if (p.tx.size() != cfg.M || p.rx.size() != cfg.M) {
    throw ConfigError("pulse shapes must have M diagonal entries");
  }
}

/// DD frame -> delay-time frame: P_tx * X * U_N^H.
inline CMatrix izak(const DDFrame& x_dd, const PulseShapes& pulses, const GridConfig& cfg) {
  check_frame(x_dd.values, cfg, "izak");
  check_pulses(pulses, cfg);
  const CMatrix UNh = unitary_dft(cfg.N).adjoint();
  return pulses.tx.asDiagonal() * (x_dd.values * UNh);
}

/// Delay-time frame -> DD frame: P_rx * Y * U_N.
inline DDFrame zak(const CMatrix& y_dt, const PulseShapes& pulses, const GridConfig& cfg) {
  check_frame(y_dt, cfg, "zak");
  check_pulses(pulses, cfg);
  const CMatrix UN = unitary_dft(cfg.N);
  return DDFrame(pulses.rx.asDiagonal() * (y_dt * UN));
}

/// Prepends the last l_cp rows of every column.
inline CMatrix add_cp(const CMatrix& s, int l_cp) {
  if (l_cp < 0 || l_cp >= s.rows()) {
    throw ConfigError("add_cp: need 0 <= l_cp < M (l_cp=" + std::to_string(l_cp) + ")");
  }
  const Eigen::Index M = s.rows();
  CMatrix out(M + l_cp, s.cols());
  out.topRows(l_cp) = s.bottomRows(l_cp);
  out.bottomRows(M) = s;
  return out;
}

inline CMatrix remove_cp(const CMatrix& r_cp, int l_cp, int M) {
  if (r_cp.rows() != M + l_cp) {
    throw ConfigError("remove_cp: expected " + std::to_string(M + l_cp) + " rows, got " +
                      std::to_string(r_cp.rows()));
  }
  return r_cp.bottomRows(M);
}

}  // namespace otfs
