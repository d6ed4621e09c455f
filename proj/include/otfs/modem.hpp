// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "otfs/core.hpp"

#include <json.hpp>

#include <cmath>
#include <limits>
#include <numeric>

namespace otfs {

/**
 * Constellation of R = 2^r points. labels[i] is the r-bit label (MSB first)
 * carried by points[i].
 */
struct Constellation {
  std::vector<cplx> points;
  std::vector<std::uint32_t> labels;
  bool trainable = false;

  int order() const { return static_cast<int>(points.size()); }
  int bits_per_symbol() const {
    int r = 0;
    while ((1 << r) < order()) ++r;
    return r;
  }
  double mean_power() const {
    double p = 0.0;
    for (auto c : points) p += std::norm(c);
    return p / order();
  }

  /// Point index carrying a given label.
  int index_of(std::uint32_t label) const {
    for (int i = 0; i < order(); ++i)
      if (labels[i] == label) return i;
    throw ConfigError("constellation: label " + std::to_string(label) + " not present");
  }

  void validate() const {
    const int R = order();
    if (R < 2 || (R & (R - 1)) != 0) throw ConfigError("constellation: order must be a power of two >= 2");
    if (static_cast<int>(labels.size()) != R) throw ConfigError("constellation: one label per point required");
    std::vector<bool> seen(R, false);
    for (auto l : labels) {
      if (l >= static_cast<std::uint32_t>(R) || seen[l]) throw ConfigError("constellation: labels must be a bijection");
      seen[l] = true;
    }
  }
};

inline Constellation bpsk() { return {{cplx(1, 0), cplx(-1, 0)}, {0, 1}, false}; }

/// Gray-labelled QPSK with unit mean power.
inline Constellation qpsk() {
  const double a = 1.0 / std::sqrt(2.0);
  return {{cplx(a, a), cplx(-a, a), cplx(-a, -a), cplx(a, -a)}, {0b00, 0b01, 0b11, 0b10}, false};
}

inline Constellation default_constellation(int order) {
  if (order == 2) return bpsk();
  if (order == 4) return qpsk();
  throw ConfigError("constellation: only orders 2 and 4 are supported");
}

inline Constellation normalize_constellation(Constellation c) {
  const double p = c.mean_power();
  if (!(p > 0.0)) throw ConfigError("normalize_constellation: all points are zero");
  const double s = 1.0 / std::sqrt(p);
  for (auto& x : c.points) x *= s;
  return c;
}

inline std::uint32_t read_label(const Bits& bits, std::size_t offset, int r) {
  std::uint32_t g = 0;
  for (int i = 0; i < r; ++i) g = (g << 1) | (bits[offset + i] & 1u);
  return g;
}

/// Consecutive r-bit groups fill the frame column-major.
inline DDFrame map_bits(const Bits& bits, const Constellation& c, const GridConfig& cfg) {
  const int r = c.bits_per_symbol();
  const std::size_t need = static_cast<std::size_t>(r) * cfg.size();
  if (bits.size() != need) {
    throw ConfigError("map_bits: got " + std::to_string(bits.size()) + " bits, need " + std::to_string(need));
  }
  std::vector<int> lut(c.order());
  for (int i = 0; i < c.order(); ++i) lut[c.labels[i]] = i;
  DDFrame f(cfg);
  for (int j = 0; j < cfg.size(); ++j) {
    f.values(j % cfg.M, j / cfg.M) = c.points[lut[read_label(bits, static_cast<std::size_t>(j) * r, r)]];
  }
  return f;
}

/// Nearest point in Euclidean distance; ties go to the lowest point index.
inline Bits hard_demap(const CVector& symbols, const Constellation& c) {
  const int r = c.bits_per_symbol();
  Bits out(static_cast<std::size_t>(symbols.size()) * r);
  for (Eigen::Index j = 0; j < symbols.size(); ++j) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int i = 0; i < c.order(); ++i) {
      const double d = std::norm(symbols(j) - c.points[i]);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    const auto label = c.labels[best];
    for (int b = 0; b < r; ++b) out[j * r + b] = static_cast<std::uint8_t>((label >> (r - 1 - b)) & 1u);
  }
  return out;
}

struct PilotConfig {
  int l = 0;
  int k = 0;
  cplx value{0.0, 0.0};
  bool trainable_phase = false;

  double energy() const { return std::norm(value); }

  static PilotConfig centered(const GridConfig& cfg, double energy) {
    return {cfg.M / 2, cfg.N / 2, cplx(std::sqrt(energy), 0.0), false};
  }
  void validate(const GridConfig& cfg) const {
    if (l < 0 || l >= cfg.M || k < 0 || k >= cfg.N) {
      throw ConfigError("pilot: position (" + std::to_string(l) + "," + std::to_string(k) + ") outside the grid");
    }
  }
  bool operator==(const PilotConfig&) const = default;
};

/// Pilot-only frame X_p.
inline DDFrame pilot_frame(const PilotConfig& pilot, const GridConfig& cfg) {
  pilot.validate(cfg);
  DDFrame f(cfg);
  f(pilot.l, pilot.k) = pilot.value;
  return f;
}

/// X_dd = X_d + X_p (superposition; the data under the pilot stays).
inline DDFrame insert_pilot(const DDFrame& data, const PilotConfig& pilot, const GridConfig& cfg) {
  check_frame(data.values, cfg, "insert_pilot");
  DDFrame out = data;
  pilot.validate(cfg);
  out(pilot.l, pilot.k) += pilot.value;
  return out;
}

inline nlohmann::json constellation_to_json(const Constellation& c) {
  nlohmann::json arr = nlohmann::json::array();
  for (int i = 0; i < c.order(); ++i) arr.push_back({c.points[i].real(), c.points[i].imag(), c.labels[i]});
  return arr;
}

inline Constellation constellation_from_json(const nlohmann::json& j) {
  Constellation c;
  for (const auto& t : j) {
    c.points.emplace_back(t.at(0).get<double>(), t.at(1).get<double>());
    c.labels.push_back(t.at(2).get<std::uint32_t>());
  }
  c.validate();
  return c;
}

}  // namespace otfs
