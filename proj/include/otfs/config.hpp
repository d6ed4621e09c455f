// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "otfs/pipeline.hpp"

#include <boost/algorithm/string.hpp>
#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <openssl/evp.h>

#include <charconv>
#include <cstdlib>
#include <iomanip>

namespace otfs {

inline constexpr const char* kToolVersion = "0.1.0";

/// A channel given path by path instead of drawn at random (used by channel-dump).
struct FixedChannel {
  std::vector<int> delays;
  std::vector<double> gains;
  std::vector<double> dopplers;

  bool empty() const { return delays.empty(); }
  ChannelRealization realization() const {
    if (delays.size() != gains.size() || delays.size() != dopplers.size()) {
      throw ConfigError("channel.fixed_*: delays, gains and dopplers need the same length");
    }
    ChannelRealization c;
    for (std::size_t i = 0; i < delays.size(); ++i) {
      const double k = std::round(dopplers[i]);
      double frac = dopplers[i] - k;
      // keep exact halves as +1/2 on the lower integer
      int ki = static_cast<int>(k);
      if (frac == -0.5) {
        ki -= 1;
        frac = 0.5;
      }
      c.paths.push_back(ChannelPath{cplx(gains[i], 0.0), delays[i], ki, frac});
    }
    return c;
  }
  bool operator==(const FixedChannel&) const = default;
};

struct RunConfig {
  SystemConfig sys;
  TrainConfig train;
  FixedChannel fixed_channel;
  std::uint64_t seed = 1;
  std::vector<std::string> methods{"perfect", "omp"};
  std::vector<double> snr_db{0, 5, 10, 15, 20};
  long trials = 200;
  std::string output_dir;
  std::string checkpoint;

  void validate() const {
    sys.validate();
    train.validate();
    if (trials < 1) throw ConfigError("run.trials: must be >= 1");
    if (snr_db.empty()) throw ConfigError("run.snr_db: at least one SNR point required");
    for (double s : snr_db)
      if (std::isnan(s)) throw ConfigError("run.snr_db: NaN entry");
    for (const auto& m : methods) parse_method(m);
    if (!fixed_channel.empty()) check_realization(fixed_channel.realization(), sys.grid);
  }

  static Estimator parse_method(const std::string& m) {
    if (m == "perfect") return Estimator::Perfect;
    if (m == "omp") return Estimator::Omp;
    if (m == "ep-lmmse") return Estimator::EpLmmse;
    if (m == "cenet") return Estimator::Cenet;
    throw ConfigError("run.methods: unknown method '" + m + "' (perfect, omp, ep-lmmse, cenet)");
  }

  bool operator==(const RunConfig& o) const { return to_ini() == o.to_ini(); }

  /// Canonical INI text; parsing it back yields an equal config.
  std::string to_ini() const;
};

namespace detail {

/// Shortest text that parses back to the same double.
inline std::string fmt_exact(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class T>
std::string join(const std::vector<T>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_same_v<T, std::string>) {
      out += v[i];
    } else if constexpr (std::is_floating_point_v<T>) {
      out += fmt_exact(v[i]);
    } else {
      out += std::to_string(v[i]);
    }
  }
  return out;
}

template <class T>
T parse_value(const std::string& key, const std::string& raw) {
  const std::string s = boost::trim_copy(raw);
  try {
    if constexpr (std::is_same_v<T, bool>) {
      const std::string l = boost::to_lower_copy(s);
      if (l == "true" || l == "1" || l == "yes" || l == "on") return true;
      if (l == "false" || l == "0" || l == "no" || l == "off") return false;
      throw std::invalid_argument(s);
    } else if constexpr (std::is_same_v<T, std::string>) {
      return s;
    } else if constexpr (std::is_floating_point_v<T>) {
      std::size_t pos = 0;
      const double v = std::stod(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return v;
    } else {
      std::size_t pos = 0;
      const long long v = std::stoll(s, &pos);
      if (pos != s.size()) throw std::invalid_argument(s);
      return static_cast<T>(v);
    }
  } catch (const std::logic_error&) {
    throw ConfigError(key + ": cannot parse '" + s + "'");
  }
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& raw) {
  std::vector<T> out;
  const std::string s = boost::trim_copy(raw);
  if (s.empty()) return out;
  std::vector<std::string> parts;
  boost::split(parts, s, boost::is_any_of(","));
  for (const auto& p : parts) out.push_back(parse_value<T>(key, p));
  return out;
}

/// One config key: how to read it into a RunConfig and how to print it.
struct Field {
  std::string key;  // "section.name"
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T, class Ref>
Field scalar(const std::string& key, Ref ref) {
  return {key, [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_value<T>(key, v); },
          [ref](const RunConfig& c) {
            const T v = ref(const_cast<RunConfig&>(c));
            if constexpr (std::is_same_v<T, bool>) {
              return std::string(v ? "true" : "false");
            } else if constexpr (std::is_same_v<T, std::string>) {
              return v;
            } else if constexpr (std::is_floating_point_v<T>) {
              return fmt_exact(v);
            } else {
              return std::to_string(v);
            }
          }};
}

template <class T, class Ref>
Field list(const std::string& key, Ref ref) {
  return {key, [key, ref](RunConfig& c, const std::string& v) { ref(c) = parse_list<T>(key, v); },
          [ref](const RunConfig& c) { return join(ref(const_cast<RunConfig&>(c))); }};
}

inline const std::vector<Field>& fields() {
  static const std::vector<Field> f = [] {
    std::vector<Field> v;
    v.push_back(scalar<int>("grid.M", [](RunConfig& c) -> int& { return c.sys.grid.M; }));
    v.push_back(scalar<int>("grid.N", [](RunConfig& c) -> int& { return c.sys.grid.N; }));
    v.push_back(scalar<double>("grid.delta_f", [](RunConfig& c) -> double& { return c.sys.grid.delta_f; }));
    v.push_back(scalar<int>("grid.l_cp", [](RunConfig& c) -> int& { return c.sys.grid.l_cp; }));
    v.push_back(scalar<int>("modem.order", [](RunConfig& c) -> int& { return c.sys.order; }));
    v.push_back(scalar<double>("pilot.energy", [](RunConfig& c) -> double& { return c.sys.pilot_energy; }));
    v.push_back(scalar<int>("channel.paths", [](RunConfig& c) -> int& { return c.sys.channel.paths; }));
    v.push_back(scalar<int>("channel.l_max", [](RunConfig& c) -> int& { return c.sys.channel.l_max; }));
    v.push_back(scalar<int>("channel.k_max", [](RunConfig& c) -> int& { return c.sys.channel.k_max; }));
    v.push_back(scalar<bool>("channel.fractional", [](RunConfig& c) -> bool& { return c.sys.channel.fractional; }));
    v.push_back(list<int>("channel.fixed_delays", [](RunConfig& c) -> std::vector<int>& { return c.fixed_channel.delays; }));
    v.push_back(list<double>("channel.fixed_gains", [](RunConfig& c) -> std::vector<double>& { return c.fixed_channel.gains; }));
    v.push_back(list<double>("channel.fixed_dopplers", [](RunConfig& c) -> std::vector<double>& { return c.fixed_channel.dopplers; }));
    v.push_back(scalar<double>("receiver.threshold_alpha", [](RunConfig& c) -> double& { return c.sys.threshold_alpha; }));
    v.push_back(scalar<int>("receiver.omp_sparsity", [](RunConfig& c) -> int& { return c.sys.omp_sparsity; }));
    v.push_back(scalar<int>("receiver.ep_l_max", [](RunConfig& c) -> int& { return c.sys.ep_guard.l_max; }));
    v.push_back(scalar<int>("receiver.ep_k_max", [](RunConfig& c) -> int& { return c.sys.ep_guard.k_max; }));
    v.push_back({"receiver.baseline",
                 [](RunConfig& c, const std::string& s) { c.sys.baseline = RunConfig::parse_method(boost::trim_copy(s)); },
                 [](const RunConfig& c) { return std::string(estimator_name(c.sys.baseline)); }});
    v.push_back(scalar<int>("train.epochs", [](RunConfig& c) -> int& { return c.train.epochs; }));
    v.push_back(scalar<int>("train.batch", [](RunConfig& c) -> int& { return c.train.batch; }));
    v.push_back(scalar<int>("train.steps_per_epoch", [](RunConfig& c) -> int& { return c.train.steps_per_epoch; }));
    v.push_back(scalar<double>("train.lr_start", [](RunConfig& c) -> double& { return c.train.lr_start; }));
    v.push_back(scalar<double>("train.lr_end", [](RunConfig& c) -> double& { return c.train.lr_end; }));
    v.push_back(scalar<double>("train.weight_decay", [](RunConfig& c) -> double& { return c.train.weight_decay; }));
    v.push_back(scalar<int>("train.val_interval", [](RunConfig& c) -> int& { return c.train.val_interval; }));
    v.push_back(scalar<int>("train.val_trials", [](RunConfig& c) -> int& { return c.train.val_trials; }));
    v.push_back(scalar<double>("train.val_snr_db", [](RunConfig& c) -> double& { return c.train.val_snr_db; }));
    v.push_back(scalar<double>("train.snr_min_db", [](RunConfig& c) -> double& { return c.train.snr_min_db; }));
    v.push_back(scalar<double>("train.snr_max_db", [](RunConfig& c) -> double& { return c.train.snr_max_db; }));
    v.push_back(scalar<double>("train.channel_loss_weight", [](RunConfig& c) -> double& { return c.train.channel_loss_weight; }));
    v.push_back(scalar<bool>("train.constellation", [](RunConfig& c) -> bool& { return c.train.flags.constellation; }));
    v.push_back(scalar<bool>("train.pilot", [](RunConfig& c) -> bool& { return c.train.flags.pilot; }));
    v.push_back(scalar<bool>("train.dlzak", [](RunConfig& c) -> bool& { return c.train.flags.dlzak; }));
    v.push_back(scalar<bool>("train.threshold", [](RunConfig& c) -> bool& { return c.train.flags.threshold; }));
    v.push_back(scalar<bool>("train.cenet", [](RunConfig& c) -> bool& { return c.train.flags.cenet; }));
    v.push_back(scalar<bool>("train.demapper", [](RunConfig& c) -> bool& { return c.train.flags.demapper; }));
    v.push_back(scalar<std::uint64_t>("run.seed", [](RunConfig& c) -> std::uint64_t& { return c.seed; }));
    v.push_back(list<std::string>("run.methods", [](RunConfig& c) -> std::vector<std::string>& { return c.methods; }));
    v.push_back(list<double>("run.snr_db", [](RunConfig& c) -> std::vector<double>& { return c.snr_db; }));
    v.push_back(scalar<long>("run.trials", [](RunConfig& c) -> long& { return c.trials; }));
    v.push_back(scalar<std::string>("run.output_dir", [](RunConfig& c) -> std::string& { return c.output_dir; }));
    v.push_back(scalar<std::string>("run.checkpoint", [](RunConfig& c) -> std::string& { return c.checkpoint; }));
    return v;
  }();
  return f;
}

inline const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace detail

inline std::string RunConfig::to_ini() const {
  std::string out, section;
  for (const auto& f : detail::fields()) {
    const auto dot = f.key.find('.');
    const std::string s = f.key.substr(0, dot);
    if (s != section) {
      out += (section.empty() ? "[" : "\n[") + s + "]\n";
      section = s;
    }
    out += f.key.substr(dot + 1) + " = " + f.get(*this) + "\n";
  }
  return out;
}

/// Applies "section.key=value" on top of a config.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  detail::field(boost::trim_copy(assignment.substr(0, eq))).set(cfg, assignment.substr(eq + 1));
}

/// Parses INI text; unknown sections or keys are rejected. Missing keys keep their defaults.
inline RunConfig parse_config(const std::string& text, bool validate = true) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  for (const auto& [section, body] : tree) {
    if (body.empty() && !body.data().empty()) throw ConfigError("config: key '" + section + "' outside a section");
    for (const auto& [key, value] : body) detail::field(section + "." + key).set(cfg, value.data());
  }
  if (validate) cfg.validate();
  return cfg;
}

inline RunConfig load_config(const std::string& path, bool validate = true) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config: cannot open " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str(), validate);
}

/// Output directory: explicit value, else $OTFSLAB_OUT, else ./otfslab_out.
inline std::string resolve_output_dir(const std::string& configured) {
  if (!configured.empty()) return configured;
  if (const char* env = std::getenv("OTFSLAB_OUT"); env && *env) return env;
  return "otfslab_out";
}

/// Lowercase hex SHA-256 of a string.
inline std::string sha256_hex(const std::string& text) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(text.data(), text.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("sha256: digest failed");
  }
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return os.str();
}

inline TrainFlags flags_from_json(const nlohmann::json& j) {
  TrainFlags f;
  f.constellation = j.at("constellation").get<bool>();
  f.pilot = j.at("pilot").get<bool>();
  f.dlzak = j.at("dlzak").get<bool>();
  f.threshold = j.at("threshold").get<bool>();
  f.cenet = j.at("cenet").get<bool>();
  f.demapper = j.at("demapper").get<bool>();
  return f;
}

/// Run manifest: the canonical config text, its hash, the seed and the tool version.
inline nlohmann::json make_manifest(const RunConfig& cfg, const std::string& command) {
  const std::string ini = cfg.to_ini();
  return {{"command", command}, {"config", ini}, {"config_sha256", sha256_hex(ini)}, {"seed", cfg.seed},
          {"version", kToolVersion}, {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." + std::to_string(EIGEN_MINOR_VERSION)}};
}

inline RunConfig config_from_manifest(const nlohmann::json& manifest) {
  return parse_config(manifest.at("config").get<std::string>());
}

}  // namespace otfs
