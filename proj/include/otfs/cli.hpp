// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "otfs/config.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>

namespace otfs {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumerical = 3 };

namespace cli {

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("cannot write " + path.string());
  os << text;
  if (!os) throw ConfigError("write failed: " + path.string());
}

inline std::filesystem::path prepare_dir(const RunConfig& cfg) {
  const std::filesystem::path dir = resolve_output_dir(cfg.output_dir);
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ConfigError("run.output_dir: cannot create " + dir.string() + ": " + ec.message());
  return dir;
}

inline void write_manifest(const std::filesystem::path& dir, const RunConfig& cfg, const std::string& command,
                           nlohmann::json extra = nlohmann::json::object()) {
  nlohmann::json m = make_manifest(cfg, command);
  for (auto& [k, v] : extra.items()) m[k] = v;
  write_file(dir / "manifest.json", m.dump(2) + "\n");
}

inline std::string matrix_csv(const Eigen::MatrixXd& m) {
  std::string out;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      if (c) out += ',';
      out += fmt_double(m(r, c));
    }
    out += '\n';
  }
  return out;
}

/// Model restored from a checkpoint, with the flags it was trained under.
struct LoadedModel {
  std::unique_ptr<Model> model;
  TrainFlags flags;
};

inline LoadedModel load_model(const RunConfig& cfg) {
  if (cfg.checkpoint.empty()) throw ConfigError("run.checkpoint: method cenet needs a trained checkpoint");
  const Checkpoint ck = read_checkpoint(cfg.checkpoint);
  LoadedModel lm{std::make_unique<Model>(cfg.sys.arch(), cfg.seed, PulseShapes::identity(cfg.sys.grid.M)), {}};
  lm.model->load(ck);
  if (ck.header.contains("state") && ck.header["state"].contains("flags")) lm.flags = flags_from_json(ck.header["state"]["flags"]);
  return lm;
}

inline int simulate(const RunConfig& cfg, std::ostream& out) {
  const auto dir = prepare_dir(cfg);
  const PulseShapes pulses = PulseShapes::identity(cfg.sys.grid.M);
  LoadedModel lm;
  for (const auto& m : cfg.methods)
    if (RunConfig::parse_method(m) == Estimator::Cenet) lm = load_model(cfg);
  const Evaluator ev(cfg.sys, pulses, lm.model.get(), lm.flags);
  nlohmann::json files = nlohmann::json::array();
  for (const auto& m : cfg.methods) {
    const auto rows = ev.evaluate(RunConfig::parse_method(m), cfg.snr_db, cfg.trials, cfg.seed);
    const std::string name = "metrics_" + m + ".csv";
    write_file(dir / name, metrics_csv(rows));
    files.push_back(name);
    for (const auto& r : rows) {
      char line[160];
      std::snprintf(line, sizeof line, "%-9s snr %5.1f dB  ber %.3e (+-%.1e)  nmse %.3e\n", m.c_str(), r.snr_db, r.ber,
                    r.ber_ci, r.nmse);
      out << line;
    }
  }
  write_manifest(dir, cfg, "simulate", {{"outputs", files}});
  out << "wrote " << (dir / "manifest.json").string() << '\n';
  return kExitOk;
}

inline int train_cmd(const RunConfig& cfg, const std::string& resume, std::ostream& out) {
  const auto dir = prepare_dir(cfg);
  Model model(cfg.sys.arch(), cfg.seed, PulseShapes::identity(cfg.sys.grid.M));
  const TrainResult res = train(model, cfg.sys, cfg.train, cfg.seed, dir.string(), resume, [&](int epoch, double loss) {
    if ((epoch + 1) % cfg.train.val_interval == 0 || epoch + 1 == cfg.train.epochs) {
      char line[96];
      std::snprintf(line, sizeof line, "epoch %4d  loss %.5f\n", epoch, loss);
      out << line << std::flush;
    }
  });
  write_manifest(dir, cfg, "train",
                 {{"resume", resume}, {"best_val_ber", res.best_val_ber}, {"best_val_nmse", res.best_val_nmse}});
  out << "best val ber " << fmt_double(res.best_val_ber) << ", checkpoint " << res.best_checkpoint << '\n';
  return kExitOk;
}

inline int channel_dump(const RunConfig& cfg, std::ostream& out) {
  const auto dir = prepare_dir(cfg);
  const GridConfig& g = cfg.sys.grid;
  ChannelRealization chan;
  if (cfg.fixed_channel.empty()) {
    Rng rng(cfg.seed);
    chan = sample_channel(rng, cfg.sys.channel, g);
  } else {
    chan = cfg.fixed_channel.realization();
  }
  const CMatrix G = build_g(chan, PulseShapes::identity(g.M), g);

  nlohmann::json paths = nlohmann::json::array();
  for (const auto& p : chan.paths) {
    paths.push_back({{"delay_tap", p.delay_tap},
                     {"doppler", p.doppler()},
                     {"doppler_tap", p.doppler_tap},
                     {"doppler_frac", p.doppler_frac},
                     {"gain_re", p.gain.real()},
                     {"gain_im", p.gain.imag()}});
  }
  const nlohmann::json j = {{"grid", {{"M", g.M}, {"N", g.N}, {"delta_f", g.delta_f}, {"l_cp", g.l_cp}}},
                            {"seed", cfg.seed},
                            {"paths", paths}};
  write_file(dir / "channel.json", j.dump(2) + "\n");
  write_file(dir / "g_abs.csv", matrix_csv(G.cwiseAbs()));
  write_file(dir / "g_phase.csv", matrix_csv(G.unaryExpr([](const cplx& z) { return std::arg(z); }).real()));
  write_manifest(dir, cfg, "channel-dump", {{"outputs", {"channel.json", "g_abs.csv", "g_phase.csv"}}});
  out << chan.paths.size() << " paths, G is " << G.rows() << "x" << G.cols() << ", written to " << dir.string() << '\n';
  return kExitOk;
}

inline int overhead_cmd(const RunConfig& cfg, const std::vector<int>& sizes, int l_max, int k_max, std::ostream& out) {
  const auto dir = prepare_dir(cfg);
  std::string csv = "M,N,l_max,k_max,sp_percent,ep_percent\n";
  char line[128];
  std::snprintf(line, sizeof line, "l_max=%d k_max=%d\n%-9s %10s %10s\n", l_max, k_max, "grid", "SP (%)", "EP (%)");
  out << line;
  for (int n : sizes) {
    const double sp = 100.0 * overhead_sp(n, n), ep = 100.0 * overhead_ep(n, n, l_max, k_max);
    std::snprintf(line, sizeof line, "%-9s %10.3g %10.2f\n", (std::to_string(n) + "x" + std::to_string(n)).c_str(), sp, ep);
    out << line;
    csv += std::to_string(n) + ',' + std::to_string(n) + ',' + std::to_string(l_max) + ',' + std::to_string(k_max) + ',' +
           fmt_double(sp) + ',' + fmt_double(ep) + '\n';
  }
  write_file(dir / "overhead.csv", csv);
  return kExitOk;
}

}  // namespace cli

/// Entry point of the otfslab tool; returns the process exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Delay-Doppler OTFS link simulator with a trainable receiver"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, output_dir;
  std::vector<std::string> overrides;
  std::uint64_t seed = 0;
  app.add_option("-c,--config", config_path, "INI configuration file");
  app.add_option("-s,--set", overrides, "override as section.key=value (repeatable)");
  app.add_option("-o,--output", output_dir, "output directory (default: $OTFSLAB_OUT or ./otfslab_out)");
  auto* seed_opt = app.add_option("--seed", seed, "master seed");

  auto* sim = app.add_subcommand("simulate", "BER/NMSE sweep over SNR for the selected methods");
  std::vector<std::string> methods;
  std::vector<double> snrs;
  long trials = 0;
  std::string checkpoint;
  sim->add_option("-m,--methods", methods, "perfect, omp, ep-lmmse, cenet")->delimiter(',');
  sim->add_option("--snr", snrs, "SNR points in dB")->delimiter(',');
  sim->add_option("-n,--trials", trials, "trials per SNR point");
  sim->add_option("--checkpoint", checkpoint, "trained model for method cenet");

  auto* tr = app.add_subcommand("train", "train the learned receiver");
  std::string resume;
  int epochs = 0;
  tr->add_option("--resume", resume, "checkpoint to resume from");
  tr->add_option("--epochs", epochs, "total epochs");

  auto* dump = app.add_subcommand("channel-dump", "write one channel realization and its G matrix");

  auto* ovh = app.add_subcommand("overhead", "pilot overhead of single and embedded pilots");
  std::vector<int> sizes{8, 16, 32, 64};
  int l_max = 3, k_max = 4;
  ovh->add_option("--sizes", sizes, "square grid sides")->delimiter(',');
  ovh->add_option("--l-max", l_max, "guard delay half-width");
  ovh->add_option("--k-max", k_max, "maximum Doppler tap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path, false);
    for (const auto& o : overrides) apply_override(cfg, o);
    if (!output_dir.empty()) cfg.output_dir = output_dir;
    if (*seed_opt) cfg.seed = seed;
    if (!methods.empty()) cfg.methods = methods;
    if (!snrs.empty()) cfg.snr_db = snrs;
    if (trials != 0) cfg.trials = trials;
    if (!checkpoint.empty()) cfg.checkpoint = checkpoint;
    if (epochs != 0) cfg.train.epochs = epochs;
    cfg.validate();

    if (*sim) return cli::simulate(cfg, out);
    if (*tr) return cli::train_cmd(cfg, resume, out);
    if (*dump) return cli::channel_dump(cfg, out);
    if (*ovh) {
      if (sizes.empty()) throw ConfigError("overhead: --sizes must not be empty");
      return cli::overhead_cmd(cfg, sizes, l_max, k_max, out);
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace otfs
