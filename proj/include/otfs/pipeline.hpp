// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "otfs/neural.hpp"
#include "otfs/receivers.hpp"
#include "otfs/transforms.hpp"

#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <sstream>

namespace otfs {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Physical-layer setup shared by training and evaluation.
struct SystemConfig {
  GridConfig grid;
  int order = 2;
  double pilot_energy = 10.0;
  ChannelParams channel;
  double threshold_alpha = 0.5;  // fixed lambda = alpha * max|Y| when the threshold net is off
  int omp_sparsity = 0;          // 0: use channel.paths
  EpGuard ep_guard{3, 2};
  Estimator baseline = Estimator::Omp;  // estimator of the learned chain when CENet is off

  void validate() const {
    grid.validate();
    channel.validate(grid);
    default_constellation(order);
    if (!(pilot_energy >= 0.0)) throw ConfigError("pilot energy must be >= 0");
    if (!(threshold_alpha >= 0.0 && threshold_alpha <= 1.0)) throw ConfigError("threshold alpha must be in [0, 1]");
    if (omp_sparsity < 0) throw ConfigError("omp sparsity must be >= 0");
    if (baseline != Estimator::Omp && baseline != Estimator::Perfect) {
      throw ConfigError("baseline estimator must be omp or perfect");
    }
  }
  int sparsity() const { return omp_sparsity > 0 ? omp_sparsity : channel.paths; }
  PilotConfig pilot() const { return PilotConfig::centered(grid, pilot_energy); }
  ModelArch arch() const { return ModelArch::for_grid(grid, order, pilot_energy); }
};

/// Per-module trainability; a module that is off uses its classical counterpart.
struct TrainFlags {
  bool constellation = true;
  bool pilot = true;
  bool dlzak = true;
  bool threshold = true;
  bool cenet = true;
  bool demapper = true;

  bool any() const { return constellation || pilot || dlzak || threshold || cenet || demapper; }
  bool enabled(const std::string& group) const {
    if (group == "constellation") return constellation;
    if (group == "pilot") return pilot;
    if (group == "dlzak") return dlzak;
    if (group == "threshold") return threshold;
    if (group == "cenet") return cenet;
    if (group == "demapper") return demapper;
    throw ConfigError("unknown parameter group " + group);
  }
  static TrainFlags none() { return {false, false, false, false, false, false}; }
  nlohmann::json to_json() const {
    return {{"constellation", constellation}, {"pilot", pilot},   {"dlzak", dlzak},
            {"threshold", threshold},         {"cenet", cenet},   {"demapper", demapper}};
  }
  bool operator==(const TrainFlags&) const = default;
};

struct TrainConfig {
  int epochs = 300;
  int batch = 16;
  int steps_per_epoch = 8;
  double lr_start = 3e-3;
  double lr_end = 3e-4;
  double weight_decay = 1e-4;
  int val_interval = 10;
  int val_trials = 64;
  double val_snr_db = 15.0;
  double snr_min_db = 0.0;
  double snr_max_db = 20.0;
  double channel_loss_weight = 20.0;
  TrainFlags flags;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (steps_per_epoch < 1) throw ConfigError("train: steps_per_epoch must be >= 1");
    if (!(lr_start > 0.0)) throw ConfigError("train: lr_start must be > 0");
    if (!(lr_end > 0.0 && lr_end <= lr_start)) throw ConfigError("train: need 0 < lr_end <= lr_start");
    if (!(weight_decay >= 0.0)) throw ConfigError("train: weight_decay must be >= 0");
    if (val_interval < 1 || val_trials < 1) throw ConfigError("train: validation interval and trials must be >= 1");
    if (!(snr_min_db <= snr_max_db)) throw ConfigError("train: snr_min_db must not exceed snr_max_db");
    if (!(channel_loss_weight >= 0.0)) throw ConfigError("train: channel_loss_weight must be >= 0");
  }
  ad::AdamConfig adam() const {
    ad::AdamConfig a;
    a.lr_start = lr_start;
    a.lr_end = lr_end;
    a.total_epochs = epochs;
    a.weight_decay = weight_decay;
    return a;
  }
};

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

/// One Monte Carlo draw: bits, channel and unit-variance noise.
struct Sample {
  Bits bits;
  ChannelRealization channel;
  CMatrix h_eff;
  CMatrix G;
  CVector unit_noise;
  double snr_db = 0.0;

  double noise_var() const { return noise_variance(snr_db, 1.0); }
  CVector noise() const { return std::sqrt(noise_var()) * unit_noise; }
};

inline Sample draw_sample(Rng& rng, const SystemConfig& sys, const PulseShapes& pulses, double snr_db) {
  Sample s;
  const int r = default_constellation(sys.order).bits_per_symbol();
  s.bits = random_bits(rng, static_cast<std::size_t>(r) * sys.grid.size());
  s.channel = sample_channel(rng, sys.channel, sys.grid);
  s.unit_noise = standard_complex_gaussian(rng, sys.grid.size());
  s.snr_db = snr_db;
  s.h_eff = build_h_eff(s.channel, sys.grid);
  s.G = build_g(s.h_eff, pulses, sys.grid);
  return s;
}

/// Classical transmit/receive chain around the channel: izak, CP, H_eff, zak.
inline DDFrame transmit_receive(const DDFrame& x, const Sample& s, const PulseShapes& pulses, const GridConfig& cfg) {
  const CMatrix tx = izak(x, pulses, cfg);
  // H_eff already accounts for the prefix; the round trip keeps the chain explicit
  const CVector sig = vec(DDFrame(remove_cp(add_cp(tx, cfg.l_cp), cfg.l_cp, cfg.M)), cfg);
  CVector rx = s.h_eff * sig;
  if (s.noise_var() > 0.0) rx += s.noise();
  return zak(unvec(rx, cfg).values, pulses, cfg);
}

// ---------------------------------------------------------------------------
// Differentiable end-to-end forward
// ---------------------------------------------------------------------------

/// Bit probabilities from the exact posterior under a Gaussian model (classical soft demapper).
inline Tensor app_demap(const CTensor& x, const Tensor& points, const std::vector<std::uint32_t>& labels, double noise_var) {
  const int S = x.dim(0), R = points.dim(0);
  int r = 0;
  while ((1 << r) < R) ++r;
  const Tensor xs = ad::concat({ad::reshape(x.re, {S, 1}), ad::reshape(x.im, {S, 1})}, 1);
  const Tensor pw = ad::reshape(ad::transpose(ad::matmul(ad::mul(points, points), Tensor::from({2, 1}, {1.0, 1.0}))), {R});
  // -|x - p|^2 up to a per-row constant
  const Tensor logits = ad::scale(ad::add_rowvec(ad::scale(ad::matmul(xs, ad::transpose(points)), 2.0), ad::scale(pw, -1.0)),
                                  1.0 / std::max(noise_var, 1e-12));
  std::vector<double> bm(static_cast<std::size_t>(R) * r);
  for (int i = 0; i < R; ++i)
    for (int b = 0; b < r; ++b) bm[static_cast<std::size_t>(i) * r + b] = (labels[i] >> (r - 1 - b)) & 1u;
  const Tensor p = ad::matmul(ad::softmax_rows(logits), Tensor::from({R, r}, std::move(bm)));
  return ad::reshape(p, {S * r});
}

struct ForwardResult {
  Tensor loss;
  Tensor probs;
  CTensor G_hat;
  double lambda = 0.0;
};

/**
 * Full differentiable link for one sample. Modules whose flag is off run
 * their classical counterpart: fixed threshold, the baseline estimator
 * (OMP or the true G), the posterior demapper. Constellation, pilot and DL-(I)Zak are always the
 * model's blocks; freezing them keeps their initial (classical) values.
 */
inline ForwardResult forward_e2e(const Model& model, const Sample& s, const SystemConfig& sys, const TrainFlags& flags,
                                 double channel_loss_weight = 1.0) {
  const GridConfig& cfg = sys.grid;
  const int M = cfg.M, N = cfg.N, MN = cfg.size();
  const PulseShapes& pulses = model.pulses();
  const Constellation base = default_constellation(sys.order);
  const int R = base.order(), r = base.bits_per_symbol();

  // symbols through a one-hot selection so the points stay differentiable
  std::vector<int> lut(R);
  for (int i = 0; i < R; ++i) lut[model.constellation.labels[i]] = i;
  std::vector<double> onehot(static_cast<std::size_t>(MN) * R, 0.0);
  for (int j = 0; j < MN; ++j) onehot[static_cast<std::size_t>(j) * R + lut[read_label(s.bits, static_cast<std::size_t>(j) * r, r)]] = 1.0;
  const Tensor points = model.constellation.normalized();
  const Tensor sym = ad::matmul(Tensor::from({MN, R}, std::move(onehot)), points);
  const CTensor xd = ad::cunvec(CTensor{ad::slice(sym, 1, 0, 1), ad::slice(sym, 1, 1, 1)}, M, N);

  const int pl = model.pilot.l, pk = model.pilot.k, pp = pk * M + pl;
  const CTensor xp = model.pilot.value();
  const std::size_t at = static_cast<std::size_t>(pl) * N + pk;
  const CTensor X = ad::cadd(xd, CTensor{ad::embed_scalar(xp.re, {M, N}, at), ad::embed_scalar(xp.im, {M, N}, at)});

  // CP insertion and removal are folded into H_eff
  const CTensor tx = ad::cvec(model.dlzak.izak(X, pulses));
  CTensor rx = ad::cmatmul(ad::cconst(s.h_eff), tx);
  const double s2 = s.noise_var();
  if (s2 > 0.0) rx = ad::cadd(rx, ad::cconst(CMatrix(s.noise())));
  const CTensor Y = model.dlzak.zak(ad::cunvec(rx, M, N), pulses);

  ForwardResult out;
  Tensor nmse_term;
  if (flags.cenet) {
    // the estimator sees the transmitter as constants; otherwise the channel
    // loss rewards transmit symbols that carry no information
    const CTensor Yc{Y.re.detach(), Y.im.detach()};
    const CTensor xpc{xp.re.detach(), xp.im.detach()};
    Tensor lambda;
    if (flags.threshold) {
      lambda = model.threshold.forward(Yc);
    } else {
      lambda = Tensor::scalar(sys.threshold_alpha * ad::to_cmatrix(Yc).cwiseAbs().maxCoeff());
    }
    out.lambda = lambda.item();
    const CTensor yp = ad::threshold_mask(Yc, lambda);
    const Tensor p2 = ad::add(ad::mul(xpc.re, xpc.re), ad::mul(xpc.im, xpc.im));
    const Tensor inv = ad::reciprocal(p2);
    const CTensor xinv{ad::mul(xpc.re, inv), ad::scale(ad::mul(xpc.im, inv), -1.0)};
    out.G_hat = model.cenet.forward(ad::cmul_scalar(yp, xinv));
    nmse_term = ad::scale(ad::cnorm2(ad::csub(out.G_hat, ad::cconst(s.G))), 1.0 / s.G.squaredNorm());
  } else if (sys.baseline == Estimator::Perfect) {
    out.G_hat = ad::cconst(s.G);
  } else {
    const CVector y = vec(DDFrame(ad::to_cmatrix(Y)), cfg);
    out.G_hat = ad::cconst(omp_estimate(y, model.pilot.snapshot(), model.dictionary(), sys.channel.l_max,
                                        sys.channel.k_max, sys.sparsity())
                               .G);
  }

  const CTensor col = ad::cslice(out.G_hat, 1, pp, 1);
  const CTensor yd = ad::csub(ad::cvec(Y), ad::cmul_scalar(col, xp));
  const CTensor xhat = lmmse_detect(yd, out.G_hat, std::max(s2, 1e-10));
  out.probs = flags.demapper ? model.demapper.probabilities(xhat)
                             : app_demap(xhat, points, model.constellation.labels, std::max(s2, 1e-10));
  out.loss = ad::bce_loss(out.probs, s.bits);
  if (nmse_term.defined() && channel_loss_weight > 0.0) out.loss = ad::add(out.loss, ad::scale(nmse_term, channel_loss_weight));
  return out;
}

/// Group name of a parameter ("cenet.up1.wr" -> "cenet").
inline std::string param_group(const std::string& name) { return name.substr(0, name.find('.')); }

/// Marks parameters trainable according to the flags.
inline void apply_flags(const Model& model, const TrainFlags& flags) {
  const ParamSet ps = model.params();
  for (const auto& [n, t] : ps.items()) {
    auto tt = t;
    bool on = flags.enabled(param_group(n));
    if (n == "pilot.magnitude") on = on && model.arch().pilot_train_magnitude;
    tt.set_requires_grad(on);
  }
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Half-width of the Wilson score interval (z = 1.96).
inline double wilson_half_width(long errors, long n, double z = 1.96) {
  if (n <= 0) return 0.0;
  const double p = static_cast<double>(errors) / n, nn = static_cast<double>(n);
  return z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / (1.0 + z * z / nn);
}

struct MetricsRecord {
  double snr_db = 0.0;
  std::string method;
  double ber = 0.0;
  double ber_ci = 0.0;
  double nmse = 0.0;
  long trials = 0;
  std::uint64_t seed = 0;
  double pilot_energy = 0.0;
  int M = 0;
  int N = 0;
};

inline constexpr const char* kMetricsHeader = "snr_db,method,ber,ber_ci,nmse,trials,seed";
inline constexpr const char* kTrainLogHeader = "epoch,loss,val_ber,val_nmse,lr";

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline std::string metrics_csv(const std::vector<MetricsRecord>& rows) {
  std::ostringstream os;
  os << kMetricsHeader << '\n';
  for (const auto& r : rows) {
    os << fmt_double(r.snr_db) << ',' << r.method << ',' << fmt_double(r.ber) << ',' << fmt_double(r.ber_ci) << ','
       << fmt_double(r.nmse) << ',' << r.trials << ',' << r.seed << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Monte Carlo evaluation
// ---------------------------------------------------------------------------

struct TrialOutcome {
  long bit_errors = 0;
  long bits = 0;
  double g_err = 0.0;   // ||G - G_hat||_F^2
  double g_norm = 0.0;  // ||G||_F^2
};

/// Evaluation context; the learned model is only needed for Estimator::Cenet.
struct Evaluator {
  SystemConfig sys;
  PulseShapes pulses;
  std::shared_ptr<const TapDictionary> owned;
  const TapDictionary* dict = nullptr;
  const Model* model = nullptr;
  TrainFlags flags;  // forward mode of the learned chain

  Evaluator(SystemConfig s, PulseShapes p, const Model* m = nullptr, TrainFlags f = {})
      : sys(std::move(s)), pulses(std::move(p)), model(m), flags(f) {
    sys.validate();
    check_pulses(pulses, sys.grid);
    if (m) {
      dict = &m->dictionary();
    } else {
      owned = std::make_shared<const TapDictionary>(sys.grid, pulses);
      dict = owned.get();
    }
  }

  /// Independent stream per (SNR point, trial); shared by every method so comparisons are paired.
  Sample sample(std::uint64_t seed, std::size_t snr_index, long trial, double snr_db) const {
    Rng rng(seed, (static_cast<std::uint64_t>(snr_index) << 32) | static_cast<std::uint64_t>(trial));
    return draw_sample(rng, sys, pulses, snr_db);
  }

  TrialOutcome run(Estimator method, const Sample& s) const {
    const GridConfig& cfg = sys.grid;
    const Constellation c = model ? model->constellation.snapshot() : default_constellation(sys.order);
    const PilotConfig pilot = model ? model->pilot.snapshot() : sys.pilot();
    const double s2 = std::max(s.noise_var(), 1e-10);
    TrialOutcome o;
    o.g_norm = s.G.squaredNorm();
    auto count = [&](const Bits& got, const std::vector<bool>* keep = nullptr) {
      const int r = c.bits_per_symbol();
      for (std::size_t i = 0; i < got.size(); ++i) {
        if (keep && !(*keep)[i / r]) continue;
        o.bit_errors += got[i] != s.bits[i];
        ++o.bits;
      }
    };

    if (method == Estimator::Cenet) {
      if (!model) throw ConfigError("evaluate: the cenet chain needs a trained model");
      ad::NoGradGuard ng;
      const ForwardResult f = forward_e2e(*model, s, sys, flags, 0.0);
      Bits got(f.probs.numel());
      for (std::size_t i = 0; i < got.size(); ++i) got[i] = f.probs.data()[i] >= 0.5;
      count(got);
      o.g_err = (ad::to_cmatrix(f.G_hat) - s.G).squaredNorm();
      return o;
    }

    if (method == Estimator::EpLmmse) {
      const auto mask = sys.ep_guard.mask(pilot, cfg);
      const DDFrame x = ep_frame(map_bits(s.bits, c, cfg), pilot, sys.ep_guard, cfg);
      const DDFrame y = transmit_receive(x, s, pulses, cfg);
      const auto est = ep_lmmse_estimate(y, pilot, sys.ep_guard, *dict, s.noise_var());
      o.g_err = (est.G - s.G).squaredNorm();
      // detect with the guard cells known to be empty
      std::vector<bool> keep(cfg.size());
      std::vector<Eigen::Index> data_idx;
      for (int j = 0; j < cfg.size(); ++j) {
        keep[j] = !mask(j % cfg.M, j / cfg.M);
        if (keep[j]) data_idx.push_back(j);
      }
      const CVector yd = cancel_pilot(vec(y, cfg), est.G, pilot, cfg);
      CMatrix Gd(cfg.size(), static_cast<Eigen::Index>(data_idx.size()));
      for (std::size_t j = 0; j < data_idx.size(); ++j) Gd.col(static_cast<Eigen::Index>(j)) = est.G.col(data_idx[j]);
      CMatrix A = Gd.adjoint() * Gd;
      A.diagonal().array() += s2;
      const CVector xs = ad::checked_solve(A, Gd.adjoint() * yd, "lmmse_detect");
      CVector full = CVector::Zero(cfg.size());
      for (std::size_t j = 0; j < data_idx.size(); ++j) full(data_idx[j]) = xs(static_cast<Eigen::Index>(j));
      count(hard_demap(full, c), &keep);
      return o;
    }

    const DDFrame x = insert_pilot(map_bits(s.bits, c, cfg), pilot, cfg);
    const CVector y = vec(transmit_receive(x, s, pulses, cfg), cfg);
    CMatrix G_hat;
    if (method == Estimator::Perfect) {
      G_hat = s.G;
    } else {
      G_hat = omp_estimate(y, pilot, *dict, sys.channel.l_max, sys.channel.k_max, sys.sparsity()).G;
    }
    o.g_err = (G_hat - s.G).squaredNorm();
    count(hard_demap(lmmse_detect(cancel_pilot(y, G_hat, pilot, cfg), G_hat, s2), c));
    return o;
  }

  /// Per-trial outcomes for one method at one SNR point.
  std::vector<TrialOutcome> trials(Estimator method, double snr_db, std::size_t snr_index, long n, std::uint64_t seed) const {
    if (n < 1) throw ConfigError("evaluate: trials must be >= 1");
    std::vector<TrialOutcome> out;
    out.reserve(static_cast<std::size_t>(n));
    for (long t = 0; t < n; ++t) out.push_back(run(method, sample(seed, snr_index, t, snr_db)));
    return out;
  }

  MetricsRecord summarize(Estimator method, double snr_db, const std::vector<TrialOutcome>& ts, std::uint64_t seed) const {
    MetricsRecord m;
    m.snr_db = snr_db;
    m.method = std::string(estimator_name(method));
    long e = 0, b = 0;
    double ge = 0.0, gn = 0.0;
    for (const auto& t : ts) {
      e += t.bit_errors;
      b += t.bits;
      ge += t.g_err;
      gn += t.g_norm;
    }
    m.ber = b ? static_cast<double>(e) / b : 0.0;
    m.ber_ci = wilson_half_width(e, b);
    m.nmse = gn > 0.0 ? ge / gn : 0.0;
    m.trials = static_cast<long>(ts.size());
    m.seed = seed;
    m.pilot_energy = sys.pilot_energy;
    m.M = sys.grid.M;
    m.N = sys.grid.N;
    return m;
  }

  /// BER and NMSE per SNR point; SNR points use disjoint streams.
  std::vector<MetricsRecord> evaluate(Estimator method, const std::vector<double>& snrs, long n, std::uint64_t seed) const {
    std::vector<MetricsRecord> out;
    for (std::size_t i = 0; i < snrs.size(); ++i) out.push_back(summarize(method, snrs[i], trials(method, snrs[i], i, n, seed), seed));
    return out;
  }
};

/// Paired difference a - b over trials run on the same seeds.
struct PairedDiff {
  double mean = 0.0;
  double se = 0.0;
  long n = 0;
  /// One-sided test that a is lower than b at the given z (1.645 for 95%).
  bool a_lower(double z = 1.645) const { return n > 1 && mean + z * se < 0.0; }
};

/// Per-trial differences in squared channel error or in bit errors; the
/// denominators are shared, so the sign decides the NMSE and BER ordering.
inline PairedDiff paired_diff(const std::vector<TrialOutcome>& a, const std::vector<TrialOutcome>& b, bool bits) {
  if (a.size() != b.size() || a.empty()) throw ConfigError("paired_diff: trial counts differ or are empty");
  PairedDiff d;
  d.n = static_cast<long>(a.size());
  std::vector<double> v(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    v[i] = bits ? static_cast<double>(a[i].bit_errors - b[i].bit_errors) : a[i].g_err - b[i].g_err;
    d.mean += v[i];
  }
  d.mean /= static_cast<double>(d.n);
  double ss = 0.0;
  for (double x : v) ss += (x - d.mean) * (x - d.mean);
  if (d.n > 1) d.se = std::sqrt(ss / static_cast<double>(d.n - 1) / static_cast<double>(d.n));
  return d;
}

inline std::vector<MetricsRecord> eval_ber(const Evaluator& ev, Estimator method, const std::vector<double>& snrs, long trials,
                                           std::uint64_t seed) {
  return ev.evaluate(method, snrs, trials, seed);
}

inline std::vector<MetricsRecord> eval_nmse(const Evaluator& ev, Estimator method, const std::vector<double>& snrs,
                                            long trials, std::uint64_t seed) {
  return ev.evaluate(method, snrs, trials, seed);
}

// ---------------------------------------------------------------------------
// Overhead
// ---------------------------------------------------------------------------

inline double overhead_sp(int M, int N) {
  if (M < 1 || N < 1) throw ConfigError("overhead: dimensions must be positive");
  return 1.0 / (static_cast<double>(M) * N);
}

/// Guard cells over the grid, with the Doppler span clipped to N.
inline double overhead_ep(int M, int N, int l_max, int k_max) {
  if (M < 1 || N < 1 || l_max < 0 || k_max < 0) throw ConfigError("overhead: invalid dimensions");
  return (2.0 * l_max + 1.0) * std::min(4 * k_max + 1, N) / (static_cast<double>(M) * N);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

struct TrainResult {
  int epochs_run = 0;
  double best_val_ber = 1.0;
  double best_val_nmse = 0.0;
  std::vector<double> epoch_loss;
  std::string best_checkpoint;
  std::string last_checkpoint;
  std::string log_path;
};

namespace detail {
constexpr std::uint64_t kTrainStream = 0x747261696eULL;
constexpr std::uint64_t kValSeedSalt = 0x76616cULL;

inline std::string grad_norm_report(const ParamSet& ps) {
  std::map<std::string, double> norms;
  for (const auto& [n, t] : ps.items()) {
    if (!t.requires_grad()) continue;
    double s = 0.0;
    for (double g : t.grad()) s += g * g;
    norms[param_group(n)] += s;
  }
  std::string out;
  for (const auto& [g, s] : norms) out += " " + g + "=" + fmt_double(std::sqrt(s));
  return out;
}
}  // namespace detail

/**
 * Trains `model` in place. Each epoch draws fresh bits, channels and SNRs
 * from a per-epoch stream, so a resumed run follows the same trajectory.
 * Writes <out_dir>/train_log.csv, last.ckpt and best.ckpt (best validation BER).
 */
inline TrainResult train(Model& model, const SystemConfig& sys, const TrainConfig& tc, std::uint64_t seed,
                         const std::string& out_dir, const std::string& resume_from = "",
                         const std::function<void(int, double)>& on_epoch = nullptr) {
  sys.validate();
  tc.validate();
  std::filesystem::create_directories(out_dir);
  apply_flags(model, tc.flags);
  const ParamSet ps = model.params();
  std::vector<Tensor> trainable;
  std::vector<std::string> names;
  for (const auto& [n, t] : ps.items())
    if (t.requires_grad()) {
      trainable.push_back(t);
      names.push_back(n);
    }
  ad::Adam opt(trainable, tc.adam());

  TrainResult res;
  res.log_path = (std::filesystem::path(out_dir) / "train_log.csv").string();
  res.best_checkpoint = (std::filesystem::path(out_dir) / "best.ckpt").string();
  res.last_checkpoint = (std::filesystem::path(out_dir) / "last.ckpt").string();
  int start = 0;
  double best_ber = 2.0, best_nmse = 0.0;
  if (!resume_from.empty()) {
    const Checkpoint ck = read_checkpoint(resume_from);
    model.load(ck);
    const auto& st = ck.header.at("state");
    if (st.at("flags") != tc.flags.to_json()) throw ConfigError("resume: trainability flags differ from the checkpoint");
    start = st.at("epoch").get<int>() + 1;
    opt.set_steps(st.at("adam_steps").get<long>());
    best_ber = st.at("best_val_ber").get<double>();
    best_nmse = st.at("best_val_nmse").get<double>();
    for (std::size_t k = 0; k < names.size(); ++k) {
      const Tensor* m = ck.find("adam.m." + names[k]);
      const Tensor* v = ck.find("adam.v." + names[k]);
      if (!m || !v) throw ConfigError("resume: optimizer state missing for " + names[k]);
      opt.first_moments()[k] = m->data();
      opt.second_moments()[k] = v->data();
    }
  }
  std::ofstream log(res.log_path, start > 0 ? std::ios::app : std::ios::trunc);
  if (!log) throw ConfigError("train: cannot write " + res.log_path);
  if (start == 0) log << kTrainLogHeader << '\n';

  const Evaluator val(sys, model.pulses(), &model, tc.flags);
  const std::uint64_t val_seed = seed ^ detail::kValSeedSalt;
  auto save = [&](const std::string& path, int epoch) {
    nlohmann::json st = {{"epoch", epoch},       {"adam_steps", opt.steps()},     {"best_val_ber", best_ber},
                         {"best_val_nmse", best_nmse}, {"flags", tc.flags.to_json()}, {"seed", seed}};
    Checkpoint ck = model.to_checkpoint(st);
    for (std::size_t k = 0; k < names.size(); ++k) {
      const Shape& shp = trainable[k].shape();
      ck.tensors.emplace_back("adam.m." + names[k], Tensor::from(shp, opt.first_moments()[k]));
      ck.tensors.emplace_back("adam.v." + names[k], Tensor::from(shp, opt.second_moments()[k]));
    }
    write_checkpoint(path, ck);
  };

  for (int epoch = start; epoch < tc.epochs; ++epoch) {
    const double lr = tc.adam().lr_at(epoch);
    Rng rng(seed ^ detail::kTrainStream, static_cast<std::uint64_t>(epoch));
    double acc = 0.0;
    for (int step = 0; step < tc.steps_per_epoch; ++step) {
      opt.zero_grad();
      Tensor total;
      for (int b = 0; b < tc.batch; ++b) {
        const double snr = rng.uniform(tc.snr_min_db, tc.snr_max_db);
        const Sample s = draw_sample(rng, sys, model.pulses(), snr);
        const Tensor l = forward_e2e(model, s, sys, tc.flags, tc.channel_loss_weight).loss;
        total = total.defined() ? ad::add(total, l) : l;
      }
      const Tensor loss = ad::scale(total, 1.0 / tc.batch);
      if (!std::isfinite(loss.item())) {
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch) + " step " + std::to_string(step) +
                                 " (lr " + fmt_double(lr) + "; previous grad norms:" + detail::grad_norm_report(ps) + ")",
                             std::numeric_limits<double>::infinity());
      }
      acc += loss.item();
      if (!trainable.empty()) {
        ad::backward(loss);
        opt.step(lr);
        for (std::size_t k = 0; k < trainable.size(); ++k)
          for (double v : trainable[k].data())
            if (!std::isfinite(v)) {
              throw NumericalError("train: parameter " + names[k] + " became non-finite at epoch " + std::to_string(epoch) +
                                       " step " + std::to_string(step) + " (lr " + fmt_double(lr) +
                                       "; grad norms:" + detail::grad_norm_report(ps) + ")",
                                   v);
            }
      }
      if (tc.flags.constellation) {
        bool ok = true;
        try {
          model.constellation.renormalize();
          const auto& p = model.constellation.points.data();
          double pw = 0.0;
          for (double v : p) pw += v * v;
          ok = std::abs(pw / model.constellation.points.dim(0) - 1.0) < 1e-6;
        } catch (const ConfigError&) {
          ok = false;
        }
        if (!ok) {
          throw NumericalError("train: constellation collapsed at epoch " + std::to_string(epoch) + " step " +
                               std::to_string(step) + " (lr " + fmt_double(lr) + "; grad norms:" +
                               detail::grad_norm_report(ps) + ")");
        }
      }
      // the pilot may only give energy back
      auto& mag = model.pilot.magnitude.data()[0];
      mag = std::clamp(mag, 0.0, std::sqrt(sys.pilot_energy));
    }
    const double epoch_loss = acc / tc.steps_per_epoch;
    res.epoch_loss.push_back(epoch_loss);
    log << epoch << ',' << fmt_double(epoch_loss) << ',';
    if ((epoch + 1) % tc.val_interval == 0 || epoch + 1 == tc.epochs) {
      const auto m = val.summarize(Estimator::Cenet, tc.val_snr_db,
                                   val.trials(Estimator::Cenet, tc.val_snr_db, 0, tc.val_trials, val_seed), val_seed);
      log << fmt_double(m.ber) << ',' << fmt_double(m.nmse);
      if (m.ber < best_ber || (m.ber == best_ber && m.nmse < best_nmse)) {
        best_ber = m.ber;
        best_nmse = m.nmse;
        save(res.best_checkpoint, epoch);
      }
    } else {
      log << ',';
    }
    log << ',' << fmt_double(lr) << '\n';
    log.flush();
    save(res.last_checkpoint, epoch);
    ++res.epochs_run;
    if (on_epoch) on_epoch(epoch, epoch_loss);
  }
  res.best_val_ber = best_ber;
  res.best_val_nmse = best_nmse;
  return res;
}

}  // namespace otfs
