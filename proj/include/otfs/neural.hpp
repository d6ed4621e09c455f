// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "otfs/channel.hpp"
#include "otfs/complex_ops.hpp"
#include "otfs/modem.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <optional>

namespace otfs {

using ad::CTensor;
using ad::Shape;
using ad::Tensor;

/// Ordered, named parameter tensors. Names are "<module>.<path>".
class ParamSet {
 public:
  Tensor add(const std::string& name, Tensor t) {
    for (const auto& [n, _] : items_)
      if (n == name) throw ConfigError("ParamSet: duplicate parameter " + name);
    items_.emplace_back(name, t);
    return t;
  }
  const std::vector<std::pair<std::string, Tensor>>& items() const& { return items_; }
  std::vector<std::pair<std::string, Tensor>> items() && { return std::move(items_); }
  Tensor get(const std::string& name) const {
    for (const auto& [n, t] : items_)
      if (n == name) return t;
    throw ConfigError("ParamSet: no parameter " + name);
  }
  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& [_, t] : items_) out.push_back(t);
    return out;
  }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : items_) n += t.numel();
    return n;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> items_;
};

inline Tensor uniform_param(Rng& rng, Shape shape, double bound) {
  std::vector<double> v(ad::numel_of(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), true);
}

inline Tensor const_param(Shape shape, double value) {
  return Tensor::from(shape, std::vector<double>(ad::numel_of(shape), value), true);
}

// ---------------------------------------------------------------------------
// DL-IZak / DL-Zak
// ---------------------------------------------------------------------------

/**
 * Learnable Doppler-axis transform W = A + jB, initialised to U_N^H.
 * The transmitter applies P_tx X W and the receiver P_rx Y W^H, so both
 * directions share (A, B) and the init reproduces izak / zak exactly.
 */
struct DlZak {
  Tensor A;
  Tensor B;

  static DlZak init(int N) {
    const CMatrix W = unitary_dft(N).adjoint();
    const CTensor w = ad::cconst(W, true);
    return {w.re, w.im};
  }

  CTensor izak(const CTensor& x, const PulseShapes& pulses) const {
    CTensor out = ad::cmatmul(x, CTensor{A, B});
    if (!pulses.is_identity()) out = ad::cmatmul(ad::cconst(pulses.tx.asDiagonal().toDenseMatrix()), out);
    return out;
  }

  CTensor zak(const CTensor& y, const PulseShapes& pulses) const {
    CTensor out = ad::cmatmul(y, ad::cconj_transpose(CTensor{A, B}));
    if (!pulses.is_identity()) out = ad::cmatmul(ad::cconst(pulses.rx.asDiagonal().toDenseMatrix()), out);
    return out;
  }

  void collect(ParamSet& ps) const {
    ps.add("dlzak.A", A);
    ps.add("dlzak.B", B);
  }
};

// ---------------------------------------------------------------------------
// ThresholdNet
// ---------------------------------------------------------------------------

/// lambda = sigmoid(FC2(relu(FC1(vec|Y|)))) * max|Y|.
struct ThresholdNet {
  Tensor w1, b1, w2, b2;

  static ThresholdNet init(Rng& rng, int inputs, int hidden) {
    ThresholdNet t;
    t.w1 = uniform_param(rng, {inputs, hidden}, 1.0 / std::sqrt(static_cast<double>(inputs)));
    t.b1 = const_param({hidden}, 0.0);
    t.w2 = uniform_param(rng, {hidden, 1}, 1.0 / std::sqrt(static_cast<double>(hidden)));
    t.b2 = const_param({1}, 0.0);
    return t;
  }

  Tensor forward(const CTensor& y) const {
    const Tensor mag = ad::cabs(y);
    const int n = static_cast<int>(mag.numel());
    const Tensor v = ad::reshape(ad::transpose(mag), {1, n});
    const Tensor h = ad::relu(ad::add_rowvec(ad::matmul(v, w1), b1));
    const Tensor r = ad::sigmoid(ad::add_rowvec(ad::matmul(h, w2), b2));
    return ad::mul(ad::reshape(r, {1}), ad::max_reduce(mag));
  }

  void collect(ParamSet& ps) const {
    ps.add("threshold.fc1.w", w1);
    ps.add("threshold.fc1.b", b1);
    ps.add("threshold.fc2.w", w2);
    ps.add("threshold.fc2.b", b2);
  }
};

// ---------------------------------------------------------------------------
// CENet-lite
// ---------------------------------------------------------------------------

struct CConv {
  Tensor wr, wi;
  int stride = 1;
  bool transposed = false;

  /// Weights U(-b, b), b = 1/sqrt(cin k^2).
  static CConv make(Rng& rng, int cin, int cout, int k, int stride, bool transposed) {
    const double b = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
    const Shape s = transposed ? Shape{cin, cout, k, k} : Shape{cout, cin, k, k};
    return {uniform_param(rng, s, b), uniform_param(rng, s, b), stride, transposed};
  }
  Tensor operator()(const Tensor& x) const {
    return transposed ? ad::cconv2d_transpose(x, wr, wi, stride) : ad::cconv2d(x, wr, wi, stride);
  }
  void collect(ParamSet& ps, const std::string& name) const {
    ps.add(name + ".wr", wr);
    ps.add(name + ".wi", wi);
  }
};

struct ModRelu {
  Tensor b;
  static ModRelu make(int channels) { return {const_param({channels}, 0.0)}; }
  Tensor operator()(const Tensor& x) const { return ad::modrelu(x, b); }
  void collect(ParamSet& ps, const std::string& name) const { ps.add(name + ".b", b); }
};

/// conv - modReLU - conv, plus a (projected) identity path, then modReLU.
struct ResBlock {
  CConv c1, c2;
  ModRelu a1, a2;
  std::optional<CConv> proj;

  static ResBlock make(Rng& rng, int cin, int cout) {
    ResBlock r{CConv::make(rng, cin, cout, 3, 1, false), CConv::make(rng, cout, cout, 3, 1, false), ModRelu::make(cout),
               ModRelu::make(cout), std::nullopt};
    if (cin != cout) r.proj = CConv::make(rng, cin, cout, 1, 1, false);
    return r;
  }
  Tensor operator()(const Tensor& x) const {
    const Tensor skip = proj ? (*proj)(x) : x;
    return a2(ad::add(skip, c2(a1(c1(x)))));
  }
  void collect(ParamSet& ps, const std::string& name) const {
    c1.collect(ps, name + ".c1");
    a1.collect(ps, name + ".a1");
    c2.collect(ps, name + ".c2");
    a2.collect(ps, name + ".a2");
    if (proj) proj->collect(ps, name + ".proj");
  }
};

/// Concatenates two stacked complex maps along channels, keeping re/im blocks together.
inline Tensor cat_stacked(const Tensor& a, const Tensor& b) {
  const int ca = a.dim(0) / 2, cb = b.dim(0) / 2;
  return ad::concat({ad::slice(a, 0, 0, ca), ad::slice(b, 0, 0, cb), ad::slice(a, 0, ca, ca), ad::slice(b, 0, cb, cb)},
                    0);
}

struct CenetConfig {
  int M = 8;
  int N = 8;
  int down = 2;        // L
  int up = 5;          // K
  int base_width = 8;  // complex channels after the initial block
  int tail_width = 4;  // complex channels of the up-blocks past the grid resolution

  /// L = log2(M / 2), K = log2(MN / 2); requires a square power-of-two grid.
  static CenetConfig for_grid(const GridConfig& g) {
    auto lg = [](int v) { return std::bit_width(static_cast<unsigned>(v)) - 1; };
    CenetConfig c;
    c.M = g.M;
    c.N = g.N;
    c.down = lg(g.M / 2);
    c.up = lg(g.M * g.N / 2);
    return c;
  }

  void validate() const {
    if (M != N || !std::has_single_bit(static_cast<unsigned>(M)) || M < 4) {
      throw ConfigError("cenet: grid must be square with a power-of-two side >= 4 (got " + std::to_string(M) + "x" +
                        std::to_string(N) + ")");
    }
    if ((M >> down) != 2) throw ConfigError("cenet: L=" + std::to_string(down) + " does not reduce " + std::to_string(M) + " to 2");
    if (((M >> down) << up) != M * N) {
      throw ConfigError("cenet: K=" + std::to_string(up) + " does not reach the MN x MN output");
    }
    if (base_width < 1 || tail_width < 1) throw ConfigError("cenet: widths must be positive");
  }
  bool operator==(const CenetConfig&) const = default;
};

/**
 * Fixed map from a DD spreading estimate S (M x N, indexed at the cell where a
 * unit pilot lands) to G: for delay dl in [0, l_cp] and Doppler dk over the
 * full signed range, the cell (l_p + dl, k_p + dk) contributes
 * S / a(dl, dk) * G_{dl,dk}, with a the unit-tap response at that cell.
 */
inline ad::SparseLift make_lift(const TapDictionary& dict, int pilot_l, int pilot_k) {
  const GridConfig& g = dict.grid();
  const int M = g.M, N = g.N, MN = g.size();
  const int pp = pilot_k * M + pilot_l;
  ad::SparseLift op;
  op.in_shape = {M, N};
  op.out_shape = {MN, MN};
  for (int dl = 0; dl <= g.l_cp; ++dl) {
    for (int dk = dict.k_min(); dk <= dict.k_max(); ++dk) {
      const int row = (pilot_l + dl) % M;
      const int col = ((pilot_k + dk) % N + N) % N;
      const SparseCMatrix& G = dict.at(dl, dk);
      const cplx a = G.coeff(col * M + row, pp);
      if (std::abs(a) < 1e-9) throw ModelError("lift: unit tap does not reach its cell");
      for (int r = 0; r < G.outerSize(); ++r)
        for (SparseCMatrix::InnerIterator it(G, r); it; ++it)
          op.terms.push_back({static_cast<std::size_t>(row * N + col),
                              static_cast<std::size_t>(it.row()) * MN + static_cast<std::size_t>(it.col()), it.value() / a});
    }
  }
  return op;
}

struct CenetTrace {
  Shape latent;
  Shape grid_stage;
};

/**
 * Complex U-Net from the coarse pilot observation (M x N) to G_hat (MN x MN).
 *
 * Encoder: initial block, then L stride-2 down-blocks each followed by a
 * residual block. Decoder: K stride-2 transposed-conv up-blocks; the first L
 * take a 1x1-adapted encoder feature of matching resolution as skip. At the
 * grid resolution a 1x1 head emits a spreading estimate that the fixed lift
 * expands to G; the remaining up-blocks feed a zero-initialised residual head.
 */
class Cenet {
 public:
  Cenet() = default;
  Cenet(const CenetConfig& cfg, ad::SparseLift lift, Rng& rng) : cfg_(cfg), lift_(std::make_shared<ad::SparseLift>(std::move(lift))) {
    cfg_.validate();
    const int L = cfg_.down;
    auto width = [&](int i) { return cfg_.base_width << i; };
    init_ = CConv::make(rng, 1, width(0), 3, 1, false);
    init_act_ = ModRelu::make(width(0));
    for (int i = 1; i <= L; ++i) {
      down_.push_back(CConv::make(rng, width(i - 1), width(i), 3, 2, false));
      down_res_.push_back(ResBlock::make(rng, width(i), width(i)));
    }
    for (int k = 1; k <= L; ++k) {
      const int cin = width(L - k + 1), cout = width(L - k);
      up_.push_back(CConv::make(rng, cin, cout, 3, 2, true));
      skip_.push_back(CConv::make(rng, cout, cout, 1, 1, false));
      up_res_.push_back(ResBlock::make(rng, 2 * cout, cout));
    }
    lift_head_ = CConv::make(rng, width(0), 1, 1, 1, false);
    int c = width(0);
    for (int k = L + 1; k <= cfg_.up; ++k) {
      tail_.push_back(CConv::make(rng, c, cfg_.tail_width, 3, 2, true));
      tail_act_.push_back(ModRelu::make(cfg_.tail_width));
      c = cfg_.tail_width;
    }
    out_head_ = CConv::make(rng, c, 1, 1, 1, false);
    std::fill(out_head_.wr.data().begin(), out_head_.wr.data().end(), 0.0);
    std::fill(out_head_.wi.data().begin(), out_head_.wi.data().end(), 0.0);
  }

  const CenetConfig& config() const { return cfg_; }

  CTensor forward(const CTensor& yp, CenetTrace* trace = nullptr) const {
    if (yp.dim(0) != cfg_.M || yp.dim(1) != cfg_.N) {
      throw ConfigError("cenet: input is " + ad::shape_str(yp.shape()) + ", expected [" + std::to_string(cfg_.M) + "," +
                        std::to_string(cfg_.N) + "]");
    }
    std::vector<Tensor> feats;
    Tensor h = init_act_(init_(ad::stack_pair(yp)));
    feats.push_back(h);
    for (std::size_t i = 0; i < down_.size(); ++i) {
      h = down_res_[i](down_[i](h));
      feats.push_back(h);
    }
    if (trace) trace->latent = h.shape();
    const int L = cfg_.down;
    for (int k = 1; k <= L; ++k) {
      const Tensor u = up_[k - 1](h);
      const Tensor z = skip_[k - 1](feats[L - k]);
      h = up_res_[k - 1](cat_stacked(z, u));
    }
    if (trace) trace->grid_stage = h.shape();
    const Tensor lifted = ad::apply_lift(lift_head_(h), *lift_);
    for (std::size_t i = 0; i < tail_.size(); ++i) h = tail_act_[i](tail_[i](h));
    return ad::unstack_pair(ad::add(lifted, out_head_(h)));
  }

  void collect(ParamSet& ps) const {
    init_.collect(ps, "cenet.init");
    init_act_.collect(ps, "cenet.init_act");
    for (std::size_t i = 0; i < down_.size(); ++i) {
      down_[i].collect(ps, "cenet.down" + std::to_string(i + 1));
      down_res_[i].collect(ps, "cenet.down" + std::to_string(i + 1) + ".res");
    }
    for (std::size_t i = 0; i < up_.size(); ++i) {
      up_[i].collect(ps, "cenet.up" + std::to_string(i + 1));
      skip_[i].collect(ps, "cenet.up" + std::to_string(i + 1) + ".skip");
      up_res_[i].collect(ps, "cenet.up" + std::to_string(i + 1) + ".res");
    }
    lift_head_.collect(ps, "cenet.lift_head");
    for (std::size_t i = 0; i < tail_.size(); ++i) {
      const std::string n = "cenet.up" + std::to_string(up_.size() + i + 1);
      tail_[i].collect(ps, n);
      tail_act_[i].collect(ps, n + ".act");
    }
    out_head_.collect(ps, "cenet.out_head");
  }

 private:
  CenetConfig cfg_;
  std::shared_ptr<ad::SparseLift> lift_;
  CConv init_;
  ModRelu init_act_;
  std::vector<CConv> down_;
  std::vector<ResBlock> down_res_;
  std::vector<CConv> up_, skip_;
  std::vector<ResBlock> up_res_;
  CConv lift_head_;
  std::vector<CConv> tail_;
  std::vector<ModRelu> tail_act_;
  CConv out_head_;
};

// ---------------------------------------------------------------------------
// Demapper
// ---------------------------------------------------------------------------

/// Per-symbol FC 2 -> d -> d -> r; each hidden layer has a learnable scale and shift.
struct Demapper {
  Tensor w1, b1, g1, s1, w2, b2, g2, s2, w3, b3;

  static Demapper init(Rng& rng, int hidden, int bits) {
    Demapper d;
    d.w1 = uniform_param(rng, {2, hidden}, 1.0 / std::sqrt(2.0));
    d.b1 = const_param({hidden}, 0.0);
    d.g1 = const_param({hidden}, 1.0);
    d.s1 = const_param({hidden}, 0.0);
    d.w2 = uniform_param(rng, {hidden, hidden}, 1.0 / std::sqrt(static_cast<double>(hidden)));
    d.b2 = const_param({hidden}, 0.0);
    d.g2 = const_param({hidden}, 1.0);
    d.s2 = const_param({hidden}, 0.0);
    d.w3 = uniform_param(rng, {hidden, bits}, 1.0 / std::sqrt(static_cast<double>(hidden)));
    d.b3 = const_param({bits}, 0.0);
    return d;
  }

  /// symbols: [S, 1] pair -> logits [S, r].
  Tensor logits(const CTensor& symbols) const {
    const int S = symbols.dim(0);
    const Tensor x = ad::concat({ad::reshape(symbols.re, {S, 1}), ad::reshape(symbols.im, {S, 1})}, 1);
    Tensor h = ad::add_rowvec(ad::matmul(x, w1), b1);
    h = ad::relu(ad::add_rowvec(ad::mul_rowvec(h, g1), s1));
    h = ad::add_rowvec(ad::matmul(h, w2), b2);
    h = ad::relu(ad::add_rowvec(ad::mul_rowvec(h, g2), s2));
    return ad::add_rowvec(ad::matmul(h, w3), b3);
  }

  /// Bit probabilities, symbol-major (symbol j, bit b at j*r + b).
  Tensor probabilities(const CTensor& symbols) const {
    const Tensor l = logits(symbols);
    return ad::sigmoid(ad::reshape(l, {static_cast<int>(l.numel())}));
  }

  void collect(ParamSet& ps) const {
    const std::pair<const char*, Tensor> all[] = {{"fc1.w", w1}, {"fc1.b", b1}, {"fc1.scale", g1}, {"fc1.shift", s1},
                                                  {"fc2.w", w2}, {"fc2.b", b2}, {"fc2.scale", g2}, {"fc2.shift", s2},
                                                  {"fc3.w", w3}, {"fc3.b", b3}};
    for (const auto& [n, t] : all) ps.add(std::string("demapper.") + n, t);
  }
};

// ---------------------------------------------------------------------------
// Trainable constellation and pilot
// ---------------------------------------------------------------------------

struct ConstellationParam {
  Tensor points;  // [R, 2]
  std::vector<std::uint32_t> labels;

  static ConstellationParam from(const Constellation& c) {
    std::vector<double> v;
    for (auto p : c.points) {
      v.push_back(p.real());
      v.push_back(p.imag());
    }
    return {Tensor::from({c.order(), 2}, std::move(v), true), c.labels};
  }

  /// Power-normalised points [R, 2] (differentiable).
  Tensor normalized() const { return ad::normalize_power(points); }

  /// Rescales the stored points to unit mean power.
  void renormalize() {
    double p = 0.0;
    for (double x : points.data()) p += x * x;
    const double s = 1.0 / std::sqrt(p / points.dim(0));
    for (auto& x : points.data()) x *= s;
  }

  Constellation snapshot() const {
    Constellation c;
    for (int i = 0; i < points.dim(0); ++i) c.points.emplace_back(points.data()[2 * i], points.data()[2 * i + 1]);
    c.labels = labels;
    c.trainable = true;
    return normalize_constellation(c);
  }

  void collect(ParamSet& ps) const { ps.add("constellation.points", points); }
};

struct PilotParam {
  int l = 0;
  int k = 0;
  Tensor theta;      // [1]
  Tensor magnitude;  // [1]; trainable only when the magnitude flag is on

  static PilotParam from(const PilotConfig& p, bool train_magnitude = false) {
    return {p.l, p.k, Tensor::scalar(std::arg(p.value), true), Tensor::scalar(std::abs(p.value), train_magnitude)};
  }

  CTensor value() const {
    CTensor z = ad::phasor(theta, 1.0);
    return {ad::mul_scalar(z.re, magnitude), ad::mul_scalar(z.im, magnitude)};
  }

  PilotConfig snapshot() const {
    return {l, k, std::polar(magnitude.item(), theta.item()), true};
  }

  void collect(ParamSet& ps) const {
    ps.add("pilot.theta", theta);
    ps.add("pilot.magnitude", magnitude);
  }
};

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

/// Little-endian file: magic, version, JSON header, then (name, shape, f64 data) records.
struct Checkpoint {
  static constexpr char kMagic[8] = {'O', 'T', 'F', 'S', 'C', 'K', 'P', 'T'};
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json header;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return &t;
    return nullptr;
  }
};

namespace detail {
static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw ConfigError("checkpoint: truncated file");
  return v;
}
}  // namespace detail

inline void write_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ConfigError("checkpoint: cannot open " + path + " for writing");
  os.write(Checkpoint::kMagic, sizeof(Checkpoint::kMagic));
  detail::put<std::uint32_t>(os, Checkpoint::kVersion);
  const std::string js = ck.header.dump();
  detail::put<std::uint64_t>(os, js.size());
  os.write(js.data(), static_cast<std::streamsize>(js.size()));
  detail::put<std::uint64_t>(os, ck.tensors.size());
  for (const auto& [name, t] : ck.tensors) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) detail::put<std::int64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(double)));
  }
  if (!os) throw ConfigError("checkpoint: write failed for " + path);
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, Checkpoint::kMagic, 8) != 0) throw ConfigError("checkpoint: bad magic in " + path);
  const auto version = detail::get<std::uint32_t>(is);
  if (version != Checkpoint::kVersion) {
    throw ConfigError("checkpoint: unsupported format version " + std::to_string(version));
  }
  Checkpoint ck;
  std::string js(detail::get<std::uint64_t>(is), '\0');
  is.read(js.data(), static_cast<std::streamsize>(js.size()));
  ck.header = nlohmann::json::parse(js);
  const auto count = detail::get<std::uint64_t>(is);
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name(detail::get<std::uint32_t>(is), '\0');
    is.read(name.data(), static_cast<std::streamsize>(name.size()));
    const auto rank = detail::get<std::uint32_t>(is);
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(detail::get<std::int64_t>(is)));
    std::vector<double> data(ad::numel_of(shape));
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
    if (!is) throw ConfigError("checkpoint: truncated tensor " + name);
    ck.tensors.emplace_back(name, Tensor::from(shape, std::move(data)));
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Full model
// ---------------------------------------------------------------------------

struct ModelArch {
  GridConfig grid;
  int order = 2;
  PilotConfig pilot = PilotConfig::centered(GridConfig{}, 10.0);
  bool pilot_train_magnitude = false;
  CenetConfig cenet = CenetConfig::for_grid(GridConfig{});
  int threshold_hidden = 32;
  int demapper_hidden = 64;

  static ModelArch for_grid(const GridConfig& g, int order, double pilot_energy) {
    ModelArch a;
    a.grid = g;
    a.order = order;
    a.pilot = PilotConfig::centered(g, pilot_energy);
    a.cenet = CenetConfig::for_grid(g);
    return a;
  }

  nlohmann::json to_json() const {
    return {{"M", grid.M},
            {"N", grid.N},
            {"delta_f", grid.delta_f},
            {"l_cp", grid.l_cp},
            {"order", order},
            {"pilot_l", pilot.l},
            {"pilot_k", pilot.k},
            {"pilot_train_magnitude", pilot_train_magnitude},
            {"cenet_L", cenet.down},
            {"cenet_K", cenet.up},
            {"cenet_base_width", cenet.base_width},
            {"cenet_tail_width", cenet.tail_width},
            {"threshold_hidden", threshold_hidden},
            {"demapper_hidden", demapper_hidden}};
  }
};

/// Every learnable block of the transceiver; groups are freezable independently.
class Model {
 public:
  Model(const ModelArch& arch, std::uint64_t seed, const PulseShapes& pulses)
      : arch_(arch), pulses_(pulses), dict_(std::make_shared<TapDictionary>(arch.grid, pulses)) {
    arch_.grid.validate();
    arch_.pilot.validate(arch_.grid);
    check_pulses(pulses_, arch_.grid);
    Rng root(seed, 0x6d6f64656cULL);
    Rng r_thr = root.fork(1), r_cen = root.fork(2), r_dem = root.fork(3);
    constellation = ConstellationParam::from(default_constellation(arch_.order));
    pilot = PilotParam::from(arch_.pilot, arch_.pilot_train_magnitude);
    dlzak = DlZak::init(arch_.grid.N);
    threshold = ThresholdNet::init(r_thr, arch_.grid.size(), arch_.threshold_hidden);
    cenet = Cenet(arch_.cenet, make_lift(*dict_, arch_.pilot.l, arch_.pilot.k), r_cen);
    demapper = Demapper::init(r_dem, arch_.demapper_hidden, default_constellation(arch_.order).bits_per_symbol());
  }

  const ModelArch& arch() const { return arch_; }
  const PulseShapes& pulses() const { return pulses_; }
  const TapDictionary& dictionary() const { return *dict_; }

  ParamSet params() const {
    ParamSet ps;
    constellation.collect(ps);
    pilot.collect(ps);
    dlzak.collect(ps);
    threshold.collect(ps);
    cenet.collect(ps);
    demapper.collect(ps);
    return ps;
  }

  Checkpoint to_checkpoint(nlohmann::json extra = nlohmann::json::object()) const {
    Checkpoint ck;
    ck.header = {{"architecture", arch_.to_json()}, {"state", std::move(extra)}};
    const ParamSet ps = params();
    for (const auto& [n, t] : ps.items()) ck.tensors.emplace_back(n, t.detach());
    return ck;
  }

  /// Copies tensors from a checkpoint after checking the architecture matches.
  void load(const Checkpoint& ck) {
    const auto want = arch_.to_json();
    const auto& got = ck.header.at("architecture");
    for (auto it = want.begin(); it != want.end(); ++it) {
      if (!got.contains(it.key()) || got.at(it.key()) != it.value()) {
        throw ConfigError("checkpoint: architecture mismatch on '" + it.key() + "' (checkpoint " +
                          (got.contains(it.key()) ? got.at(it.key()).dump() : "missing") + ", model " + it.value().dump() + ")");
      }
    }
    const ParamSet ps = params();
    for (const auto& [n, t] : ps.items()) {
      const Tensor* src = ck.find(n);
      if (!src) throw ConfigError("checkpoint: missing tensor " + n);
      if (src->shape() != t.shape()) {
        throw ConfigError("checkpoint: tensor " + n + " has shape " + ad::shape_str(src->shape()) + ", expected " +
                          ad::shape_str(t.shape()));
      }
      auto dst = t;
      dst.data() = src->data();
    }
  }

  ConstellationParam constellation;
  PilotParam pilot;
  DlZak dlzak;
  ThresholdNet threshold;
  Cenet cenet;
  Demapper demapper;

 private:
  ModelArch arch_;
  PulseShapes pulses_;
  std::shared_ptr<TapDictionary> dict_;
};

}  // namespace otfs
