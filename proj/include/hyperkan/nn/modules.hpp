#pragma once

#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hyperkan/basis.hpp"
#include "hyperkan/nn/functional.hpp"
#include "hyperkan/ops.hpp"
#include "hyperkan/rng.hpp"

namespace hyperkan {

/// Hyperparameters shared by every KAN edge layer.
struct KanConfig {
  int grid_size = 2;
  int order = 3;
  double lo = -1.0;
  double hi = 1.0;
  double grid_eps = 0.02;
  /// Unset: spline for linear and attention layers, RBF for convolutions.
  std::optional<BasisKind> basis;
  BaseFn base = BaseFn::prelu;
  double scale_noise = 0.1;
  double scale_base = 1.0;
  double scale_spline = 1.0;

  SplineGrid grid() const { return SplineGrid(grid_size, order, lo, hi, grid_eps); }
  BasisKind basis_for_linear() const { return basis.value_or(BasisKind::spline); }
  BasisKind basis_for_conv() const { return basis.value_or(BasisKind::rbf); }
  bool operator==(const KanConfig&) const = default;
};

template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor<T> forward(const Tensor<T>& x) = 0;
  virtual std::string kind() const = 0;
  /// Trainable tensors, in a fixed order.
  virtual std::vector<Tensor<T>> parameters() const { return {}; }
  /// Non-trainable state that must persist with the parameters.
  virtual std::vector<Tensor<T>> buffers() const { return {}; }
  virtual void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
  }

 protected:
  bool training_ = true;
};

namespace detail {

template <typename T>
Tensor<T> uniform_param(Shape shape, double bound, Rng& rng) {
  Tensor<T> t(std::move(shape), T(0));
  for (auto& v : t.mutable_values()) v = static_cast<T>(rng.uniform(-bound, bound));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> constant_param(Shape shape, double value) {
  Tensor<T> t(std::move(shape), static_cast<T>(value));
  t.set_requires_grad(true);
  return t;
}

template <typename T>
Tensor<T> normal_param(Shape shape, double stddev, Rng& rng) {
  Tensor<T> t(std::move(shape), T(0));
  for (auto& v : t.mutable_values()) v = static_cast<T>(rng.normal(0.0, stddev));
  t.set_requires_grad(true);
  return t;
}

/// Solves the square system a·x = b in place (Gaussian elimination, partial pivoting).
inline std::vector<double> solve(std::vector<double> a, std::vector<double> b, std::size_t n, std::size_t cols) {
  for (std::size_t c = 0; c < n; ++c) {
    std::size_t piv = c;
    for (std::size_t r = c + 1; r < n; ++r)
      if (std::abs(a[r * n + c]) > std::abs(a[piv * n + c])) piv = r;
    if (piv != c) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a[c * n + j], a[piv * n + j]);
      for (std::size_t j = 0; j < cols; ++j) std::swap(b[c * cols + j], b[piv * cols + j]);
    }
    const double d = a[c * n + c];
    for (std::size_t r = 0; r < n; ++r) {
      if (r == c) continue;
      const double f = a[r * n + c] / d;
      if (f == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) a[r * n + j] -= f * a[c * n + j];
      for (std::size_t j = 0; j < cols; ++j) b[r * cols + j] -= f * b[c * cols + j];
    }
  }
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < cols; ++j) b[r * cols + j] /= a[r * n + r];
  return b;
}

}  // namespace detail

/// Matrix P [K x (G+1)] mapping values at the G+1 grid points to the
/// least-squares (minimum-norm when underdetermined) coefficient vector.
inline std::vector<double> coefficient_fit_matrix(const Basis& basis) {
  const SplineGrid& g = basis.grid();
  const std::size_t m = static_cast<std::size_t>(g.grid_size()) + 1;
  const std::size_t k = basis.count();
  std::vector<double> a(m * k);
  for (std::size_t i = 0; i < m; ++i) {
    const auto row = basis.values(g.lo() + static_cast<double>(i) * g.spacing());
    for (std::size_t t = 0; t < k; ++t) a[i * k + t] = row[t];
  }
  constexpr double ridge = 1e-10;
  std::vector<double> p(k * m, 0.0);
  if (k >= m) {
    // P = A^T (A A^T + rI)^-1
    std::vector<double> aat(m * m, 0.0), eye(m * m, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
      eye[i * m + i] = 1.0;
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0;
        for (std::size_t t = 0; t < k; ++t) s += a[i * k + t] * a[j * k + t];
        aat[i * m + j] = s + (i == j ? ridge : 0.0);
      }
    }
    const auto inv = detail::solve(aat, eye, m, m);
    for (std::size_t t = 0; t < k; ++t)
      for (std::size_t j = 0; j < m; ++j) {
        double s = 0;
        for (std::size_t i = 0; i < m; ++i) s += a[i * k + t] * inv[i * m + j];
        p[t * m + j] = s;
      }
  } else {
    // P = (A^T A + rI)^-1 A^T
    std::vector<double> ata(k * k, 0.0), at(k * m);
    for (std::size_t t = 0; t < k; ++t) {
      for (std::size_t u = 0; u < k; ++u) {
        double s = 0;
        for (std::size_t i = 0; i < m; ++i) s += a[i * k + t] * a[i * k + u];
        ata[t * k + u] = s + (t == u ? ridge : 0.0);
      }
      for (std::size_t i = 0; i < m; ++i) at[t * m + i] = a[i * k + t];
    }
    p = detail::solve(ata, at, k, m);
  }
  return p;
}

/// Per-edge parameters of a KAN layer: base weights, spline weights,
/// coefficients and the shared base-function slope.
template <typename T>
struct KanEdgeParams {
  Tensor<T> w_b, w_s, c, slope;

  KanEdgeParams() = default;

  /// `edge_shape` is [out, in, taps...]; fan_in is in * prod(taps).
  KanEdgeParams(const Shape& edge_shape, const Basis& basis, const KanConfig& cfg, Rng& rng) {
    std::size_t fan_in = 1;
    for (std::size_t d = 1; d < edge_shape.size(); ++d) fan_in *= edge_shape[d];
    w_b = detail::uniform_param<T>(edge_shape, cfg.scale_base / std::sqrt(static_cast<double>(fan_in)), rng);
    w_s = detail::constant_param<T>(edge_shape, cfg.scale_spline);
    const std::size_t k = basis.count();
    const std::size_t m = static_cast<std::size_t>(cfg.grid_size) + 1;
    const auto p = coefficient_fit_matrix(basis);
    Shape cs = edge_shape;
    cs.push_back(k);
    c = Tensor<T>(cs, T(0));
    auto cv = c.mutable_values();
    const std::size_t edges = numel(edge_shape);
    std::vector<double> noise(m);
    for (std::size_t e = 0; e < edges; ++e) {
      for (auto& v : noise) v = (rng.uniform() - 0.5) * cfg.scale_noise / cfg.grid_size;
      for (std::size_t t = 0; t < k; ++t) {
        double s = 0;
        for (std::size_t j = 0; j < m; ++j) s += p[t * m + j] * noise[j];
        cv[e * k + t] = static_cast<T>(s);
      }
    }
    c.set_requires_grad(true);
    if (cfg.base == BaseFn::prelu) slope = detail::constant_param<T>({1}, 0.25);
  }

  Tensor<T> weight() const { return kan_weight(w_b, w_s, c); }

  std::vector<Tensor<T>> list() const {
    std::vector<Tensor<T>> v{w_b, w_s, c};
    if (slope.defined()) v.push_back(slope);
    return v;
  }
};

template <typename T>
class Linear : public Module<T> {
 public:
  Linear(std::size_t in, std::size_t out, bool bias, Rng& rng) : in_(in), out_(out) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    weight_ = detail::uniform_param<T>({out, in}, bound, rng);
    if (bias) bias_ = detail::uniform_param<T>({out}, bound, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.shape().back() != in_) {
      throw ShapeError("linear: expected " + std::to_string(in_) + " input features, got shape " +
                       to_string(x.shape()));
    }
    return linear(x, weight_, bias_);
  }
  std::string kind() const override { return "linear"; }
  std::vector<Tensor<T>> parameters() const override {
    if (bias_.defined()) return {weight_, bias_};
    return {weight_};
  }
  const Tensor<T>& weight() const { return weight_; }
  const Tensor<T>& bias() const { return bias_; }

 private:
  std::size_t in_, out_;
  Tensor<T> weight_, bias_;
};

template <typename T>
class BatchNorm : public Module<T> {
 public:
  explicit BatchNorm(std::size_t features, double momentum = 0.1, double eps = 1e-5)
      : features_(features), momentum_(static_cast<T>(momentum)), eps_(static_cast<T>(eps)) {
    gamma_ = detail::constant_param<T>({features}, 1.0);
    beta_ = detail::constant_param<T>({features}, 0.0);
    running_mean_ = Tensor<T>({features}, T(0));
    running_var_ = Tensor<T>({features}, T(1));
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.rank() < 2 || x.dim(1) != features_) {
      throw ShapeError("batchnorm: expected " + std::to_string(features_) + " features, got shape " +
                       to_string(x.shape()));
    }
    return batch_norm(x, gamma_, beta_, running_mean_, running_var_, this->training_, momentum_, eps_);
  }
  std::string kind() const override { return "batchnorm"; }
  std::vector<Tensor<T>> parameters() const override { return {gamma_, beta_}; }
  std::vector<Tensor<T>> buffers() const override { return {running_mean_, running_var_}; }
  Tensor<T>& gamma() { return gamma_; }
  Tensor<T>& beta() { return beta_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

 private:
  std::size_t features_;
  T momentum_, eps_;
  Tensor<T> gamma_, beta_, running_mean_, running_var_;
};

/// KAN edge layer over the last axis: y_j = sum_i w_b b(x_i) + w_s sum_t c_t B_t(x_i).
/// Inputs of rank > 2 are treated tokenwise; the optional batch norm needs rank 2.
template <typename T>
class KanLinear : public Module<T> {
 public:
  KanLinear(std::size_t in, std::size_t out, const KanConfig& cfg, BasisKind kind, bool batch_norm, Rng& rng)
      : in_(in), out_(out), cfg_(cfg), basis_(cfg.grid(), kind), edges_({out, in}, basis_, cfg, rng) {
    if (batch_norm) bn_ = std::make_unique<BatchNorm<T>>(in);
  }
  KanLinear(std::size_t in, std::size_t out, const KanConfig& cfg, bool batch_norm, Rng& rng)
      : KanLinear(in, out, cfg, cfg.basis_for_linear(), batch_norm, rng) {}

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.shape().back() != in_) {
      throw ShapeError("kan_linear: expected " + std::to_string(in_) + " input features, got shape " +
                       to_string(x.shape()));
    }
    Tensor<T> h = x;
    if (bn_) {
      if (x.rank() != 2) throw ShapeError("kan_linear: input batch norm needs [batch, features]");
      h = bn_->forward(h);
    }
    const std::size_t rows = x.numel() / in_;
    const std::size_t f = basis_.count() + 1;
    auto feats = reshape(edge_features(reshape(h, {rows, in_}), basis_, cfg_.base, edges_.slope), {rows, in_ * f});
    auto y = linear(feats, edges_.weight());
    Shape out_shape = x.shape();
    out_shape.back() = out_;
    return reshape(y, out_shape);
  }

  std::string kind() const override { return "kan_linear"; }
  std::vector<Tensor<T>> parameters() const override {
    auto v = edges_.list();
    if (bn_)
      for (auto& p : bn_->parameters()) v.push_back(p);
    return v;
  }
  std::vector<Tensor<T>> buffers() const override { return bn_ ? bn_->buffers() : std::vector<Tensor<T>>{}; }
  void set_training(bool on) override {
    Module<T>::set_training(on);
    if (bn_) bn_->set_training(on);
  }

  KanEdgeParams<T>& edges() { return edges_; }
  const Basis& basis() const { return basis_; }
  BatchNorm<T>* batch_norm() { return bn_.get(); }

 private:
  std::size_t in_, out_;
  KanConfig cfg_;
  Basis basis_;
  KanEdgeParams<T> edges_;
  std::unique_ptr<BatchNorm<T>> bn_;
};

/// Padding applied before a convolution: per spatial dimension, on both sides.
struct ConvPadding {
  PadMode mode = PadMode::zero;
  std::vector<std::size_t> amount;  // empty means none

  bool any() const {
    for (auto a : amount)
      if (a) return true;
    return false;
  }
};

/// Geometry of a convolution layer.
struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::vector<std::size_t> kernel;  // one extent per spatial dimension (1 to 3)
  std::vector<std::size_t> stride;  // empty means all ones
  ConvPadding padding;

  std::size_t dims() const { return kernel.size(); }
  std::size_t taps() const {
    std::size_t n = 1;
    for (auto k : kernel) n *= k;
    return n;
  }
  std::vector<std::size_t> strides() const {
    return stride.empty() ? std::vector<std::size_t>(kernel.size(), 1) : stride;
  }

  void validate() const {
    if (kernel.empty() || kernel.size() > 3) throw ShapeError("conv: 1 to 3 spatial dimensions supported");
    if (in_channels == 0 || out_channels == 0) throw ShapeError("conv: channel counts must be positive");
    for (auto k : kernel)
      if (k == 0) throw ShapeError("conv: kernel extents must be positive");
    if (!stride.empty() && stride.size() != kernel.size()) throw ShapeError("conv: stride rank mismatch");
    for (auto s : stride)
      if (s == 0) throw ShapeError("conv: strides must be positive");
    if (!padding.amount.empty() && padding.amount.size() != kernel.size()) {
      throw ShapeError("conv: padding rank mismatch");
    }
  }

  /// Output spatial extents for the given input extents.
  std::vector<std::size_t> output_extents(const std::vector<std::size_t>& in) const {
    if (in.size() != dims()) throw ShapeError("conv: input spatial rank mismatch");
    const auto st = strides();
    std::vector<std::size_t> out(dims());
    for (std::size_t d = 0; d < dims(); ++d) {
      const std::size_t p = padding.amount.empty() ? 0 : 2 * padding.amount[d];
      if (in[d] + p < kernel[d]) {
        throw ShapeError("conv: spatial extent " + to_string(Shape(in)) + " smaller than kernel " +
                         to_string(Shape(kernel)));
      }
      out[d] = (in[d] + p - kernel[d]) / st[d] + 1;
    }
    return out;
  }
};

namespace detail {

template <typename T>
Tensor<T> apply_padding(const Tensor<T>& x, const ConvSpec& spec) {
  if (!spec.padding.any()) return x;
  return pad(x, spec.padding.amount, spec.padding.mode);
}

template <typename T>
void check_conv_input(const Tensor<T>& x, const ConvSpec& spec, const char* name) {
  if (x.rank() != spec.dims() + 2 || x.dim(1) != spec.in_channels) {
    Shape expect{0, spec.in_channels};
    throw ShapeError(std::string(name) + ": expected [batch, " + std::to_string(spec.in_channels) + ", " +
                     std::to_string(spec.dims()) + " spatial dims], got " + to_string(x.shape()));
  }
  std::vector<std::size_t> sp(x.shape().begin() + 2, x.shape().end());
  spec.output_extents(sp);
}

}  // namespace detail

template <typename T>
class Conv : public Module<T> {
 public:
  Conv(ConvSpec spec, bool bias, Rng& rng) : spec_(std::move(spec)) {
    spec_.validate();
    Shape ws{spec_.out_channels, spec_.in_channels};
    ws.insert(ws.end(), spec_.kernel.begin(), spec_.kernel.end());
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec_.in_channels * spec_.taps()));
    weight_ = detail::uniform_param<T>(ws, bound, rng);
    if (bias) bias_ = detail::uniform_param<T>({spec_.out_channels}, bound, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    detail::check_conv_input(x, spec_, "conv");
    return conv(detail::apply_padding(x, spec_), weight_, bias_, spec_.strides());
  }
  std::string kind() const override { return "conv"; }
  std::vector<Tensor<T>> parameters() const override {
    if (bias_.defined()) return {weight_, bias_};
    return {weight_};
  }
  const ConvSpec& spec() const { return spec_; }
  Tensor<T>& weight() { return weight_; }
  Tensor<T>& bias() { return bias_; }

 private:
  ConvSpec spec_;
  Tensor<T> weight_, bias_;
};

/// Convolution whose every (out channel, in channel, tap) carries its own edge function.
template <typename T>
class KanConv : public Module<T> {
 public:
  KanConv(ConvSpec spec, const KanConfig& cfg, BasisKind kind, Rng& rng)
      : spec_(validated(std::move(spec))),
        cfg_(cfg),
        basis_(cfg.grid(), kind),
        edges_(edge_shape(spec_), basis_, cfg, rng) {}
  KanConv(ConvSpec spec, const KanConfig& cfg, Rng& rng) : KanConv(std::move(spec), cfg, cfg.basis_for_conv(), rng) {}

  Tensor<T> forward(const Tensor<T>& x) override {
    detail::check_conv_input(x, spec_, "kan_conv");
    auto padded = detail::apply_padding(x, spec_);
    auto feats = edge_features(padded, basis_, cfg_.base, edges_.slope);
    Shape fs = padded.shape();
    fs[1] *= basis_.count() + 1;
    return conv(reshape(feats, fs), edges_.weight(), Tensor<T>(), spec_.strides());
  }
  std::string kind() const override { return "kan_conv"; }
  std::vector<Tensor<T>> parameters() const override { return edges_.list(); }
  const ConvSpec& spec() const { return spec_; }
  KanEdgeParams<T>& edges() { return edges_; }
  const Basis& basis() const { return basis_; }

 private:
  static ConvSpec validated(ConvSpec s) {
    s.validate();
    return s;
  }
  static Shape edge_shape(const ConvSpec& s) {
    Shape e{s.out_channels, s.in_channels};
    e.insert(e.end(), s.kernel.begin(), s.kernel.end());
    return e;
  }

  ConvSpec spec_;
  KanConfig cfg_;
  Basis basis_;
  KanEdgeParams<T> edges_;
};

enum class ActKind { relu, tanh, prelu, silu };

inline std::string to_string(ActKind a) {
  switch (a) {
    case ActKind::relu:
      return "relu";
    case ActKind::tanh:
      return "tanh";
    case ActKind::prelu:
      return "prelu";
    case ActKind::silu:
      return "silu";
  }
  return "?";
}

inline ActKind parse_act_kind(const std::string& s) {
  if (s == "relu") return ActKind::relu;
  if (s == "tanh") return ActKind::tanh;
  if (s == "prelu") return ActKind::prelu;
  if (s == "silu") return ActKind::silu;
  throw ContractError("unknown activation '" + s + "'");
}

template <typename T>
class Activation : public Module<T> {
 public:
  explicit Activation(ActKind act) : act_(act) {
    if (act == ActKind::prelu) slope_ = detail::constant_param<T>({1}, 0.25);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    switch (act_) {
      case ActKind::relu:
        return relu(x);
      case ActKind::tanh:
        return hyperkan::tanh(x);
      case ActKind::prelu:
        return prelu(x, slope_);
      case ActKind::silu:
        return silu(x);
    }
    return x;
  }
  std::string kind() const override { return "act"; }
  std::vector<Tensor<T>> parameters() const override {
    if (slope_.defined()) return {slope_};
    return {};
  }
  Tensor<T>& slope() { return slope_; }

 private:
  ActKind act_;
  Tensor<T> slope_;
};

template <typename T>
class MaxPool : public Module<T> {
 public:
  explicit MaxPool(std::vector<std::size_t> window) : window_(std::move(window)) {}
  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.rank() != window_.size() + 2) {
      throw ShapeError("maxpool: expected [batch, channels, " + std::to_string(window_.size()) +
                       " spatial dims], got " + to_string(x.shape()));
    }
    return maxpool(x, window_);
  }
  std::string kind() const override { return "maxpool"; }

 private:
  std::vector<std::size_t> window_;
};

/// Inverted dropout: Bernoulli keep-mask scaled by 1/(1-p) in training, identity in evaluation.
template <typename T>
class Dropout : public Module<T> {
 public:
  Dropout(double p, std::uint64_t seed) : p_(p), rng_(seed) {
    if (!(p >= 0.0 && p < 1.0)) throw ContractError("dropout: probability must lie in [0, 1)");
  }
  Tensor<T> forward(const Tensor<T>& x) override {
    if (!this->training_ || p_ == 0.0) return x;
    const T keep = static_cast<T>(1.0 / (1.0 - p_));
    std::vector<T> mask(x.numel());
    for (auto& m : mask) m = rng_.bernoulli(p_) ? T(0) : keep;
    return mul_constant(x, std::move(mask));
  }
  std::string kind() const override { return "dropout"; }

 private:
  double p_;
  Rng rng_;
};

/// Reshapes every sample to `sample_shape`, keeping the batch axis.
template <typename T>
class Reshape : public Module<T> {
 public:
  explicit Reshape(Shape sample_shape) : sample_(std::move(sample_shape)) {}
  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.numel() / x.dim(0) != numel(sample_)) {
      throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as [batch]" + to_string(sample_));
    }
    Shape s{x.dim(0)};
    s.insert(s.end(), sample_.begin(), sample_.end());
    return reshape(x, s);
  }
  std::string kind() const override { return "reshape"; }

 private:
  Shape sample_;
};

/// Multi-scale spectral block: parallel 3D convolutions of depth 1, 3, 5, 7
/// (spatial 1x1, depth zero-padded to keep extents), outputs concatenated on channels.
template <typename T>
class ConvBlock : public Module<T> {
 public:
  static constexpr std::size_t kDepths[4] = {1, 3, 5, 7};

  ConvBlock(std::size_t in_channels, std::size_t branch_channels, bool kan, bool batch_norm, const KanConfig& cfg,
            Rng& rng)
      : kan_(kan) {
    for (std::size_t d : kDepths) {
      ConvSpec s;
      s.in_channels = in_channels;
      s.out_channels = branch_channels;
      s.kernel = {d, 1, 1};
      s.padding = {PadMode::zero, {(d - 1) / 2, 0, 0}};
      if (kan) {
        branches_.push_back(std::make_unique<KanConv<T>>(s, cfg, rng));
      } else {
        branches_.push_back(std::make_unique<Conv<T>>(s, true, rng));
      }
    }
    if (batch_norm) bn_ = std::make_unique<BatchNorm<T>>(4 * branch_channels);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    std::vector<Tensor<T>> outs;
    for (auto& b : branches_) outs.push_back(b->forward(x));
    auto y = concat(outs, 1);
    if (bn_) y = bn_->forward(y);
    return kan_ ? y : relu(y);
  }
  std::string kind() const override { return "conv_block"; }
  std::vector<Tensor<T>> parameters() const override {
    std::vector<Tensor<T>> v;
    for (auto& b : branches_)
      for (auto& p : b->parameters()) v.push_back(p);
    if (bn_)
      for (auto& p : bn_->parameters()) v.push_back(p);
    return v;
  }
  std::vector<Tensor<T>> buffers() const override { return bn_ ? bn_->buffers() : std::vector<Tensor<T>>{}; }
  void set_training(bool on) override {
    Module<T>::set_training(on);
    for (auto& b : branches_) b->set_training(on);
    if (bn_) bn_->set_training(on);
  }

 private:
  bool kan_;
  std::vector<std::unique_ptr<Module<T>>> branches_;
  std::unique_ptr<BatchNorm<T>> bn_;
};

/// Learnable tokenizer: [N, C, h, w] -> [N, L + 1, C] semantic tokens with a
/// leading class token and additive positional embedding.
template <typename T>
class Tokenizer : public Module<T> {
 public:
  Tokenizer(std::size_t channels, std::size_t tokens, Rng& rng) : c_(channels), l_(tokens) {
    wa_ = detail::normal_param<T>({tokens, channels}, std::sqrt(2.0 / static_cast<double>(channels + tokens)), rng);
    wv_ = detail::normal_param<T>({channels, channels}, std::sqrt(1.0 / static_cast<double>(channels)), rng);
    cls_ = detail::constant_param<T>({1, 1, channels}, 0.0);
    pos_ = detail::normal_param<T>({1, tokens + 1, channels}, 0.02, rng);
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.rank() != 4 || x.dim(1) != c_) {
      throw ShapeError("tokenizer: expected [batch, " + std::to_string(c_) + ", h, w], got " + to_string(x.shape()));
    }
    const std::size_t n = x.dim(0), hw = x.dim(2) * x.dim(3);
    auto seq = permute(reshape(x, {n, c_, hw}), {0, 2, 1});  // [N, HW, C]
    auto attn = softmax(linear(seq, wa_), 1);                // [N, HW, L], normalized over positions
    auto values = linear(seq, wv_);                          // [N, HW, C]
    auto tokens = bmm(transpose(attn), values);              // [N, L, C]
    auto all = concat(std::vector<Tensor<T>>{expand_batch(cls_, n), tokens}, 1);
    return add(all, expand_batch(pos_, n));
  }
  std::string kind() const override { return "tokenizer"; }
  std::vector<Tensor<T>> parameters() const override { return {wa_, wv_, cls_, pos_}; }

 private:
  std::size_t c_, l_;
  Tensor<T> wa_, wv_, cls_, pos_;
};

/// Scaled dot-product attention with classical or KAN Q/K/V projections.
template <typename T>
class Attention : public Module<T> {
 public:
  Attention(std::size_t d_model, std::size_t heads, bool kan, const KanConfig& cfg, Rng& rng)
      : d_(d_model), heads_(heads), kan_(kan) {
    if (heads == 0 || d_model % heads != 0) {
      throw ContractError("attention: d_model " + std::to_string(d_model) + " not divisible by heads " +
                          std::to_string(heads));
    }
    for (int i = 0; i < 3; ++i) {
      if (kan) {
        proj_.push_back(std::make_unique<KanLinear<T>>(d_model, d_model, cfg, cfg.basis_for_linear(), false, rng));
      } else {
        proj_.push_back(std::make_unique<Linear<T>>(d_model, d_model, false, rng));
      }
    }
  }

  /// Returns the attended values [N, T, d] and the weights [N * heads, T, T].
  std::pair<Tensor<T>, Tensor<T>> forward_with_weights(const Tensor<T>& x) {
    if (x.rank() != 3 || x.dim(2) != d_) {
      throw ShapeError("attention: expected [batch, tokens, " + std::to_string(d_) + "], got " + to_string(x.shape()));
    }
    const std::size_t n = x.dim(0), t = x.dim(1), dk = d_ / heads_;
    auto split = [&](const Tensor<T>& y) {
      return reshape(permute(reshape(y, {n, t, heads_, dk}), {0, 2, 1, 3}), {n * heads_, t, dk});
    };
    auto q = split(proj_[0]->forward(x));
    auto k = split(proj_[1]->forward(x));
    auto v = split(proj_[2]->forward(x));
    auto scores = scale(bmm(q, transpose(k)), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dk))));
    auto weights = softmax(scores, 2);
    auto mixed = bmm(weights, v);
    auto merged = reshape(permute(reshape(mixed, {n, heads_, t, dk}), {0, 2, 1, 3}), {n, t, d_});
    return {merged, weights};
  }

  Tensor<T> forward(const Tensor<T>& x) override { return forward_with_weights(x).first; }
  std::string kind() const override { return kan_ ? "kan_attention" : "attention"; }
  std::vector<Tensor<T>> parameters() const override {
    std::vector<Tensor<T>> v;
    for (auto& p : proj_)
      for (auto& t : p->parameters()) v.push_back(t);
    return v;
  }
  Module<T>& projection(std::size_t i) { return *proj_.at(i); }

 private:
  std::size_t d_, heads_;
  bool kan_;
  std::vector<std::unique_ptr<Module<T>>> proj_;
};

/// Pre-norm transformer encoder block: x + W_o attn(LN x), then x + MLP(LN x)
/// with a 2*d hidden layer. With `kan` set, the output projection and the MLP
/// become KAN layers alongside the attention projections.
template <typename T>
class TransformerEncoder : public Module<T> {
 public:
  TransformerEncoder(std::size_t d_model, std::size_t heads, bool kan, const KanConfig& cfg, Rng& rng)
      : d_(d_model), kan_(kan), attn_(d_model, heads, kan, cfg, rng) {
    ln1_g_ = detail::constant_param<T>({d_model}, 1.0);
    ln1_b_ = detail::constant_param<T>({d_model}, 0.0);
    ln2_g_ = detail::constant_param<T>({d_model}, 1.0);
    ln2_b_ = detail::constant_param<T>({d_model}, 0.0);
    if (kan) {
      out_ = std::make_unique<KanLinear<T>>(d_model, d_model, cfg, cfg.basis_for_linear(), false, rng);
      fc1_ = std::make_unique<KanLinear<T>>(d_model, 2 * d_model, cfg, cfg.basis_for_linear(), false, rng);
      fc2_ = std::make_unique<KanLinear<T>>(2 * d_model, d_model, cfg, cfg.basis_for_linear(), false, rng);
    } else {
      out_ = std::make_unique<Linear<T>>(d_model, d_model, true, rng);
      fc1_ = std::make_unique<Linear<T>>(d_model, 2 * d_model, true, rng);
      fc2_ = std::make_unique<Linear<T>>(2 * d_model, d_model, true, rng);
    }
  }

  Tensor<T> forward(const Tensor<T>& x) override {
    auto h = add(x, out_->forward(attn_.forward(layer_norm(x, ln1_g_, ln1_b_))));
    auto m = fc1_->forward(layer_norm(h, ln2_g_, ln2_b_));
    if (!kan_) m = relu(m);
    return add(h, fc2_->forward(m));
  }
  std::string kind() const override { return "encoder"; }
  std::vector<Tensor<T>> parameters() const override {
    std::vector<Tensor<T>> v{ln1_g_, ln1_b_};
    for (auto& p : attn_.parameters()) v.push_back(p);
    for (auto& p : out_->parameters()) v.push_back(p);
    v.push_back(ln2_g_);
    v.push_back(ln2_b_);
    for (auto& p : fc1_->parameters()) v.push_back(p);
    for (auto& p : fc2_->parameters()) v.push_back(p);
    return v;
  }
  Attention<T>& attention() { return attn_; }

 private:
  std::size_t d_;
  bool kan_;
  Attention<T> attn_;
  std::unique_ptr<Module<T>> out_, fc1_, fc2_;
  Tensor<T> ln1_g_, ln1_b_, ln2_g_, ln2_b_;
};

/// Picks token `index` from [N, T, d], giving [N, d].
template <typename T>
class SelectToken : public Module<T> {
 public:
  explicit SelectToken(std::size_t index) : index_(index) {}
  Tensor<T> forward(const Tensor<T>& x) override {
    if (x.rank() != 3 || index_ >= x.dim(1)) throw ShapeError("select_token: bad input " + to_string(x.shape()));
    return reshape(slice(x, 1, index_, 1), {x.dim(0), x.dim(2)});
  }
  std::string kind() const override { return "select_token"; }

 private:
  std::size_t index_;
};

}  // namespace hyperkan
