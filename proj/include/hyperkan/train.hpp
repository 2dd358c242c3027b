#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "hyperkan/data.hpp"
#include "hyperkan/models.hpp"

namespace hyperkan {

/// Mean over the batch of -log softmax(logits)[target], via log-sum-exp.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<std::size_t>& targets) {
  if (logits.rank() != 2)
    throw ShapeError("cross_entropy: logits must be [batch, classes], got " + to_string(logits.shape()));
  const std::size_t n = logits.dim(0), c = logits.dim(1);
  if (targets.size() != n) throw ShapeError("cross_entropy: target count does not match batch");
  for (auto t : targets)
    if (t >= c)
      throw ContractError("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(c) + ")");
  const auto z = logits.values();
  std::vector<T> prob(n * c);
  T loss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const T* row = z.data() + i * c;
    T m = row[0];
    for (std::size_t j = 1; j < c; ++j) m = std::max(m, row[j]);
    T s = 0;
    for (std::size_t j = 0; j < c; ++j) s += std::exp(row[j] - m);
    const T lse = m + std::log(s);
    for (std::size_t j = 0; j < c; ++j) prob[i * c + j] = std::exp(row[j] - lse);
    loss += lse - row[targets[i]];
  }
  loss /= static_cast<T>(n);
  return make_result<T>({1}, {loss}, {logits}, [n, c, targets, prob = std::move(prob)](TensorNode<T>& node) {
    T* g = input_grad(node, 0);
    if (!g) return;
    const T scale = node.grad[0] / static_cast<T>(n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += scale * (prob[i * c + j] - (j == targets[i] ? T(1) : T(0)));
  });
}

/// Adam with bias correction (beta1 0.9, beta2 0.999, eps 1e-8).
template <typename T>
class Adam {
 public:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;

  explicit Adam(std::vector<Tensor<T>> params, std::vector<std::string> names = {})
      : params_(std::move(params)), names_(std::move(names)) {
    for (const auto& p : params_) {
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  /// One update from the gradients currently held by the parameters. A
  /// non-finite gradient anywhere aborts the whole step before any change.
  void step(double lr) {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      if (!params_[k].has_grad()) continue;
      for (auto g : params_[k].grad())
        if (!std::isfinite(static_cast<double>(g))) throw NumericError("adam: non-finite gradient in " + name(k));
    }
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      if (!params_[k].has_grad()) continue;
      auto g = params_[k].grad();
      auto w = params_[k].mutable_values();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * gi;
        v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * gi * gi;
        const double mh = m[i] / c1, vh = v[i] / c2;
        w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * mh / (std::sqrt(vh) + kEps));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::uint64_t steps() const { return t_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }

 private:
  std::string name(std::size_t k) const { return k < names_.size() ? names_[k] : "parameter " + std::to_string(k); }

  std::vector<Tensor<T>> params_;
  std::vector<std::string> names_;
  std::vector<std::vector<double>> m_, v_;
  std::uint64_t t_ = 0;
};

struct Scheduler {
  std::size_t period = 0;  // 0: constant learning rate
  double gamma = 1.0;

  static Scheduler none() { return {}; }
  static Scheduler step(std::size_t period, double gamma) {
    if (period == 0) throw ContractError("scheduler: step period must be positive");
    if (!(gamma > 0)) throw ContractError("scheduler: gamma must be positive");
    return {period, gamma};
  }
};

/// base_lr * gamma^floor(epoch / period), or base_lr without a schedule.
inline double schedule_lr(const Scheduler& s, std::size_t epoch, double base_lr) {
  if (s.period == 0) return base_lr;
  if (!(s.gamma > 0)) throw ContractError("scheduler: gamma must be positive");
  return base_lr * std::pow(s.gamma, static_cast<double>(epoch / s.period));
}

struct TrainConfig {
  double learning_rate = 0.01;
  std::size_t epochs = 200;
  std::size_t batch_size = 128;
  std::uint64_t seed = 0;
  Scheduler scheduler;
  int precision = 32;
  bool force_lr = false;

  void validate() const {
    if (!force_lr && !(learning_rate >= 0.001 && learning_rate <= 0.4)) {
      throw ContractError("learning rate " + std::to_string(learning_rate) +
                          " outside [0.001, 0.4]; pass force to override");
    }
    if (!(learning_rate >= 0)) throw ContractError("learning rate must be non-negative");
    if (batch_size == 0) throw ContractError("batch size must be positive");
    if (precision != 32 && precision != 64) throw ContractError("precision must be 32 or 64");
    if (scheduler.period > 0 && !(scheduler.gamma > 0)) throw ContractError("scheduler: gamma must be positive");
  }
};

struct EpochSummary {
  std::size_t epoch = 0;
  double learning_rate = 0;
  double mean_loss = 0;
  double train_accuracy = 0;  // percent
  bool operator==(const EpochSummary&) const = default;
};

/// Batches of a deterministic per-(seed, epoch) permutation. A trailing batch
/// of one sample is merged into the previous batch so batch norm always sees >= 2.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n, std::size_t batch, std::uint64_t seed,
                                                           std::size_t epoch) {
  Rng rng(Rng::mix(seed, 0x65706f6368ULL + epoch));
  const auto perm = rng.permutation(n);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t i = 0; i < n; i += batch) {
    out.emplace_back(perm.begin() + static_cast<long>(i), perm.begin() + static_cast<long>(std::min(n, i + batch)));
  }
  if (out.size() > 1 && out.back().size() == 1) {
    out[out.size() - 2].push_back(out.back()[0]);
    out.pop_back();
  }
  return out;
}

template <typename T>
Tensor<T> take_rows(const Tensor<T>& x, const std::vector<std::size_t>& rows) {
  const std::size_t per = x.numel() / x.dim(0);
  Shape shape = x.shape();
  shape[0] = rows.size();
  std::vector<T> v(rows.size() * per);
  const auto src = x.values();
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(src.data() + rows[i] * per, per, v.data() + i * per);
  return Tensor<T>(std::move(shape), std::move(v));
}

inline std::size_t argmax_row(std::span<const float> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

inline std::size_t argmax_row(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

/// One pass over (inputs, targets): forward, loss, backward and an Adam step per batch.
template <typename T>
EpochSummary train_epoch(Model<T>& model, const Tensor<T>& inputs, const std::vector<std::size_t>& targets,
                         Adam<T>& opt, const TrainConfig& cfg, std::size_t epoch) {
  if (inputs.dim(0) != targets.size()) throw ContractError("train_epoch: input and target counts differ");
  model.set_training(true);
  EpochSummary s;
  s.epoch = epoch;
  s.learning_rate = schedule_lr(cfg.scheduler, epoch, cfg.learning_rate);
  const auto batches = epoch_batches(targets.size(), cfg.batch_size, cfg.seed, epoch);
  double loss_sum = 0;
  std::size_t correct = 0;
  for (std::size_t bi = 0; bi < batches.size(); ++bi) {
    const auto& rows = batches[bi];
    std::vector<std::size_t> t(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) t[i] = targets[rows[i]];
    try {
      opt.zero_grad();
      auto logits = model.forward(take_rows(inputs, rows));
      auto loss = cross_entropy(logits, t);
      const double l = static_cast<double>(loss.item());
      if (!std::isfinite(l)) throw NumericError("non-finite loss");
      loss.backward();
      opt.step(s.learning_rate);
      loss_sum += l * static_cast<double>(rows.size());
      const std::size_t c = logits.dim(1);
      for (std::size_t i = 0; i < rows.size(); ++i)
        if (argmax_row(logits.values().subspan(i * c, c)) == t[i]) ++correct;
    } catch (const NumericError& e) {
      throw NumericError("epoch " + std::to_string(epoch) + " batch " + std::to_string(bi) + ": " + e.what());
    }
  }
  s.mean_loss = loss_sum / static_cast<double>(targets.size());
  s.train_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(targets.size());
  return s;
}

struct MetricsReport {
  std::vector<std::vector<std::uint64_t>> confusion;  // [true][predicted]
  double overall_accuracy = 0;                        // percent
  std::vector<double> precision, recall, f1;
  std::vector<std::uint64_t> support;
  double weighted_f1 = 0;
};

/// OA = 100 trace / total; per-class F1 = 2PR/(P+R) (0 when P+R = 0); weighted by support.
inline MetricsReport compute_metrics(const std::vector<std::vector<std::uint64_t>>& confusion) {
  const std::size_t c = confusion.size();
  for (const auto& row : confusion)
    if (row.size() != c) throw ContractError("compute_metrics: confusion matrix must be square");
  MetricsReport r;
  r.confusion = confusion;
  std::uint64_t total = 0, trace = 0;
  std::vector<std::uint64_t> col(c, 0);
  r.support.assign(c, 0);
  for (std::size_t i = 0; i < c; ++i)
    for (std::size_t j = 0; j < c; ++j) {
      total += confusion[i][j];
      r.support[i] += confusion[i][j];
      col[j] += confusion[i][j];
      if (i == j) trace += confusion[i][j];
    }
  if (total == 0) throw ContractError("compute_metrics: confusion matrix is all zero");
  r.overall_accuracy = 100.0 * static_cast<double>(trace) / static_cast<double>(total);
  double wsum = 0;
  for (std::size_t k = 0; k < c; ++k) {
    const double tp = static_cast<double>(confusion[k][k]);
    const double p = col[k] ? tp / static_cast<double>(col[k]) : 0.0;
    const double rc = r.support[k] ? tp / static_cast<double>(r.support[k]) : 0.0;
    const double f = p + rc > 0 ? 2.0 * p * rc / (p + rc) : 0.0;
    r.precision.push_back(p);
    r.recall.push_back(rc);
    r.f1.push_back(f);
    wsum += static_cast<double>(r.support[k]) * f;
  }
  r.weighted_f1 = wsum / static_cast<double>(total);
  return r;
}

/// Argmax predictions in evaluation mode without graph recording.
template <typename T>
std::vector<std::size_t> predict(Model<T>& model, const Tensor<T>& inputs, std::size_t batch = 256) {
  NoGradGuard guard;
  model.set_training(false);
  std::vector<std::size_t> out;
  const std::size_t n = inputs.dim(0);
  for (std::size_t i = 0; i < n; i += batch) {
    std::vector<std::size_t> rows;
    for (std::size_t j = i; j < std::min(n, i + batch); ++j) rows.push_back(j);
    auto logits = model.forward(take_rows(inputs, rows));
    const std::size_t c = logits.dim(1);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const auto row = logits.values().subspan(r * c, c);
      for (auto v : row)
        if (!std::isfinite(static_cast<double>(v))) throw NumericError("evaluation produced non-finite logits");
      out.push_back(argmax_row(row));
    }
  }
  model.set_training(true);
  return out;
}

inline MetricsReport metrics_from_predictions(const std::vector<std::size_t>& truth,
                                              const std::vector<std::size_t>& pred, std::size_t classes) {
  if (truth.size() != pred.size()) throw ContractError("metrics: prediction count mismatch");
  std::vector<std::vector<std::uint64_t>> cm(classes, std::vector<std::uint64_t>(classes, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= classes || pred[i] >= classes) throw ContractError("metrics: class id out of range");
    ++cm[truth[i]][pred[i]];
  }
  return compute_metrics(cm);
}

template <typename T>
MetricsReport evaluate(Model<T>& model, const Tensor<T>& inputs, const std::vector<std::size_t>& targets) {
  return metrics_from_predictions(targets, predict(model, inputs), model.spec().classes);
}

/// Scores the manifest's test pixels of a (preprocessed) cube.
template <typename T>
MetricsReport evaluate(Model<T>& model, const HsiCube& cube, const LabelGrid& labels, const SplitManifest& manifest) {
  if (cube.height != labels.height || cube.width != labels.width)
    throw ContractError("evaluate: cube/labels extents differ");
  for (auto p : manifest.test)
    if (p >= cube.pixels()) throw ContractError("evaluate: manifest index outside the cube");
  if (manifest.test.empty()) throw ContractError("evaluate: manifest has no test pixels");
  const auto inputs = gather_inputs<T>(cube, manifest.test, model.spec().input);
  return evaluate(model, inputs, gather_targets(labels, manifest.test));
}

}  // namespace hyperkan
