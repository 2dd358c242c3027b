#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "hyperkan/data.hpp"
#include "hyperkan/models.hpp"
#include "hyperkan/train.hpp"

namespace hyperkan {

namespace fs = std::filesystem;

struct ConfigKey {
  const char* name;
  const char* fallback;
  const char* help;
};

/// Closed schema of run configuration keys with their defaults.
inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys{
      {"arch", "mlp", "architecture id: mlp, cnn1d, cnn2d, cnn3d_luo, cnn3d_he, nm3dcnn, ssftt"},
      {"plan", "vanilla", "substitution plan: vanilla, kan-fe, kan-head, kan-attention, full-kan"},
      {"grid_size", "2", "KAN grid size G"},
      {"spline_order", "3", "KAN spline order k"},
      {"basis", "auto", "KAN basis: auto (spline for linear, rbf for conv), spline, rbf"},
      {"base_fn", "prelu", "KAN base function: prelu, identity, silu"},
      {"scale", "1", "width multiplier"},
      {"hidden", "", "MLP hidden widths, e.g. 16x16"},
      {"mlp_bn", "0", "batch norm before MLP layers"},
      {"relax_patch", "0", "allow SSFTT patches below 13"},
      {"dataset", "synthetic", "dataset name used in reports"},
      {"cube", "", "HSC1 cube path (empty: synthetic scene)"},
      {"labels", "", "HSL1 label path"},
      {"synth_height", "32", "synthetic scene height"},
      {"synth_width", "32", "synthetic scene width"},
      {"synth_bands", "16", "synthetic band count"},
      {"synth_classes", "4", "synthetic class count"},
      {"synth_noise", "0.05", "synthetic noise sigma"},
      {"synth_seed", "1", "synthetic scene seed"},
      {"fraction", "0.2", "per-class train fraction"},
      {"split", "", "split manifest to reuse instead of sampling one"},
      {"patch", "1", "spatial patch size S (odd)"},
      {"pca", "0", "PCA components (0: off)"},
      {"lr", "0.01", "learning rate"},
      {"force_lr", "0", "allow a learning rate outside [0.001, 0.4]"},
      {"epochs", "200", "training epochs"},
      {"batch_size", "128", "mini-batch size"},
      {"seed", "1", "seed for the split, initialization and batch order"},
      {"sched_period", "0", "step schedule period in epochs (0: constant)"},
      {"sched_gamma", "0.5", "step schedule decay factor"},
      {"precision", "32", "floating-point precision: 32 or 64"},
      {"out", "runs/run", "output directory"},
  };
  return keys;
}

/// Validated key = value configuration; unknown keys are rejected.
class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_schema()) values_[k.name] = k.fallback;
  }

  static bool known(const std::string& key) {
    for (const auto& k : config_schema())
      if (key == k.name) return true;
    return false;
  }

  RunConfig& set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ContractError("unknown config key '" + key + "'");
    values_[key] = value;
    return *this;
  }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ContractError("unknown config key '" + key + "'");
    return it->second;
  }

  std::size_t get_size(const std::string& key) const {
    const std::string& v = get(key);
    try {
      std::size_t pos = 0;
      if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
      const auto n = std::stoull(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing");
      return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
      throw ContractError("config key '" + key + "' needs a non-negative integer, got '" + v + "'");
    }
  }

  double get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
      std::size_t pos = 0;
      const double d = std::stod(v, &pos);
      if (pos != v.size()) throw std::invalid_argument("trailing");
      return d;
    } catch (const std::exception&) {
      throw ContractError("config key '" + key + "' needs a number, got '" + v + "'");
    }
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no" || v.empty()) return false;
    throw ContractError("config key '" + key + "' needs a boolean, got '" + v + "'");
  }

  /// Parses `key = value` lines; '#' starts a comment. Relative paths are
  /// resolved against `base_dir` when given.
  static RunConfig parse(const std::string& text, const std::string& base_dir = "") {
    RunConfig c;
    c.merge(text, base_dir);
    return c;
  }

  void merge(const std::string& text, const std::string& base_dir = "") {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string();
        const auto b = s.find_last_not_of(" \t\r");
        return s.substr(a, b - a + 1);
      };
      if (trim(line).empty()) continue;
      if (eq == std::string::npos)
        throw ContractError("config line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      std::string value = trim(line.substr(eq + 1));
      if (!known(key)) throw ContractError("config line " + std::to_string(lineno) + ": unknown key '" + key + "'");
      if (!base_dir.empty() && !value.empty() && (key == "cube" || key == "labels" || key == "split") &&
          fs::path(value).is_relative()) {
        value = (fs::path(base_dir) / value).lexically_normal().string();
      }
      values_[key] = value;
    }
  }

  static RunConfig load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config " + path);
    std::string text((std::istreambuf_iterator<char>(f)), {});
    return parse(text, fs::path(path).parent_path().string());
  }

  /// Every key in schema order.
  std::string text() const {
    std::ostringstream os;
    for (const auto& k : config_schema()) os << k.name << " = " << values_.at(k.name) << "\n";
    return os.str();
  }

  KanConfig kan() const {
    KanConfig k;
    k.grid_size = static_cast<int>(get_size("grid_size"));
    k.order = static_cast<int>(get_size("spline_order"));
    const auto& b = get("basis");
    if (b != "auto") k.basis = parse_basis_kind(b);
    k.base = parse_base_fn(get("base_fn"));
    return k;
  }

  BuildOptions build() const {
    BuildOptions o;
    o.scale = get_double("scale");
    o.kan = kan();
    o.relax_patch = get_bool("relax_patch");
    o.mlp.batch_norm = get_bool("mlp_bn");
    std::string h = get("hidden");
    std::replace(h.begin(), h.end(), ',', 'x');
    std::stringstream ss(h);
    std::string part;
    while (std::getline(ss, part, 'x')) {
      if (part.empty()) continue;
      try {
        o.mlp.hidden.push_back(std::stoul(part));
      } catch (const std::exception&) {
        throw ContractError("config key 'hidden' needs widths like 16x16, got '" + get("hidden") + "'");
      }
    }
    return o;
  }

  TrainConfig train() const {
    TrainConfig t;
    t.learning_rate = get_double("lr");
    t.force_lr = get_bool("force_lr");
    t.epochs = get_size("epochs");
    t.batch_size = get_size("batch_size");
    t.seed = get_size("seed");
    const std::size_t period = get_size("sched_period");
    const double gamma = get_double("sched_gamma");
    if (period > 0) {
      if (!(gamma > 0)) throw ContractError("scheduler: gamma must be positive");
      t.scheduler = Scheduler::step(period, gamma);
    }
    t.precision = static_cast<int>(get_size("precision"));
    return t;
  }

  SyntheticSpec synth() const {
    SyntheticSpec s;
    s.height = get_size("synth_height");
    s.width = get_size("synth_width");
    s.bands = get_size("synth_bands");
    s.classes = get_size("synth_classes");
    s.noise_sigma = get_double("synth_noise");
    s.seed = get_size("synth_seed");
    return s;
  }

  /// Checks every key's type and range; throws ContractError on the first problem.
  void validate() const {
    const auto& a = get("arch");
    if (std::find(architecture_ids().begin(), architecture_ids().end(), a) == architecture_ids().end()) {
      throw ContractError("unknown architecture '" + a + "'");
    }
    parse_plan(get("plan"));
    kan().grid();
    const auto b = build();
    if (!(b.scale > 0)) throw ContractError("scale must be positive");
    train().validate();
    if (get("cube").empty() != get("labels").empty()) throw ContractError("cube and labels must be given together");
    if (get("cube").empty()) {
      const auto s = synth();
      if (s.height == 0 || s.width == 0 || s.bands == 0) throw ContractError("synthetic extents must be >= 1");
      if (s.classes < 2) throw ContractError("synthetic scenes need at least 2 classes");
      if (!(s.noise_sigma >= 0)) throw ContractError("synthetic noise must be >= 0");
    }
    const auto f = Fraction::parse(get("fraction"));
    if (f.num == 0 || f.num >= f.den) throw ContractError("fraction must lie in (0, 1)");
    const auto p = get_size("patch");
    if (p == 0 || p % 2 == 0) throw ContractError("patch must be odd");
    get_size("pca");
    get_bool("mlp_bn");
    get_bool("relax_patch");
  }

 private:
  std::map<std::string, std::string> values_;
};

// ---- data preparation ----

/// Runs `fn`, prefixing numeric failures with the stage name.
template <typename F>
auto staged(const char* stage, F&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const NumericError& e) {
    throw NumericError(std::string(stage) + ": " + e.what());
  } catch (const DomainError& e) {
    throw NumericError(std::string(stage) + ": " + e.what());
  }
}

struct PreparedData {
  HsiCube cube;  // standardized (and PCA-reduced when requested)
  LabelGrid labels;
  SplitManifest split;
  BandStats stats;
  std::optional<PcaModel> pca;
  std::size_t classes = 0;
};

/// Load or generate, split, standardize on train pixels, then optional PCA fitted on train pixels.
inline PreparedData prepare_data(const RunConfig& cfg) {
  PreparedData d;
  HsiCube raw;
  if (cfg.get("cube").empty()) {
    auto scene = gen_synthetic(cfg.synth());
    raw = std::move(scene.cube);
    d.labels = std::move(scene.labels);
  } else {
    raw = load_cube(cfg.get("cube"));
    d.labels = load_labels(cfg.get("labels"));
    if (raw.height != d.labels.height || raw.width != d.labels.width) {
      throw ContractError("cube " + std::to_string(raw.height) + "x" + std::to_string(raw.width) + " and labels " +
                          std::to_string(d.labels.height) + "x" + std::to_string(d.labels.width) + " differ in extent");
    }
  }
  if (cfg.get("split").empty()) {
    d.split = stratified_split(d.labels, Fraction::parse(cfg.get("fraction")), cfg.get_size("seed"));
  } else {
    d.split = load_manifest(cfg.get("split"));
  }
  for (auto list : {&d.split.train, &d.split.test})
    for (auto p : *list)
      if (p >= d.labels.labels.size() || d.labels.labels[p] == 0) {
        throw ContractError("split manifest index " + std::to_string(p) + " is outside the scene or void");
      }
  if (d.split.train.empty() || d.split.test.empty()) throw ContractError("split needs non-empty train and test sets");
  d.classes = d.labels.class_count();
  staged("standardize", [&] {
    d.stats = standardize_fit(raw, d.split.train);
    d.cube = standardize_apply(raw, d.stats);
  });
  const std::size_t k = cfg.get_size("pca");
  if (k > 0) {
    staged("pca", [&] {
      d.pca = pca_fit(d.cube, d.split.train, k);
      d.cube = pca_transform(d.cube, *d.pca);
    });
  }
  return d;
}

// ---- persistence ----

template <typename T>
void save_parameters(const std::string& path, const std::vector<Tensor<T>>& tensors) {
  std::string out = "HKP1";
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (auto e : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(e));
    for (auto v : t.values()) {
      const double d = static_cast<double>(v);
      std::uint64_t bits;
      std::memcpy(&bits, &d, 8);
      detail::put_u32(out, static_cast<std::uint32_t>(bits & 0xffffffffu));
      detail::put_u32(out, static_cast<std::uint32_t>(bits >> 32));
    }
  }
  detail::write_file(path, out);
}

template <typename T>
void load_parameters(const std::string& path, std::vector<Tensor<T>> tensors) {
  const std::string bytes = detail::read_file(path);
  if (bytes.size() < 8 || bytes.compare(0, 4, "HKP1") != 0) throw LoadError(LoadFailure::bad_magic, path);
  std::size_t at = 4;
  auto need = [&](std::size_t n) {
    if (at + n > bytes.size()) throw LoadError(LoadFailure::truncated, path);
  };
  const std::size_t count = detail::get_u32(bytes, at);
  at += 4;
  if (count != tensors.size()) throw LoadError(LoadFailure::extent_mismatch, path);
  for (auto& t : tensors) {
    need(4);
    const std::size_t rank = detail::get_u32(bytes, at);
    at += 4;
    Shape s(rank);
    need(4 * rank);
    for (auto& e : s) {
      e = detail::get_u32(bytes, at);
      at += 4;
    }
    if (s != t.shape()) throw LoadError(LoadFailure::extent_mismatch, path);
    need(8 * t.numel());
    auto v = t.mutable_values();
    for (auto& x : v) {
      const std::uint64_t bits =
          detail::get_u32(bytes, at) | (static_cast<std::uint64_t>(detail::get_u32(bytes, at + 4)) << 32);
      at += 8;
      double d;
      std::memcpy(&d, &bits, 8);
      x = static_cast<T>(d);
    }
  }
}

// ---- metrics rows ----

struct MetricsRow {
  std::string arch, plan;
  int grid = 2;
  std::string dataset;
  std::uint64_t seed = 0;
  double oa = 0, weighted_f1 = 0;
  std::size_t params = 0, epochs = 0;
  double wall_seconds = 0;
};

inline const char* metrics_header() { return "arch,plan,G,dataset,seed,OA,weighted_F1,params,epochs,wall_seconds"; }

inline std::string format_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%s,%d,%s,%llu,%.6f,%.6f,%zu,%zu,%.3f", r.arch.c_str(), r.plan.c_str(), r.grid,
                r.dataset.c_str(), static_cast<unsigned long long>(r.seed), r.oa, r.weighted_f1, r.params, r.epochs,
                r.wall_seconds);
  return buf;
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) out.push_back(f);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline MetricsRow parse_row(const std::string& line) {
  const auto f = split_csv(line);
  if (f.size() != 10) throw IoError("metrics row needs 10 fields: " + line);
  MetricsRow r;
  try {
    r.arch = f[0];
    r.plan = f[1];
    r.grid = std::stoi(f[2]);
    r.dataset = f[3];
    r.seed = std::stoull(f[4]);
    r.oa = std::stod(f[5]);
    r.weighted_f1 = std::stod(f[6]);
    r.params = std::stoul(f[7]);
    r.epochs = std::stoul(f[8]);
    r.wall_seconds = std::stod(f[9]);
  } catch (const std::exception&) {
    throw IoError("malformed metrics row: " + line);
  }
  return r;
}

/// The row without its wall-clock column, for reproducibility comparisons.
inline std::string row_without_timing(const std::string& row) {
  const auto cut = row.rfind(',');
  return cut == std::string::npos ? row : row.substr(0, cut);
}

// ---- training runs ----

struct RunResult {
  ModelSpec spec;
  MetricsReport metrics;
  MetricsRow row;
  std::vector<EpochSummary> epochs;
  std::string run_dir;
};

struct RunHooks {
  std::function<void(const EpochSummary&)> on_epoch;
};

namespace detail {

inline nlohmann::json metrics_json(const MetricsReport& m) {
  return {{"OA", m.overall_accuracy},
          {"weighted_F1", m.weighted_f1},
          {"precision", m.precision},
          {"recall", m.recall},
          {"f1", m.f1},
          {"support", m.support},
          {"confusion", m.confusion}};
}

template <typename T>
RunResult run_typed(const RunConfig& cfg, const PreparedData& data, const ModelSpec& spec, const std::string& out_dir,
                    const RunHooks& hooks) {
  const auto start = std::chrono::steady_clock::now();
  const TrainConfig tc = cfg.train();
  auto model = instantiate<T>(spec, tc.seed);
  const auto inputs = gather_inputs<T>(data.cube, data.split.train, spec.input);
  const auto targets = gather_targets(data.labels, data.split.train);
  Adam<T> opt(model.parameters());
  std::ofstream log;
  if (!out_dir.empty()) {
    log.open(fs::path(out_dir) / "run_log.jsonl", std::ios::trunc);
    if (!log) throw IoError("cannot write run log in " + out_dir);
    log << nlohmann::json{{"event", "start"},
                          {"arch", spec.arch},
                          {"plan", to_string(spec.plan)},
                          {"params", param_count(spec)},
                          {"train", data.split.train.size()},
                          {"test", data.split.test.size()},
                          {"bands", data.cube.bands},
                          {"classes", data.classes}}
               .dump()
        << "\n";
  }
  RunResult res;
  res.spec = spec;
  for (std::size_t e = 0; e < tc.epochs; ++e) {
    auto s = staged("train", [&] { return train_epoch(model, inputs, targets, opt, tc, e); });
    res.epochs.push_back(s);
    if (log.is_open()) {
      log << nlohmann::json{{"event", "epoch"},
                            {"epoch", s.epoch},
                            {"lr", s.learning_rate},
                            {"loss", s.mean_loss},
                            {"train_accuracy", s.train_accuracy}}
                 .dump()
          << "\n";
    }
    if (hooks.on_epoch) hooks.on_epoch(s);
  }
  res.metrics = staged("evaluate", [&] { return evaluate(model, data.cube, data.labels, data.split); });
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  res.row = {spec.arch,
             to_string(spec.plan),
             spec.kan.grid_size,
             cfg.get("dataset"),
             tc.seed,
             res.metrics.overall_accuracy,
             res.metrics.weighted_f1,
             param_count(spec),
             tc.epochs,
             wall};
  if (!out_dir.empty()) {
    auto m = metrics_json(res.metrics);
    m["event"] = "metrics";
    m["wall_seconds"] = wall;
    log << m.dump() << "\n";
    auto tensors = model.parameters();
    for (auto& b : model.buffers()) tensors.push_back(b);
    save_parameters((fs::path(out_dir) / "params.bin").string(), tensors);
    std::ofstream csv(fs::path(out_dir) / "metrics.csv", std::ios::trunc);
    csv << metrics_header() << "\n" << format_row(res.row) << "\n";
    if (!csv) throw IoError("cannot write metrics.csv in " + out_dir);
  }
  return res;
}

inline void write_text(const fs::path& path, const std::string& text) { write_file(path.string(), text); }

}  // namespace detail

inline ModelSpec build_from_config(const RunConfig& cfg, const PreparedData& data) {
  return build_architecture(cfg.get("arch"), data.cube.bands, data.classes, cfg.get_size("patch"),
                            parse_plan(cfg.get("plan")), cfg.build());
}

/// split -> standardize -> optional PCA -> build -> train -> evaluate. With a
/// non-empty `out` config value the run directory receives the config
/// snapshot, split manifest, model text, parameters, run log and metrics row.
inline RunResult run_train(const RunConfig& cfg, bool write_outputs = true, const RunHooks& hooks = {}) {
  cfg.validate();
  const PreparedData data = prepare_data(cfg);
  const ModelSpec spec = build_from_config(cfg, data);
  std::string out;
  if (write_outputs) {
    out = cfg.get("out");
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) throw IoError("cannot create output directory " + out);
    RunConfig snap = cfg;
    if (!cfg.get("cube").empty()) {
      snap.set("cube", fs::absolute(cfg.get("cube")).string());
      snap.set("labels", fs::absolute(cfg.get("labels")).string());
    }
    snap.set("split", "split.txt");
    detail::write_text(fs::path(out) / "config.txt", snap.text());
    save_manifest(data.split, (fs::path(out) / "split.txt").string());
    detail::write_text(fs::path(out) / "model.txt", to_text(spec));
  }
  RunResult r = cfg.train().precision == 64 ? detail::run_typed<double>(cfg, data, spec, out, hooks)
                                            : detail::run_typed<float>(cfg, data, spec, out, hooks);
  r.run_dir = out;
  return r;
}

/// Re-scores a run directory's stored parameters on its test split.
inline MetricsReport run_eval(const std::string& run_dir) {
  const auto cfg = RunConfig::load((fs::path(run_dir) / "config.txt").string());
  const PreparedData data = prepare_data(cfg);
  std::ifstream mf(fs::path(run_dir) / "model.txt");
  if (!mf) throw IoError("cannot open model.txt in " + run_dir);
  const ModelSpec spec = from_text(std::string(std::istreambuf_iterator<char>(mf), {}));
  auto go = [&](auto tag) {
    using T = decltype(tag);
    auto model = instantiate<T>(spec, 0);
    auto tensors = model.parameters();
    for (auto& b : model.buffers()) tensors.push_back(b);
    load_parameters((fs::path(run_dir) / "params.bin").string(), tensors);
    return evaluate(model, data.cube, data.labels, data.split);
  };
  return cfg.train().precision == 64 ? go(double{}) : go(float{});
}

// ---- sweeps ----

struct SweepDataset {
  std::string name;
  std::string cube, labels;  // empty: synthetic
  std::uint64_t synth_seed = 1;
};

struct SweepSpec {
  std::vector<int> grids{2};
  std::vector<std::size_t> hidden_layers{0};
  std::vector<std::size_t> widths{16};
  std::vector<bool> batch_norm{false};
  std::vector<std::string> families{"mlp", "kan"};
  std::size_t repeats = 1;
  std::vector<SweepDataset> datasets;
  std::size_t jobs = 1;

  void validate() const {
    if (grids.empty() || hidden_layers.empty() || widths.empty() || batch_norm.empty() || families.empty() ||
        datasets.empty()) {
      throw ContractError("sweep: every axis needs at least one value");
    }
    if (repeats == 0) throw ContractError("sweep: repeats must be >= 1");
    for (const auto& f : families)
      if (f != "mlp" && f != "kan") throw ContractError("sweep: unknown model family '" + f + "'");
    for (int g : grids)
      if (g < 1) throw ContractError("sweep: grid sizes must be >= 1");
  }
};

struct SweepCell {
  std::string family;
  std::size_t layers = 0, width = 0;
  bool bn = false;
  int grid = 0;  // KAN only
  std::string label() const {
    std::string s = family == "kan" ? "KAN (in, " : "MLP (in, ";
    for (std::size_t i = 0; i < layers; ++i) s += std::to_string(width) + ", ";
    s += "out)";
    if (family == "kan") s += " G" + std::to_string(grid);
    if (bn) s += " BN";
    return s;
  }
  std::string match_key() const {
    return std::to_string(layers) + "/" + std::to_string(layers ? width : 0) + "/" + (bn ? "1" : "0");
  }
};

/// Distinct model configurations: widths collapse when there is no hidden
/// layer and the grid axis applies to KAN only. KAN rows precede their MLP
/// row, largest grid first.
inline std::vector<SweepCell> sweep_cells(const SweepSpec& s) {
  std::vector<SweepCell> cells;
  std::vector<int> grids = s.grids;
  std::sort(grids.begin(), grids.end(), std::greater<>());
  grids.erase(std::unique(grids.begin(), grids.end()), grids.end());
  for (auto layers : s.hidden_layers)
    for (std::size_t wi = 0; wi < (layers ? s.widths.size() : 1); ++wi)
      for (bool bn : s.batch_norm) {
        const std::size_t width = layers ? s.widths[wi] : 0;
        if (std::find(s.families.begin(), s.families.end(), "kan") != s.families.end()) {
          for (int g : grids) cells.push_back({"kan", layers, width, bn, g});
        }
        if (std::find(s.families.begin(), s.families.end(), "mlp") != s.families.end()) {
          cells.push_back({"mlp", layers, width, bn, 0});
        }
      }
  return cells;
}

struct SweepResult {
  SweepCell cell;
  std::string dataset;
  std::size_t repeat = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricsRow row;
};

/// Long-form results of the successful runs.
inline std::string sweep_csv(const std::vector<SweepResult>& results) {
  std::ostringstream os;
  os << "dataset,model,family,hidden_layers,width,bn,G,repeat,seed,OA,weighted_F1,params,wall_seconds\n";
  for (const auto& r : results) {
    if (!r.ok) continue;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%.6f,%.6f,%zu,%.3f", r.row.oa, r.row.weighted_f1, r.row.params, r.row.wall_seconds);
    os << r.dataset << ",\"" << r.cell.label() << "\"," << r.cell.family << "," << r.cell.layers << "," << r.cell.width
       << "," << (r.cell.bn ? 1 : 0) << "," << r.cell.grid << "," << r.repeat << "," << r.seed << "," << buf << "\n";
  }
  return os.str();
}

/// One line per failed run with its error message.
inline std::string sweep_failures_csv(const std::vector<SweepResult>& results) {
  std::ostringstream os;
  os << "dataset,model,repeat,seed,error\n";
  for (const auto& r : results) {
    if (r.ok) continue;
    std::string err = r.error;
    std::replace(err.begin(), err.end(), '"', '\'');
    std::replace(err.begin(), err.end(), '\n', ' ');
    os << r.dataset << ",\"" << r.cell.label() << "\"," << r.repeat << "," << r.seed << ",\"" << err << "\"\n";
  }
  return os.str();
}

namespace detail {

inline std::string fixed(double v, int places) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", places, v);
  return buf;
}

/// Markdown pivot: rows in first-seen order, one column per dataset, then the
/// row average and, for rows with a baseline, average minus baseline average.
struct PivotRow {
  std::string label;
  std::map<std::string, std::vector<double>> values;  // dataset -> samples
  std::optional<std::size_t> baseline;                // index of the matched baseline row
};

inline double mean_of(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline std::string render_pivot(const std::vector<PivotRow>& rows, const std::vector<std::string>& datasets, int places,
                                const char* gain_header) {
  std::ostringstream os;
  os << "| Model |";
  for (const auto& d : datasets) os << " " << d << " |";
  os << " Average | " << gain_header << " |\n|---|";
  for (std::size_t i = 0; i < datasets.size() + 2; ++i) os << "---|";
  os << "\n";
  std::vector<std::optional<double>> avgs(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    double s = 0;
    std::size_t n = 0;
    for (const auto& d : datasets) {
      auto it = rows[i].values.find(d);
      if (it != rows[i].values.end() && !it->second.empty()) {
        s += mean_of(it->second);
        ++n;
      }
    }
    if (n) avgs[i] = s / static_cast<double>(n);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    os << "| " << rows[i].label << " |";
    for (const auto& d : datasets) {
      auto it = rows[i].values.find(d);
      os << " " << (it != rows[i].values.end() && !it->second.empty() ? fixed(mean_of(it->second), places) : "n/a")
         << " |";
    }
    os << " " << (avgs[i] ? fixed(*avgs[i], places) : "n/a") << " |";
    const auto b = rows[i].baseline;
    if (b && avgs[i] && avgs[*b]) {
      os << " " << fixed(*avgs[i] - *avgs[*b], places) << " |";
    } else {
      os << " - |";
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace detail

inline std::string sweep_markdown(const std::vector<SweepResult>& results, const std::vector<SweepCell>& cells,
                                  const std::vector<std::string>& datasets) {
  std::ostringstream os;
  for (int metric = 0; metric < 2; ++metric) {
    std::vector<detail::PivotRow> rows;
    std::map<std::string, std::size_t> mlp_row;
    for (const auto& c : cells) {
      rows.push_back({c.label(), {}, std::nullopt});
      if (c.family == "mlp") mlp_row[c.match_key()] = rows.size() - 1;
    }
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (cells[i].family == "kan") {
        auto it = mlp_row.find(cells[i].match_key());
        if (it != mlp_row.end()) rows[i].baseline = it->second;
      }
    for (const auto& r : results) {
      if (!r.ok) continue;
      for (std::size_t i = 0; i < cells.size(); ++i)
        if (cells[i].label() == r.cell.label())
          rows[i].values[r.dataset].push_back(metric ? r.row.weighted_f1 : r.row.oa);
    }
    os << (metric ? "\n### Weighted F1\n\n" : "### Overall accuracy (%)\n\n");
    os << detail::render_pivot(rows, datasets, metric ? 4 : 2, "Average gain");
  }
  return os.str();
}

/// Runs every (dataset, cell, repeat); failures are recorded and the sweep continues.
inline std::vector<SweepResult> run_sweep(const SweepSpec& spec, const RunConfig& base,
                                          const std::function<void(const SweepResult&)>& on_done = {}) {
  spec.validate();
  const auto cells = sweep_cells(spec);
  std::vector<SweepResult> jobs;
  for (const auto& d : spec.datasets)
    for (const auto& c : cells)
      for (std::size_t r = 0; r < spec.repeats; ++r) {
        SweepResult j;
        j.cell = c;
        j.dataset = d.name;
        j.repeat = r;
        j.seed = base.get_size("seed") + r;
        jobs.push_back(j);
      }
  auto dataset_of = [&](const std::string& name) -> const SweepDataset& {
    for (const auto& d : spec.datasets)
      if (d.name == name) return d;
    throw ContractError("sweep: unknown dataset " + name);
  };
  std::atomic<std::size_t> next{0};
  std::mutex report_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      SweepResult& j = jobs[i];
      try {
        RunConfig cfg = base;
        const auto& d = dataset_of(j.dataset);
        cfg.set("arch", "mlp").set("patch", "1").set("dataset", d.name);
        cfg.set("cube", d.cube).set("labels", d.labels).set("synth_seed", std::to_string(d.synth_seed));
        cfg.set("plan", j.cell.family == "kan" ? "full-kan" : "vanilla");
        std::string hidden;
        for (std::size_t l = 0; l < j.cell.layers; ++l) hidden += (l ? "x" : "") + std::to_string(j.cell.width);
        cfg.set("hidden", hidden).set("mlp_bn", j.cell.bn ? "1" : "0");
        if (j.cell.family == "kan") cfg.set("grid_size", std::to_string(j.cell.grid));
        cfg.set("seed", std::to_string(j.seed));
        j.row = run_train(cfg, false).row;
        if (j.cell.family == "mlp") j.row.grid = 0;
        j.ok = true;
      } catch (const std::exception& e) {
        j.ok = false;
        j.error = e.what();
      }
      if (on_done) {
        std::lock_guard<std::mutex> lock(report_mutex);
        on_done(j);
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(spec.jobs, jobs.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  return jobs;
}

// ---- reports ----

struct PaperReference {
  const char* arch;
  const char* label;
  double oa_vanilla, oa_kan, f1_vanilla, f1_kan;
};

/// Seven-dataset averages from the paper's full-scale tables; display only.
inline const std::vector<PaperReference>& paper_reference() {
  static const std::vector<PaperReference> refs{
      {"cnn1d", "1DCNN", 91.42, 94.33, 0.9133, 0.9428},         {"cnn2d", "2DCNN", 92.61, 95.05, 0.9253, 0.9495},
      {"cnn3d_luo", "3DCNN Luo", 92.50, 95.50, 0.9244, 0.9545}, {"cnn3d_he", "3DCNN He", 92.02, 97.08, 0.9199, 0.9706},
      {"nm3dcnn", "NM3DCNN", 94.63, 97.20, 0.9460, 0.9719},     {"ssftt", "SSFTT", 98.37, 99.20, 0.9836, 0.9919},
  };
  return refs;
}

inline std::string arch_label(const std::string& arch) {
  if (arch == "mlp") return "MLP";
  for (const auto& r : paper_reference())
    if (arch == r.arch) return r.label;
  return arch;
}

struct ReportOutput {
  std::string markdown;
  std::string csv;
  std::vector<std::string> warnings;
  std::size_t runs = 0;
};

/// Merges the metrics rows of run directories into OA and weighted-F1 tables
/// with one row per (architecture, plan) and KAN-minus-vanilla gains.
inline ReportOutput build_report(const std::vector<std::string>& run_dirs, bool paper_ref) {
  ReportOutput out;
  std::vector<MetricsRow> rows;
  for (const auto& dir : run_dirs) {
    try {
      std::ifstream f(fs::path(dir) / "metrics.csv");
      if (!f) throw IoError("no metrics.csv");
      std::string header, line;
      std::getline(f, header);
      if (header != metrics_header()) throw IoError("unexpected metrics header");
      std::size_t n = 0;
      while (std::getline(f, line)) {
        if (line.empty()) continue;
        rows.push_back(parse_row(line));
        ++n;
      }
      if (n == 0) throw IoError("no metrics rows");
      ++out.runs;
    } catch (const std::exception& e) {
      out.warnings.push_back("skipping " + dir + ": " + e.what());
    }
  }
  if (rows.empty()) throw ContractError("report: no valid run directories");

  std::vector<std::string> datasets;
  for (const auto& r : rows)
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
  std::vector<std::pair<std::string, std::string>> keys;  // (arch, plan)
  for (const auto& id : architecture_ids()) {
    std::vector<std::string> plans;
    for (const auto& r : rows)
      if (r.arch == id && std::find(plans.begin(), plans.end(), r.plan) == plans.end()) plans.push_back(r.plan);
    std::stable_sort(plans.begin(), plans.end(),
                     [](const std::string& a, const std::string& b) { return (a == "vanilla") > (b == "vanilla"); });
    for (const auto& p : plans) keys.emplace_back(id, p);
  }

  std::ostringstream md, csv;
  csv << "arch,plan,dataset,runs,OA_mean,weighted_F1_mean\n";
  for (int metric = 0; metric < 2; ++metric) {
    std::vector<detail::PivotRow> pivot;
    std::map<std::string, std::size_t> vanilla_row;
    for (const auto& [arch, plan] : keys) {
      detail::PivotRow pr;
      pr.label = arch_label(arch) + (plan == "vanilla" ? "" : " " + plan);
      for (const auto& r : rows)
        if (r.arch == arch && r.plan == plan) pr.values[r.dataset].push_back(metric ? r.weighted_f1 : r.oa);
      if (plan == "vanilla") vanilla_row[arch] = pivot.size();
      pivot.push_back(std::move(pr));
    }
    for (std::size_t i = 0; i < keys.size(); ++i)
      if (keys[i].second != "vanilla") {
        auto it = vanilla_row.find(keys[i].first);
        if (it != vanilla_row.end()) pivot[i].baseline = it->second;
      }
    md << (metric ? "\n## Weighted F1\n\n" : "## Overall accuracy (%)\n\n");
    md << detail::render_pivot(pivot, datasets, metric ? 4 : 2, "Gain");
  }
  for (const auto& [arch, plan] : keys)
    for (const auto& d : datasets) {
      std::vector<double> oa, f1;
      for (const auto& r : rows)
        if (r.arch == arch && r.plan == plan && r.dataset == d) {
          oa.push_back(r.oa);
          f1.push_back(r.weighted_f1);
        }
      if (oa.empty()) continue;
      csv << arch << "," << plan << "," << d << "," << oa.size() << "," << detail::fixed(detail::mean_of(oa), 6) << ","
          << detail::fixed(detail::mean_of(f1), 6) << "\n";
    }
  if (paper_ref) {
    md << "\n## Paper reference values (not reproduced here)\n\n"
       << "Seven-dataset averages reported for full-scale training on the public scenes. Shown for orientation only; "
          "they are not produced or checked by this tool.\n\n"
       << "| Model | Avg OA | Avg weighted F1 |\n|---|---|---|\n";
    for (const auto& r : paper_reference()) {
      md << "| " << r.label << " | " << detail::fixed(r.oa_vanilla, 2) << " | " << detail::fixed(r.f1_vanilla, 4)
         << " |\n";
      md << "| " << r.label << " KAN | " << detail::fixed(r.oa_kan, 2) << " | " << detail::fixed(r.f1_kan, 4) << " |\n";
    }
    md << "\n*Not reproduced here: reference figures only.*\n";
  }
  out.markdown = md.str();
  out.csv = csv.str();
  return out;
}

}  // namespace hyperkan
