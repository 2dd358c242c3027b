#pragma once

#include <cmath>
#include <cstdio>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "hyperkan/nn/modules.hpp"

namespace hyperkan {

enum class Block { fe, head, attention };

inline std::string to_string(Block b) {
  switch (b) {
    case Block::fe:
      return "fe";
    case Block::head:
      return "head";
    case Block::attention:
      return "attention";
  }
  return "?";
}

inline Block parse_block(const std::string& s) {
  if (s == "fe") return Block::fe;
  if (s == "head") return Block::head;
  if (s == "attention") return Block::attention;
  throw ContractError("unknown block '" + s + "'");
}

/// Which blocks are replaced by KAN analogs.
struct SubstitutionPlan {
  bool fe = false;
  bool head = false;
  bool attention = false;

  static SubstitutionPlan vanilla() { return {}; }
  static SubstitutionPlan kan_fe() { return {true, false, false}; }
  static SubstitutionPlan kan_head() { return {false, true, false}; }
  static SubstitutionPlan kan_attention() { return {false, false, true}; }
  static SubstitutionPlan full_kan() { return {true, true, true}; }

  bool kan(Block b) const { return b == Block::fe ? fe : b == Block::head ? head : attention; }
  bool operator==(const SubstitutionPlan&) const = default;
};

inline std::string to_string(const SubstitutionPlan& p) {
  if (p.fe && p.head && p.attention) return "full-kan";
  std::string s;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!s.empty()) s += '+';
    s += name;
  };
  add(p.fe, "kan-fe");
  add(p.head, "kan-head");
  add(p.attention, "kan-attention");
  return s.empty() ? "vanilla" : s;
}

/// Accepts vanilla, kan-fe, kan-head, kan-attention, full-kan (alias kan) and '+'-joined combinations.
inline SubstitutionPlan parse_plan(const std::string& text) {
  SubstitutionPlan p;
  std::stringstream ss(text);
  std::string part;
  bool any = false;
  while (std::getline(ss, part, '+')) {
    any = true;
    if (part == "vanilla") continue;
    if (part == "kan-fe")
      p.fe = true;
    else if (part == "kan-head")
      p.head = true;
    else if (part == "kan-attention")
      p.attention = true;
    else if (part == "full-kan" || part == "kan")
      p = SubstitutionPlan::full_kan();
    else
      throw ContractError("unknown substitution plan '" + part + "'");
  }
  if (!any) throw ContractError("empty substitution plan");
  return p;
}

/// One layer of a model: owning block, type tag and ordered key=value configuration.
struct LayerSpec {
  Block block = Block::fe;
  std::string type;
  std::vector<std::pair<std::string, std::string>> config;

  LayerSpec() = default;
  LayerSpec(Block b, std::string t) : block(b), type(std::move(t)) {}

  LayerSpec& set(const std::string& key, const std::string& value) {
    for (auto& [k, v] : config) {
      if (k == key) {
        v = value;
        return *this;
      }
    }
    config.emplace_back(key, value);
    return *this;
  }
  LayerSpec& set(const std::string& key, std::size_t value) { return set(key, std::to_string(value)); }
  LayerSpec& set(const std::string& key, bool value) { return set(key, std::string(value ? "1" : "0")); }
  LayerSpec& set(const std::string& key, const char* value) { return set(key, std::string(value)); }
  LayerSpec& set(const std::string& key, const std::vector<std::size_t>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "x" : "") + std::to_string(values[i]);
    return set(key, s);
  }

  bool has(const std::string& key) const {
    for (const auto& kv : config)
      if (kv.first == key) return true;
    return false;
  }
  const std::string& get(const std::string& key) const {
    for (const auto& kv : config)
      if (kv.first == key) return kv.second;
    throw ContractError("layer '" + type + "' has no key '" + key + "'");
  }
  std::size_t get_size(const std::string& key) const { return std::stoul(get(key)); }
  bool get_bool(const std::string& key) const { return get(key) == "1"; }
  double get_double(const std::string& key) const { return std::stod(get(key)); }
  std::vector<std::size_t> get_list(const std::string& key) const {
    std::vector<std::size_t> out;
    std::stringstream ss(get(key));
    std::string part;
    while (std::getline(ss, part, 'x'))
      if (!part.empty()) out.push_back(std::stoul(part));
    return out;
  }

  bool operator==(const LayerSpec&) const = default;
};

/// Options for the plain MLP family.
struct MlpOptions {
  std::vector<std::size_t> hidden;
  bool batch_norm = false;
  bool operator==(const MlpOptions&) const = default;
};

struct BuildOptions {
  double scale = 1.0;
  KanConfig kan;
  MlpOptions mlp;
  /// Accept SSFTT patches smaller than 13 (down to the 5 the convolutions need).
  bool relax_patch = false;
};

struct ModelSpec {
  std::string arch;
  std::size_t bands = 0;
  std::size_t classes = 0;
  std::size_t patch = 1;
  double scale = 1.0;
  SubstitutionPlan plan;
  KanConfig kan;
  MlpOptions mlp;
  bool relax_patch = false;
  Shape input;  // per-sample input shape
  std::vector<LayerSpec> layers;

  bool operator==(const ModelSpec&) const = default;
};

inline const std::vector<std::string>& architecture_ids() {
  static const std::vector<std::string> ids{"mlp", "cnn1d", "cnn2d", "cnn3d_luo", "cnn3d_he", "nm3dcnn", "ssftt"};
  return ids;
}

inline bool has_attention_block(const std::string& arch) { return arch == "ssftt"; }

/// Plans that produce distinct models for an architecture.
inline std::vector<SubstitutionPlan> applicable_plans(const std::string& arch) {
  if (arch == "mlp") return {SubstitutionPlan::vanilla(), SubstitutionPlan::full_kan()};
  std::vector<SubstitutionPlan> v{SubstitutionPlan::vanilla(), SubstitutionPlan::kan_fe(),
                                  SubstitutionPlan::kan_head()};
  if (has_attention_block(arch)) v.push_back(SubstitutionPlan::kan_attention());
  v.push_back(SubstitutionPlan::full_kan());
  return v;
}

/// Canonical form: blocks the architecture lacks follow the blocks it has, so
/// an all-KAN model always reads as full-kan.
inline SubstitutionPlan normalize_plan(const std::string& arch, SubstitutionPlan p) {
  if (arch == "mlp") {
    const bool k = p.fe || p.head || p.attention;
    return {k, k, k};
  }
  if (!has_attention_block(arch)) p.attention = p.fe && p.head;
  return p;
}

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::size_t base_params(const KanConfig& cfg) { return cfg.base == BaseFn::prelu ? 1 : 0; }

inline std::size_t basis_count(const KanConfig& cfg) { return static_cast<std::size_t>(cfg.grid_size + cfg.order); }

inline std::size_t kan_linear_params(std::size_t in, std::size_t out, const KanConfig& cfg, bool bn) {
  return out * in * basis_count(cfg) + 2 * out * in + base_params(cfg) + (bn ? 2 * in : 0);
}

inline ConvSpec conv_spec_of(const LayerSpec& l) {
  ConvSpec s;
  s.in_channels = l.get_size("in");
  s.out_channels = l.get_size("out");
  s.kernel = l.get_list("kernel");
  s.stride = l.get_list("stride");
  s.padding.amount = l.get_list("pad");
  s.padding.mode = l.get("padmode") == "reflect" ? PadMode::reflect : PadMode::zero;
  return s;
}

inline LayerSpec conv_layer(Block b, bool kan, std::size_t in, std::size_t out, std::vector<std::size_t> kernel,
                            std::vector<std::size_t> stride = {}, std::vector<std::size_t> pad = {}) {
  if (stride.empty()) stride.assign(kernel.size(), 1);
  if (pad.empty()) pad.assign(kernel.size(), 0);
  LayerSpec l(b, kan ? "kan_conv" : "conv");
  l.set("in", in).set("out", out).set("kernel", kernel).set("stride", stride).set("pad", pad).set("padmode", "zero");
  if (!kan) l.set("bias", true);
  return l;
}

inline LayerSpec linear_layer(Block b, bool kan, std::size_t in, std::size_t out, bool bn = false) {
  LayerSpec l(b, kan ? "kan_linear" : "linear");
  l.set("in", in).set("out", out);
  if (kan) {
    l.set("bn", bn);
  } else {
    l.set("bias", true);
  }
  return l;
}

inline LayerSpec act_layer(Block b, const char* fn) { return LayerSpec(b, "act").set("fn", fn); }
inline LayerSpec bn_layer(Block b, std::size_t f) { return LayerSpec(b, "batchnorm").set("features", f); }
inline LayerSpec reshape_layer(Block b, const Shape& s) { return LayerSpec(b, "reshape").set("shape", s); }

}  // namespace detail

/// Output sample shape of one layer given its input sample shape.
inline Shape layer_output_shape(const LayerSpec& l, const Shape& in) {
  const std::string& t = l.type;
  if (t == "linear" || t == "kan_linear") {
    if (in.empty() || in.back() != l.get_size("in")) {
      throw ShapeError(t + ": expects last extent " + l.get("in") + ", got " + to_string(in));
    }
    if (t == "kan_linear" && l.get_bool("bn") && in.size() != 1) {
      throw ShapeError("kan_linear: input batch norm needs flat features, got " + to_string(in));
    }
    Shape out = in;
    out.back() = l.get_size("out");
    return out;
  }
  if (t == "conv" || t == "kan_conv") {
    const ConvSpec s = detail::conv_spec_of(l);
    s.validate();
    if (in.size() != s.dims() + 1 || in[0] != s.in_channels) {
      throw ShapeError(t + ": expects [" + std::to_string(s.in_channels) + ", " + std::to_string(s.dims()) +
                       " spatial dims], got " + to_string(in));
    }
    Shape out{s.out_channels};
    const auto sp = s.output_extents(std::vector<std::size_t>(in.begin() + 1, in.end()));
    out.insert(out.end(), sp.begin(), sp.end());
    return out;
  }
  if (t == "batchnorm") {
    if (in.empty() || in[0] != l.get_size("features")) {
      throw ShapeError("batchnorm: expects " + l.get("features") + " features, got " + to_string(in));
    }
    return in;
  }
  if (t == "act" || t == "dropout") return in;
  if (t == "maxpool") {
    const auto w = l.get_list("window");
    if (in.size() != w.size() + 1) throw ShapeError("maxpool: rank mismatch for input " + to_string(in));
    Shape out = in;
    for (std::size_t d = 0; d < w.size(); ++d) {
      if (w[d] == 0 || w[d] > in[d + 1]) throw ShapeError("maxpool: window larger than input " + to_string(in));
      out[d + 1] = in[d + 1] / w[d];
    }
    return out;
  }
  if (t == "reshape") {
    Shape out = l.get_list("shape");
    if (numel(out) != numel(in)) throw ShapeError("reshape: cannot view " + to_string(in) + " as " + to_string(out));
    return out;
  }
  if (t == "conv_block") {
    if (in.size() != 4 || in[0] != l.get_size("in")) {
      throw ShapeError("conv_block: expects [" + l.get("in") + ", d, h, w], got " + to_string(in));
    }
    Shape out = in;
    out[0] = 4 * l.get_size("branch");
    return out;
  }
  if (t == "tokenizer") {
    if (in.size() != 3 || in[0] != l.get_size("channels")) {
      throw ShapeError("tokenizer: expects [" + l.get("channels") + ", h, w], got " + to_string(in));
    }
    return {l.get_size("tokens") + 1, in[0]};
  }
  if (t == "encoder") {
    if (in.size() != 2 || in[1] != l.get_size("d")) {
      throw ShapeError("encoder: expects [tokens, " + l.get("d") + "], got " + to_string(in));
    }
    return in;
  }
  if (t == "select_token") {
    if (in.size() != 2 || l.get_size("index") >= in[0]) throw ShapeError("select_token: bad input " + to_string(in));
    return {in[1]};
  }
  throw ContractError("unknown layer type '" + t + "'");
}

/// Symbolic shape propagation; returns the output shape of every layer.
inline std::vector<Shape> infer_shapes(const ModelSpec& spec) {
  std::vector<Shape> shapes;
  Shape cur = spec.input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    try {
      cur = layer_output_shape(spec.layers[i], cur);
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(i) + " (" + spec.layers[i].type + "): " + e.what());
    }
    shapes.push_back(cur);
  }
  return shapes;
}

/// Closed-form trainable scalar count of one layer.
inline std::size_t layer_param_count(const LayerSpec& l, const KanConfig& cfg) {
  const std::string& t = l.type;
  const std::size_t kk = detail::basis_count(cfg);
  if (t == "linear") return l.get_size("in") * l.get_size("out") + (l.get_bool("bias") ? l.get_size("out") : 0);
  if (t == "kan_linear") return detail::kan_linear_params(l.get_size("in"), l.get_size("out"), cfg, l.get_bool("bn"));
  if (t == "conv" || t == "kan_conv") {
    const ConvSpec s = detail::conv_spec_of(l);
    const std::size_t edges = s.out_channels * s.in_channels * s.taps();
    if (t == "conv") return edges + (l.get_bool("bias") ? s.out_channels : 0);
    return edges * (kk + 2) + detail::base_params(cfg);
  }
  if (t == "batchnorm") return 2 * l.get_size("features");
  if (t == "act") return l.get("fn") == "prelu" ? 1 : 0;
  if (t == "conv_block") {
    const std::size_t in = l.get_size("in"), br = l.get_size("branch");
    std::size_t n = 0;
    for (std::size_t d : ConvBlock<float>::kDepths) {
      n += l.get_bool("kan") ? br * in * d * (kk + 2) + detail::base_params(cfg) : br * in * d + br;
    }
    return n + (l.get_bool("bn") ? 2 * 4 * br : 0);
  }
  if (t == "tokenizer") {
    const std::size_t c = l.get_size("channels"), L = l.get_size("tokens");
    return L * c + c * c + c + (L + 1) * c;
  }
  if (t == "encoder") {
    const std::size_t d = l.get_size("d");
    std::size_t n = 4 * d;
    if (l.get_bool("kan")) {
      n += 3 * detail::kan_linear_params(d, d, cfg, false);
      n += detail::kan_linear_params(d, d, cfg, false);
      n += detail::kan_linear_params(d, 2 * d, cfg, false) + detail::kan_linear_params(2 * d, d, cfg, false);
    } else {
      n += 3 * d * d + (d * d + d) + (2 * d * d + 2 * d) + (2 * d * d + d);
    }
    return n;
  }
  return 0;
}

inline std::size_t param_count(const ModelSpec& spec) {
  std::size_t n = 0;
  for (const auto& l : spec.layers) n += layer_param_count(l, spec.kan);
  return n;
}

namespace detail {

struct Builder {
  const BuildOptions& opt;
  SubstitutionPlan plan;
  std::vector<LayerSpec> layers;
  Shape shape;

  std::size_t w(double base) const {
    const double v = std::ceil(base * opt.scale - 1e-9);
    return v < 1.0 ? 1 : static_cast<std::size_t>(v);
  }
  void push(LayerSpec l) {
    try {
      shape = layer_output_shape(l, shape);
    } catch (const ShapeError& e) {
      throw ShapeError("layer " + std::to_string(layers.size()) + " (" + l.type + "): " + e.what());
    }
    layers.push_back(std::move(l));
  }
  void flatten(Block b) {
    if (shape.size() != 1) push(reshape_layer(b, {numel(shape)}));
  }
  std::size_t features() const { return numel(shape); }
};

inline void require(bool ok, const std::string& message) {
  if (!ok) throw ContractError("build_architecture: " + message);
}

inline void build_mlp(Builder& b, std::size_t bands, std::size_t classes) {
  const bool kan = b.plan.head;
  const bool bn = b.opt.mlp.batch_norm;
  std::vector<std::size_t> widths{bands};
  for (auto h : b.opt.mlp.hidden) widths.push_back(b.w(static_cast<double>(h)));
  widths.push_back(classes);
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    if (kan) {
      b.push(linear_layer(Block::head, true, widths[i], widths[i + 1], bn));
    } else {
      if (bn) b.push(bn_layer(Block::head, widths[i]));
      b.push(linear_layer(Block::head, false, widths[i], widths[i + 1]));
      if (!last) b.push(act_layer(Block::head, "relu"));
    }
  }
}

/// Classification block shared by the spatial builders: one KAN layer after batch
/// norm, or the classical head given by `hidden` (0 means a single linear layer).
inline void build_head(Builder& b, std::size_t classes, std::size_t hidden, const char* act, std::size_t kan_hidden) {
  b.flatten(Block::head);
  const std::size_t in = b.features();
  if (b.plan.head) {
    if (kan_hidden) {
      b.push(linear_layer(Block::head, true, in, kan_hidden, true));
      b.push(linear_layer(Block::head, true, kan_hidden, classes));
    } else {
      b.push(linear_layer(Block::head, true, in, classes, true));
    }
    return;
  }
  if (hidden) {
    b.push(linear_layer(Block::head, false, in, hidden));
    b.push(act_layer(Block::head, act));
    b.push(linear_layer(Block::head, false, hidden, classes));
  } else {
    b.push(linear_layer(Block::head, false, in, classes));
  }
}

inline void build_cnn1d(Builder& b, std::size_t bands, std::size_t classes) {
  const bool kan = b.plan.fe;
  const std::size_t kernel = (bands + 8) / 9;
  require(bands >= kernel + 2, "cnn1d needs bands - ceil(bands/9) + 1 >= 3 for the pooling window");
  b.push(conv_layer(Block::fe, kan, 1, b.w(20), {kernel}));
  if (!kan) b.push(act_layer(Block::fe, "tanh"));
  b.push(LayerSpec(Block::fe, "maxpool").set("window", std::vector<std::size_t>{3}));
  b.flatten(Block::fe);
  if (b.plan.head) {
    const std::size_t h = b.w(512);
    b.push(linear_layer(Block::head, true, b.features(), h, true));
    b.push(linear_layer(Block::head, true, h, h));
    b.push(linear_layer(Block::head, true, h, classes));
  } else {
    build_head(b, classes, b.w(100), "tanh", 0);
  }
}

inline void build_cnn2d(Builder& b, std::size_t bands, std::size_t classes) {
  const bool kan = b.plan.fe;
  const std::size_t c1 = b.w(3.0 * static_cast<double>(bands));
  const std::size_t c2 = b.w(9.0 * static_cast<double>(bands));
  b.push(conv_layer(Block::fe, kan, bands, c1, {3, 3}, {}, {1, 1}));
  if (!kan) b.push(act_layer(Block::fe, "relu"));
  b.push(conv_layer(Block::fe, kan, c1, c2, {3, 3}));
  if (!kan) b.push(act_layer(Block::fe, "relu"));
  build_head(b, classes, b.w(6.0 * static_cast<double>(bands)), "relu", b.w(128));
}

inline void build_luo(Builder& b, std::size_t bands, std::size_t classes) {
  const bool kan = b.plan.fe;
  const std::size_t f1 = b.w(kan ? 64 : 90), f2 = b.w(kan ? 32 : 64);
  const std::size_t depth = std::min<std::size_t>(24, bands);
  b.push(conv_layer(Block::fe, kan, 1, f1, {depth, 3, 3}, {9, 1, 1}));
  if (!kan) b.push(act_layer(Block::fe, "relu"));
  const Shape s = b.shape;  // [f1, d, h, w]
  b.push(reshape_layer(Block::fe, {1, s[0], s[1] * s[2] * s[3]}));
  b.push(conv_layer(Block::fe, kan, 1, f2, {3, 3}, {}, {1, 1}));
  if (!kan) b.push(act_layer(Block::fe, "relu"));
  build_head(b, classes, b.w(128), "relu", b.w(128));
}

inline void build_he(Builder& b, std::size_t bands, std::size_t classes, bool nm) {
  const bool kan = b.plan.fe;
  const std::size_t f = b.w(nm && kan ? 8 : 16);
  auto post = [&](std::size_t channels) {
    if (nm) b.push(bn_layer(Block::fe, channels));
    if (!kan) b.push(act_layer(Block::fe, "relu"));
  };
  b.push(conv_layer(Block::fe, kan, 1, f, {std::min<std::size_t>(11, bands), 3, 3}, {3, 1, 1}));
  post(f);
  for (std::size_t i = 0; i < 2; ++i) {
    LayerSpec blk(Block::fe, "conv_block");
    blk.set("in", b.shape[0]).set("branch", f).set("bn", nm).set("kan", kan);
    b.push(blk);
  }
  b.push(conv_layer(Block::fe, kan, 4 * f, f, {std::min<std::size_t>(2, b.shape[1]), 3, 3}));
  post(f);
  if (!nm) b.push(LayerSpec(Block::fe, "dropout").set("p", "0.5"));
  build_head(b, classes, 0, "relu", 0);
}

inline void build_ssftt(Builder& b, std::size_t bands, std::size_t classes) {
  const bool kan = b.plan.fe;
  const std::size_t c3 = b.w(8), c2 = b.w(64);
  b.push(conv_layer(Block::fe, kan, 1, c3, {7, 3, 3}));
  b.push(bn_layer(Block::fe, c3));
  if (!kan) b.push(act_layer(Block::fe, "relu"));
  const Shape s = b.shape;
  b.push(reshape_layer(Block::fe, {s[0] * s[1], s[2], s[3]}));
  b.push(conv_layer(Block::fe, kan, s[0] * s[1], c2, {3, 3}));
  b.push(bn_layer(Block::fe, c2));
  if (!kan) b.push(act_layer(Block::fe, "relu"));
  b.push(LayerSpec(Block::fe, "tokenizer").set("channels", c2).set("tokens", std::size_t{4}));
  b.push(LayerSpec(Block::attention, "encoder").set("d", c2).set("heads", std::size_t{1}).set("kan", b.plan.attention));
  b.push(LayerSpec(Block::head, "select_token").set("index", std::size_t{0}));
  build_head(b, classes, 0, "relu", 0);
}

}  // namespace detail

/// Builds the layer sequence of an architecture under a substitution plan.
inline ModelSpec build_architecture(const std::string& arch, std::size_t bands, std::size_t classes, std::size_t patch,
                                    const SubstitutionPlan& plan, const BuildOptions& opt = {}) {
  using detail::require;
  require(bands >= 1 && classes >= 1 && patch >= 1, "bands, classes and patch must be >= 1");
  require(opt.scale > 0, "scale must be positive");
  ModelSpec spec;
  spec.arch = arch;
  spec.bands = bands;
  spec.classes = classes;
  spec.patch = patch;
  spec.scale = opt.scale;
  spec.plan = normalize_plan(arch, plan);
  spec.kan = opt.kan;
  spec.relax_patch = opt.relax_patch;
  if (arch == "mlp") spec.mlp = opt.mlp;

  detail::Builder b{opt, spec.plan, {}, {}};
  if (arch == "mlp" || arch == "cnn1d") {
    require(patch == 1, arch + " works on single pixels (patch must be 1)");
    b.shape = arch == "mlp" ? Shape{bands} : Shape{1, bands};
  } else if (arch == "cnn2d") {
    require(patch >= 3 && patch % 2 == 1, "cnn2d needs an odd patch >= 3");
    b.shape = {bands, patch, patch};
  } else if (arch == "cnn3d_luo") {
    require(patch >= 3 && patch % 2 == 1, "cnn3d_luo needs an odd patch >= 3");
    b.shape = {1, bands, patch, patch};
  } else if (arch == "cnn3d_he" || arch == "nm3dcnn") {
    require(patch >= 7 && patch % 2 == 1, arch + " needs an odd patch >= 7");
    b.shape = {1, bands, patch, patch};
  } else if (arch == "ssftt") {
    require(patch % 2 == 1 && patch >= (opt.relax_patch ? 5u : 13u),
            opt.relax_patch ? "ssftt needs an odd patch >= 5"
                            : "ssftt needs an odd patch >= 13 (relax_patch lowers this to 5)");
    require(bands >= 7, "ssftt needs at least 7 bands for its 7-deep spectral kernel");
    b.shape = {1, bands, patch, patch};
  } else {
    throw ContractError("build_architecture: unknown architecture '" + arch + "'");
  }
  spec.input = b.shape;

  if (arch == "mlp")
    detail::build_mlp(b, bands, classes);
  else if (arch == "cnn1d")
    detail::build_cnn1d(b, bands, classes);
  else if (arch == "cnn2d")
    detail::build_cnn2d(b, bands, classes);
  else if (arch == "cnn3d_luo")
    detail::build_luo(b, bands, classes);
  else if (arch == "cnn3d_he")
    detail::build_he(b, bands, classes, false);
  else if (arch == "nm3dcnn")
    detail::build_he(b, bands, classes, true);
  else
    detail::build_ssftt(b, bands, classes);

  spec.layers = std::move(b.layers);
  return spec;
}

inline BuildOptions build_options_of(const ModelSpec& spec) {
  BuildOptions o;
  o.scale = spec.scale;
  o.kan = spec.kan;
  o.mlp = spec.mlp;
  o.relax_patch = spec.relax_patch;
  return o;
}

/// Re-targets a built spec to another plan. Blocks the plan leaves classical
/// come out identical; a block whose input width depends on a replaced block
/// is re-derived with the new width.
inline ModelSpec substitute(const ModelSpec& spec, const SubstitutionPlan& plan) {
  return build_architecture(spec.arch, spec.bands, spec.classes, spec.patch, plan, build_options_of(spec));
}

// ---- text form ----

inline std::string to_text(const ModelSpec& s) {
  std::ostringstream os;
  os << "model arch=" << s.arch << " bands=" << s.bands << " classes=" << s.classes << " patch=" << s.patch
     << " scale=" << detail::fmt_double(s.scale) << " plan=" << to_string(s.plan) << " hidden=";
  for (std::size_t i = 0; i < s.mlp.hidden.size(); ++i) os << (i ? "x" : "") << s.mlp.hidden[i];
  os << " mlp_bn=" << (s.mlp.batch_norm ? 1 : 0) << " relax_patch=" << (s.relax_patch ? 1 : 0) << "\n";
  const KanConfig& k = s.kan;
  os << "kan grid=" << k.grid_size << " order=" << k.order << " lo=" << detail::fmt_double(k.lo)
     << " hi=" << detail::fmt_double(k.hi) << " eps=" << detail::fmt_double(k.grid_eps)
     << " basis=" << (k.basis ? to_string(*k.basis) : std::string("auto")) << " base=" << to_string(k.base)
     << " noise=" << detail::fmt_double(k.scale_noise) << " sbase=" << detail::fmt_double(k.scale_base)
     << " sspline=" << detail::fmt_double(k.scale_spline) << "\n";
  os << "input shape=";
  for (std::size_t i = 0; i < s.input.size(); ++i) os << (i ? "x" : "") << s.input[i];
  os << "\n";
  for (const auto& l : s.layers) {
    os << "layer " << to_string(l.block) << " " << l.type;
    for (const auto& [key, value] : l.config) os << " " << key << "=" << value;
    os << "\n";
  }
  return os.str();
}

namespace detail {

inline std::vector<std::size_t> parse_dims(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, 'x'))
    if (!part.empty()) out.push_back(std::stoul(part));
  return out;
}

inline std::vector<std::pair<std::string, std::string>> parse_pairs(std::istringstream& in) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::string tok;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw ContractError("model text: expected key=value, got '" + tok + "'");
    kv.emplace_back(tok.substr(0, eq), tok.substr(eq + 1));
  }
  return kv;
}

}  // namespace detail

inline ModelSpec from_text(const std::string& text) {
  ModelSpec s;
  std::istringstream lines(text);
  std::string line;
  bool seen_model = false;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    std::istringstream in(line);
    std::string kind;
    in >> kind;
    if (kind == "layer") {
      std::string block, type;
      in >> block >> type;
      LayerSpec l(parse_block(block), type);
      l.config = detail::parse_pairs(in);
      s.layers.push_back(std::move(l));
      continue;
    }
    const auto kv = detail::parse_pairs(in);
    for (const auto& [key, v] : kv) {
      if (kind == "model") {
        seen_model = true;
        if (key == "arch")
          s.arch = v;
        else if (key == "bands")
          s.bands = std::stoul(v);
        else if (key == "classes")
          s.classes = std::stoul(v);
        else if (key == "patch")
          s.patch = std::stoul(v);
        else if (key == "scale")
          s.scale = std::stod(v);
        else if (key == "plan")
          s.plan = parse_plan(v);
        else if (key == "hidden")
          s.mlp.hidden = detail::parse_dims(v);
        else if (key == "mlp_bn")
          s.mlp.batch_norm = v == "1";
        else if (key == "relax_patch")
          s.relax_patch = v == "1";
        else
          throw ContractError("model text: unknown model key '" + key + "'");
      } else if (kind == "kan") {
        KanConfig& k = s.kan;
        if (key == "grid")
          k.grid_size = std::stoi(v);
        else if (key == "order")
          k.order = std::stoi(v);
        else if (key == "lo")
          k.lo = std::stod(v);
        else if (key == "hi")
          k.hi = std::stod(v);
        else if (key == "eps")
          k.grid_eps = std::stod(v);
        else if (key == "basis")
          k.basis = v == "auto" ? std::nullopt : std::optional<BasisKind>(parse_basis_kind(v));
        else if (key == "base")
          k.base = parse_base_fn(v);
        else if (key == "noise")
          k.scale_noise = std::stod(v);
        else if (key == "sbase")
          k.scale_base = std::stod(v);
        else if (key == "sspline")
          k.scale_spline = std::stod(v);
        else
          throw ContractError("model text: unknown kan key '" + key + "'");
      } else if (kind == "input") {
        if (key != "shape") throw ContractError("model text: unknown input key '" + key + "'");
        s.input = detail::parse_dims(v);
      } else {
        throw ContractError("model text: unknown record '" + kind + "'");
      }
    }
  }
  if (!seen_model) throw ContractError("model text: missing model record");
  return s;
}

// ---- instantiation ----

/// A built network: modules in spec order plus the spec they came from.
template <typename T>
class Model {
 public:
  Model(ModelSpec spec, std::vector<std::unique_ptr<Module<T>>> modules)
      : spec_(std::move(spec)), modules_(std::move(modules)) {}

  /// Input [batch, input...] to logits [batch, classes].
  Tensor<T> forward(const Tensor<T>& x) {
    Shape expect{x.rank() ? x.dim(0) : 0};
    expect.insert(expect.end(), spec_.input.begin(), spec_.input.end());
    if (x.shape() != expect) {
      throw ShapeError("model input: expected [batch]" + to_string(spec_.input) + ", got " + to_string(x.shape()));
    }
    Tensor<T> h = x;
    for (std::size_t i = 0; i < modules_.size(); ++i) {
      try {
        h = modules_[i]->forward(h);
      } catch (const ShapeError& e) {
        throw ShapeError("layer " + std::to_string(i) + " (" + spec_.layers[i].type + "): " + e.what());
      }
    }
    return h;
  }

  std::vector<Tensor<T>> parameters() const {
    std::vector<Tensor<T>> v;
    for (const auto& m : modules_)
      for (auto& p : m->parameters()) v.push_back(p);
    return v;
  }
  std::vector<Tensor<T>> buffers() const {
    std::vector<Tensor<T>> v;
    for (const auto& m : modules_)
      for (auto& p : m->buffers()) v.push_back(p);
    return v;
  }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : parameters()) n += p.numel();
    return n;
  }
  void set_training(bool on) {
    for (auto& m : modules_) m->set_training(on);
  }
  const ModelSpec& spec() const { return spec_; }
  std::size_t size() const { return modules_.size(); }
  Module<T>& layer(std::size_t i) { return *modules_.at(i); }

 private:
  ModelSpec spec_;
  std::vector<std::unique_ptr<Module<T>>> modules_;
};

template <typename T>
std::unique_ptr<Module<T>> make_module(const LayerSpec& l, const KanConfig& cfg, Rng& rng, std::uint64_t seed) {
  const std::string& t = l.type;
  if (t == "linear") return std::make_unique<Linear<T>>(l.get_size("in"), l.get_size("out"), l.get_bool("bias"), rng);
  if (t == "kan_linear") {
    return std::make_unique<KanLinear<T>>(l.get_size("in"), l.get_size("out"), cfg, l.get_bool("bn"), rng);
  }
  if (t == "conv") return std::make_unique<Conv<T>>(detail::conv_spec_of(l), l.get_bool("bias"), rng);
  if (t == "kan_conv") return std::make_unique<KanConv<T>>(detail::conv_spec_of(l), cfg, rng);
  if (t == "batchnorm") return std::make_unique<BatchNorm<T>>(l.get_size("features"));
  if (t == "act") return std::make_unique<Activation<T>>(parse_act_kind(l.get("fn")));
  if (t == "maxpool") return std::make_unique<MaxPool<T>>(l.get_list("window"));
  if (t == "dropout") return std::make_unique<Dropout<T>>(l.get_double("p"), seed);
  if (t == "reshape") return std::make_unique<Reshape<T>>(l.get_list("shape"));
  if (t == "conv_block") {
    return std::make_unique<ConvBlock<T>>(l.get_size("in"), l.get_size("branch"), l.get_bool("kan"), l.get_bool("bn"),
                                          cfg, rng);
  }
  if (t == "tokenizer") return std::make_unique<Tokenizer<T>>(l.get_size("channels"), l.get_size("tokens"), rng);
  if (t == "encoder") {
    return std::make_unique<TransformerEncoder<T>>(l.get_size("d"), l.get_size("heads"), l.get_bool("kan"), cfg, rng);
  }
  if (t == "select_token") return std::make_unique<SelectToken<T>>(l.get_size("index"));
  throw ContractError("unknown layer type '" + t + "'");
}

/// Creates freshly initialized parameters for `spec`; identical seeds give identical models.
template <typename T>
Model<T> instantiate(const ModelSpec& spec, std::uint64_t seed) {
  infer_shapes(spec);
  Rng rng(Rng::mix(seed, 0x6d6f64656cULL));
  std::vector<std::unique_ptr<Module<T>>> modules;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    modules.push_back(make_module<T>(spec.layers[i], spec.kan, rng, Rng::mix(seed, 1000 + i)));
  }
  return Model<T>(spec, std::move(modules));
}

}  // namespace hyperkan
