#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hyperkan/error.hpp"
#include "hyperkan/ops.hpp"
#include "hyperkan/rng.hpp"

namespace hyperkan {

/// Reflectance cube stored band-sequential: value(b, r, c) = data[b*H*W + r*W + c].
struct HsiCube {
  std::size_t height = 0, width = 0, bands = 0;
  std::vector<float> data;

  HsiCube() = default;
  HsiCube(std::size_t h, std::size_t w, std::size_t b) : height(h), width(w), bands(b), data(h * w * b, 0.0f) {
    if (h == 0 || w == 0 || b == 0) throw ContractError("HsiCube: extents must be >= 1");
  }
  std::size_t pixels() const { return height * width; }
  float& at(std::size_t b, std::size_t r, std::size_t c) { return data[(b * height + r) * width + c]; }
  float at(std::size_t b, std::size_t r, std::size_t c) const { return data[(b * height + r) * width + c]; }
  /// Spectrum of the pixel at linear (row-major) index p.
  std::vector<float> spectrum(std::size_t p) const {
    std::vector<float> s(bands);
    for (std::size_t b = 0; b < bands; ++b) s[b] = data[b * pixels() + p];
    return s;
  }
  bool operator==(const HsiCube&) const = default;
};

/// Class map; 0 marks void (unlabeled) pixels.
struct LabelGrid {
  std::size_t height = 0, width = 0;
  std::vector<std::uint16_t> labels;

  LabelGrid() = default;
  LabelGrid(std::size_t h, std::size_t w) : height(h), width(w), labels(h * w, 0) {
    if (h == 0 || w == 0) throw ContractError("LabelGrid: extents must be >= 1");
  }
  std::uint16_t& at(std::size_t r, std::size_t c) { return labels[r * width + c]; }
  std::uint16_t at(std::size_t r, std::size_t c) const { return labels[r * width + c]; }
  std::size_t class_count() const {
    std::uint16_t m = 0;
    for (auto l : labels) m = std::max(m, l);
    return m;
  }
  bool operator==(const LabelGrid&) const = default;
};

enum class LoadFailure { open_failed, bad_magic, truncated, non_finite, extent_mismatch };

inline const char* to_string(LoadFailure f) {
  switch (f) {
    case LoadFailure::open_failed:
      return "cannot open";
    case LoadFailure::bad_magic:
      return "bad magic";
    case LoadFailure::truncated:
      return "truncated";
    case LoadFailure::non_finite:
      return "non-finite value";
    case LoadFailure::extent_mismatch:
      return "extent mismatch";
  }
  return "?";
}

class LoadError : public IoError {
 public:
  LoadError(LoadFailure failure, const std::string& path)
      : IoError(std::string(to_string(failure)) + ": " + path), failure_(failure) {}
  LoadFailure failure() const { return failure_; }

 private:
  LoadFailure failure_;
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint32_t get_u32(const std::string& in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw LoadError(LoadFailure::open_failed, path);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw IoError("write failed: " + path);
}

}  // namespace detail

inline std::string encode_cube(const HsiCube& cube) {
  std::string out = "HSC1";
  detail::put_u32(out, static_cast<std::uint32_t>(cube.height));
  detail::put_u32(out, static_cast<std::uint32_t>(cube.width));
  detail::put_u32(out, static_cast<std::uint32_t>(cube.bands));
  for (float v : cube.data) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    detail::put_u32(out, bits);
  }
  return out;
}

inline HsiCube decode_cube(const std::string& bytes, const std::string& path = "<memory>") {
  if (bytes.size() < 4 || bytes.compare(0, 4, "HSC1") != 0) throw LoadError(LoadFailure::bad_magic, path);
  if (bytes.size() < 16) throw LoadError(LoadFailure::truncated, path);
  const std::size_t h = detail::get_u32(bytes, 4), w = detail::get_u32(bytes, 8), b = detail::get_u32(bytes, 12);
  if (h == 0 || w == 0 || b == 0) throw LoadError(LoadFailure::extent_mismatch, path);
  const std::size_t n = h * w * b;
  if (bytes.size() < 16 + 4 * n) throw LoadError(LoadFailure::truncated, path);
  HsiCube cube(h, w, b);
  for (std::size_t i = 0; i < n; ++i) {
    const std::uint32_t bits = detail::get_u32(bytes, 16 + 4 * i);
    std::memcpy(&cube.data[i], &bits, 4);
    if (!std::isfinite(cube.data[i])) throw LoadError(LoadFailure::non_finite, path);
  }
  return cube;
}

inline void save_cube(const HsiCube& cube, const std::string& path) { detail::write_file(path, encode_cube(cube)); }
inline HsiCube load_cube(const std::string& path) { return decode_cube(detail::read_file(path), path); }

inline std::string encode_labels(const LabelGrid& g) {
  std::string out = "HSL1";
  detail::put_u32(out, static_cast<std::uint32_t>(g.height));
  detail::put_u32(out, static_cast<std::uint32_t>(g.width));
  for (auto l : g.labels) {
    out.push_back(static_cast<char>(l & 0xff));
    out.push_back(static_cast<char>(l >> 8));
  }
  return out;
}

inline LabelGrid decode_labels(const std::string& bytes, const std::string& path = "<memory>") {
  if (bytes.size() < 4 || bytes.compare(0, 4, "HSL1") != 0) throw LoadError(LoadFailure::bad_magic, path);
  if (bytes.size() < 12) throw LoadError(LoadFailure::truncated, path);
  const std::size_t h = detail::get_u32(bytes, 4), w = detail::get_u32(bytes, 8);
  if (h == 0 || w == 0) throw LoadError(LoadFailure::extent_mismatch, path);
  if (bytes.size() < 12 + 2 * h * w) throw LoadError(LoadFailure::truncated, path);
  LabelGrid g(h, w);
  for (std::size_t i = 0; i < h * w; ++i) {
    g.labels[i] = static_cast<std::uint16_t>(static_cast<unsigned char>(bytes[12 + 2 * i]) |
                                             (static_cast<unsigned char>(bytes[13 + 2 * i]) << 8));
  }
  return g;
}

inline void save_labels(const LabelGrid& g, const std::string& path) { detail::write_file(path, encode_labels(g)); }
inline LabelGrid load_labels(const std::string& path) { return decode_labels(detail::read_file(path), path); }

// ---- synthetic scenes ----

struct SpectralBump {
  double amplitude, center, width;
};

struct SyntheticScene {
  HsiCube cube;
  LabelGrid labels;
  std::vector<std::vector<SpectralBump>> bumps;  // per class
  std::vector<std::vector<float>> signatures;    // per class, length B
  std::vector<std::pair<std::size_t, std::size_t>> sites;
};

struct SyntheticSpec {
  std::size_t height = 32, width = 32, bands = 16, classes = 4;
  double noise_sigma = 0.05;
  double void_fraction = 0.05;
  std::uint64_t seed = 1;
};

/// Class signatures are sums of two Gaussian bumps over the band index, redrawn
/// until every pair is at least 0.5 apart (Euclidean); regions are the Voronoi
/// cells of one random site per class; a random 5% of pixels become void.
inline SyntheticScene gen_synthetic(const SyntheticSpec& s) {
  if (s.height == 0 || s.width == 0 || s.bands == 0) throw ContractError("gen_synthetic: extents must be >= 1");
  if (s.classes < 2 || s.classes > 65535) throw ContractError("gen_synthetic: need 2..65535 classes");
  if (s.classes > s.height * s.width) throw ContractError("gen_synthetic: more classes than pixels");
  if (!(s.noise_sigma >= 0)) throw ContractError("gen_synthetic: noise sigma must be >= 0");
  Rng rng(Rng::mix(s.seed, 0x73796e7468ULL));
  SyntheticScene out;
  const double nb = static_cast<double>(s.bands);

  auto draw = [&](std::vector<SpectralBump>& bumps, std::vector<float>& sig) {
    bumps.clear();
    for (int j = 0; j < 2; ++j) {
      bumps.push_back({rng.uniform(0.5, 1.5), rng.uniform(0.0, nb - 1.0), rng.uniform(0.1, 0.3) * nb});
    }
    sig.assign(s.bands, 0.0f);
    for (std::size_t b = 0; b < s.bands; ++b) {
      double v = 0;
      for (const auto& bp : bumps) {
        const double d = (static_cast<double>(b) - bp.center) / bp.width;
        v += bp.amplitude * std::exp(-0.5 * d * d);
      }
      sig[b] = static_cast<float>(v);
    }
  };
  auto far_enough = [&](const std::vector<float>& sig) {
    for (const auto& other : out.signatures) {
      double d2 = 0;
      for (std::size_t b = 0; b < s.bands; ++b) d2 += (sig[b] - other[b]) * static_cast<double>(sig[b] - other[b]);
      if (std::sqrt(d2) < 0.5) return false;
    }
    return true;
  };
  for (std::size_t c = 0; c < s.classes; ++c) {
    std::vector<SpectralBump> bumps;
    std::vector<float> sig;
    int attempts = 0;
    do {
      if (++attempts > 10000) throw ContractError("gen_synthetic: cannot separate class signatures; add bands");
      draw(bumps, sig);
    } while (!far_enough(sig));
    out.bumps.push_back(bumps);
    out.signatures.push_back(sig);
  }

  std::vector<bool> taken(s.height * s.width, false);
  for (std::size_t c = 0; c < s.classes; ++c) {
    std::size_t r, col;
    do {
      r = static_cast<std::size_t>(rng.below(s.height));
      col = static_cast<std::size_t>(rng.below(s.width));
    } while (taken[r * s.width + col]);
    taken[r * s.width + col] = true;
    out.sites.emplace_back(r, col);
  }

  out.cube = HsiCube(s.height, s.width, s.bands);
  out.labels = LabelGrid(s.height, s.width);
  for (std::size_t r = 0; r < s.height; ++r)
    for (std::size_t c = 0; c < s.width; ++c) {
      std::size_t best = 0;
      double best_d = 0;
      for (std::size_t k = 0; k < s.classes; ++k) {
        const double dr = static_cast<double>(r) - static_cast<double>(out.sites[k].first);
        const double dc = static_cast<double>(c) - static_cast<double>(out.sites[k].second);
        const double d = dr * dr + dc * dc;
        if (k == 0 || d < best_d) {
          best = k;
          best_d = d;
        }
      }
      for (std::size_t b = 0; b < s.bands; ++b) {
        const double noise = s.noise_sigma > 0 ? rng.normal(0.0, s.noise_sigma) : 0.0;
        out.cube.at(b, r, c) = static_cast<float>(out.signatures[best][b] + noise);
      }
      out.labels.at(r, c) = rng.bernoulli(s.void_fraction) ? 0 : static_cast<std::uint16_t>(best + 1);
    }
  return out;
}

inline std::string synthetic_provenance(const SyntheticSpec& s, const SyntheticScene& scene) {
  std::ostringstream os;
  os.precision(17);
  os << "seed=" << s.seed << "\nheight=" << s.height << "\nwidth=" << s.width << "\nbands=" << s.bands
     << "\nclasses=" << s.classes << "\nnoise_sigma=" << s.noise_sigma << "\nvoid_fraction=" << s.void_fraction << "\n";
  for (std::size_t c = 0; c < scene.bumps.size(); ++c) {
    os << "class " << c + 1 << " site=" << scene.sites[c].first << "," << scene.sites[c].second;
    for (const auto& b : scene.bumps[c]) os << " bump=" << b.amplitude << "," << b.center << "," << b.width;
    os << "\n";
  }
  return os.str();
}

// ---- splits ----

/// Exact decimal fraction num/den parsed from text such as "0.2".
struct Fraction {
  std::uint64_t num = 0, den = 1;

  static Fraction parse(const std::string& text) {
    Fraction f;
    bool dot = false, digits = false;
    for (char ch : text) {
      if (ch == '.' && !dot) {
        dot = true;
      } else if (ch >= '0' && ch <= '9') {
        digits = true;
        if (f.den > 100000000000000ULL) break;
        f.num = f.num * 10 + static_cast<std::uint64_t>(ch - '0');
        if (dot) f.den *= 10;
      } else {
        throw ContractError("fraction: cannot parse '" + text + "'");
      }
    }
    if (!digits) throw ContractError("fraction: cannot parse '" + text + "'");
    return f;
  }
  static Fraction from_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.12f", v);
    std::string s(buf);
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.push_back('0');
    return parse(s);
  }
  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  std::string text() const {
    std::string digits = std::to_string(num);
    std::size_t places = 0;
    for (std::uint64_t d = den; d > 1; d /= 10) ++places;
    if (places == 0) return digits;
    if (digits.size() <= places) digits.insert(0, places - digits.size() + 1, '0');
    digits.insert(digits.size() - places, ".");
    return digits;
  }
  /// round-half-up(fraction * n), computed exactly.
  std::size_t share(std::size_t n) const { return static_cast<std::size_t>((2 * num * n + den) / (2 * den)); }
};

struct SplitManifest {
  std::uint64_t seed = 0;
  Fraction fraction;
  std::vector<std::size_t> train, test;
  std::vector<std::string> warnings;  // not persisted

  bool operator==(const SplitManifest& o) const {
    return seed == o.seed && fraction.num * o.fraction.den == o.fraction.num * fraction.den && train == o.train &&
           test == o.test;
  }
};

/// Per-class sampling without replacement: round-half-up(fraction * n) train
/// pixels per class, at least one for any non-empty class; void excluded.
inline SplitManifest stratified_split(const LabelGrid& labels, const Fraction& fraction, std::uint64_t seed) {
  if (fraction.num == 0 || fraction.num >= fraction.den) throw ContractError("split: fraction must lie in (0, 1)");
  std::map<std::uint16_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.labels.size(); ++i)
    if (labels.labels[i] != 0) by_class[labels.labels[i]].push_back(i);
  SplitManifest m;
  m.seed = seed;
  m.fraction = fraction;
  for (auto& [cls, idx] : by_class) {
    std::size_t k = fraction.share(idx.size());
    if (k == 0) k = 1;
    if (idx.size() == 1)
      m.warnings.push_back("class " + std::to_string(cls) + " has a single pixel; assigned to train");
    Rng rng(Rng::mix(seed, cls));
    rng.shuffle(idx);
    m.train.insert(m.train.end(), idx.begin(), idx.begin() + static_cast<long>(k));
    m.test.insert(m.test.end(), idx.begin() + static_cast<long>(k), idx.end());
  }
  std::sort(m.train.begin(), m.train.end());
  std::sort(m.test.begin(), m.test.end());
  return m;
}

inline SplitManifest stratified_split(const LabelGrid& labels, double fraction, std::uint64_t seed) {
  return stratified_split(labels, Fraction::from_double(fraction), seed);
}

inline std::string encode_manifest(const SplitManifest& m) {
  std::ostringstream os;
  os << "seed=" << m.seed << " fraction=" << m.fraction.text() << "\ntrain:\n";
  for (auto i : m.train) os << i << "\n";
  os << "test:\n";
  for (auto i : m.test) os << i << "\n";
  return os.str();
}

inline SplitManifest decode_manifest(const std::string& text, const std::string& path = "<memory>") {
  std::istringstream in(text);
  std::string line;
  SplitManifest m;
  if (!std::getline(in, line)) throw IoError("split manifest: empty file " + path);
  {
    std::istringstream head(line);
    std::string tok;
    bool seed = false, frac = false;
    while (head >> tok) {
      if (tok.rfind("seed=", 0) == 0) {
        m.seed = std::stoull(tok.substr(5));
        seed = true;
      } else if (tok.rfind("fraction=", 0) == 0) {
        m.fraction = Fraction::parse(tok.substr(9));
        frac = true;
      }
    }
    if (!seed || !frac) throw IoError("split manifest: malformed header in " + path);
  }
  std::vector<std::size_t>* target = nullptr;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == "train:") {
      target = &m.train;
    } else if (line == "test:") {
      target = &m.test;
    } else {
      if (!target) throw IoError("split manifest: index before section in " + path);
      try {
        target->push_back(std::stoull(line));
      } catch (const std::exception&) {
        throw IoError("split manifest: bad index '" + line + "' in " + path);
      }
    }
  }
  return m;
}

inline void save_manifest(const SplitManifest& m, const std::string& path) {
  detail::write_file(path, encode_manifest(m));
}
inline SplitManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open " + path);
  return decode_manifest(std::string(std::istreambuf_iterator<char>(f), {}), path);
}

// ---- preprocessing ----

struct BandStats {
  std::vector<double> mean, stddev;
};

/// Per-band mean and population standard deviation over the given pixels (floored at 1e-8).
inline BandStats standardize_fit(const HsiCube& cube, const std::vector<std::size_t>& pixels) {
  if (pixels.empty()) throw ContractError("standardize_fit: empty pixel set");
  BandStats st{std::vector<double>(cube.bands), std::vector<double>(cube.bands)};
  const double n = static_cast<double>(pixels.size());
  for (std::size_t b = 0; b < cube.bands; ++b) {
    const float* band = cube.data.data() + b * cube.pixels();
    double s = 0;
    for (auto p : pixels) s += band[p];
    const double m = s / n;
    double v = 0;
    for (auto p : pixels) v += (band[p] - m) * (band[p] - m);
    st.mean[b] = m;
    st.stddev[b] = std::max(std::sqrt(v / n), 1e-8);
  }
  return st;
}

inline HsiCube standardize_apply(const HsiCube& cube, const BandStats& st) {
  if (st.mean.size() != cube.bands) throw ContractError("standardize_apply: band count mismatch");
  HsiCube out = cube;
  for (std::size_t b = 0; b < cube.bands; ++b) {
    float* band = out.data.data() + b * cube.pixels();
    for (std::size_t p = 0; p < cube.pixels(); ++p) band[p] = static_cast<float>((band[p] - st.mean[b]) / st.stddev[b]);
  }
  return out;
}

struct PcaModel {
  std::vector<double> mean;         // B
  std::vector<double> components;   // B x K row-major; column j is eigenvector j
  std::vector<double> eigenvalues;  // K, non-increasing
  std::size_t bands = 0, k = 0;

  double component(std::size_t band, std::size_t j) const { return components[band * k + j]; }
};

/// Symmetric eigendecomposition by cyclic Jacobi rotations. Returns eigenvalues
/// (unsorted) and eigenvectors as columns of a row-major n x n matrix.
inline void jacobi_eigen(std::vector<double> a, std::size_t n, std::vector<double>& values,
                         std::vector<double>& vectors, double tol = 1e-10, int max_sweeps = 100) {
  vectors.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) vectors[i * n + i] = 1.0;
  auto off = [&] {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += a[i * n + j] * a[i * n + j];
    return std::sqrt(s);
  };
  for (int sweep = 0; sweep < max_sweeps && off() >= tol; ++sweep) {
    for (std::size_t p = 0; p + 1 < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (apq == 0.0) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vectors[k * n + p], vkq = vectors[k * n + q];
          vectors[k * n + p] = c * vkp - s * vkq;
          vectors[k * n + q] = s * vkp + c * vkq;
        }
      }
  }
  values.resize(n);
  for (std::size_t i = 0; i < n; ++i) values[i] = a[i * n + i];
}

/// Train-pixel covariance (n - 1 divisor) of a cube.
inline std::vector<double> train_covariance(const HsiCube& cube, const std::vector<std::size_t>& pixels,
                                            std::vector<double>& mean) {
  const std::size_t B = cube.bands;
  const double n = static_cast<double>(pixels.size());
  mean.assign(B, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0;
    for (auto p : pixels) s += cube.data[b * cube.pixels() + p];
    mean[b] = s / n;
  }
  std::vector<double> cov(B * B, 0.0);
  for (std::size_t i = 0; i < B; ++i)
    for (std::size_t j = i; j < B; ++j) {
      double s = 0;
      for (auto p : pixels) {
        s += (cube.data[i * cube.pixels() + p] - mean[i]) * (cube.data[j * cube.pixels() + p] - mean[j]);
      }
      cov[i * B + j] = cov[j * B + i] = s / (n - 1.0);
    }
  return cov;
}

inline PcaModel pca_fit(const HsiCube& cube, const std::vector<std::size_t>& pixels, std::size_t k) {
  if (k == 0 || k > cube.bands) throw ContractError("pca_fit: need 1 <= K <= bands");
  if (pixels.size() < 2) throw ContractError("pca_fit: need at least 2 training pixels");
  PcaModel m;
  m.bands = cube.bands;
  m.k = k;
  const auto cov = train_covariance(cube, pixels, m.mean);
  std::vector<double> values, vectors;
  jacobi_eigen(cov, cube.bands, values, vectors);
  std::vector<std::size_t> order(cube.bands);
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  m.components.assign(cube.bands * k, 0.0);
  for (std::size_t j = 0; j < k; ++j) {
    const std::size_t src = order[j];
    std::size_t arg = 0;
    for (std::size_t b = 1; b < cube.bands; ++b)
      if (std::abs(vectors[b * cube.bands + src]) > std::abs(vectors[arg * cube.bands + src])) arg = b;
    const double sign = vectors[arg * cube.bands + src] < 0 ? -1.0 : 1.0;
    for (std::size_t b = 0; b < cube.bands; ++b) m.components[b * k + j] = sign * vectors[b * cube.bands + src];
    m.eigenvalues.push_back(std::max(values[src], 0.0));
  }
  return m;
}

inline HsiCube pca_transform(const HsiCube& cube, const PcaModel& m) {
  if (cube.bands != m.bands) throw ContractError("pca_transform: band count mismatch");
  HsiCube out(cube.height, cube.width, m.k);
  const std::size_t P = cube.pixels();
  std::vector<double> x(cube.bands);
  for (std::size_t p = 0; p < P; ++p) {
    for (std::size_t b = 0; b < cube.bands; ++b) x[b] = cube.data[b * P + p] - m.mean[b];
    for (std::size_t j = 0; j < m.k; ++j) {
      double s = 0;
      for (std::size_t b = 0; b < cube.bands; ++b) s += x[b] * m.component(b, j);
      out.data[j * P + p] = static_cast<float>(s);
    }
  }
  return out;
}

inline HsiCube pca_inverse_transform(const HsiCube& reduced, const PcaModel& m) {
  if (reduced.bands != m.k) throw ContractError("pca_inverse_transform: component count mismatch");
  HsiCube out(reduced.height, reduced.width, m.bands);
  const std::size_t P = reduced.pixels();
  for (std::size_t p = 0; p < P; ++p)
    for (std::size_t b = 0; b < m.bands; ++b) {
      double s = m.mean[b];
      for (std::size_t j = 0; j < m.k; ++j) s += reduced.data[j * P + p] * m.component(b, j);
      out.data[b * P + p] = static_cast<float>(s);
    }
  return out;
}

// ---- patches ----

/// S x S x B neighborhood around (r, c); outside coordinates mirror without repeating the edge.
template <typename T = float>
Tensor<T> extract_patch(const HsiCube& cube, std::size_t r, std::size_t c, std::size_t s) {
  if (s % 2 == 0) throw ContractError("extract_patch: patch size must be odd, got " + std::to_string(s));
  if (r >= cube.height || c >= cube.width) throw ContractError("extract_patch: pixel outside the cube");
  const long half = static_cast<long>(s / 2);
  std::vector<T> v(s * s * cube.bands);
  for (std::size_t i = 0; i < s; ++i)
    for (std::size_t j = 0; j < s; ++j) {
      const std::size_t rr =
          reflect_index(static_cast<long>(r) + static_cast<long>(i) - half, static_cast<long>(cube.height));
      const std::size_t cc =
          reflect_index(static_cast<long>(c) + static_cast<long>(j) - half, static_cast<long>(cube.width));
      for (std::size_t b = 0; b < cube.bands; ++b) v[(i * s + j) * cube.bands + b] = static_cast<T>(cube.at(b, rr, cc));
    }
  return Tensor<T>({s, s, cube.bands}, std::move(v));
}

/// Model inputs for a list of pixels. `sample` is the per-sample shape a model
/// expects: [B] or [1, B] (spectrum only), [B, S, S] or [1, B, S, S] (band-major patch).
template <typename T = float>
Tensor<T> gather_inputs(const HsiCube& cube, const std::vector<std::size_t>& pixels, const Shape& sample) {
  if (pixels.empty()) throw ContractError("gather_inputs: no pixels");
  const std::size_t per = numel(sample);
  bool spatial = sample.size() >= 3;
  const std::size_t s = spatial ? sample.back() : 1;
  if (per != cube.bands * s * s || (spatial && sample[sample.size() - 2] != s)) {
    throw ContractError("gather_inputs: sample shape " + to_string(sample) + " does not match a cube with " +
                        std::to_string(cube.bands) + " bands");
  }
  Shape shape{pixels.size()};
  shape.insert(shape.end(), sample.begin(), sample.end());
  std::vector<T> v(pixels.size() * per);
  const long half = static_cast<long>(s / 2);
  for (std::size_t n = 0; n < pixels.size(); ++n) {
    const std::size_t r = pixels[n] / cube.width, c = pixels[n] % cube.width;
    if (r >= cube.height) throw ContractError("gather_inputs: pixel index outside the cube");
    T* out = v.data() + n * per;
    for (std::size_t b = 0; b < cube.bands; ++b)
      for (std::size_t i = 0; i < s; ++i) {
        const std::size_t rr =
            reflect_index(static_cast<long>(r) + static_cast<long>(i) - half, static_cast<long>(cube.height));
        for (std::size_t j = 0; j < s; ++j) {
          const std::size_t cc =
              reflect_index(static_cast<long>(c) + static_cast<long>(j) - half, static_cast<long>(cube.width));
          out[(b * s + i) * s + j] = static_cast<T>(cube.at(b, rr, cc));
        }
      }
  }
  return Tensor<T>(std::move(shape), std::move(v));
}

/// Zero-based class targets (label - 1) for labeled pixels.
inline std::vector<std::size_t> gather_targets(const LabelGrid& labels, const std::vector<std::size_t>& pixels) {
  std::vector<std::size_t> t(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    if (pixels[i] >= labels.labels.size()) throw ContractError("gather_targets: pixel index outside the label grid");
    const auto l = labels.labels[pixels[i]];
    if (l == 0) throw ContractError("gather_targets: void pixel " + std::to_string(pixels[i]) + " in split");
    t[i] = l - 1;
  }
  return t;
}

}  // namespace hyperkan
