#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "hyperkan/nn/modules.hpp"
#include "hyperkan/rng.hpp"
#include "hyperkan/tensor.hpp"

namespace oracle {

using Vec = std::vector<double>;

inline Vec random_vec(std::size_t n, hyperkan::Rng& rng, double lo = -1.0, double hi = 1.0) {
  Vec v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

template <typename T>
hyperkan::Tensor<T> tensor(const hyperkan::Shape& shape, const Vec& v) {
  return hyperkan::Tensor<T>(shape, std::vector<T>(v.begin(), v.end()));
}

template <typename T>
hyperkan::Tensor<T> random_tensor(const hyperkan::Shape& shape, hyperkan::Rng& rng, double lo = -1.0, double hi = 1.0) {
  return tensor<T>(shape, random_vec(hyperkan::numel(shape), rng, lo, hi));
}

template <typename T>
double max_abs_diff(std::span<const T> a, const Vec& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, std::abs(static_cast<double>(a[i]) - b[i]));
  return m;
}

/// Recursive Cox-de Boor B-spline on the uniform extended knot vector t_i = lo + (i - k) h.
inline double cox_de_boor(int i, int k, double u, int grid, double lo, double hi) {
  const double h = (hi - lo) / grid;
  auto t = [&](int j) { return lo + (j - k) * h; };
  std::function<double(int, int)> rec = [&](int j, int p) -> double {
    if (p == 0) return (t(j) <= u && u < t(j + 1)) ? 1.0 : 0.0;
    const double left = (u - t(j)) / (t(j + p) - t(j)) * rec(j, p - 1);
    const double right = (t(j + p + 1) - u) / (t(j + p + 1) - t(j + 1)) * rec(j + 1, p - 1);
    return left + right;
  };
  // Pin the right boundary into the last interval so that u = hi is covered.
  if (u == hi) u = std::nextafter(hi, lo);
  return rec(i, k);
}

/// Valid-mode cross-correlation with per-axis stride over [N, Ci, spatial...] (1 to 3 spatial axes).
inline Vec conv_nested(const Vec& x, const std::vector<std::size_t>& xs, const Vec& w,
                       const std::vector<std::size_t>& ws, const Vec& bias, const std::vector<std::size_t>& stride,
                       std::vector<std::size_t>& out_shape) {
  const std::size_t dims = xs.size() - 2;
  std::size_t in_e[3] = {1, 1, 1}, k_e[3] = {1, 1, 1}, s_e[3] = {1, 1, 1}, o_e[3] = {1, 1, 1};
  for (std::size_t d = 0; d < dims; ++d) {
    in_e[3 - dims + d] = xs[2 + d];
    k_e[3 - dims + d] = ws[2 + d];
    s_e[3 - dims + d] = stride[d];
  }
  for (int d = 0; d < 3; ++d) o_e[d] = (in_e[d] - k_e[d]) / s_e[d] + 1;
  const std::size_t n = xs[0], ci = xs[1], co = ws[0];
  out_shape = {n, co};
  for (std::size_t d = 0; d < dims; ++d) out_shape.push_back(o_e[3 - dims + d]);
  Vec y(n * co * o_e[0] * o_e[1] * o_e[2], 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t z = 0; z < o_e[0]; ++z)
        for (std::size_t r = 0; r < o_e[1]; ++r)
          for (std::size_t c = 0; c < o_e[2]; ++c) {
            double acc = bias.empty() ? 0.0 : bias[o];
            for (std::size_t i = 0; i < ci; ++i)
              for (std::size_t kz = 0; kz < k_e[0]; ++kz)
                for (std::size_t kr = 0; kr < k_e[1]; ++kr)
                  for (std::size_t kc = 0; kc < k_e[2]; ++kc) {
                    const std::size_t xz = z * s_e[0] + kz, xr = r * s_e[1] + kr, xc = c * s_e[2] + kc;
                    const double xv = x[(((b * ci + i) * in_e[0] + xz) * in_e[1] + xr) * in_e[2] + xc];
                    const double wv = w[(((o * ci + i) * k_e[0] + kz) * k_e[1] + kr) * k_e[2] + kc];
                    acc += xv * wv;
                  }
            y[(((b * co + o) * o_e[0] + z) * o_e[1] + r) * o_e[2] + c] = acc;
          }
  return y;
}

/// Row-wise softmax of a [rows, cols] matrix.
inline Vec softmax_rows(const Vec& s, std::size_t rows, std::size_t cols) {
  Vec out(s.size());
  for (std::size_t r = 0; r < rows; ++r) {
    double m = -INFINITY;
    for (std::size_t c = 0; c < cols; ++c) m = std::max(m, s[r * cols + c]);
    double z = 0;
    for (std::size_t c = 0; c < cols; ++c) z += std::exp(s[r * cols + c] - m);
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] = std::exp(s[r * cols + c] - m) / z;
  }
  return out;
}

/// Support-weighted F1 and OA straight from the definitions.
struct Scores {
  double oa = 0, weighted_f1 = 0;
};

inline Scores scores(const std::vector<std::vector<double>>& cm) {
  const std::size_t k = cm.size();
  double total = 0, diag = 0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      total += cm[i][j];
      if (i == j) diag += cm[i][j];
    }
  Scores s;
  s.oa = 100.0 * diag / total;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = cm[c][c], row = 0, col = 0;
    for (std::size_t j = 0; j < k; ++j) {
      row += cm[c][j];
      col += cm[j][c];
    }
    const double p = col > 0 ? tp / col : 0.0;
    const double r = row > 0 ? tp / row : 0.0;
    const double f = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
    s.weighted_f1 += f * row / total;
  }
  return s;
}

/// Leading eigenpairs of a symmetric matrix by power iteration with deflation.
inline void power_eigen(Vec a, std::size_t n, std::size_t k, Vec& values, std::vector<Vec>& vectors) {
  values.clear();
  vectors.clear();
  for (std::size_t e = 0; e < k; ++e) {
    Vec v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i * (e + 1) % 7);
    double lambda = 0;
    for (int it = 0; it < 20000; ++it) {
      Vec w(n, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) w[i] += a[i * n + j] * v[j];
      double norm = 0;
      for (double x : w) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0) break;
      double change = 0;
      for (std::size_t i = 0; i < n; ++i) {
        w[i] /= norm;
        change = std::max(change, std::abs(std::abs(w[i]) - std::abs(v[i])));
      }
      v = w;
      lambda = norm;
      if (change < 1e-15 && it > 50) break;
    }
    values.push_back(lambda);
    vectors.push_back(v);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) a[i * n + j] -= lambda * v[i] * v[j];
  }
}

inline double base_value(hyperkan::BaseFn f, double u, double slope) {
  switch (f) {
    case hyperkan::BaseFn::prelu:
      return u >= 0 ? u : slope * u;
    case hyperkan::BaseFn::identity:
      return u;
    case hyperkan::BaseFn::silu:
      return u / (1.0 + std::exp(-u));
  }
  return 0;
}

/// Basis values from the recursive spline oracle or the Gaussian formula.
inline Vec basis_values(const hyperkan::Basis& basis, double u) {
  const auto& g = basis.grid();
  Vec v(basis.count());
  for (std::size_t t = 0; t < v.size(); ++t) {
    if (basis.kind() == hyperkan::BasisKind::spline) {
      const double hi_knot = g.knot(static_cast<long>(g.knot_count()) - 1);
      v[t] = (u < g.knot(0) || u >= hi_knot)
                 ? 0.0
                 : cox_de_boor(static_cast<int>(t), g.order(), u, g.grid_size(), g.lo(), g.hi());
    } else {
      const double d = u - basis.rbf().centers()[t];
      v[t] = std::exp(-0.5 * d * d / (basis.rbf().width() * basis.rbf().width()));
    }
  }
  return v;
}

/// phi(u) for edge `e` of a parameter set whose edges are flattened row-major.
inline double edge_phi(const hyperkan::KanEdgeParams<double>& p, const hyperkan::Basis& basis, hyperkan::BaseFn base,
                       std::size_t e, double u) {
  const double slope = p.slope.defined() ? p.slope[0] : 0.0;
  const auto b = basis_values(basis, u);
  double s = 0;
  for (std::size_t t = 0; t < b.size(); ++t) s += p.c[e * b.size() + t] * b[t];
  return p.w_b[e] * base_value(base, u, slope) + p.w_s[e] * s;
}

/// Project, score, mix, for classical Q/K/V weights [d, d] and a given head count.
inline Vec attention(const Vec& x, std::size_t n, std::size_t t, std::size_t d, std::size_t heads, const Vec* w[3]) {
  auto project = [&](const Vec& w) {
    Vec y(n * t * d, 0.0);
    for (std::size_t r = 0; r < n * t; ++r)
      for (std::size_t o = 0; o < d; ++o)
        for (std::size_t i = 0; i < d; ++i) y[r * d + o] += x[r * d + i] * w[o * d + i];
    return y;
  };
  const auto q = project(*w[0]), k = project(*w[1]), v = project(*w[2]);
  const std::size_t dk = d / heads;
  Vec out(n * t * d, 0.0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      Vec s(t * t);
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < t; ++j) {
          double acc = 0;
          for (std::size_t c = 0; c < dk; ++c) acc += q[(b * t + i) * d + h * dk + c] * k[(b * t + j) * d + h * dk + c];
          s[i * t + j] = acc / std::sqrt(static_cast<double>(dk));
        }
      const auto p = softmax_rows(s, t, t);
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t c = 0; c < dk; ++c) {
          double acc = 0;
          for (std::size_t j = 0; j < t; ++j) acc += p[i * t + j] * v[(b * t + j) * d + h * dk + c];
          out[(b * t + i) * d + h * dk + c] = acc;
        }
    }
  return out;
}

}  // namespace oracle
