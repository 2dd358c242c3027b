#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "hyperkan/error.hpp"
#include "hyperkan/tensor.hpp"

namespace hyperkan {

/// Uniform B-spline knot layout: G intervals over [lo, hi], extended by k
/// intervals on each side so that G + k order-k basis functions cover the range.
class SplineGrid {
 public:
  static constexpr int kMaxOrder = 10;

  SplineGrid() : SplineGrid(2, 3, -1.0, 1.0) {}

  SplineGrid(int grid_size, int order, double lo = -1.0, double hi = 1.0, double grid_eps = 0.02)
      : grid_size_(grid_size), order_(order), lo_(lo), hi_(hi), grid_eps_(grid_eps) {
    if (grid_size < 1) throw ContractError("SplineGrid: grid size must be >= 1, got " + std::to_string(grid_size));
    if (order < 0 || order > kMaxOrder) throw ContractError("SplineGrid: spline order out of range");
    if (!(lo < hi)) throw ContractError("SplineGrid: grid range requires lo < hi");
    spacing_ = (hi - lo) / grid_size;
  }

  int grid_size() const { return grid_size_; }
  int order() const { return order_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double spacing() const { return spacing_; }
  /// Recorded for configuration fidelity; grid adaptation is not implemented.
  double grid_eps() const { return grid_eps_; }
  std::size_t basis_count() const { return static_cast<std::size_t>(grid_size_ + order_); }
  std::size_t knot_count() const { return static_cast<std::size_t>(grid_size_ + 2 * order_ + 1); }

  /// Knot i of the uniform sequence; indices outside [0, knot_count) continue the spacing.
  double knot(long i) const { return lo_ + static_cast<double>(i - order_) * spacing_; }

  std::vector<double> knots() const {
    std::vector<double> t(knot_count());
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = knot(static_cast<long>(i));
    return t;
  }

  /// Center of basis function i (midpoint of its support).
  double center(std::size_t i) const {
    return knot(static_cast<long>(i)) + 0.5 * static_cast<double>(order_ + 1) * spacing_;
  }

  /// All basis values B_i(u) and derivatives dB_i/du via the Cox-de Boor
  /// triangle over the nonzero window. Inputs outside the knot span give zeros.
  template <typename T>
  void evaluate(T u, T* values, T* derivs) const {
    if (!std::isfinite(static_cast<double>(u))) throw NumericError("spline basis: non-finite input");
    const std::size_t count = basis_count();
    for (std::size_t i = 0; i < count; ++i) values[i] = T(0);
    if (derivs)
      for (std::size_t i = 0; i < count; ++i) derivs[i] = T(0);

    const double ud = static_cast<double>(u);
    const long last = static_cast<long>(knot_count()) - 1;
    if (ud < knot(0) - spacing_ || ud > knot(last) + spacing_) return;
    long span = static_cast<long>(std::floor((ud - lo_) / spacing_)) + order_;
    while (span > -2 && ud < knot(span)) --span;
    while (span < last + 1 && ud >= knot(span + 1)) ++span;
    if (span < 0 || span >= last) return;

    // n[r] holds N_{span-p+r, p}; after the loop p == order.
    std::array<T, kMaxOrder + 1> n{}, prev{}, left{}, right{};
    n[0] = T(1);
    prev[0] = T(1);
    for (int p = 1; p <= order_; ++p) {
      if (p == order_) prev = n;
      left[p] = u - static_cast<T>(knot(span + 1 - p));
      right[p] = static_cast<T>(knot(span + p)) - u;
      T saved = 0;
      for (int r = 0; r < p; ++r) {
        const T temp = n[r] / (right[r + 1] + left[p - r]);
        n[r] = saved + right[r + 1] * temp;
        saved = left[p - r] * temp;
      }
      n[p] = saved;
    }
    const T inv_h = static_cast<T>(1.0 / spacing_);
    for (int r = 0; r <= order_; ++r) {
      const long i = span - order_ + r;
      if (i < 0 || i >= static_cast<long>(count)) continue;
      values[i] = n[r];
      if (derivs && order_ > 0) {
        // dN_{i,k} = (N_{i,k-1} - N_{i+1,k-1}) / h on uniform knots; prev[s] = N_{span-k+1+s, k-1}.
        const T lower = r >= 1 ? prev[r - 1] : T(0);
        const T upper = r < order_ ? prev[r] : T(0);
        derivs[i] = (lower - upper) * inv_h;
      }
    }
  }

  std::vector<double> values(double u) const {
    std::vector<double> v(basis_count());
    evaluate<double>(u, v.data(), nullptr);
    return v;
  }

  bool operator==(const SplineGrid&) const = default;

 private:
  int grid_size_;
  int order_;
  double lo_, hi_;
  double grid_eps_;
  double spacing_;
};

/// Gaussian radial basis B_i(u) = exp(-(u - u_i)^2 / (2 h^2)).
class RbfGrid {
 public:
  RbfGrid(std::vector<double> centers, double width) : centers_(std::move(centers)), width_(width) {
    if (centers_.empty()) throw ContractError("RbfGrid: needs at least one center");
    if (!(width_ > 0)) throw ContractError("RbfGrid: width must be positive");
    for (std::size_t i = 1; i < centers_.size(); ++i)
      if (!(centers_[i] > centers_[i - 1])) throw ContractError("RbfGrid: centers must be strictly increasing");
  }

  /// G + k centers spread uniformly over the extended knot span, width one knot spacing.
  static RbfGrid over_extended_span(const SplineGrid& grid) {
    const std::size_t n = grid.basis_count();
    const double a = grid.knot(0);
    const double b = grid.knot(static_cast<long>(grid.knot_count()) - 1);
    std::vector<double> c(n);
    for (std::size_t i = 0; i < n; ++i)
      c[i] = n == 1 ? 0.5 * (a + b) : a + (b - a) * static_cast<double>(i) / static_cast<double>(n - 1);
    return RbfGrid(std::move(c), grid.spacing());
  }

  /// One center per spline basis function at that function's support midpoint.
  static RbfGrid matching(const SplineGrid& grid) {
    std::vector<double> c(grid.basis_count());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = grid.center(i);
    return RbfGrid(std::move(c), grid.spacing());
  }

  const std::vector<double>& centers() const { return centers_; }
  double width() const { return width_; }
  std::size_t basis_count() const { return centers_.size(); }

  template <typename T>
  void evaluate(T u, T* values, T* derivs) const {
    if (!std::isfinite(static_cast<double>(u))) throw NumericError("rbf basis: non-finite input");
    const T inv_w2 = static_cast<T>(1.0 / (width_ * width_));
    for (std::size_t i = 0; i < centers_.size(); ++i) {
      const T d = u - static_cast<T>(centers_[i]);
      const T b = std::exp(-T(0.5) * d * d * inv_w2);
      values[i] = b;
      if (derivs) derivs[i] = -d * inv_w2 * b;
    }
  }

  std::vector<double> values(double u) const {
    std::vector<double> v(basis_count());
    evaluate<double>(u, v.data(), nullptr);
    return v;
  }

  bool operator==(const RbfGrid&) const = default;

 private:
  std::vector<double> centers_;
  double width_;
};

enum class BasisKind { spline, rbf };

inline std::string to_string(BasisKind k) { return k == BasisKind::spline ? "spline" : "rbf"; }

inline BasisKind parse_basis_kind(const std::string& s) {
  if (s == "spline") return BasisKind::spline;
  if (s == "rbf") return BasisKind::rbf;
  throw ContractError("unknown basis kind '" + s + "'");
}

/// Basis family used by a KAN edge layer: a spline grid, optionally evaluated
/// through its Gaussian RBF surrogate.
class Basis {
 public:
  explicit Basis(SplineGrid grid, BasisKind kind = BasisKind::spline)
      : grid_(grid), kind_(kind), rbf_(RbfGrid::over_extended_span(grid)) {}
  Basis(SplineGrid grid, RbfGrid rbf) : grid_(grid), kind_(BasisKind::rbf), rbf_(std::move(rbf)) {}

  BasisKind kind() const { return kind_; }
  const SplineGrid& grid() const { return grid_; }
  const RbfGrid& rbf() const { return rbf_; }
  std::size_t count() const { return kind_ == BasisKind::spline ? grid_.basis_count() : rbf_.basis_count(); }

  template <typename T>
  void evaluate(T u, T* values, T* derivs) const {
    if (kind_ == BasisKind::spline) {
      grid_.evaluate(u, values, derivs);
    } else {
      rbf_.evaluate(u, values, derivs);
    }
  }

  std::vector<double> values(double u) const {
    std::vector<double> v(count());
    evaluate<double>(u, v.data(), nullptr);
    return v;
  }

 private:
  SplineGrid grid_;
  BasisKind kind_;
  RbfGrid rbf_;
};

/// Basis values for every element of x: output shape is x.shape + [count].
template <typename T>
Tensor<T> basis_values(const Tensor<T>& x, const Basis& basis) {
  const std::size_t k = basis.count();
  const auto xv = x.values();
  std::vector<T> y(xv.size() * k);
  std::vector<T> dy(xv.size() * k);
  for (std::size_t i = 0; i < xv.size(); ++i) basis.evaluate(xv[i], y.data() + i * k, dy.data() + i * k);
  Shape shape = x.shape();
  shape.push_back(k);
  return make_result<T>(std::move(shape), std::move(y), {x}, [k, dy = std::move(dy)](TensorNode<T>& n) {
    T* gx = input_grad(n, 0);
    if (!gx) return;
    const std::size_t m = dy.size() / k;
    for (std::size_t i = 0; i < m; ++i) {
      T acc = 0;
      for (std::size_t t = 0; t < k; ++t) acc += n.grad[i * k + t] * dy[i * k + t];
      gx[i] += acc;
    }
  });
}

template <typename T>
Tensor<T> spline_basis(const Tensor<T>& x, const SplineGrid& grid) {
  return basis_values(x, Basis(grid, BasisKind::spline));
}

template <typename T>
Tensor<T> rbf_basis(const Tensor<T>& x, const RbfGrid& grid, const SplineGrid& parent = SplineGrid()) {
  return basis_values(x, Basis(parent, grid));
}

}  // namespace hyperkan
