#include <gtest/gtest.h>

#include "hyperkan/basis.hpp"
#include "hyperkan/gradcheck.hpp"
#include "hyperkan/ops.hpp"
#include "oracles.hpp"

using namespace hyperkan;

TEST(SplineGrid, KnotsForTwoIntervalsCubic) {
  SplineGrid g(2, 3, -1.0, 1.0);
  EXPECT_EQ(g.basis_count(), 5u);
  const std::vector<double> expect{-4, -3, -2, -1, 0, 1, 2, 3, 4};
  EXPECT_EQ(g.knots(), expect);
}

TEST(SplineGrid, DegenerateOrderZero) {
  SplineGrid g(1, 0, -1.0, 1.0);
  EXPECT_EQ(g.knots(), (std::vector<double>{-1.0, 1.0}));
  EXPECT_EQ(g.basis_count(), 1u);
  EXPECT_DOUBLE_EQ(g.values(0.3)[0], 1.0);
}

TEST(SplineGrid, RejectsBadConstruction) {
  EXPECT_THROW(SplineGrid(0, 3), ContractError);
  EXPECT_THROW(SplineGrid(2, 3, 1.0, 1.0), ContractError);
  EXPECT_THROW(SplineGrid(2, 3, 1.0, -1.0), ContractError);
  EXPECT_THROW(SplineGrid(2, -1), ContractError);
}

TEST(SplineGrid, KnotsIncreaseUniformly) {
  for (int g : {1, 2, 5, 8, 20}) {
    SplineGrid grid(g, 3, -0.5, 2.0);
    const auto t = grid.knots();
    ASSERT_EQ(t.size(), static_cast<std::size_t>(g + 7));
    for (std::size_t i = 1; i < t.size(); ++i) EXPECT_NEAR(t[i] - t[i - 1], 2.5 / g, 1e-12);
    EXPECT_NEAR(t[3], -0.5, 1e-12);
    EXPECT_NEAR(t[3 + g], 2.0, 1e-12);
  }
}

TEST(SplineBasis, PartitionOfUnityOnGridRange) {
  Rng rng(1);
  for (int g : {2, 5, 8}) {
    SplineGrid grid(g, 3);
    for (int i = 0; i < 1000; ++i) {
      const auto v = grid.values(rng.uniform(-1.0, 1.0));
      double s = 0;
      for (double b : v) s += b;
      ASSERT_LT(std::abs(s - 1.0), 1e-6);
    }
    double s = 0;
    for (double b : grid.values(1.0)) s += b;
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
}

TEST(SplineBasis, MatchesRecursiveCoxDeBoor) {
  Rng rng(2);
  for (int k : {0, 1, 2, 3, 4}) {
    for (int g : {1, 2, 5, 8}) {
      SplineGrid grid(g, k, -1.0, 1.0);
      std::vector<double> points;
      for (long i = 0; i < static_cast<long>(grid.knot_count()) - 1; ++i) points.push_back(grid.knot(i));
      for (int i = 0; i < 50; ++i) points.push_back(rng.uniform(grid.knot(0), grid.knot(grid.knot_count() - 1)));
      for (double u : points) {
        const auto v = grid.values(u);
        for (std::size_t i = 0; i < v.size(); ++i) {
          ASSERT_NEAR(v[i], oracle::cox_de_boor(static_cast<int>(i), k, u, g, -1.0, 1.0), 1e-12)
              << "k=" << k << " G=" << g << " u=" << u << " i=" << i;
        }
      }
    }
  }
}

TEST(SplineBasis, OrderZeroIsOneHot) {
  SplineGrid grid(4, 0, 0.0, 4.0);
  for (int j = 0; j < 4; ++j) {
    const auto v = grid.values(j + 0.5);
    for (int i = 0; i < 4; ++i) EXPECT_EQ(v[static_cast<std::size_t>(i)], i == j ? 1.0 : 0.0);
  }
}

TEST(SplineBasis, LocalSupportAndNonNegativity) {
  Rng rng(3);
  SplineGrid grid(5, 3);
  for (int n = 0; n < 2000; ++n) {
    const double u = rng.uniform(-3.0, 3.0);
    const auto v = grid.values(u);
    for (std::size_t i = 0; i < v.size(); ++i) {
      EXPECT_GE(v[i], 0.0);
      const bool inside = u > grid.knot(static_cast<long>(i)) && u < grid.knot(static_cast<long>(i) + 4);
      if (!inside)
        EXPECT_EQ(v[i], 0.0);
      else
        EXPECT_GT(v[i], 0.0);
    }
  }
}

TEST(SplineBasis, OutOfRangeDecaysWithoutClamping) {
  SplineGrid grid(2, 3);
  for (double b : grid.values(-10.0)) EXPECT_EQ(b, 0.0);
  const auto edge = grid.values(-1.5);
  EXPECT_GT(edge[0], 0.0);
}

TEST(SplineBasis, NonFiniteInputIsNumericError) {
  SplineGrid grid(2, 3);
  EXPECT_THROW(grid.values(std::nan("")), NumericError);
  EXPECT_THROW(RbfGrid::over_extended_span(grid).values(INFINITY), NumericError);
}

TEST(SplineBasis, DerivativeMatchesFiniteDifference) {
  Rng rng(4);
  for (int g : {2, 5, 8}) {
    SplineGrid grid(g, 3);
    const std::size_t k = grid.basis_count();
    std::vector<double> v(k), d(k);
    for (int n = 0; n < 200; ++n) {
      const double u = rng.uniform(-1.0, 1.0);
      grid.evaluate(u, v.data(), d.data());
      const double h = 1e-6;
      const auto vp = grid.values(u + h), vm = grid.values(u - h);
      for (std::size_t i = 0; i < k; ++i) {
        const double fd = (vp[i] - vm[i]) / (2 * h);
        EXPECT_LE(std::abs(fd - d[i]) / std::max(1.0, std::abs(fd)), 1e-4);
      }
    }
  }
}

TEST(RbfBasis, CenterPeakAndOneWidthValue) {
  RbfGrid rbf({-1.0, 0.0, 0.5}, 0.3);
  const auto at = rbf.values(0.5);
  EXPECT_DOUBLE_EQ(at[2], 1.0);
  EXPECT_NEAR(rbf.values(0.0 + 0.3)[1], std::exp(-0.5), 1e-12);
  EXPECT_NEAR(std::exp(-0.5), 0.6065307, 1e-7);
}

TEST(RbfBasis, EvenSymmetryAndRange) {
  Rng rng(5);
  SplineGrid grid(5, 3);
  auto rbf = RbfGrid::over_extended_span(grid);
  ASSERT_EQ(rbf.basis_count(), grid.basis_count());
  for (int n = 0; n < 200; ++n) {
    const std::size_t i = rng.below(rbf.basis_count());
    const double d = rng.uniform(-2.0, 2.0);
    const double c = rbf.centers()[i];
    EXPECT_NEAR(rbf.values(c + d)[i], rbf.values(c - d)[i], 1e-14);
    for (double b : rbf.values(rng.uniform(-5, 5))) {
      EXPECT_GE(b, 0.0);
      EXPECT_LE(b, 1.0);
    }
  }
}

TEST(RbfBasis, RejectsBadGrids) {
  EXPECT_THROW(RbfGrid({}, 1.0), ContractError);
  EXPECT_THROW(RbfGrid({0.0, 1.0}, 0.0), ContractError);
  EXPECT_THROW(RbfGrid({1.0, 0.0}, 1.0), ContractError);
}

TEST(RbfBasis, SpansTheExtendedKnotRange) {
  SplineGrid grid(2, 3);
  auto rbf = RbfGrid::over_extended_span(grid);
  EXPECT_DOUBLE_EQ(rbf.centers().front(), grid.knot(0));
  EXPECT_DOUBLE_EQ(rbf.centers().back(), grid.knot(static_cast<long>(grid.knot_count()) - 1));
  EXPECT_DOUBLE_EQ(rbf.width(), grid.spacing());
}

TEST(RbfBasis, ApproximatesCubicSplinesWithMatchedCenters) {
  // Least-squares combination of matched-center Gaussians reproducing each spline basis function.
  for (int g : {2, 5, 8}) {
    SplineGrid grid(g, 3);
    auto rbf = RbfGrid::matching(grid);
    const std::size_t k = grid.basis_count();
    std::vector<double> samples;
    for (int s = 0; s <= 400; ++s) samples.push_back(-1.0 + 2.0 * s / 400.0);
    std::vector<std::vector<double>> phi, spline;
    for (double u : samples) {
      phi.push_back(rbf.values(u));
      spline.push_back(grid.values(u));
    }
    // Normal equations (Phi^T Phi + tiny ridge) a = Phi^T b for each target column.
    std::vector<double> ata(k * k, 0.0);
    for (const auto& row : phi)
      for (std::size_t i = 0; i < k; ++i)
        for (std::size_t j = 0; j < k; ++j) ata[i * k + j] += row[i] * row[j];
    for (std::size_t i = 0; i < k; ++i) ata[i * k + i] += 1e-10;
    double worst = 0;
    for (std::size_t target = 0; target < k; ++target) {
      std::vector<double> a(k * k), b(k, 0.0);
      a = ata;
      for (std::size_t s = 0; s < samples.size(); ++s)
        for (std::size_t i = 0; i < k; ++i) b[i] += phi[s][i] * spline[s][target];
      for (std::size_t col = 0; col < k; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < k; ++r)
          if (std::abs(a[r * k + col]) > std::abs(a[piv * k + col])) piv = r;
        for (std::size_t c = 0; c < k; ++c) std::swap(a[col * k + c], a[piv * k + c]);
        std::swap(b[col], b[piv]);
        for (std::size_t r = col + 1; r < k; ++r) {
          const double f = a[r * k + col] / a[col * k + col];
          for (std::size_t c = col; c < k; ++c) a[r * k + c] -= f * a[col * k + c];
          b[r] -= f * b[col];
        }
      }
      std::vector<double> coef(k);
      for (std::size_t r = k; r-- > 0;) {
        double s = b[r];
        for (std::size_t c = r + 1; c < k; ++c) s -= a[r * k + c] * coef[c];
        coef[r] = s / a[r * k + r];
      }
      for (std::size_t s = 0; s < samples.size(); ++s) {
        double approx = 0;
        for (std::size_t i = 0; i < k; ++i) approx += coef[i] * phi[s][i];
        worst = std::max(worst, std::abs(approx - spline[s][target]));
      }
    }
    EXPECT_LT(worst, 0.08) << "G=" << g;
  }
}

TEST(BasisTensor, ValuesAndGradientsThroughAutodiff) {
  Rng rng(6);
  for (auto kind : {BasisKind::spline, BasisKind::rbf}) {
    Basis basis(SplineGrid(5, 3), kind);
    auto x = oracle::random_tensor<double>({3, 4}, rng);
    auto y = basis_values(x, basis);
    ASSERT_EQ(y.shape(), (Shape{3, 4, 8}));
    const auto ref = basis.values(x[5]);
    for (std::size_t t = 0; t < 8; ++t) EXPECT_DOUBLE_EQ(y[5 * 8 + t], ref[t]);
    auto w = oracle::random_tensor<double>({3, 4, 8}, rng);
    auto r = gradcheck<double>([&] { return sum(mul(basis_values(x, basis), w)); }, {x}, 1e-6, 1e-4);
    EXPECT_TRUE(r.passed) << to_string(kind) << ": " << r.message;
  }
}

TEST(BasisKind, ParsesNames) {
  EXPECT_EQ(parse_basis_kind("spline"), BasisKind::spline);
  EXPECT_EQ(parse_basis_kind("rbf"), BasisKind::rbf);
  EXPECT_THROW(parse_basis_kind("chebyshev"), ContractError);
}
