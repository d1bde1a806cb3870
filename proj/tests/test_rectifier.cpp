#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "retrofit/rectifier.hpp"
#include "test_util.hpp"

namespace retrofit {
namespace {

using testing::random_matrix;
using testing::random_point;
using testing::random_rectifiable_plant;

Plant two_state_plant(double b = 1.0) {
  Matrix A(2, 2), L(2, 1), B(2, 1);
  A << 0, 1, -2, -3;
  L << 0, 1;
  B << b, 0.5 * b;
  return Plant{A, L, B, Matrix::Ones(1, 2), Matrix::Identity(2, 2)};
}

/// Largest relative mismatch of P G_yv and Ghat_yv Pbar G_yv on the
/// transformed plant.
double factorization_error(const RectifiedModel& rect, int count,
                           std::mt19937_64& rng) {
  const Realization Gyv = rect.transformed.G_yv();
  double worst = 0.0;
  for (int k = 0; k < count; ++k) {
    const Complex s = random_point(rng);
    try {
      const ComplexMatrix G = freq_eval(Gyv, s);
      const ComplexMatrix lhs = rect.coords.P.cast<Complex>() * G;
      const ComplexMatrix rhs =
          freq_eval(rect.ghat_yv, s) * rect.coords.Pbar.cast<Complex>() * G;
      worst = std::max(worst, (lhs - rhs).norm() / std::max(1.0, lhs.norm()));
    } catch (const Error&) {
    }
  }
  return worst;
}

TEST(FoldPolynomial, ShiftRuleHandValue) {
  // s / (s + 1) = 1 - 1 / (s + 1).
  const Matrix A = Matrix::Constant(1, 1, -1.0);
  const Matrix C = Matrix::Ones(1, 1);
  const FoldedSystem f =
      fold_polynomial(A, C, {Matrix::Zero(1, 1), Matrix::Ones(1, 1)},
                      {Matrix::Zero(1, 1), Matrix::Zero(1, 1)});
  EXPECT_DOUBLE_EQ(f.system.B(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(f.system.D(0, 0), 1.0);
  EXPECT_EQ(f.improper_residual, 0.0);
  const Complex s(0.5, 2.0);
  EXPECT_LT(std::abs(freq_eval(f.system, s)(0, 0) - s / (s + 1.0)), 1e-15);
}

TEST(FoldPolynomial, ImproperCoefficientReported) {
  const FoldedSystem f = fold_polynomial(
      Matrix::Constant(1, 1, -1.0), Matrix::Ones(1, 1),
      {Matrix::Zero(1, 1), Matrix::Zero(1, 1)},
      {Matrix::Zero(1, 1), Matrix::Ones(1, 1)});
  EXPECT_GT(f.improper_residual, 0.1);
}

TEST(Rectify, NoResidualDynamics) {
  // n = 1 with the second output unaffected: Ghat_yv = 0 and Xi = P.
  Plant plant{Matrix::Constant(1, 1, -1.0), Matrix::Ones(1, 1),
              Matrix::Ones(1, 1), Matrix::Ones(1, 1), Matrix(2, 1)};
  plant.C << 1, 0;
  const RectifiedModel rect = rectify(plant);
  EXPECT_EQ(rect.coords.z_dim(), 0);
  EXPECT_EQ(rect.ghat_yv.states(), 0);
  EXPECT_EQ(rect.ghat_yv.D.norm(), 0.0);
  EXPECT_TRUE(is_zero_system(rect.ghat_yv, 1e-12).is_zero);
  Matrix P(1, 2);
  P << 0, 1;
  EXPECT_EQ(rect.xi.states(), 0);
  EXPECT_LT((rect.xi.D - P).norm(), 1e-15);
  EXPECT_TRUE(is_zero_system(rect.ghat_yu, 1e-12).is_zero);
}

TEST(Rectify, TwoStateExample) {
  const Plant plant = two_state_plant();
  const RectifiedModel rect = rectify(plant);
  EXPECT_EQ(rect.ghat_yv.states(), 1);
  EXPECT_EQ(rect.ghat_yv.inputs(), 1);
  EXPECT_EQ(rect.ghat_yv.outputs(), 1);
  std::mt19937_64 rng(21);
  EXPECT_LT(factorization_error(rect, 16, rng), 1e-8);

  // Sorted outputs (y2, y1): y1 = x1 and x1' = x2 = y2, so Ghat_yv = 1/s.
  EXPECT_NEAR(rect.ghat_yv.A(0, 0), 0.0, 1e-14);
  const Complex s(0.3, 1.2);
  EXPECT_LT(std::abs(freq_eval(rect.ghat_yv, s)(0, 0) - 1.0 / s), 1e-13);

  EXPECT_TRUE(is_zero_system(series(rect.xi, plant.G_yv()), 1e-9).is_zero);
}

TEST(Rectify, XiMatchesPointwiseLeftInverse) {
  const Plant plant = two_state_plant();
  const RectifiedModel rect = rectify(plant);
  std::mt19937_64 rng(22);
  int checked = 0;
  while (checked < 32) {
    const Complex s = random_point(rng);
    try {
      const ComplexMatrix a = freq_eval(rect.xi, s);
      const ComplexMatrix b = xi_pointwise(rect, s);
      EXPECT_LT((a - b).norm() / std::max(1.0, b.norm()), 1e-9);
      ++checked;
    } catch (const Error&) {
    }
  }
}

TEST(LeftInverse, ScalarLagInvertsToLead) {
  Plant plant{Matrix::Constant(1, 1, -1.0), Matrix::Ones(1, 1),
              Matrix::Ones(1, 1), Matrix::Ones(1, 1), Matrix(2, 1)};
  plant.C << 1, 0;
  const RectifiedModel rect = rectify(plant);
  for (double w : {0.0, 1.0, 10.0, 100.0}) {
    const Complex s(0.0, w);
    const ComplexMatrix inv = left_inverse_eval(rect.coords, rect.transformed, s);
    EXPECT_LT(std::abs(inv(0, 0) - (s + 1.0)), 1e-12 * std::abs(s + 1.0));
    EXPECT_EQ(inv(0, 1), Complex(0.0, 0.0));
  }
}

TEST(LeftInverse, DefiningProperty) {
  std::mt19937_64 rng(23);
  const Plant plant = random_rectifiable_plant(rng, 6, {1, 2}, 4, 2);
  const RectifiedModel rect = rectify(plant);
  const Realization Gyv = rect.transformed.G_yv();
  int checked = 0;
  while (checked < 32) {
    const Complex s = random_point(rng);
    try {
      const ComplexMatrix inv = left_inverse_eval(rect.coords, rect.transformed, s);
      const ComplexMatrix prod = inv * freq_eval(Gyv, s);
      EXPECT_LT((prod - ComplexMatrix::Identity(2, 2)).norm(), 1e-9);
      ++checked;
    } catch (const Error&) {
    }
  }
}

TEST(GhatYu, ZeroWithoutControlInput) {
  const RectifiedModel rect = rectify(two_state_plant(0.0));
  EXPECT_TRUE(is_zero_system(rect.ghat_yu, 1e-12).is_zero);
  EXPECT_TRUE(is_zero_system(rect.ghat_yu_formula, 1e-12).is_zero);
}

TEST(GhatYu, UnitDegreesHaveEmptyToeplitzBlocks) {
  std::mt19937_64 rng(24);
  const Plant plant = random_rectifiable_plant(rng, 5, {1, 1}, 3, 2);
  const RectifiedModel rect = rectify(plant);
  ASSERT_EQ(rect.z_blocks.size(), 2u);
  for (const auto& Z : rect.z_blocks) {
    EXPECT_EQ(Z.rows(), 1);
    EXPECT_EQ(Z.norm(), 0.0);
  }
  EXPECT_LT(rect.path_mismatch, 1e-8);
}

TEST(GhatYu, ToeplitzBlockEntries) {
  std::mt19937_64 rng(25);
  const Plant plant = random_rectifiable_plant(rng, 6, {3}, 2, 2);
  const RectifiedModel rect = rectify(plant);
  const Matrix& Z = rect.z_blocks.at(0);
  ASSERT_EQ(Z.rows(), 3);
  ASSERT_EQ(Z.cols(), 6);
  const Matrix c = rect.transformed.C.row(0);
  const Matrix& A = rect.transformed.A;
  const Matrix& B = rect.transformed.B;
  EXPECT_LT((Z.block(1, 0, 1, 2) - c * B).norm(), 1e-12);
  EXPECT_LT((Z.block(2, 2, 1, 2) - c * B).norm(), 1e-12);
  EXPECT_LT((Z.block(2, 0, 1, 2) - c * A * B).norm(), 1e-12);
  EXPECT_EQ(Z.block(0, 0, 1, 6).norm(), 0.0);
  EXPECT_EQ(Z.block(1, 2, 1, 4).norm(), 0.0);
}

struct Shape {
  int n;
  std::vector<int> degrees;
  int p;
  int q;
};

TEST(Properties, RandomPlantsSatisfyRectifierIdentities) {
  const std::vector<Shape> shapes = {
      {6, {1}, 2, 1}, {6, {2}, 3, 2}, {6, {3}, 2, 1}, {6, {1, 2}, 3, 2},
      {6, {1, 1}, 4, 3}};
  std::mt19937_64 rng(26);
  int checked = 0;
  for (int seed = 0; seed < 50; ++seed) {
    const Shape& sh = shapes[seed % shapes.size()];
    const Plant plant = random_rectifiable_plant(rng, sh.n, sh.degrees, sh.p, sh.q);
    const RectifiedModel rect = rectify(plant);
    EXPECT_LT(rect.ghat_yv_improper, 1e-8);
    EXPECT_LT(rect.ghat_yu_improper, 1e-8);
    EXPECT_LT(factorization_error(rect, 16, rng), 1e-8) << "seed " << seed;
    EXPECT_TRUE(is_zero_system(series(rect.xi, plant.G_yv()), 1e-8).is_zero)
        << "seed " << seed;
    EXPECT_GT(linalg::smallest_singular_value(rect.xi.D), 1e-12);
    EXPECT_LT(rect.path_mismatch, 1e-8);

    // Xi G_yu reproduces Ghat_yu pointwise.
    for (int k = 0; k < 8; ++k) {
      const Complex s = random_point(rng);
      try {
        const ComplexMatrix lhs =
            freq_eval(rect.xi, s) * freq_eval(plant.G_yu(), s);
        const ComplexMatrix rhs = freq_eval(rect.ghat_yu, s);
        EXPECT_LT((lhs - rhs).norm() / std::max(1.0, lhs.norm()), 1e-8);
      } catch (const Error&) {
      }
    }
    ++checked;
  }
  EXPECT_EQ(checked, 50);
}

}  // namespace
}  // namespace retrofit
