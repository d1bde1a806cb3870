#include <gtest/gtest.h>

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <random>

#include "retrofit/sim.hpp"
#include "fixture_util.hpp"
#include "test_util.hpp"

namespace retrofit {
namespace {

using testing::random_matrix;

Plant stable4() { return testing::fixture_plant("stable4.json"); }

/// Four-state loop: the plant closed with the static environment v = 0.5 w.
ClosedLoop four_state_loop() {
  return close_loop(stable4(), Realization::gain(Matrix::Constant(1, 1, 0.5)),
                    Realization::zero(1, 2));
}

double endpoint_error(const ClosedLoop& cl, const Vector& x0, double dt) {
  const Trajectory traj = simulate(cl, x0, dt, 1.0);
  const Matrix E = cl.realization.A.exp();
  return (traj.states.back() - E * x0).norm();
}

TEST(CloseLoop, ChannelsMatchPlantTransfers) {
  const Plant P = stable4();
  const ClosedLoop cl =
      close_loop(P, Realization::zero(1, 1), Realization::zero(1, 2));
  EXPECT_EQ(cl.realization.states(), 4);
  EXPECT_EQ(cl.realization.inputs(), 1 + 2 + 1 + 1);
  EXPECT_EQ(cl.realization.outputs(), 1 + 2 + 1 + 1);
  const Complex s(0.4, 1.3);
  const ComplexMatrix G = freq_eval(cl.realization, s);
  // d_u -> y is G_yu, d_v -> w is G_wv, d_u -> u is the identity.
  EXPECT_LT((G.block(1, 0, 2, 1) - freq_eval(P.G_yu(), s)).norm(), 1e-13);
  EXPECT_LT((G.block(4, 3, 1, 1) - freq_eval(P.G_wv(), s)).norm(), 1e-13);
  EXPECT_LT(std::abs(G(0, 0) - 1.0), 1e-15);
}

TEST(CloseLoop, StaticGainsShiftStateMatrix) {
  const Plant P = stable4();
  Matrix K(1, 2);
  K << 0.3, -0.7;
  const ClosedLoop cl = close_loop(P, Realization::gain(Matrix::Constant(1, 1, 2.0)),
                                   Realization::gain(K));
  const Matrix expected = P.A + 2.0 * P.L * P.Gamma + P.B * K * P.C;
  EXPECT_LT((cl.realization.A - expected).norm(), 1e-14);
}

TEST(CloseLoop, DimensionMismatchThrows) {
  EXPECT_THROW(close_loop(stable4(), Realization::zero(2, 1), Realization::zero(1, 2)),
               Error);
  EXPECT_THROW(close_loop(stable4(), Realization::zero(1, 1), Realization::zero(2, 2)),
               Error);
}

TEST(CloseLoop, SampledEnvironmentWithoutControllerIsStable) {
  const Plant P = stable4();
  const CoprimeFactors f = doubly_coprime(P.G_wv());
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto env = sample_environment(f, seed % 4, seed);
    const ClosedLoop cl = close_loop(P, env, Realization::zero(1, 2));
    EXPECT_TRUE(is_hurwitz(cl.realization).is_hurwitz);
  }
}

TEST(Simulate, ZeroStaysZero) {
  const ClosedLoop cl = four_state_loop();
  const Trajectory traj = simulate(cl, Vector::Zero(4), 0.01, 1.0);
  ASSERT_EQ(traj.times.size(), 101u);
  for (const auto& x : traj.states) EXPECT_EQ(x.norm(), 0.0);
  for (const auto& y : traj.outputs) EXPECT_EQ(y.norm(), 0.0);
  EXPECT_DOUBLE_EQ(traj.times.back(), 1.0);
}

TEST(Simulate, GridIsUniform) {
  const Trajectory traj = simulate(four_state_loop(), Vector::Ones(4), 0.1, 0.95);
  ASSERT_EQ(traj.times.size(), 11u);
  for (std::size_t k = 0; k < traj.times.size(); ++k)
    EXPECT_DOUBLE_EQ(traj.times[k], 0.1 * static_cast<double>(k));
  EXPECT_EQ(traj.outputs.size(), traj.times.size());
  EXPECT_EQ(traj.inputs.size(), traj.times.size());
}

TEST(Simulate, MatchesMatrixExponential) {
  const ClosedLoop cl = four_state_loop();
  ASSERT_EQ(cl.realization.states(), 4);
  std::mt19937_64 rng(31);
  const Vector x0 = random_matrix(4, 1, rng);
  EXPECT_LT(endpoint_error(cl, x0, 1e-3), 1e-6);
}

TEST(Simulate, FourthOrderConvergence) {
  const ClosedLoop cl = four_state_loop();
  const Vector x0 = Vector::Ones(4);
  const double coarse = endpoint_error(cl, x0, 0.04);
  const double fine = endpoint_error(cl, x0, 0.02);
  const double ratio = coarse / fine;
  EXPECT_GE(ratio, 12.0);
  EXPECT_LE(ratio, 20.0);
}

TEST(Simulate, HeldInputMatchesForcedResponse) {
  const ClosedLoop cl = four_state_loop();
  const auto nin = cl.realization.inputs();
  Matrix samples = Matrix::Zero(1, nin);
  samples(0, 0) = 1.0;  // unit step on d_u
  const Trajectory traj = simulate(cl, Vector::Zero(4), samples, 1e-3, 1.0);
  const Matrix& A = cl.realization.A;
  const Matrix E = A.exp();
  const Vector expected =
      A.partialPivLu().solve((E - Matrix::Identity(4, 4)) * cl.realization.B.col(0));
  EXPECT_LT((traj.states.back() - expected).norm(), 1e-9);
  EXPECT_DOUBLE_EQ(traj.inputs.back()(0), 1.0);
}

TEST(Simulate, StageInputsUseContinuousSignal) {
  const ClosedLoop cl = four_state_loop();
  const auto nin = cl.realization.inputs();
  const InputSignal ramp = [nin](double t) {
    Vector u = Vector::Zero(nin);
    u(0) = t;
    return u;
  };
  // Ramp response via the augmented exponential [[A, B e1, 0], [0, 0, 1], [0, 0, 0]].
  Matrix M = Matrix::Zero(6, 6);
  M.topLeftCorner(4, 4) = cl.realization.A;
  M.block(0, 4, 4, 1) = cl.realization.B.col(0);
  M(4, 5) = 1.0;
  Vector z0 = Vector::Zero(6);
  z0(5) = 1.0;
  const Vector expected = (M.exp() * z0).head(4);
  const Trajectory traj = simulate(cl, Vector::Zero(4), ramp, 1e-3, 1.0);
  EXPECT_LT((traj.states.back() - expected).norm(), 1e-9);
}

TEST(Simulate, DecayBoundOnHurwitzLoop) {
  const ClosedLoop cl = four_state_loop();
  const double alpha = is_hurwitz(cl.realization).spectral_abscissa;
  ASSERT_LT(alpha, 0.0);
  std::mt19937_64 rng(32);
  for (int trial = 0; trial < 10; ++trial) {
    const Vector x0 = random_matrix(4, 1, rng);
    const Trajectory traj = simulate(cl, x0, 0.01, 10.0);
    EXPECT_LT(traj.states.back().norm(), x0.norm() * std::exp(alpha * 10.0) * 10.0);
  }
}

TEST(Simulate, DivergenceReported) {
  Plant P = stable4();
  P.A(2, 2) = 400.0;
  const ClosedLoop cl =
      close_loop(P, Realization::zero(1, 1), Realization::zero(1, 2));
  try {
    simulate(cl, Vector::Ones(4), 0.1, 100.0);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kDivergence);
    EXPECT_NE(std::string(e.what()).find("t = "), std::string::npos);
  }
}

TEST(Simulate, RejectsBadArguments) {
  const ClosedLoop cl = four_state_loop();
  EXPECT_THROW(simulate(cl, Vector::Zero(4), 0.0, 1.0), Error);
  EXPECT_THROW(simulate(cl, Vector::Zero(4), 0.1, -1.0), Error);
  EXPECT_THROW(simulate(cl, Vector::Zero(3), 0.1, 1.0), Error);
}

}  // namespace
}  // namespace retrofit
