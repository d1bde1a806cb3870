#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "retrofit/coprime.hpp"
#include "test_util.hpp"

namespace retrofit {
namespace {

using testing::first_order;
using testing::random_point;
using testing::random_stable_system;
using testing::random_system;

bool all_factors_stable(const CoprimeFactors& f) {
  for (const Realization* g : {&f.N_r, &f.M_r, &f.U_r, &f.V_r, &f.N_l, &f.M_l,
                               &f.U_l, &f.V_l}) {
    if (!reduced_stability(*g).is_hurwitz) return false;
  }
  return true;
}

TEST(Riccati, MatchesLyapunovWhenInputIsZero) {
  Matrix A(2, 2);
  A << -1, 2, 0, -3;
  const Matrix X = solve_care(A, Matrix::Zero(2, 1), Matrix::Identity(2, 2),
                              Matrix::Identity(1, 1));
  const Matrix res = A.transpose() * X + X * A + Matrix::Identity(2, 2);
  EXPECT_LT(res.norm(), 1e-12);
}

TEST(Riccati, MultiInputResidual) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix A = testing::random_matrix(6, 6, rng);
    const Matrix B = testing::random_matrix(6, 2, rng);
    const Matrix X = solve_care(A, B, Matrix::Identity(6, 6),
                                Matrix::Identity(2, 2));
    EXPECT_LT(care_residual(A, B, Matrix::Identity(6, 6),
                            Matrix::Identity(2, 2), X),
              1e-9);
    EXPECT_LT(linalg::spectral_abscissa(A - B * B.transpose() * X), 0.0);
  }
}

TEST(StabilizingGain, AlreadyStable) {
  const Matrix F = stabilizing_gain(Matrix::Constant(1, 1, -5.0),
                                    Matrix::Ones(1, 1));
  EXPECT_LT(-5.0 + F(0, 0), 0.0);
}

TEST(StabilizingGain, ScalarRiccati) {
  // x^2 - 2x - 1 = 0 -> x = 1 + sqrt(2); closed-loop pole -sqrt(2).
  const Matrix F =
      stabilizing_gain(Matrix::Ones(1, 1), Matrix::Ones(1, 1));
  EXPECT_NEAR(F(0, 0), -(1.0 + std::sqrt(2.0)), 1e-12);
  EXPECT_NEAR(1.0 + F(0, 0), -std::sqrt(2.0), 1e-12);
}

TEST(StabilizingGain, UnstabilizableNamesEigenvalue) {
  try {
    stabilizing_gain(Matrix::Ones(1, 1), Matrix::Zero(1, 1));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kUnstabilizable);
    EXPECT_NE(std::string(e.what()).find("1 + 0j"), std::string::npos)
        << e.what();
  }
}

TEST(StabilizingGain, MarginEnforced) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const Matrix A = testing::random_matrix(5, 5, rng);
    const Matrix B = testing::random_matrix(5, 1, rng);
    const Matrix F = stabilizing_gain(A, B);
    EXPECT_LE(linalg::spectral_abscissa(A + B * F), -kDefaultGainMargin + 1e-9);
  }
}

TEST(DoublyCoprime, TrivialFactorizationOfStablePlant) {
  std::mt19937_64 rng(13);
  const Realization G = random_stable_system(3, 2, 2, rng);
  EXPECT_LT(verify_bezout(trivial_coprime(G)), 1e-12);
  const auto f = doubly_coprime(G);
  EXPECT_LT(verify_bezout(f), 1e-8);
  EXPECT_TRUE(all_factors_stable(f));
}

TEST(DoublyCoprime, ScalarUnstablePlant) {
  const auto f = doubly_coprime(first_order(-1.0));  // 1/(s-1)
  EXPECT_LT(verify_bezout(f), 1e-8);
  EXPECT_TRUE(all_factors_stable(f));
  // M_r has its zero at the open-loop pole s = 1.
  EXPECT_LT(std::abs(freq_eval(f.M_r, 1.0)(0, 0)), 1e-12);
  // Closed pole of the state feedback sits at -sqrt(2).
  EXPECT_NEAR(f.M_r.A(0, 0), -std::sqrt(2.0), 1e-12);
}

TEST(DoublyCoprime, PureGain) {
  const Realization G = Realization::gain(Matrix::Constant(2, 1, 3.0));
  const auto f = doubly_coprime(G);
  EXPECT_EQ(f.N_r.states(), 0);
  EXPECT_LT((f.N_r.D - G.D).norm(), 1e-15);
  EXPECT_LT((f.M_r.D - Matrix::Identity(1, 1)).norm(), 1e-15);
  EXPECT_LT(f.U_r.D.norm(), 1e-15);
  EXPECT_LT((f.V_r.D - Matrix::Identity(2, 2)).norm(), 1e-15);
  EXPECT_LT(verify_bezout(f), 1e-14);
}

TEST(DoublyCoprime, FactorsReproduceSubject) {
  std::mt19937_64 rng(14);
  const Realization G = random_system(4, 2, 3, rng);
  const auto f = doubly_coprime(G);
  for (int k = 0; k < 16; ++k) {
    const Complex s = random_point(rng);
    try {
      const ComplexMatrix g = freq_eval(G, s);
      const ComplexMatrix right =
          freq_eval(f.N_r, s) * freq_eval(f.M_r, s).inverse();
      const ComplexMatrix left =
          freq_eval(f.M_l, s).inverse() * freq_eval(f.N_l, s);
      EXPECT_LT((right - g).norm() / std::max(1.0, g.norm()), 1e-8);
      EXPECT_LT((left - g).norm() / std::max(1.0, g.norm()), 1e-8);
    } catch (const Error&) {
    }
  }
}

TEST(DoublyCoprime, UndetectableRejected) {
  Realization G{Matrix::Ones(1, 1), Matrix::Ones(1, 1), Matrix::Zero(1, 1),
                Matrix::Zero(1, 1)};
  EXPECT_THROW(doubly_coprime(G), Error);
}

TEST(VerifyBezout, RandomSystemsAndPerturbation) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 25; ++trial) {
    const Realization G = random_system(5, 2, 2, rng);
    auto f = doubly_coprime(G);
    EXPECT_LT(verify_bezout(f), 1e-8);
    EXPECT_TRUE(all_factors_stable(f));
    if (trial == 0) {
      f.U_r.D.array() += 0.1;
      EXPECT_GT(verify_bezout(f), 1e-3);
    }
  }
}

TEST(YoulaController, CentralControllerIsUrVrInverse) {
  std::mt19937_64 rng(16);
  const Realization G = random_system(3, 2, 1, rng, false);
  const auto f = doubly_coprime(G);
  const Realization K = youla_controller(f, Realization::zero(1, 2));
  for (int k = 0; k < 10; ++k) {
    const Complex s = random_point(rng);
    try {
      const ComplexMatrix expected =
          freq_eval(f.U_r, s) * freq_eval(f.V_r, s).inverse();
      EXPECT_LT((freq_eval(K, s) - expected).norm() /
                    std::max(1.0, expected.norm()),
                1e-8);
    } catch (const Error&) {
    }
  }
}

TEST(YoulaController, MatchesFactorFormulaForDynamicQ) {
  std::mt19937_64 rng(17);
  const Realization G = random_system(3, 2, 2, rng);
  const auto f = doubly_coprime(G);
  const Realization Q = random_stable_system(2, 2, 2, rng);
  const Realization K = youla_controller(f, Q);
  for (int k = 0; k < 10; ++k) {
    const Complex s = random_point(rng);
    try {
      const ComplexMatrix q = freq_eval(Q, s);
      const ComplexMatrix num = freq_eval(f.U_r, s) + freq_eval(f.M_r, s) * q;
      const ComplexMatrix den = freq_eval(f.V_r, s) + freq_eval(f.N_r, s) * q;
      const ComplexMatrix expected = num * den.inverse();
      EXPECT_LT((freq_eval(K, s) - expected).norm() /
                    std::max(1.0, expected.norm()),
                1e-8);
    } catch (const Error&) {
    }
  }
}

TEST(YoulaController, StableSubjectTrivialFactors) {
  std::mt19937_64 rng(18);
  const Realization G = random_stable_system(3, 1, 1, rng);
  const Realization Q = random_stable_system(2, 1, 1, rng);
  const Realization K = youla_controller(trivial_coprime(G), Q);
  for (int k = 0; k < 10; ++k) {
    const Complex s = random_point(rng);
    try {
      const Complex q = freq_eval(Q, s)(0, 0);
      const Complex g = freq_eval(G, s)(0, 0);
      const Complex expected = q / (1.0 + g * q);
      EXPECT_LT(std::abs(freq_eval(K, s)(0, 0) - expected), 1e-9);
    } catch (const Error&) {
    }
  }
}

TEST(YoulaController, ClosedLoopsStableForRandomQ) {
  std::mt19937_64 rng(19);
  const auto f = doubly_coprime(first_order(-2.0));
  for (int trial = 0; trial < 100; ++trial) {
    const Realization Q =
        random_stable_parameter(1, 1, trial % 5, rng);
    const Realization K = youla_controller(f, Q);
    EXPECT_TRUE(is_hurwitz(feedback(f.subject, K)).is_hurwitz);
  }
}

TEST(SampleEnvironment, ZeroOrderGivesStableLoop) {
  std::mt19937_64 rng(20);
  const Realization Gwv = random_system(3, 1, 1, rng, false);
  const auto f = doubly_coprime(Gwv);
  const auto env = sample_environment(f, 0, 5);
  EXPECT_EQ(env.Qbar.states(), 0);
  EXPECT_TRUE(is_hurwitz(feedback(Gwv, env.Gbar)).is_hurwitz);
}

TEST(SampleEnvironment, Deterministic) {
  std::mt19937_64 rng(21);
  const Realization Gwv = random_system(3, 2, 2, rng, false);
  const auto f = doubly_coprime(Gwv);
  const auto a = sample_environment(f, 3, 99);
  const auto b = sample_environment(f, 3, 99);
  EXPECT_EQ(a.Gbar.A, b.Gbar.A);
  EXPECT_EQ(a.Gbar.B, b.Gbar.B);
  EXPECT_EQ(a.Gbar.C, b.Gbar.C);
  EXPECT_EQ(a.Gbar.D, b.Gbar.D);
  EXPECT_LT(linalg::spectral_abscissa(a.Qbar.A), 0.0);
}

TEST(SampleEnvironment, LoopsStableAcrossSeeds) {
  std::mt19937_64 rng(22);
  const Realization Gwv = random_system(4, 2, 1, rng, false);
  const auto f = doubly_coprime(Gwv);
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto env = sample_environment(f, seed % 5, seed);
    EXPECT_TRUE(is_hurwitz(feedback(Gwv, env.Gbar)).is_hurwitz);
  }
}

TEST(Mfrak, Identities) {
  std::mt19937_64 rng(23);
  const Realization Gwv = random_system(3, 1, 2, rng, false);
  const auto f = doubly_coprime(Gwv);
  // Qbar = 0 gives U_r M_l.
  const auto m0 = mfrak(f, Realization::zero(2, 1));
  EXPECT_LT(frequency_mismatch(m0, series(f.U_r, f.M_l),
                               sample_points(m0, 8)),
            1e-12);
  EXPECT_TRUE(reduced_stability(m0).is_hurwitz);

  // Stable subject with trivial factors: M(Qbar) = Qbar.
  const Realization stable = random_stable_system(3, 1, 2, rng);
  const Realization Qbar = random_stable_system(2, 2, 1, rng);
  const auto mq = mfrak(trivial_coprime(stable), Qbar);
  EXPECT_LT(frequency_mismatch(mq, Qbar, sample_points(mq, 8)), 1e-12);

  // M(Qbar) = Gbar (I - G_wv Gbar)^{-1} for a sampled environment.
  const auto env = sample_environment(f, 2, 7);
  const auto m = mfrak(f, env.Qbar);
  EXPECT_TRUE(reduced_stability(m).is_hurwitz);
  int checked = 0;
  while (checked < 16) {
    const Complex s = random_point(rng);
    try {
      const ComplexMatrix g = freq_eval(env.Gbar, s);
      const ComplexMatrix gwv = freq_eval(Gwv, s);
      const ComplexMatrix expected =
          g * (ComplexMatrix::Identity(1, 1) - gwv * g).inverse();
      const ComplexMatrix got = freq_eval(m, s);
      EXPECT_LT((got - expected).norm() / std::max(1.0, expected.norm()),
                1e-8);
      ++checked;
    } catch (const Error&) {
    }
  }
}

}  // namespace
}  // namespace retrofit
