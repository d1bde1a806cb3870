#pragma once

// Doubly coprime factorization, the Youla parameterization of stabilizing
// controllers, and random sampling of admissible environments.
//
// Feedback convention is positive throughout: a controller K closes the loop
// of G via u = K y, so the loop map is (I - K G)^{-1} K.

#include <cstdint>
#include <random>
#include <string>

#include "retrofit/errors.hpp"
#include "retrofit/linalg.hpp"
#include "retrofit/riccati.hpp"
#include "retrofit/statespace.hpp"

namespace retrofit {

inline constexpr double kDefaultGainMargin = 0.1;

/// F such that A + B F is Hurwitz, from the CARE with Q = I, R = I
/// (F = -B^T X). When the plain solution leaves spectral abscissa above
/// -margin, the CARE for A + margin I is solved instead. Throws
/// kUnstabilizable naming the first uncontrollable closed-RHP eigenvalue.
inline Matrix stabilizing_gain(const Matrix& A, const Matrix& B,
                               double margin = kDefaultGainMargin) {
  const auto n = A.rows();
  require(A.cols() == n && B.rows() == n, ErrorKind::kDimensionMismatch,
          "stabilizing_gain operands");
  if (n == 0) return Matrix(B.cols(), 0);

  Complex bad;
  if (linalg::pbh_uncontrollable_mode(A, B, -1e-10, 1e-9, &bad)) {
    throw Error(ErrorKind::kUnstabilizable,
                "pair is not stabilizable: eigenvalue " +
                    linalg::format_complex(bad) + " is uncontrollable");
  }
  const Matrix I = Matrix::Identity(n, n);
  const Matrix Im = Matrix::Identity(B.cols(), B.cols());
  const Matrix F = -B.transpose() * solve_care(A, B, I, Im);
  if (linalg::spectral_abscissa(A + B * F) <= -margin) return F;

  const Matrix shifted = A + margin * I;
  if (linalg::pbh_uncontrollable_mode(shifted, B, -1e-10, 1e-9, nullptr)) {
    // Uncontrollable modes inside (-margin, 0): keep the plain solution.
    return F;
  }
  return -B.transpose() * solve_care(shifted, B, I, Im);
}

/// Eight stable factors satisfying
///   [V_l -U_l; -N_l M_l] [M_r U_r; N_r V_r] = I,  G = N_r M_r^{-1} = M_l^{-1} N_l.
struct CoprimeFactors {
  Realization N_r, M_r, U_r, V_r;
  Realization N_l, M_l, U_l, V_l;
  Matrix F;  ///< state feedback, A + B F Hurwitz
  Matrix H;  ///< output injection, A + H C Hurwitz
  Realization subject;
};

/// State-space construction from an observer-based stabilizing controller.
inline CoprimeFactors doubly_coprime(const Realization& G,
                                     double margin = kDefaultGainMargin) {
  G.validate();
  const Matrix& A = G.A;
  const Matrix& B = G.B;
  const Matrix& C = G.C;
  const Matrix& D = G.D;
  const auto p = G.outputs();
  const auto q = G.inputs();

  CoprimeFactors f;
  f.subject = G;
  f.F = stabilizing_gain(A, B, margin);
  try {
    f.H = stabilizing_gain(A.transpose(), C.transpose(), margin).transpose();
  } catch (const Error& e) {
    throw Error(ErrorKind::kUnstabilizable,
                std::string("detectability: ") + e.detail());
  }
  const Matrix& F = f.F;
  const Matrix& H = f.H;
  const Matrix Ar = A + B * F;
  const Matrix Al = A + H * C;
  const Matrix Ip = Matrix::Identity(p, p);
  const Matrix Iq = Matrix::Identity(q, q);

  f.M_r = Realization{Ar, B, F, Iq};
  f.N_r = Realization{Ar, B, C + D * F, D};
  f.U_r = Realization{Ar, -H, F, Matrix::Zero(q, p)};
  f.V_r = Realization{Ar, -H, C + D * F, Ip};

  f.V_l = Realization{Al, -(B + H * D), F, Iq};
  f.U_l = Realization{Al, -H, F, Matrix::Zero(q, p)};
  f.N_l = Realization{Al, B + H * D, C, D};
  f.M_l = Realization{Al, H, C, Ip};
  return f;
}

/// N = G, M = I, U = 0, V = I; valid only for stable G.
inline CoprimeFactors trivial_coprime(const Realization& G) {
  G.validate();
  const auto p = G.outputs();
  const auto q = G.inputs();
  CoprimeFactors f;
  f.subject = G;
  f.F = Matrix::Zero(q, G.states());
  f.H = Matrix::Zero(G.states(), p);
  f.N_r = G;
  f.N_l = G;
  f.M_r = Realization::identity(q);
  f.V_l = Realization::identity(q);
  f.M_l = Realization::identity(p);
  f.V_r = Realization::identity(p);
  f.U_r = Realization::zero(q, p);
  f.U_l = Realization::zero(q, p);
  return f;
}

/// Max over 32 regular points of the Frobenius norm of the Bezout block
/// product minus identity.
inline double verify_bezout(const CoprimeFactors& f) {
  const Realization left = vconcat(hconcat(f.V_l, negate(f.U_l)),
                                   hconcat(negate(f.N_l), f.M_l));
  const Realization right = vconcat(hconcat(f.M_r, f.U_r),
                                    hconcat(f.N_r, f.V_r));
  const auto points = common_sample_points(left, right, 32);
  const auto size = left.outputs();
  double worst = 0.0;
  for (const Complex s : points) {
    const ComplexMatrix prod = freq_eval(left, s) * freq_eval(right, s);
    worst = std::max(
        worst, (prod - ComplexMatrix::Identity(size, size)).norm());
  }
  return worst;
}

/// Observer-based parameterization J with K = F_l(J, Q). Inputs [y; eta],
/// outputs [u; eps].
inline Realization youla_generator(const CoprimeFactors& f) {
  const Realization& G = f.subject;
  const auto p = G.outputs();
  const auto q = G.inputs();
  Realization J;
  J.A = G.A + G.B * f.F + f.H * G.C + f.H * G.D * f.F;
  J.B.resize(G.states(), p + q);
  J.B << -f.H, G.B + f.H * G.D;
  J.C.resize(q + p, G.states());
  J.C << f.F, -(G.C + G.D * f.F);
  J.D = Matrix::Zero(q + p, p + q);
  J.D.topRightCorner(q, q) = Matrix::Identity(q, q);
  J.D.bottomLeftCorner(p, p) = Matrix::Identity(p, p);
  J.D.bottomRightCorner(p, q) = -G.D;
  return J;
}

/// (U_r + M_r Q)(V_r + N_r Q)^{-1}, realized as an observer-based LFT so that
/// its loop with the subject has state matrix spectrum
/// eig(A + B F) ∪ eig(A + H C) ∪ eig(A_Q).
inline Realization youla_controller(const CoprimeFactors& f,
                                    const Realization& Q) {
  const auto p = f.subject.outputs();
  const auto q = f.subject.inputs();
  require(Q.inputs() == p && Q.outputs() == q, ErrorKind::kDimensionMismatch,
          "Youla parameter must map " + std::to_string(p) + " inputs to " +
              std::to_string(q) + " outputs");
  return lower_lft(youla_generator(f), p, q, Q);
}

/// U_r M_l + M_r Q M_l.
inline Realization mfrak(const CoprimeFactors& f, const Realization& Qbar) {
  return parallel_sum(series(f.U_r, f.M_l),
                      series(f.M_r, series(Qbar, f.M_l)));
}

/// A member of the admissible environment set: Gbar stabilizes G_wv with
/// Youla parameter Qbar.
struct EnvironmentSample {
  Realization Qbar;
  Realization Gbar;
  std::uint64_t seed = 0;
};

/// Random Hurwitz Youla parameter: unit-normal entries, A shifted so that its
/// spectral abscissa is -0.5.
inline Realization random_stable_parameter(Eigen::Index outputs,
                                           Eigen::Index inputs,
                                           Eigen::Index order,
                                           std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  auto draw = [&](Eigen::Index r, Eigen::Index c) {
    Matrix M(r, c);
    for (Eigen::Index j = 0; j < c; ++j)
      for (Eigen::Index i = 0; i < r; ++i) M(i, j) = normal(rng);
    return M;
  };
  Realization Q;
  Q.A = draw(order, order);
  if (order > 0) {
    const double alpha = linalg::spectral_abscissa(Q.A);
    Q.A -= (alpha + 0.5) * Matrix::Identity(order, order);
  }
  Q.B = draw(order, inputs);
  Q.C = draw(outputs, order);
  Q.D = draw(outputs, inputs);
  return Q;
}

/// `f_wv` factors G_wv (input v, output w); the sampled environment maps w to
/// v. Deterministic in `seed`.
inline EnvironmentSample sample_environment(const CoprimeFactors& f_wv,
                                            Eigen::Index order,
                                            std::uint64_t seed) {
  require(order >= 0, ErrorKind::kDimensionMismatch, "order must be >= 0");
  std::mt19937_64 rng(seed);
  const auto m = f_wv.subject.inputs();
  const auto wdim = f_wv.subject.outputs();
  for (int attempt = 0; attempt < 10; ++attempt) {
    EnvironmentSample env;
    env.seed = seed;
    env.Qbar = random_stable_parameter(m, wdim, order, rng);
    try {
      env.Gbar = youla_controller(f_wv, env.Qbar);
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::kIllPosed) continue;
      throw;
    }
    const auto loop = is_hurwitz(feedback(f_wv.subject, env.Gbar));
    require(loop.is_hurwitz, ErrorKind::kNumerical,
            "sampled environment failed the stability re-check (abscissa " +
                std::to_string(loop.spectral_abscissa) + ")");
    return env;
  }
  throw Error(ErrorKind::kIllPosed,
              "environment sampling: 10 consecutive ill-posed draws");
}

}  // namespace retrofit
