#pragma once

#include <string>

#include "retrofit/errors.hpp"
#include "retrofit/linalg.hpp"

namespace retrofit {

/// Relative residual of A^T X + X A - X B R^{-1} B^T X + Q.
inline double care_residual(const Matrix& A, const Matrix& B, const Matrix& Q,
                            const Matrix& R, const Matrix& X) {
  const Matrix Rinv_Bt = R.llt().solve(B.transpose());
  const Matrix res =
      A.transpose() * X + X * A - X * B * Rinv_Bt * X + Q;
  const double scale = std::max(
      {1.0, Q.norm(), 2.0 * A.norm() * X.norm(),
       (X * B * Rinv_Bt * X).norm()});
  return res.norm() / scale;
}

/// Stabilizing solution of the continuous algebraic Riccati equation
///
///   A^T X + X A - X B R^{-1} B^T X + Q = 0,
///
/// from the stable invariant subspace of the Hamiltonian matrix, followed by
/// Newton-Kleinman refinement when the residual exceeds 1e-9.
inline Matrix solve_care(const Matrix& A, const Matrix& B, const Matrix& Q,
                         const Matrix& R) {
  const auto n = A.rows();
  require(A.cols() == n && B.rows() == n && Q.rows() == n && Q.cols() == n &&
              R.rows() == B.cols() && R.cols() == B.cols(),
          ErrorKind::kDimensionMismatch, "CARE operands");
  if (n == 0) return Matrix(0, 0);

  const Matrix G = B * R.llt().solve(B.transpose());
  Matrix H(2 * n, 2 * n);
  H << A, -G, -Q, -A.transpose();

  const auto schur =
      linalg::ordered_schur(H, [](Complex z) { return z.real() < 0.0; });
  require(schur.selected == n, ErrorKind::kUnstabilizable,
          "Hamiltonian has eigenvalues on the imaginary axis (" +
              std::to_string(schur.selected) + " stable of " +
              std::to_string(n) + ")");
  const ComplexMatrix U1 = schur.U.topLeftCorner(n, n);
  const ComplexMatrix U2 = schur.U.bottomLeftCorner(n, n);
  Eigen::PartialPivLU<ComplexMatrix> lu(U1.transpose());
  require(lu.rcond() > 1e-14, ErrorKind::kNumerical,
          "stable invariant subspace is not a graph subspace");
  Matrix X = lu.solve(U2.transpose()).transpose().real();
  X = 0.5 * (X + X.transpose());

  // Newton-Kleinman: (A - G X_k)^T X + X (A - G X_k) = -(Q + X_k G X_k).
  for (int iter = 0; iter < 20 && care_residual(A, B, Q, R, X) > 1e-9;
       ++iter) {
    const Matrix Ak = A - G * X;
    const Matrix next = linalg::solve_lyapunov(Ak, Q + X * G * X);
    if (!next.allFinite()) break;
    X = next;
  }
  return X;
}

}  // namespace retrofit
