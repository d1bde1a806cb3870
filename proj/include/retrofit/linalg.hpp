#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <sstream>
#include <string>

#include "retrofit/errors.hpp"

namespace retrofit {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Complex = std::complex<double>;
using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

namespace linalg {

inline double norm2(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(M);
  return svd.singularValues()(0);
}

/// Orthonormal basis (as columns) of im M, keeping singular directions above
/// `abs_tol`.
inline Matrix range_basis(const Matrix& M, double abs_tol) {
  if (M.size() == 0) return Matrix(M.rows(), 0);
  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeFullU);
  const auto& sv = svd.singularValues();
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv(rank) > abs_tol) ++rank;
  return svd.matrixU().leftCols(rank);
}

/// Orthonormal basis (as columns) of ker M.
inline Matrix kernel_basis(const Matrix& M, double abs_tol) {
  const Eigen::Index n = M.cols();
  if (M.rows() == 0) return Matrix::Identity(n, n);
  if (n == 0) return Matrix(0, 0);
  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv(rank) > abs_tol) ++rank;
  return svd.matrixV().rightCols(n - rank);
}

inline Eigen::Index rank(const Matrix& M, double rel_tol) {
  if (M.size() == 0) return 0;
  Eigen::JacobiSVD<Matrix> svd(M);
  const auto& sv = svd.singularValues();
  const double thr = rel_tol * std::max(1.0, sv(0));
  Eigen::Index r = 0;
  while (r < sv.size() && sv(r) > thr) ++r;
  return r;
}

inline double smallest_singular_value(const Matrix& M) {
  if (M.size() == 0) return std::numeric_limits<double>::infinity();
  Eigen::JacobiSVD<Matrix> svd(M);
  return svd.singularValues()(svd.singularValues().size() - 1);
}

/// Reciprocal 2-norm condition number; 0 for a singular matrix.
inline double rcond(const Matrix& M) {
  if (M.size() == 0) return 1.0;
  Eigen::JacobiSVD<Matrix> svd(M);
  const auto& sv = svd.singularValues();
  if (sv(0) == 0.0) return 0.0;
  return sv(sv.size() - 1) / sv(0);
}

inline double spectral_abscissa(const Matrix& A) {
  if (A.rows() == 0) return -std::numeric_limits<double>::infinity();
  Eigen::EigenSolver<Matrix> es(A, false);
  require(es.info() == Eigen::Success, ErrorKind::kNumerical,
          "eigenvalue computation did not converge");
  return es.eigenvalues().real().maxCoeff();
}

/// Complex Schur form M = U T U^* with the eigenvalues satisfying `select`
/// moved to the leading diagonal positions. Returns the number selected.
struct OrderedSchur {
  ComplexMatrix U;
  ComplexMatrix T;
  Eigen::Index selected = 0;
};

inline OrderedSchur ordered_schur(const Matrix& M,
                                  const std::function<bool(Complex)>& select) {
  OrderedSchur out;
  const Eigen::Index n = M.rows();
  if (n == 0) {
    out.U = ComplexMatrix(0, 0);
    out.T = ComplexMatrix(0, 0);
    return out;
  }
  Eigen::ComplexSchur<ComplexMatrix> schur(M.cast<Complex>());
  require(schur.info() == Eigen::Success, ErrorKind::kNumerical,
          "Schur decomposition did not converge");
  out.U = schur.matrixU();
  out.T = schur.matrixT();
  ComplexMatrix& T = out.T;
  ComplexMatrix& U = out.U;

  // Swap diagonal entries k and k+1 with a unitary rotation.
  auto swap_adjacent = [&](Eigen::Index k) {
    const Complex a = T(k, k);
    const Complex b = T(k + 1, k + 1);
    const Complex c = T(k, k + 1);
    Complex x0 = c;
    Complex x1 = b - a;
    const double nrm = std::sqrt(std::norm(x0) + std::norm(x1));
    if (nrm == 0.0) return;
    x0 /= nrm;
    x1 /= nrm;
    Eigen::Matrix2cd Z;
    Z << x0, -std::conj(x1), x1, std::conj(x0);
    T.middleRows(k, 2) = Z.adjoint() * T.middleRows(k, 2);
    T.middleCols(k, 2) = T.middleCols(k, 2) * Z;
    U.middleCols(k, 2) = U.middleCols(k, 2) * Z;
    T(k + 1, k) = 0.0;
  };

  Eigen::Index placed = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!select(T(i, i))) continue;
    for (Eigen::Index k = i; k > placed; --k) swap_adjacent(k - 1);
    ++placed;
  }
  out.selected = placed;
  return out;
}

/// Solves A X + X B = C by Bartels-Stewart on complex Schur forms.
inline Matrix solve_sylvester(const Matrix& A, const Matrix& B,
                              const Matrix& C) {
  require(A.rows() == A.cols() && B.rows() == B.cols() &&
              C.rows() == A.rows() && C.cols() == B.rows(),
          ErrorKind::kDimensionMismatch, "Sylvester operands");
  if (C.size() == 0) return Matrix::Zero(C.rows(), C.cols());
  Eigen::ComplexSchur<ComplexMatrix> sa(A.cast<Complex>());
  Eigen::ComplexSchur<ComplexMatrix> sb(B.cast<Complex>());
  require(sa.info() == Eigen::Success && sb.info() == Eigen::Success,
          ErrorKind::kNumerical, "Schur decomposition did not converge");
  const ComplexMatrix& Ta = sa.matrixT();
  const ComplexMatrix& Tb = sb.matrixT();
  const ComplexMatrix F =
      sa.matrixU().adjoint() * C.cast<Complex>() * sb.matrixU();
  ComplexMatrix Y(C.rows(), C.cols());
  const Eigen::Index n = A.rows();
  for (Eigen::Index j = 0; j < B.rows(); ++j) {
    ComplexVector rhs = F.col(j);
    for (Eigen::Index k = 0; k < j; ++k) rhs -= Tb(k, j) * Y.col(k);
    ComplexMatrix lhs = Ta;
    lhs.diagonal().array() += Tb(j, j);
    for (Eigen::Index i = 0; i < n; ++i) {
      require(std::abs(lhs(i, i)) > 1e-14 * (1.0 + std::abs(Tb(j, j))),
              ErrorKind::kNumerical,
              "Sylvester equation is singular (shared spectrum)");
    }
    Y.col(j) = lhs.triangularView<Eigen::Upper>().solve(rhs);
  }
  return (sa.matrixU() * Y * sb.matrixU().adjoint()).real();
}

/// Solves A^T X + X A + Q = 0.
inline Matrix solve_lyapunov(const Matrix& A, const Matrix& Q) {
  Matrix X = solve_sylvester(A.transpose(), A, -Q);
  return 0.5 * (X + X.transpose());
}

/// PBH test: returns the first eigenvalue of A with real part >= `threshold`
/// for which [A - lambda I, B] loses row rank, if any.
inline bool pbh_uncontrollable_mode(const Matrix& A, const Matrix& B,
                                    double threshold, double rel_tol,
                                    Complex* offending) {
  const Eigen::Index n = A.rows();
  if (n == 0) return false;
  Eigen::EigenSolver<Matrix> es(A, false);
  require(es.info() == Eigen::Success, ErrorKind::kNumerical,
          "eigenvalue computation did not converge");
  const double scale = std::max({1.0, norm2(A), norm2(B)});
  for (Eigen::Index i = 0; i < n; ++i) {
    const Complex lambda = es.eigenvalues()(i);
    if (lambda.real() < threshold) continue;
    ComplexMatrix M(n, n + B.cols());
    M.leftCols(n) = A.cast<Complex>();
    M.leftCols(n).diagonal().array() -= lambda;
    M.rightCols(B.cols()) = B.cast<Complex>();
    Eigen::JacobiSVD<ComplexMatrix> svd(M);
    const double smin = svd.singularValues()(n - 1);
    if (smin <= rel_tol * scale) {
      if (offending) *offending = lambda;
      return true;
    }
  }
  return false;
}

inline std::string format_complex(Complex z) {
  std::ostringstream os;
  os.precision(6);
  os << z.real() << (z.imag() < 0 ? " - " : " + ") << std::abs(z.imag())
     << "j";
  return os.str();
}

}  // namespace linalg
}  // namespace retrofit
