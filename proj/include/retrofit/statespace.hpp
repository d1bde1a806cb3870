#pragma once

// Finite-dimensional LTI systems as (A, B, C, D) realizations with the
// interconnection and analysis operations the rest of the library builds on.

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "retrofit/errors.hpp"
#include "retrofit/linalg.hpp"

namespace retrofit {

inline constexpr double kDefaultRankTol = 1e-9;
inline constexpr double kWellPosedRcond = 1e-12;
/// Relative PBH level below which a mode counts as an exact cancellation.
inline constexpr double kHiddenModeTol = 1e-13;

/// Realization of G(s) = C (sI - A)^{-1} B + D.
struct Realization {
  Matrix A;
  Matrix B;
  Matrix C;
  Matrix D;

  Eigen::Index states() const { return A.rows(); }
  Eigen::Index inputs() const { return D.cols(); }
  Eigen::Index outputs() const { return D.rows(); }

  /// Throws unless the four blocks are dimensionally consistent.
  void validate() const {
    const auto n = A.rows();
    require(A.cols() == n && B.rows() == n && C.cols() == n &&
                C.rows() == D.rows() && B.cols() == D.cols(),
            ErrorKind::kDimensionMismatch,
            "realization blocks are inconsistent (A " +
                std::to_string(A.rows()) + "x" + std::to_string(A.cols()) +
                ", B " + std::to_string(B.rows()) + "x" +
                std::to_string(B.cols()) + ", C " + std::to_string(C.rows()) +
                "x" + std::to_string(C.cols()) + ", D " +
                std::to_string(D.rows()) + "x" + std::to_string(D.cols()) +
                ")");
  }

  static Realization make(Matrix A, Matrix B, Matrix C, Matrix D) {
    Realization g{std::move(A), std::move(B), std::move(C), std::move(D)};
    g.validate();
    return g;
  }

  static Realization gain(const Matrix& D) {
    return Realization{Matrix(0, 0), Matrix(0, D.cols()), Matrix(D.rows(), 0),
                       D};
  }

  static Realization zero(Eigen::Index outputs, Eigen::Index inputs) {
    return gain(Matrix::Zero(outputs, inputs));
  }

  static Realization identity(Eigen::Index size) {
    return gain(Matrix::Identity(size, size));
  }
};

struct StabilityVerdict {
  bool is_hurwitz = true;
  double spectral_abscissa = -std::numeric_limits<double>::infinity();
  std::vector<Complex> eigenvalues;
};

/// G1 * G2 (signal passes through G2 first). States ordered [x1; x2].
inline Realization series(const Realization& G1, const Realization& G2) {
  require(G1.inputs() == G2.outputs(), ErrorKind::kDimensionMismatch,
          "series: G1 has " + std::to_string(G1.inputs()) +
              " inputs but G2 has " + std::to_string(G2.outputs()) +
              " outputs");
  const auto n1 = G1.states();
  const auto n2 = G2.states();
  Realization G;
  G.A = Matrix::Zero(n1 + n2, n1 + n2);
  G.A.topLeftCorner(n1, n1) = G1.A;
  G.A.topRightCorner(n1, n2) = G1.B * G2.C;
  G.A.bottomRightCorner(n2, n2) = G2.A;
  G.B.resize(n1 + n2, G2.inputs());
  G.B << G1.B * G2.D, G2.B;
  G.C.resize(G1.outputs(), n1 + n2);
  G.C << G1.C, G1.D * G2.C;
  G.D = G1.D * G2.D;
  return G;
}

/// G1 + sign * G2.
inline Realization parallel_sum(const Realization& G1, const Realization& G2,
                                int sign = +1) {
  require(G1.inputs() == G2.inputs() && G1.outputs() == G2.outputs(),
          ErrorKind::kDimensionMismatch, "parallel_sum: shapes differ");
  require(sign == 1 || sign == -1, ErrorKind::kDimensionMismatch,
          "parallel_sum: sign must be +1 or -1");
  const auto n1 = G1.states();
  const auto n2 = G2.states();
  Realization G;
  G.A = Matrix::Zero(n1 + n2, n1 + n2);
  G.A.topLeftCorner(n1, n1) = G1.A;
  G.A.bottomRightCorner(n2, n2) = G2.A;
  G.B.resize(n1 + n2, G1.inputs());
  G.B << G1.B, G2.B;
  G.C.resize(G1.outputs(), n1 + n2);
  G.C << G1.C, sign * G2.C;
  G.D = G1.D + sign * G2.D;
  return G;
}

/// -G.
inline Realization negate(const Realization& G) {
  return Realization{G.A, G.B, -G.C, -G.D};
}

/// [G1 G2]: inputs stacked, outputs summed.
inline Realization hconcat(const Realization& G1, const Realization& G2) {
  require(G1.outputs() == G2.outputs(), ErrorKind::kDimensionMismatch,
          "hconcat: output counts differ");
  const auto n1 = G1.states();
  const auto n2 = G2.states();
  Realization G;
  G.A = Matrix::Zero(n1 + n2, n1 + n2);
  G.A.topLeftCorner(n1, n1) = G1.A;
  G.A.bottomRightCorner(n2, n2) = G2.A;
  G.B = Matrix::Zero(n1 + n2, G1.inputs() + G2.inputs());
  G.B.topLeftCorner(n1, G1.inputs()) = G1.B;
  G.B.bottomRightCorner(n2, G2.inputs()) = G2.B;
  G.C.resize(G1.outputs(), n1 + n2);
  G.C << G1.C, G2.C;
  G.D.resize(G1.outputs(), G1.inputs() + G2.inputs());
  G.D << G1.D, G2.D;
  return G;
}

/// [G1; G2]: shared input, outputs stacked.
inline Realization vconcat(const Realization& G1, const Realization& G2) {
  require(G1.inputs() == G2.inputs(), ErrorKind::kDimensionMismatch,
          "vconcat: input counts differ");
  const auto n1 = G1.states();
  const auto n2 = G2.states();
  Realization G;
  G.A = Matrix::Zero(n1 + n2, n1 + n2);
  G.A.topLeftCorner(n1, n1) = G1.A;
  G.A.bottomRightCorner(n2, n2) = G2.A;
  G.B.resize(n1 + n2, G1.inputs());
  G.B << G1.B, G2.B;
  G.C = Matrix::Zero(G1.outputs() + G2.outputs(), n1 + n2);
  G.C.topLeftCorner(G1.outputs(), n1) = G1.C;
  G.C.bottomRightCorner(G2.outputs(), n2) = G2.C;
  G.D.resize(G1.outputs() + G2.outputs(), G1.inputs());
  G.D << G1.D, G2.D;
  return G;
}

/// diag(G1, G2): inputs and outputs stacked.
inline Realization block_diag(const Realization& G1, const Realization& G2) {
  const auto n1 = G1.states();
  const auto n2 = G2.states();
  Realization G;
  G.A = Matrix::Zero(n1 + n2, n1 + n2);
  G.A.topLeftCorner(n1, n1) = G1.A;
  G.A.bottomRightCorner(n2, n2) = G2.A;
  G.B = Matrix::Zero(n1 + n2, G1.inputs() + G2.inputs());
  G.B.topLeftCorner(n1, G1.inputs()) = G1.B;
  G.B.bottomRightCorner(n2, G2.inputs()) = G2.B;
  G.C = Matrix::Zero(G1.outputs() + G2.outputs(), n1 + n2);
  G.C.topLeftCorner(G1.outputs(), n1) = G1.C;
  G.C.bottomRightCorner(G2.outputs(), n2) = G2.C;
  G.D = Matrix::Zero(G1.outputs() + G2.outputs(), G1.inputs() + G2.inputs());
  G.D.topLeftCorner(G1.outputs(), G1.inputs()) = G1.D;
  G.D.bottomRightCorner(G2.outputs(), G2.inputs()) = G2.D;
  return G;
}

/// Lower linear fractional transformation F_l(P, K) with positive feedback
/// u = K y. P has inputs [w; u] and outputs [z; y], where w has `exo_inputs`
/// channels and z has `exo_outputs` channels. States ordered [x_P; x_K].
///
///   F_l = P11 + P12 K (I - P22 K)^{-1} P21
inline Realization lower_lft(const Realization& P, Eigen::Index exo_inputs,
                             Eigen::Index exo_outputs, const Realization& K) {
  const auto nw = exo_inputs;
  const auto nz = exo_outputs;
  const auto nu = P.inputs() - nw;
  const auto ny = P.outputs() - nz;
  require(nu >= 0 && ny >= 0 && K.inputs() == ny && K.outputs() == nu,
          ErrorKind::kDimensionMismatch, "lower_lft: partition mismatch");
  const auto np = P.states();
  const auto nk = K.states();

  const Matrix B1 = P.B.leftCols(nw), B2 = P.B.rightCols(nu);
  const Matrix C1 = P.C.topRows(nz), C2 = P.C.bottomRows(ny);
  const Matrix D11 = P.D.topLeftCorner(nz, nw);
  const Matrix D12 = P.D.topRightCorner(nz, nu);
  const Matrix D21 = P.D.bottomLeftCorner(ny, nw);
  const Matrix D22 = P.D.bottomRightCorner(ny, nu);

  const Matrix loop = Matrix::Identity(nu, nu) - K.D * D22;
  const double rc = linalg::rcond(loop);
  require(rc > kWellPosedRcond, ErrorKind::kIllPosed,
          "I - D_K D_G is singular (rcond " + std::to_string(rc) + ")");
  const Matrix E = loop.inverse();

  // u = Eu_x x + Eu_k xk + Eu_w w ; y = C2 x + D21 w + D22 u
  const Matrix Eu_x = E * K.D * C2;
  const Matrix Eu_k = E * K.C;
  const Matrix Eu_w = E * K.D * D21;
  const Matrix Ey_x = C2 + D22 * Eu_x;
  const Matrix Ey_k = D22 * Eu_k;
  const Matrix Ey_w = D21 + D22 * Eu_w;

  Realization G;
  G.A.resize(np + nk, np + nk);
  G.A << P.A + B2 * Eu_x, B2 * Eu_k, K.B * Ey_x, K.A + K.B * Ey_k;
  G.B.resize(np + nk, nw);
  G.B << B1 + B2 * Eu_w, K.B * Ey_w;
  G.C.resize(nz, np + nk);
  G.C << C1 + D12 * Eu_x, D12 * Eu_k;
  G.D = D11 + D12 * Eu_w;
  return G;
}

/// Positive-feedback loop map (I - K G)^{-1} K, i.e. the transfer from a
/// disturbance r added to the measurement (u = K (G u + r)) to the control u.
/// States ordered [x_G; x_K]. Throws kIllPosed unless I - D_K D_G is well
/// conditioned.
inline Realization feedback(const Realization& G, const Realization& K) {
  require(K.inputs() == G.outputs() && K.outputs() == G.inputs(),
          ErrorKind::kDimensionMismatch, "feedback: loop dimensions");
  const auto q = G.inputs();
  const auto p = G.outputs();
  // P = [[0, I], [I, G]] with inputs [r; u] and outputs [u; y].
  Realization P;
  P.A = G.A;
  P.B.resize(G.states(), p + q);
  P.B << Matrix::Zero(G.states(), p), G.B;
  P.C.resize(q + p, G.states());
  P.C << Matrix::Zero(q, G.states()), G.C;
  P.D = Matrix::Zero(q + p, p + q);
  P.D.topRightCorner(q, q) = Matrix::Identity(q, q);
  P.D.bottomLeftCorner(p, p) = Matrix::Identity(p, p);
  P.D.bottomRightCorner(p, q) = G.D;
  return lower_lft(P, p, q, K);
}

/// Replaces C by row_selector*C, B by B*col_selector and D accordingly.
inline Realization select_io(const Realization& G, const Matrix& row_selector,
                             const Matrix& col_selector) {
  require(row_selector.cols() == G.outputs() &&
              col_selector.rows() == G.inputs(),
          ErrorKind::kDimensionMismatch, "select_io: selector shapes");
  return Realization{G.A, G.B * col_selector, row_selector * G.C,
                     row_selector * G.D * col_selector};
}

inline StabilityVerdict is_hurwitz(const Realization& G) {
  StabilityVerdict v;
  if (G.states() == 0) return v;
  Eigen::EigenSolver<Matrix> es(G.A, false);
  require(es.info() == Eigen::Success, ErrorKind::kNumerical,
          "eigenvalue computation did not converge");
  v.eigenvalues.assign(es.eigenvalues().data(),
                       es.eigenvalues().data() + es.eigenvalues().size());
  v.spectral_abscissa = es.eigenvalues().real().maxCoeff();
  v.is_hurwitz = v.spectral_abscissa < 0.0;
  return v;
}

/// C (sI - A)^{-1} B + D. Throws kEvaluationAtPole when sI - A is singular.
inline ComplexMatrix freq_eval(const Realization& G, Complex s) {
  ComplexMatrix out = G.D.cast<Complex>();
  if (G.states() == 0) return out;
  ComplexMatrix M = -G.A.cast<Complex>();
  M.diagonal().array() += s;
  Eigen::PartialPivLU<ComplexMatrix> lu(M);
  const double rc = lu.rcond();
  require(rc > 1e-13, ErrorKind::kEvaluationAtPole,
          "sI - A singular at s = " + linalg::format_complex(s));
  out += G.C.cast<Complex>() * lu.solve(G.B.cast<Complex>());
  return out;
}

namespace detail {

inline double realization_scale(const Realization& G) {
  if (G.states() == 0) return 1.0;
  return std::max(1.0, G.A.cwiseAbs().maxCoeff());
}

/// Deterministic candidate points mixing s > 0 and the imaginary axis,
/// spread over magnitudes around the scale of A.
inline std::vector<Complex> candidate_points(std::size_t count, double scale) {
  std::vector<Complex> pts;
  pts.reserve(count);
  const double golden = 0.6180339887498949;
  for (std::size_t k = 0; k < count; ++k) {
    const double u = std::fmod(0.37 + golden * static_cast<double>(k), 1.0);
    const double mag = scale * std::pow(10.0, -0.8 + 1.6 * u);
    switch (k % 3) {
      case 0: pts.emplace_back(mag, 0.0); break;
      case 1: pts.emplace_back(0.0, mag); break;
      default: pts.emplace_back(0.25 * mag, mag); break;
    }
  }
  return pts;
}

}  // namespace detail

/// Deterministic regular evaluation points for G (none is a pole of the
/// realization). Throws kSampling when too many candidates hit poles.
inline std::vector<Complex> sample_points(const Realization& G,
                                          std::size_t count) {
  const auto candidates =
      detail::candidate_points(4 * count + 16, detail::realization_scale(G));
  std::vector<Complex> pts;
  for (const Complex s : candidates) {
    if (pts.size() == count) break;
    if (G.states() > 0) {
      ComplexMatrix M = -G.A.cast<Complex>();
      M.diagonal().array() += s;
      Eigen::PartialPivLU<ComplexMatrix> lu(M);
      if (!(lu.rcond() > 1e-10)) continue;
    }
    pts.push_back(s);
  }
  require(pts.size() == count, ErrorKind::kSampling,
          "could not find enough regular sample points");
  return pts;
}

struct ZeroTest {
  bool is_zero = true;
  /// Max over sample points of ||G(s)||_F / max(1, size of the summands).
  double residual = 0.0;
};

/// Point-sampling zero test. Each entry of G is rational of McMillan degree at
/// most n, so vanishing at n + 1 regular points implies it vanishes
/// identically; we use max(n + 2, 8) points.
inline ZeroTest is_zero_system(const Realization& G, double tol) {
  require(tol > 0.0, ErrorKind::kDimensionMismatch, "tol must be positive");
  ZeroTest out;
  if (G.outputs() == 0 || G.inputs() == 0) return out;
  const std::size_t count =
      std::max<std::size_t>(static_cast<std::size_t>(G.states()) + 2, 8);
  const double normC = G.C.norm();
  const double normD = G.D.norm();
  for (const Complex s : sample_points(G, count)) {
    double summands = normD;
    ComplexMatrix val = G.D.cast<Complex>();
    if (G.states() > 0) {
      ComplexMatrix M = -G.A.cast<Complex>();
      M.diagonal().array() += s;
      const ComplexMatrix X =
          Eigen::PartialPivLU<ComplexMatrix>(M).solve(G.B.cast<Complex>());
      val += G.C.cast<Complex>() * X;
      summands += normC * X.norm();
    }
    out.residual = std::max(out.residual, val.norm() / std::max(1.0, summands));
  }
  out.is_zero = out.residual < tol;
  return out;
}

namespace detail {

/// Orthonormal basis of the controllable subspace of (A, B) from the
/// orthogonal staircase form: each step compresses the current input block
/// by an SVD and applies the rotation to the trailing states of A.
inline Matrix controllable_basis(const Matrix& A, const Matrix& B,
                                 double rank_tol) {
  const auto n = A.rows();
  const double scale =
      std::max({linalg::norm2(A), linalg::norm2(B), 1e-300});
  const double thr = rank_tol * scale;
  Matrix T = A;
  Matrix U = Matrix::Identity(n, n);
  Matrix block = B;
  Eigen::Index done = 0;
  while (done < n && block.cols() > 0) {
    const auto rest = n - done;
    Eigen::JacobiSVD<Matrix> svd(block, Eigen::ComputeFullU);
    const auto& sv = svd.singularValues();
    Eigen::Index r = 0;
    while (r < sv.size() && sv(r) > thr) ++r;
    if (r == 0) break;
    const Matrix W = svd.matrixU();
    U.rightCols(rest) = U.rightCols(rest) * W;
    T.bottomRows(rest) = W.transpose() * T.bottomRows(rest);
    T.rightCols(rest) = T.rightCols(rest) * W;
    block = T.block(done + r, done, rest - r, r);
    done += r;
  }
  return U.leftCols(done);
}

/// Projects off modes lambda with sigma_min([A - lambda I; C]) below
/// min(rank_tol, kHiddenModeTol) * scale, one eigenvalue (or conjugate pair)
/// at a time, smallest first. A single-output staircase can miss such modes
/// because its subdiagonals need not become small at the breakdown step. A
/// mode is removed only when its invariant subspace V satisfies C V = 0 at
/// the same level, so the transfer is unchanged.
inline Realization deflate_unobservable(const Realization& G, double rank_tol) {
  Realization R = G;
  std::vector<Complex> rejected;
  const auto is_rejected = [&](Complex z) {
    for (const Complex r : rejected)
      if (std::abs(z - r) <= 1e-6 * std::max(1.0, std::abs(r))) return true;
    return false;
  };
  for (;;) {
    const auto n = R.states();
    if (n == 0 || R.outputs() == 0) return R;
    const double scale =
        std::max({linalg::norm2(R.A), linalg::norm2(R.C), 1e-300});
    const double thr = std::min(rank_tol, kHiddenModeTol) * scale;

    Eigen::EigenSolver<Matrix> es(R.A, false);
    Complex best;
    double best_sigma = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < n; ++i) {
      const Complex lam = es.eigenvalues()(i);
      if (is_rejected(lam)) continue;
      ComplexMatrix M(n + R.outputs(), n);
      M << R.A.cast<Complex>() - lam * ComplexMatrix::Identity(n, n),
          R.C.cast<Complex>();
      Eigen::JacobiSVD<ComplexMatrix> svd(M);
      const double sigma = svd.singularValues()(n - 1);
      if (sigma < best_sigma) {
        best_sigma = sigma;
        best = lam;
      }
    }
    if (best_sigma > thr) return R;

    const double gap = 1e-6 * std::max(1.0, std::abs(best));
    const auto chosen = [&](Complex z) {
      return std::abs(z - best) <= gap || std::abs(z - std::conj(best)) <= gap;
    };
    const auto schur = linalg::ordered_schur(R.A, chosen);
    bool ok = schur.selected > 0 && schur.selected < n;
    Matrix V;
    if (ok) {
      const ComplexMatrix V1 = schur.U.leftCols(schur.selected);
      Matrix parts(n, 2 * schur.selected);
      parts << V1.real(), V1.imag();
      V = linalg::range_basis(parts, 1e-8);
      ok = V.cols() == schur.selected;
    }
    if (ok) {
      const Matrix AV = R.A * V;
      ok = linalg::norm2(R.C * V) <= thr &&
           linalg::norm2(AV - V * (V.transpose() * AV)) <= 1e-8 * scale;
    }
    if (!ok) {
      rejected.push_back(best);
      rejected.push_back(std::conj(best));
      continue;
    }
    const Matrix W = linalg::kernel_basis(V.transpose(), 1e-8);
    R = Realization{W.transpose() * R.A * W, W.transpose() * R.B, R.C * W, R.D};
  }
}

inline Realization transposed(const Realization& G) {
  return Realization{G.A.transpose(), G.C.transpose(), G.B.transpose(),
                     G.D.transpose()};
}

}  // namespace detail

struct MinimalReduction {
  Realization system;
  /// Max relative frequency-response mismatch versus the input at sample
  /// points.
  double transfer_residual = 0.0;
};

/// Removes uncontrollable then unobservable subspaces detected up to
/// rank_tol relative to the largest singular value of [A B] resp. [A; C].
inline MinimalReduction minimal_reduce_report(const Realization& G,
                                              double rank_tol = kDefaultRankTol) {
  require(rank_tol > 0.0, ErrorKind::kDimensionMismatch,
          "rank_tol must be positive");
  MinimalReduction out{G, 0.0};
  if (G.states() == 0) return out;

  const Matrix Vc = detail::controllable_basis(G.A, G.B, rank_tol);
  Realization Gc{Vc.transpose() * G.A * Vc, Vc.transpose() * G.B, G.C * Vc,
                 G.D};
  if (Gc.states() > 0) {
    const Matrix Vo = detail::controllable_basis(Gc.A.transpose(),
                                                 Gc.C.transpose(), rank_tol);
    Gc = Realization{Vo.transpose() * Gc.A * Vo, Vo.transpose() * Gc.B,
                     Gc.C * Vo, Gc.D};
    Gc = detail::deflate_unobservable(Gc, rank_tol);
    Gc = detail::transposed(
        detail::deflate_unobservable(detail::transposed(Gc), rank_tol));
  }
  out.system = std::move(Gc);

  if (out.system.states() < G.states()) {
    try {
      for (const Complex s : sample_points(G, 8)) {
        const ComplexMatrix a = freq_eval(G, s);
        ComplexMatrix b;
        try {
          b = freq_eval(out.system, s);
        } catch (const Error&) {
          continue;
        }
        out.transfer_residual = std::max(
            out.transfer_residual, (a - b).norm() / std::max(1.0, a.norm()));
      }
    } catch (const Error&) {
      // sampling failure only affects the diagnostic
    }
  }
  return out;
}

inline Realization minimal_reduce(const Realization& G,
                                  double rank_tol = kDefaultRankTol) {
  return minimal_reduce_report(G, rank_tol).system;
}

/// Stability of the transfer matrix judged on the minimal part.
inline StabilityVerdict reduced_stability(const Realization& G,
                                          double rank_tol = kDefaultRankTol) {
  return is_hurwitz(minimal_reduce(G, rank_tol));
}

/// Max over `points` of ||G1(s) - G2(s)||_F / max(1, ||G1(s)||_F).
inline double frequency_mismatch(const Realization& G1, const Realization& G2,
                                 const std::vector<Complex>& points) {
  double worst = 0.0;
  for (const Complex s : points) {
    const ComplexMatrix a = freq_eval(G1, s);
    const ComplexMatrix b = freq_eval(G2, s);
    worst = std::max(worst, (a - b).norm() / std::max(1.0, a.norm()));
  }
  return worst;
}

/// Regular points for both systems at once.
inline std::vector<Complex> common_sample_points(const Realization& G1,
                                                 const Realization& G2,
                                                 std::size_t count) {
  // Block-diagonal A carrying both spectra; B/C are irrelevant for pole checks.
  const auto n1 = G1.states();
  const auto n2 = G2.states();
  Matrix A = Matrix::Zero(n1 + n2, n1 + n2);
  A.topLeftCorner(n1, n1) = G1.A;
  A.bottomRightCorner(n2, n2) = G2.A;
  const Realization both{A, Matrix::Zero(n1 + n2, 1), Matrix::Zero(1, n1 + n2),
                         Matrix::Zero(1, 1)};
  return sample_points(both, count);
}

}  // namespace retrofit
