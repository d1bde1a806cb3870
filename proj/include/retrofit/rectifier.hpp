#pragma once

// The rectifier Ghat_yv, the annihilator Xi = (P - Ghat_yv Pbar) T of G_yv,
// and the reduced model Ghat_yu = Xi G_yu.
//
// The output derivatives D_xi and the left inverse of G_yv are improper and
// are never realized as systems. Products of a strictly proper system with a
// polynomial in s are folded into proper realizations with
//   C (sI - A)^{-1} E s^k = sum_{j<k} C A^{k-1-j} E s^j + C (sI - A)^{-1} A^k E,
// and the positive-power coefficients are asserted to vanish.

#include <algorithm>
#include <string>
#include <vector>

#include "retrofit/errors.hpp"
#include "retrofit/geometry.hpp"
#include "retrofit/linalg.hpp"
#include "retrofit/statespace.hpp"

namespace retrofit {

inline constexpr double kPropernessTol = 1e-8;
inline constexpr double kPathAgreementTol = 1e-8;

/// Proper realization of Chat (sI - Ahat)^{-1} (sum_k E_k s^k) + sum_k F_k s^k.
struct FoldedSystem {
  Realization system;
  /// Largest positive-power coefficient relative to the size of the terms.
  double improper_residual = 0.0;
};

inline FoldedSystem fold_polynomial(const Matrix& Ahat, const Matrix& Chat,
                                    const std::vector<Matrix>& E,
                                    const std::vector<Matrix>& F) {
  require(!E.empty() && E.size() == F.size(), ErrorKind::kDimensionMismatch,
          "fold_polynomial: coefficient lists");
  const auto nz = Ahat.rows();
  const auto cols = E.front().cols();
  const std::size_t degree = E.size();

  std::vector<Matrix> powers{Matrix::Identity(nz, nz)};
  for (std::size_t k = 1; k < degree; ++k) powers.push_back(powers.back() * Ahat);

  FoldedSystem out;
  out.system.A = Ahat;
  out.system.C = Chat;
  out.system.B = Matrix::Zero(nz, cols);
  out.system.D = F[0];
  double scale = 0.0;
  for (std::size_t k = 0; k < degree; ++k) {
    out.system.B += powers[k] * E[k];
    if (k >= 1) out.system.D += Chat * powers[k - 1] * E[k];
    scale += F[k].norm() + Chat.norm() * (powers[k].norm()) * E[k].norm();
  }
  for (std::size_t j = 1; j < degree; ++j) {
    Matrix coef = F[j];
    for (std::size_t k = j + 1; k < degree; ++k)
      coef += Chat * powers[k - 1 - j] * E[k];
    out.improper_residual =
        std::max(out.improper_residual, coef.norm() / std::max(1.0, scale));
  }
  return out;
}

struct RectifiedModel {
  RelativeDegreeProfile profile;
  NormalFormCoords coords;
  Plant original;
  Plant transformed;  ///< plant with C replaced by T C
  Matrix T;

  /// Ghat_yv and Ghat_yu on shared (z-coordinate) states:
  /// inputs [ybar (m); u (q)] with ybar = Pbar T y, outputs p - m.
  Realization shared;
  Realization ghat_yv;
  Realization ghat_yu_formula;
  /// Primary Ghat_yu: minimal part of the cascade Xi G_yu.
  Realization ghat_yu;
  /// Xi = R [P; Pbar] T with R = [I, -Ghat_yv]; maps the original y (p) to
  /// the rectified output (p - m).
  Realization xi;

  /// Strictly lower Toeplitz blocks Z_i (r_i x r_i blocks of width q) with
  /// (j, k) entry c_i A^{j-k-1} B for j > k.
  std::vector<Matrix> z_blocks;
  double ghat_yv_improper = 0.0;
  double ghat_yu_improper = 0.0;
  double path_mismatch = 0.0;

  Eigen::Index m() const { return profile.m; }
  Eigen::Index p() const { return transformed.y_dim(); }
};

namespace detail {

inline std::vector<Eigen::Index> block_offsets(const RelativeDegreeProfile& pr) {
  std::vector<Eigen::Index> off{0};
  for (Eigen::Index i = 0; i < pr.m; ++i) off.push_back(off.back() + pr.r[i]);
  return off;
}

}  // namespace detail

/// Ghat_yv = [Ahat | Sbar A S^dag ; Chat | P C S^dag] D_xi, with
/// Ahat = Sbar A Sbar^dag and Chat = P C Sbar^dag. The P C S^dag block
/// vanishes whenever the lower outputs lie in the span of Sbar.
inline FoldedSystem build_ghat_yv(const NormalFormCoords& coords,
                                  const Plant& transformed,
                                  const RelativeDegreeProfile& profile) {
  const auto m = profile.m;
  const auto off = detail::block_offsets(profile);
  const int rmax = *std::max_element(profile.r.begin(), profile.r.begin() + m);
  const Matrix Ahat = coords.Sbar * transformed.A * coords.Sbar_dagger;
  const Matrix Chat = coords.P * transformed.C * coords.Sbar_dagger;
  const Matrix SbarAS = coords.Sbar * transformed.A * coords.S_dagger;
  const Matrix PCS = coords.P * transformed.C * coords.S_dagger;

  std::vector<Matrix> E, F;
  for (int j = 0; j < rmax; ++j) {
    Matrix Ej = Matrix::Zero(coords.z_dim(), m);
    Matrix Fj = Matrix::Zero(coords.P.rows(), m);
    for (Eigen::Index i = 0; i < m; ++i) {
      if (j < profile.r[i]) {
        Ej.col(i) = SbarAS.col(off[i] + j);
        Fj.col(i) = PCS.col(off[i] + j);
      }
    }
    E.push_back(std::move(Ej));
    F.push_back(std::move(Fj));
  }
  FoldedSystem out = fold_polynomial(Ahat, Chat, E, F);
  require(out.improper_residual < kPropernessTol, ErrorKind::kNumerical,
          "Ghat_yv is not proper (residual " +
              std::to_string(out.improper_residual) +
              "); relative-degree data is degenerate");
  return out;
}

/// Toeplitz blocks Z_i and the polynomial Z(s) = col(Z_i Dhat_i) as
/// coefficient matrices Z_t (sum r_i x q) of s^t.
inline std::vector<Matrix> toeplitz_blocks(const Plant& transformed,
                                           const RelativeDegreeProfile& profile) {
  const auto q = transformed.u_dim();
  std::vector<Matrix> blocks;
  for (Eigen::Index i = 0; i < profile.m; ++i) {
    const int r = profile.r[i];
    Matrix Z = Matrix::Zero(r, r * q);
    Matrix cAkB = transformed.C.row(i) * transformed.B;  // k = 0
    std::vector<Matrix> markov{cAkB};
    Matrix cA = transformed.C.row(i);
    for (int k = 1; k < r; ++k) {
      cA = cA * transformed.A;
      markov.push_back(cA * transformed.B);
    }
    for (int j = 0; j < r; ++j)
      for (int k = 0; k < j; ++k)
        Z.block(j, k * q, 1, q) = markov[j - k - 1];
    blocks.push_back(std::move(Z));
  }
  return blocks;
}

/// Explicit reduced model
///   [Ahat | Sbar ; Chat | 0] (B - A S^dag Z(s)) - P C S^dag Z(s).
inline FoldedSystem build_ghat_yu_formula(const NormalFormCoords& coords,
                                          const Plant& transformed,
                                          const RelativeDegreeProfile& profile) {
  const auto m = profile.m;
  const auto q = transformed.u_dim();
  const auto off = detail::block_offsets(profile);
  const int total = profile.sum_leading();
  const int rmax = *std::max_element(profile.r.begin(), profile.r.begin() + m);
  const int degree = std::max(1, rmax - 1);

  // Z_t: row off_i + j (0-based j) has coefficient c_i A^{j-1-t} B on s^t.
  std::vector<Matrix> Zt(degree, Matrix::Zero(total, q));
  for (Eigen::Index i = 0; i < m; ++i) {
    Matrix cA = transformed.C.row(i);
    std::vector<Matrix> markov;
    for (int k = 0; k < profile.r[i]; ++k) {
      markov.push_back(cA * transformed.B);
      cA = cA * transformed.A;
    }
    for (int j = 1; j < profile.r[i]; ++j)
      for (int t = 0; t <= j - 1; ++t)
        Zt[t].row(off[i] + j) = markov[j - 1 - t];
  }

  const Matrix Ahat = coords.Sbar * transformed.A * coords.Sbar_dagger;
  const Matrix Chat = coords.P * transformed.C * coords.Sbar_dagger;
  const Matrix SbarAS = coords.Sbar * transformed.A * coords.S_dagger;
  const Matrix PCS = coords.P * transformed.C * coords.S_dagger;
  std::vector<Matrix> E, F;
  for (int t = 0; t < degree; ++t) {
    Matrix Et = -SbarAS * Zt[t];
    if (t == 0) Et += coords.Sbar * transformed.B;
    E.push_back(std::move(Et));
    F.push_back(-PCS * Zt[t]);
  }
  FoldedSystem out = fold_polynomial(Ahat, Chat, E, F);
  require(out.improper_residual < kPropernessTol, ErrorKind::kNumerical,
          "explicit Ghat_yu is not proper (residual " +
              std::to_string(out.improper_residual) + ")");
  return out;
}

/// Xi = (P - Ghat_yv Pbar) T.
inline Realization build_xi(const Realization& ghat_yv,
                            const NormalFormCoords& coords, const Matrix& T) {
  require(ghat_yv.inputs() == coords.Pbar.rows() &&
              ghat_yv.outputs() == coords.P.rows(),
          ErrorKind::kDimensionMismatch, "build_xi: Ghat_yv shape");
  return Realization{ghat_yv.A, ghat_yv.B * coords.Pbar * T, -ghat_yv.C,
                     (coords.P - ghat_yv.D * coords.Pbar) * T};
}

/// Pointwise left inverse (Pbar G_yv(s))^{-1} Pbar of the transformed G_yv.
inline ComplexMatrix left_inverse_eval(const NormalFormCoords& coords,
                                       const Plant& transformed, Complex s) {
  const ComplexMatrix G = freq_eval(transformed.G_yv(), s);
  const ComplexMatrix top = coords.Pbar.cast<Complex>() * G;
  Eigen::PartialPivLU<ComplexMatrix> lu(top);
  require(lu.rcond() > 1e-13, ErrorKind::kEvaluationAtPole,
          "Pbar G_yv(s) is singular at s = " + linalg::format_complex(s));
  return lu.solve(coords.Pbar.cast<Complex>());
}

/// Xi(s) = P (I - G_yv(s) G_yv^dag(s)) T evaluated pointwise from the left
/// inverse; independent of the realization route.
inline ComplexMatrix xi_pointwise(const RectifiedModel& rect, Complex s) {
  const ComplexMatrix G = freq_eval(rect.transformed.G_yv(), s);
  const ComplexMatrix Gdag = left_inverse_eval(rect.coords, rect.transformed, s);
  const auto p = rect.p();
  return rect.coords.P.cast<Complex>() *
         (ComplexMatrix::Identity(p, p) - G * Gdag) * rect.T.cast<Complex>();
}

/// Cascade Xi G_yu reduced to its minimal part, cross-checked against the
/// explicit formula at 32 frequencies.
inline Realization build_ghat_yu(const RectifiedModel& rect, const Plant& plant,
                                 double* mismatch = nullptr) {
  const Realization cascade = minimal_reduce(series(rect.xi, plant.G_yu()));
  const auto points = common_sample_points(cascade, rect.ghat_yu_formula, 32);
  const double diff = frequency_mismatch(cascade, rect.ghat_yu_formula, points);
  if (mismatch) *mismatch = diff;
  require(diff < kPathAgreementTol, ErrorKind::kConstruction,
          "Ghat_yu cascade and explicit formula disagree (" +
              std::to_string(diff) + ")");
  return cascade;
}

/// Full rectifier construction for a plant satisfying the relative-degree
/// assumption (after the output transform).
inline RectifiedModel rectify(const Plant& plant,
                              double tol = kDefaultDegreeTol,
                              double rank_tol = kDefaultRankTol) {
  plant.validate();
  RectifiedModel rect;
  rect.original = plant;
  rect.profile = relative_degree(plant, tol);
  rect.T = rect.profile.T;
  rect.transformed = plant.with_output_transform(rect.T);
  rect.coords = build_coords(rect.transformed, rect.profile);

  const FoldedSystem yv =
      build_ghat_yv(rect.coords, rect.transformed, rect.profile);
  const FoldedSystem yu =
      build_ghat_yu_formula(rect.coords, rect.transformed, rect.profile);
  rect.ghat_yv_improper = yv.improper_residual;
  rect.ghat_yu_improper = yu.improper_residual;
  rect.z_blocks = toeplitz_blocks(rect.transformed, rect.profile);

  // Drop z-modes hidden from both channels; Ghat_yv and Ghat_yu keep a
  // common state.
  Realization shared{yv.system.A,
                     Matrix(yv.system.A.rows(), plant.v_dim() + plant.u_dim()),
                     yv.system.C,
                     Matrix(yv.system.C.rows(), plant.v_dim() + plant.u_dim())};
  shared.B << yv.system.B, yu.system.B;
  shared.D << yv.system.D, yu.system.D;
  rect.shared = minimal_reduce(shared, rank_tol);
  const auto m = plant.v_dim();
  const auto q = plant.u_dim();
  rect.ghat_yv = Realization{rect.shared.A, rect.shared.B.leftCols(m),
                             rect.shared.C, rect.shared.D.leftCols(m)};
  rect.ghat_yu_formula = Realization{rect.shared.A, rect.shared.B.rightCols(q),
                                     rect.shared.C, rect.shared.D.rightCols(q)};
  rect.xi = build_xi(rect.ghat_yv, rect.coords, rect.T);
  rect.ghat_yu = build_ghat_yu(rect, plant, &rect.path_mismatch);
  return rect;
}

}  // namespace retrofit
