#pragma once

// Relative-degree analysis of the v -> y channel, output reordering so the
// first m outputs carry the strictly lowest relative degrees, and the
// normal-form coordinates x -> (z, xi) with xi = S x, z = Sbar x, Sbar L = 0.

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "retrofit/errors.hpp"
#include "retrofit/linalg.hpp"
#include "retrofit/statespace.hpp"

namespace retrofit {

inline constexpr double kDefaultDegreeTol = 1e-9;

/// Subsystem of interest:
///   x' = A x + L v + B u,   w = Gamma x,   y = C x.
struct Plant {
  Matrix A;
  Matrix L;
  Matrix B;
  Matrix Gamma;
  Matrix C;

  Eigen::Index n() const { return A.rows(); }
  Eigen::Index v_dim() const { return L.cols(); }
  Eigen::Index u_dim() const { return B.cols(); }
  Eigen::Index w_dim() const { return Gamma.rows(); }
  Eigen::Index y_dim() const { return C.rows(); }

  void validate() const {
    const auto n = A.rows();
    require(A.cols() == n && L.rows() == n && B.rows() == n &&
                Gamma.cols() == n && C.cols() == n,
            ErrorKind::kDimensionMismatch, "plant matrices are inconsistent");
  }

  Realization G_wv() const {
    return {A, L, Gamma, Matrix::Zero(w_dim(), v_dim())};
  }
  Realization G_wu() const {
    return {A, B, Gamma, Matrix::Zero(w_dim(), u_dim())};
  }
  Realization G_yv() const { return {A, L, C, Matrix::Zero(y_dim(), v_dim())}; }
  Realization G_yu() const { return {A, B, C, Matrix::Zero(y_dim(), u_dim())}; }

  /// Inputs [v; u], outputs [w; y].
  Realization full() const {
    Realization G;
    G.A = A;
    G.B.resize(n(), v_dim() + u_dim());
    G.B << L, B;
    G.C.resize(w_dim() + y_dim(), n());
    G.C << Gamma, C;
    G.D = Matrix::Zero(w_dim() + y_dim(), v_dim() + u_dim());
    return G;
  }

  /// Same plant with measurement y' = T y.
  Plant with_output_transform(const Matrix& T) const {
    return Plant{A, L, B, Gamma, T * C};
  }
};

/// Per-output relative degree of G_yv. `capped` marks outputs with no nonzero
/// Markov parameter up to k = n - 1; they carry r = n + 1 as a sentinel.
struct MarkovDegrees {
  std::vector<int> r;
  std::vector<bool> capped;
};

namespace detail {

/// ||c A^k L|| negligible relative to ||c|| ||L|| max(1, ||A||^k).
inline bool markov_is_zero(const Matrix& value, double c_norm, double L_norm,
                           double A_norm, int k, double tol) {
  const double scale =
      c_norm * L_norm * std::max(1.0, std::pow(A_norm, static_cast<double>(k)));
  return value.norm() <= tol * std::max(scale, 1e-300);
}

}  // namespace detail

inline MarkovDegrees markov_degrees(const Plant& plant, double tol) {
  require(tol > 0.0, ErrorKind::kDimensionMismatch, "tol must be positive");
  plant.validate();
  const auto n = plant.n();
  const double A_norm = linalg::norm2(plant.A);
  const double L_norm = linalg::norm2(plant.L);
  MarkovDegrees out;
  for (Eigen::Index i = 0; i < plant.y_dim(); ++i) {
    const Matrix c = plant.C.row(i);
    const double c_norm = c.norm();
    Matrix cAk = c;
    int found = 0;
    for (int k = 0; k < n; ++k) {
      if (!detail::markov_is_zero(cAk * plant.L, c_norm, L_norm, A_norm, k,
                                  tol)) {
        found = k + 1;
        break;
      }
      cAk = cAk * plant.A;
    }
    out.r.push_back(found > 0 ? found : static_cast<int>(n) + 1);
    out.capped.push_back(found == 0);
  }
  return out;
}

/// The row c_i A^{r_i - 1} L (zero row when capped).
inline Matrix decoupling_row(const Plant& plant, Eigen::Index i, int r) {
  if (r > plant.n()) return Matrix::Zero(1, plant.v_dim());
  Matrix row = plant.C.row(i);
  for (int k = 0; k < r - 1; ++k) row = row * plant.A;
  return row * plant.L;
}

struct RelativeDegreeProfile {
  std::vector<int> r;         ///< degrees in transformed output order
  std::vector<bool> capped;   ///< outputs unaffected by v
  Matrix decoupling_rows;     ///< m x m, col(c_i A^{r_i-1} L)_{i<=m}
  Matrix T;                   ///< p x p output transform
  Eigen::Index m = 0;         ///< dim v

  int sum_leading() const {
    return std::accumulate(r.begin(), r.begin() + m, 0);
  }
};

/// Output transform making the profile satisfy r ascending, r_m < r_{m+1}
/// and col(c_i A^{r_i-1} L)_{i<=m} injective.
///
/// Outputs are stably sorted by relative degree. When the block of outputs
/// sharing degree r_m straddles position m, the block rows are rotated by the
/// left singular vectors of their decoupling rows: the leading rows keep the
/// row space, the trailing rows get a zero Markov parameter at r_m - 1 and
/// hence a strictly larger degree. The procedure repeats until stable.
inline Matrix reorder_transform(const Plant& plant, double tol) {
  const auto p = plant.y_dim();
  const auto m = plant.v_dim();
  require(m < p, ErrorKind::kAssumptionViolation,
          "rectifier synthesis requires m < p (m = " + std::to_string(m) +
              ", p = " + std::to_string(p) + ")");
  Matrix T = Matrix::Identity(p, p);
  for (int iter = 0; iter <= p; ++iter) {
    const Plant current = plant.with_output_transform(T);
    const MarkovDegrees deg = markov_degrees(current, tol);

    std::vector<Eigen::Index> order(p);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) {
                       return deg.r[a] < deg.r[b];
                     });
    Matrix perm = Matrix::Zero(p, p);
    for (Eigen::Index k = 0; k < p; ++k) perm(k, order[k]) = 1.0;
    T = perm * T;
    std::vector<int> r(p);
    for (Eigen::Index k = 0; k < p; ++k) r[k] = deg.r[order[k]];

    const int rm = r[m - 1];
    if (r[m] > rm) return T;
    require(rm <= plant.n(), ErrorKind::kAssumptionViolation,
            "fewer than m outputs are affected by v; G_yv is not left "
            "invertible");

    // Tie block [lo, hi) with r == r_m straddling position m.
    Eigen::Index lo = m - 1;
    while (lo > 0 && r[lo - 1] == rm) --lo;
    Eigen::Index hi = m;
    while (hi < p && r[hi] == rm) ++hi;
    const Eigen::Index keep = m - lo;  // rows of the block that stay leading

    const Plant sorted = plant.with_output_transform(T);
    Matrix tie(hi - lo, m);
    for (Eigen::Index k = lo; k < hi; ++k)
      tie.row(k - lo) = decoupling_row(sorted, k, rm);
    Eigen::JacobiSVD<Matrix> svd(tie, Eigen::ComputeFullU);
    const auto& sv = svd.singularValues();
    const double thr = tol * std::max(1.0, sv.size() > 0 ? sv(0) : 0.0);
    Eigen::Index rank = 0;
    while (rank < sv.size() && sv(rank) > thr) ++rank;
    require(rank == keep, ErrorKind::kAssumptionViolation,
            "left-invertibility fails: decoupling rows sharing the degree r_m = " +
                std::to_string(rm) + " have rank " + std::to_string(rank) +
                ", need exactly " + std::to_string(keep));
    Matrix block_T = Matrix::Identity(p, p);
    block_T.block(lo, lo, hi - lo, hi - lo) = svd.matrixU().transpose();
    T = block_T * T;
  }
  throw Error(ErrorKind::kAssumptionViolation,
              "output reordering did not converge");
}

/// Relative-degree profile after the reorder transform; enforces that the
/// first m decoupling rows are injective and r_m < r_{m+1}.
inline RelativeDegreeProfile relative_degree(const Plant& plant,
                                             double tol = kDefaultDegreeTol) {
  plant.validate();
  RelativeDegreeProfile prof;
  prof.m = plant.v_dim();
  prof.T = reorder_transform(plant, tol);
  const Plant transformed = plant.with_output_transform(prof.T);
  const MarkovDegrees deg = markov_degrees(transformed, tol);
  prof.r = deg.r;
  prof.capped = deg.capped;
  const auto m = prof.m;
  prof.decoupling_rows.resize(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    prof.decoupling_rows.row(i) = decoupling_row(transformed, i, prof.r[i]);

  for (std::size_t i = 1; i < prof.r.size(); ++i) {
    require(prof.r[i - 1] <= prof.r[i], ErrorKind::kAssumptionViolation,
            "relative degrees are not ascending after reordering");
  }
  require(prof.r[m] > prof.r[m - 1], ErrorKind::kAssumptionViolation,
          "r_m < r_{m+1} fails after reordering");
  const double smin = linalg::smallest_singular_value(prof.decoupling_rows);
  const double smax = linalg::norm2(prof.decoupling_rows);
  require(smin > tol * std::max(1.0, smax), ErrorKind::kAssumptionViolation,
          "decoupling rows col(c_i A^{r_i-1} L), i <= m, are not injective "
          "(smallest singular value " +
              std::to_string(smin) + ")");
  require(prof.sum_leading() <= plant.n(), ErrorKind::kAssumptionViolation,
          "sum of leading relative degrees exceeds the state dimension");
  return prof;
}

/// Coordinates x -> (z, xi) and the output selectors P = [0 I], Pbar = [I 0].
struct NormalFormCoords {
  Matrix S;            ///< (sum r_i) x n
  Matrix Sbar;         ///< (n - sum r_i) x n, Sbar L = 0
  Matrix S_dagger;     ///< n x (sum r_i)
  Matrix Sbar_dagger;  ///< n x (n - sum r_i)
  Matrix P;            ///< (p - m) x p
  Matrix Pbar;         ///< m x p
  double condition = 1.0;  ///< 2-norm condition number of [S; Sbar]

  Eigen::Index z_dim() const { return Sbar.rows(); }
};

inline constexpr double kMaxCoordinateCondition = 1e12;

/// `plant` must already carry the output transform (C = T C_original).
inline NormalFormCoords build_coords(const Plant& plant,
                                     const RelativeDegreeProfile& profile) {
  const auto n = plant.n();
  const auto m = profile.m;
  const auto p = plant.y_dim();
  NormalFormCoords nf;

  // S = col(col(c_i A^{j-1})_{j=1..r_i})_{i=1..m}; rows with j < r_i lie in
  // ker L^T.
  const int total = profile.sum_leading();
  nf.S.resize(total, n);
  Matrix low(total - m, n);
  Eigen::Index row = 0, low_row = 0;
  for (Eigen::Index i = 0; i < m; ++i) {
    Matrix cA = plant.C.row(i);
    for (int j = 1; j <= profile.r[i]; ++j) {
      nf.S.row(row++) = cA;
      if (j < profile.r[i]) low.row(low_row++) = cA;
      cA = cA * plant.A;
    }
  }

  // Sbar: orthonormal basis of ker L^T orthogonal to the low rows of S.
  const double scale = std::max(1.0, linalg::norm2(plant.L));
  const Matrix kerLt = linalg::kernel_basis(plant.L.transpose(), 1e-12 * scale);
  Matrix low_basis = linalg::range_basis(low.transpose(), 1e-12 * std::max(1.0, low.norm()));
  Matrix proj = kerLt - low_basis * (low_basis.transpose() * kerLt);
  Matrix sbar_cols = linalg::range_basis(proj, 1e-9);
  require(sbar_cols.cols() == n - total, ErrorKind::kConstruction,
          "normal-form complement has dimension " +
              std::to_string(sbar_cols.cols()) + ", expected " +
              std::to_string(n - total));
  nf.Sbar = sbar_cols.transpose();

  Matrix full(n, n);
  full << nf.S, nf.Sbar;
  Eigen::JacobiSVD<Matrix> svd(full);
  const auto& sv = svd.singularValues();
  nf.condition = n == 0 ? 1.0 : sv(0) / sv(n - 1);
  require(n == 0 || nf.condition < kMaxCoordinateCondition,
          ErrorKind::kConstruction,
          "[S; Sbar] is numerically singular (condition " +
              std::to_string(nf.condition) + ")");
  const Matrix inv = n == 0 ? Matrix(0, 0) : Matrix(full.inverse());
  nf.S_dagger = inv.leftCols(total);
  nf.Sbar_dagger = inv.rightCols(n - total);

  nf.P = Matrix::Zero(p - m, p);
  nf.P.rightCols(p - m) = Matrix::Identity(p - m, p - m);
  nf.Pbar = Matrix::Zero(m, p);
  nf.Pbar.leftCols(m) = Matrix::Identity(m, m);
  return nf;
}

}  // namespace retrofit
