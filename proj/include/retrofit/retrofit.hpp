#pragma once

// Output-rectifying retrofit controllers K = Khat Xi, internal-controller
// synthesis, and verification against the algebraic characterization and
// sampled environments.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "retrofit/coprime.hpp"
#include "retrofit/errors.hpp"
#include "retrofit/geometry.hpp"
#include "retrofit/rectifier.hpp"
#include "retrofit/sim.hpp"
#include "retrofit/statespace.hpp"

namespace retrofit {

inline constexpr double kDefaultCheckTol = 1e-7;
inline constexpr double kQIdentityTol = 1e-8;
inline constexpr int kMaxEnvironmentOrder = 4;

/// G_yu + G_yv U_r M_l G_wu, written as a sum of series connections. Its
/// realization repeats the modes of A, which cancel only in the transfer
/// matrix.
inline Realization gtilde_yu_formula(const Plant& plant,
                                     const CoprimeFactors& f_wv) {
  require(f_wv.U_r.inputs() == plant.w_dim() &&
              f_wv.U_r.outputs() == plant.v_dim(),
          ErrorKind::kDimensionMismatch,
          "coprime factors do not match the (v, w) channel");
  const Realization path =
      series(plant.G_yv(), series(f_wv.U_r, series(f_wv.M_l, plant.G_wu())));
  return parallel_sum(plant.G_yu(), path);
}

/// G_yu + G_yv U_r M_l G_wu realized as the u -> y map of the plant closed
/// with the central environment U_r V_r^{-1}, whose state matrix is Hurwitz.
inline Realization build_gtilde_yu(const Plant& plant,
                                   const CoprimeFactors& f_wv) {
  require(f_wv.U_r.inputs() == plant.w_dim() &&
              f_wv.U_r.outputs() == plant.v_dim(),
          ErrorKind::kDimensionMismatch,
          "coprime factors do not match the (v, w) channel");
  const Realization central = youla_controller(
      f_wv, Realization::zero(plant.v_dim(), plant.w_dim()));
  const ClosedLoop cl = close_loop(
      plant, central, Realization::zero(plant.u_dim(), plant.y_dim()));
  const auto q = plant.u_dim();
  const auto p = plant.y_dim();
  const Realization& G = cl.realization;
  return Realization{G.A, G.B.leftCols(q), G.C.middleRows(q, p),
                     G.D.block(q, 0, p, q)};
}

struct MonteCarloTrial {
  std::uint64_t seed = 0;
  Eigen::Index order = 0;
  double spectral_abscissa = std::numeric_limits<double>::quiet_NaN();
  std::string error;  ///< non-empty when the trial could not be formed

  bool stable() const { return error.empty() && spectral_abscissa < 0.0; }
};

struct RetrofitVerdict {
  double constraint_residual = 0.0;
  StabilityVerdict qtilde_stable;
  double mwv_invariance_residual = 0.0;
  std::vector<MonteCarloTrial> monte_carlo;
  double tol = kDefaultCheckTol;
  bool overall = false;

  double worst_abscissa() const {
    double worst = -std::numeric_limits<double>::infinity();
    for (const auto& t : monte_carlo)
      worst = std::max(worst, t.error.empty()
                                  ? t.spectral_abscissa
                                  : std::numeric_limits<double>::infinity());
    return worst;
  }
};

/// Environment draws for seeds seed, seed + 1, ... with orders cycling
/// through 0..kMaxEnvironmentOrder; trials run on worker threads and are
/// stored in seed order.
inline std::vector<MonteCarloTrial> monte_carlo_trials(
    const Realization& K, const Plant& plant, const CoprimeFactors& f_wv,
    int n_trials, std::uint64_t seed, unsigned workers = 0) {
  std::vector<MonteCarloTrial> trials(std::max(n_trials, 0));
  const auto run = [&](std::size_t i) {
    MonteCarloTrial& t = trials[i];
    t.seed = seed + i;
    t.order = static_cast<Eigen::Index>(i % (kMaxEnvironmentOrder + 1));
    try {
      const EnvironmentSample env = sample_environment(f_wv, t.order, t.seed);
      const ClosedLoop cl = close_loop(plant, env, K);
      t.spectral_abscissa = is_hurwitz(cl.realization).spectral_abscissa;
    } catch (const Error& e) {
      t.error = e.what();
    }
  };
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, std::max<std::size_t>(trials.size(), 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < trials.size(); ++i) run(i);
    return trials;
  }
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < trials.size(); i += workers) run(i);
    });
  }
  for (auto& th : pool) th.join();
  return trials;
}

inline RetrofitVerdict check_retrofit(const Realization& K, const Plant& plant,
                                      const CoprimeFactors& f_wv,
                                      double tol = kDefaultCheckTol,
                                      int n_trials = 200,
                                      std::uint64_t seed = 0) {
  plant.validate();
  RetrofitVerdict out;
  out.tol = tol;
  const Realization gtilde = build_gtilde_yu(plant, f_wv);
  const Realization qtilde = minimal_reduce(feedback(gtilde, K));
  out.qtilde_stable = is_hurwitz(qtilde);

  const Realization leak = series(plant.G_wu(), series(qtilde, plant.G_yv()));
  out.constraint_residual = is_zero_system(leak, tol).residual;

  const Realization Gwv = plant.G_wv();
  const Realization mwv = parallel_sum(Gwv, leak);
  out.mwv_invariance_residual =
      frequency_mismatch(Gwv, mwv, common_sample_points(Gwv, mwv, 32));

  out.monte_carlo = monte_carlo_trials(K, plant, f_wv, n_trials, seed);
  out.overall = out.constraint_residual < tol && out.qtilde_stable.is_hurwitz &&
                std::all_of(out.monte_carlo.begin(), out.monte_carlo.end(),
                            [](const MonteCarloTrial& t) { return t.stable(); });
  return out;
}

struct OutputRectifyingVerdict {
  double kgyv_residual = 0.0;
  StabilityVerdict q_stable;
  bool pass = false;
};

inline OutputRectifyingVerdict check_output_rectifying(
    const Realization& K, const Plant& plant, double tol = kDefaultCheckTol) {
  plant.validate();
  OutputRectifyingVerdict out;
  out.kgyv_residual = is_zero_system(series(K, plant.G_yv()), tol).residual;
  out.q_stable = is_hurwitz(minimal_reduce(feedback(plant.G_yu(), K)));
  out.pass = out.kgyv_residual < tol && out.q_stable.is_hurwitz;
  return out;
}

/// Observer-based stabilizer of `model`: the central controller of its
/// doubly coprime factorization. `model` should be the realization whose
/// states Ghat_yv shares, so that Qhat Ghat_yv is stabilized as well.
inline Realization synthesize_internal(const Realization& model,
                                       double margin = kDefaultGainMargin) {
  try {
    const CoprimeFactors f = doubly_coprime(model, margin);
    return youla_controller(f, Realization::zero(model.inputs(), model.outputs()));
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::kUnstabilizable) throw;
    throw Error(ErrorKind::kAssumptionViolation,
                "internal controller: the reduced model is not stabilizable "
                "from u or not detectable (" + e.detail() + ")");
  }
}

/// Qhat Ghat_yv as the v -> u map of Khat closed around the shared
/// realization, so the modes of Ahat appear only through the stable loop.
inline Realization qhat_ghat_yv(const RectifiedModel& rect, const Realization& Khat) {
  const Realization& S = rect.shared;
  const auto m = rect.m();
  const auto q = rect.original.u_dim();
  const auto ny = S.outputs();
  Realization P;
  P.A = S.A;
  P.B = S.B;
  P.C = Matrix::Zero(q + ny, S.states());
  P.C.bottomRows(ny) = S.C;
  P.D = Matrix::Zero(q + ny, m + q);
  P.D.topRightCorner(q, q).setIdentity();
  P.D.bottomRows(ny) = S.D;
  return lower_lft(P, m, q, Khat);
}

struct RetrofitController {
  Realization Khat;
  RectifiedModel rect;
  Realization K;
  Realization Qhat;
  Realization Qhat_ghat_yv;
  Realization Q;
  StabilityVerdict qhat_stable;
  StabilityVerdict qhat_ghat_yv_stable;
  double kgyv_residual = 0.0;
  double q_identity_residual = 0.0;
  double k_factor_residual = 0.0;
};

/// K = Khat Xi, with the stored invariants checked.
inline RetrofitController assemble(const Realization& Khat,
                                   const RectifiedModel& rect,
                                   double tol = kDefaultCheckTol) {
  const auto p = rect.p();
  const auto m = rect.m();
  const Plant& plant = rect.original;
  require(Khat.inputs() == p - m && Khat.outputs() == plant.u_dim(),
          ErrorKind::kDimensionMismatch,
          "internal controller must map " + std::to_string(p - m) +
              " rectified outputs to " + std::to_string(plant.u_dim()) +
              " inputs");
  RetrofitController rc;
  rc.Khat = Khat;
  rc.rect = rect;
  const Realization cascade = series(Khat, rect.xi);
  rc.K = minimal_reduce(cascade);
  rc.k_factor_residual = frequency_mismatch(
      cascade, rc.K, common_sample_points(cascade, rc.K, 32));

  rc.Qhat = minimal_reduce(feedback(rect.ghat_yu_formula, Khat));
  rc.Qhat_ghat_yv = minimal_reduce(qhat_ghat_yv(rect, Khat));
  rc.qhat_stable = is_hurwitz(rc.Qhat);
  rc.qhat_ghat_yv_stable = is_hurwitz(rc.Qhat_ghat_yv);
  rc.Q = minimal_reduce(feedback(plant.G_yu(), rc.K));
  rc.kgyv_residual = is_zero_system(series(rc.K, plant.G_yv()), tol).residual;

  // Q = (Qhat P - Qhat Ghat_yv Pbar) T.
  const Realization rhs = series(
      parallel_sum(series(rc.Qhat, Realization::gain(rect.coords.P)),
                   series(rc.Qhat_ghat_yv, Realization::gain(rect.coords.Pbar)),
                   -1),
      Realization::gain(rect.T));
  rc.q_identity_residual =
      frequency_mismatch(rc.Q, rhs, common_sample_points(rc.Q, rhs, 32));

  require(rc.k_factor_residual < 1e-9, ErrorKind::kConstruction,
          "K differs from Khat Xi after reduction (" +
              std::to_string(rc.k_factor_residual) + ")");
  require(rc.kgyv_residual < tol, ErrorKind::kConstruction,
          "assembled K does not annihilate G_yv (residual " +
              std::to_string(rc.kgyv_residual) + ")");
  require(rc.q_identity_residual < kQIdentityTol, ErrorKind::kConstruction,
          "Q identity fails (" + std::to_string(rc.q_identity_residual) + ")");
  require(rc.qhat_stable.is_hurwitz && rc.qhat_ghat_yv_stable.is_hurwitz,
          ErrorKind::kConstruction,
          "internal controller leaves Qhat or Qhat Ghat_yv unstable (abscissas " +
              std::to_string(rc.qhat_stable.spectral_abscissa) + ", " +
              std::to_string(rc.qhat_ghat_yv_stable.spectral_abscissa) + ")");
  return rc;
}

struct SynthesisOptions {
  double degree_tol = kDefaultDegreeTol;
  double margin = kDefaultGainMargin;
  double check_tol = kDefaultCheckTol;
};

/// rectify -> internal controller on the shared reduced model -> assemble.
inline RetrofitController synthesize(const Plant& plant,
                                     const SynthesisOptions& opts = {}) {
  const RectifiedModel rect = rectify(plant, opts.degree_tol);
  const Realization Khat = synthesize_internal(rect.ghat_yu_formula, opts.margin);
  return assemble(Khat, rect, opts.check_tol);
}

struct GainSweepPoint {
  double gain = 0.0;
  double pre_abscissa = 0.0;   ///< preexisting loop (K = 0)
  double post_abscissa = 0.0;  ///< with the controller attached
};

struct GainSweep {
  std::vector<GainSweepPoint> points;
  /// First gain whose preexisting loop is stable but the retrofitted loop is
  /// not.
  std::optional<GainSweepPoint> counterexample;
};

/// Static environments Gbar = k for k = lo, lo + step, ..., hi on a plant
/// with scalar v and w.
inline GainSweep static_gain_sweep(const Plant& plant, const Realization& K,
                                   double lo = -10.0, double hi = 10.0,
                                   double step = 0.01) {
  require(plant.v_dim() == 1 && plant.w_dim() == 1,
          ErrorKind::kDimensionMismatch,
          "static gain sweep needs scalar v and w");
  require(step > 0.0 && hi >= lo, ErrorKind::kDimensionMismatch,
          "gain sweep range");
  GainSweep out;
  const Realization K0 = Realization::zero(plant.u_dim(), plant.y_dim());
  const auto count = static_cast<long>(std::floor((hi - lo) / step + 1e-9));
  for (long i = 0; i <= count; ++i) {
    const double k = lo + static_cast<double>(i) * step;
    const Realization Gbar = Realization::gain(Matrix::Constant(1, 1, k));
    GainSweepPoint pt;
    pt.gain = k;
    pt.pre_abscissa =
        is_hurwitz(close_loop(plant, Gbar, K0).realization).spectral_abscissa;
    pt.post_abscissa =
        is_hurwitz(close_loop(plant, Gbar, K).realization).spectral_abscissa;
    out.points.push_back(pt);
    if (!out.counterexample && pt.pre_abscissa < 0.0 && pt.post_abscissa > 0.0)
      out.counterexample = pt;
  }
  return out;
}

}  // namespace retrofit
