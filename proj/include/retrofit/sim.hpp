#pragma once

// Closed-loop assembly of plant, environment and controller, and fixed-step
// RK4 integration.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "retrofit/coprime.hpp"
#include "retrofit/errors.hpp"
#include "retrofit/geometry.hpp"
#include "retrofit/statespace.hpp"

namespace retrofit {

/// Interconnection with perturbation inputs [d_u; d_y; d_v; d_w] and outputs
/// [u; y; v; w]. States ordered [x_plant; x_env; x_ctrl].
///
///   u = K (y + d_y) + d_u,   v = Gbar (w + d_w) + d_v.
struct ClosedLoop {
  Realization realization;
  Eigen::Index plant_states = 0;
  Eigen::Index env_states = 0;
  Eigen::Index ctrl_states = 0;
  Eigen::Index u_dim = 0, y_dim = 0, v_dim = 0, w_dim = 0;
};

inline ClosedLoop close_loop(const Plant& plant, const Realization& Gbar,
                             const Realization& K) {
  plant.validate();
  const auto n = plant.n();
  const auto q = plant.u_dim();
  const auto p = plant.y_dim();
  const auto m = plant.v_dim();
  const auto wd = plant.w_dim();
  require(Gbar.inputs() == wd && Gbar.outputs() == m,
          ErrorKind::kDimensionMismatch,
          "environment must map w (" + std::to_string(wd) + ") to v (" +
              std::to_string(m) + ")");
  require(K.inputs() == p && K.outputs() == q, ErrorKind::kDimensionMismatch,
          "controller must map y (" + std::to_string(p) + ") to u (" +
              std::to_string(q) + ")");

  // Generalized plant: inputs [d_u d_y d_v d_w | v_e u_c],
  // outputs [u y v w | w + d_w, y + d_y].
  const auto exo = q + p + m + wd;
  Realization P;
  P.A = plant.A;
  P.B = Matrix::Zero(n, exo + m + q);
  P.B.middleCols(0, q) = plant.B;
  P.B.middleCols(q + p, m) = plant.L;
  P.B.middleCols(exo, m) = plant.L;
  P.B.middleCols(exo + m, q) = plant.B;
  P.C = Matrix::Zero(exo + wd + p, n);
  P.C.middleRows(q, p) = plant.C;
  P.C.middleRows(q + p + m, wd) = plant.Gamma;
  P.C.middleRows(exo, wd) = plant.Gamma;
  P.C.middleRows(exo + wd, p) = plant.C;
  P.D = Matrix::Zero(exo + wd + p, exo + m + q);
  P.D.block(0, 0, q, q).setIdentity();             // u <- d_u
  P.D.block(0, exo + m, q, q).setIdentity();       // u <- u_c
  P.D.block(q + p, q + p, m, m).setIdentity();     // v <- d_v
  P.D.block(q + p, exo, m, m).setIdentity();       // v <- v_e
  P.D.block(exo, q + p + m, wd, wd).setIdentity(); // meas w <- d_w
  P.D.block(exo + wd, q, p, p).setIdentity();      // meas y <- d_y

  ClosedLoop cl;
  cl.realization = lower_lft(P, exo, exo, block_diag(Gbar, K));
  cl.plant_states = n;
  cl.env_states = Gbar.states();
  cl.ctrl_states = K.states();
  cl.u_dim = q;
  cl.y_dim = p;
  cl.v_dim = m;
  cl.w_dim = wd;
  return cl;
}

inline ClosedLoop close_loop(const Plant& plant, const EnvironmentSample& env,
                             const Realization& K) {
  return close_loop(plant, env.Gbar, K);
}

struct Trajectory {
  std::vector<double> times;
  std::vector<Vector> states;
  std::vector<Vector> outputs;
  std::vector<Vector> inputs;
};

using InputSignal = std::function<Vector(double)>;

namespace detail {

inline Eigen::Index step_count(double dt, double t_final) {
  require(dt > 0.0 && std::isfinite(dt), ErrorKind::kDimensionMismatch,
          "dt must be positive");
  require(t_final > 0.0 && std::isfinite(t_final),
          ErrorKind::kDimensionMismatch, "t_final must be positive");
  return static_cast<Eigen::Index>(std::ceil(t_final / dt - 1e-9));
}

/// Shared RK4 loop; `stage_input(k, c)` returns the input at t_k + c dt.
template <typename StageInput>
Trajectory integrate(const Realization& G, const Vector& x0, double dt,
                     Eigen::Index steps, StageInput stage_input) {
  require(x0.size() == G.states(), ErrorKind::kDimensionMismatch,
          "initial state has " + std::to_string(x0.size()) +
              " entries, loop has " + std::to_string(G.states()) + " states");
  const auto f = [&](const Vector& x, const Vector& u) -> Vector {
    return G.A * x + G.B * u;
  };
  Trajectory traj;
  traj.times.reserve(steps + 1);
  traj.states.reserve(steps + 1);
  Vector x = x0;
  for (Eigen::Index k = 0;; ++k) {
    const double t = static_cast<double>(k) * dt;
    const Vector u0 = stage_input(k, 0.0);
    traj.times.push_back(t);
    traj.states.push_back(x);
    traj.inputs.push_back(u0);
    traj.outputs.push_back(G.C * x + G.D * u0);
    if (k == steps) break;

    const Vector uh = stage_input(k, 0.5);
    const Vector u1 = stage_input(k, 1.0);
    const Vector k1 = f(x, u0);
    const Vector k2 = f(x + 0.5 * dt * k1, uh);
    const Vector k3 = f(x + 0.5 * dt * k2, uh);
    const Vector k4 = f(x + dt * k3, u1);
    x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if (!x.allFinite()) {
      throw Error(ErrorKind::kDivergence,
                  "state became non-finite at t = " +
                      std::to_string(static_cast<double>(k + 1) * dt));
    }
  }
  return traj;
}

}  // namespace detail

/// RK4 with the input evaluated at the stage times.
inline Trajectory simulate(const ClosedLoop& cl, const Vector& x0,
                           const InputSignal& input, double dt,
                           double t_final) {
  const Eigen::Index steps = detail::step_count(dt, t_final);
  const auto nin = cl.realization.inputs();
  return detail::integrate(
      cl.realization, x0, dt, steps, [&](Eigen::Index k, double c) {
        Vector u = input ? input((static_cast<double>(k) + c) * dt)
                         : Vector::Zero(nin);
        require(u.size() == nin, ErrorKind::kDimensionMismatch,
                "input signal has wrong length");
        return u;
      });
}

/// RK4 with sampled inputs held constant over each step (row k applies on
/// [t_k, t_{k+1})); missing trailing rows repeat the last sample.
inline Trajectory simulate(const ClosedLoop& cl, const Vector& x0,
                           const Matrix& samples, double dt, double t_final) {
  const Eigen::Index steps = detail::step_count(dt, t_final);
  const auto nin = cl.realization.inputs();
  require(samples.cols() == nin, ErrorKind::kDimensionMismatch,
          "input samples need one column per loop input");
  return detail::integrate(
      cl.realization, x0, dt, steps, [&](Eigen::Index k, double) -> Vector {
        if (samples.rows() == 0) return Vector::Zero(nin);
        return samples.row(std::min(k, samples.rows() - 1)).transpose();
      });
}

/// Zero-input simulation.
inline Trajectory simulate(const ClosedLoop& cl, const Vector& x0, double dt,
                           double t_final) {
  return simulate(cl, x0, InputSignal{}, dt, t_final);
}

}  // namespace retrofit
