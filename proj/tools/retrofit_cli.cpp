// retrofit: analyze, synthesize, verify and simulate output-rectifying
// retrofit controllers.
//
// Exit codes: 0 ok, 1 I/O or parse error, 2 assumption violation,
// 3 verification failure, 4 simulation divergence.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "retrofit/coprime.hpp"
#include "retrofit/errors.hpp"
#include "retrofit/geometry.hpp"
#include "retrofit/io.hpp"
#include "retrofit/rectifier.hpp"
#include "retrofit/retrofit.hpp"
#include "retrofit/sim.hpp"

namespace {

using retrofit::Error;
using retrofit::ErrorKind;
using retrofit::Matrix;
using retrofit::Vector;
using retrofit::require;
using json = nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitIo = 1;
constexpr int kExitAssumption = 2;
constexpr int kExitVerify = 3;
constexpr int kExitDivergence = 4;

int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kParse:
    case ErrorKind::kDimensionMismatch:
      return kExitIo;
    case ErrorKind::kAssumptionViolation:
    case ErrorKind::kUnstabilizable:
      return kExitAssumption;
    case ErrorKind::kDivergence:
      return kExitDivergence;
    default:
      return kExitVerify;
  }
}

std::string num(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

/// Outputs unaffected by v print as "inf".
std::string degrees_text(const std::vector<int>& r, const std::vector<bool>& capped) {
  std::string out;
  for (std::size_t i = 0; i < r.size(); ++i)
    out += (i ? " " : "") + (capped[i] ? std::string("inf") : std::to_string(r[i]));
  return out;
}

std::string matrix_rows(const Matrix& M, const std::string& indent) {
  std::string out;
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    out += indent + "[";
    for (Eigen::Index j = 0; j < M.cols(); ++j)
      out += (j ? ", " : "") + num(M(i, j));
    out += "]\n";
  }
  return out;
}

double env_default(const char* name, double fallback) {
  const char* raw = std::getenv(name);
  if (!raw || !*raw) return fallback;
  char* end = nullptr;
  const double value = std::strtod(raw, &end);
  if (end == raw || *end != '\0' || !(value > 0.0))
    throw Error(ErrorKind::kParse,
                std::string(name) + " must be a positive number, got '" + raw + "'");
  return value;
}

/// Text or JSON report on stdout, diagnostics on stderr.
struct Report {
  bool as_json = false;
  json doc = json::object();
  std::ostringstream text;

  void emit() const {
    if (as_json)
      std::cout << doc.dump(2) << '\n';
    else
      std::cout << text.str();
  }
};

int fail(Report& report, const Error& e) {
  const int code = exit_code_for(e.kind());
  if (report.as_json) {
    report.doc["error"] = {{"kind", retrofit::to_string(e.kind())},
                           {"message", e.what()}};
    report.doc["exit_code"] = code;
  }
  report.emit();
  std::cerr << "error: " << e.what() << '\n';
  return code;
}

// analyze -----------------------------------------------------------------

struct AnalyzeArgs {
  std::string model;
  double tol = retrofit::kDefaultDegreeTol;
  bool json = false;
};

int cmd_analyze(const AnalyzeArgs& a) {
  Report rep;
  rep.as_json = a.json;
  try {
    const retrofit::Plant plant = retrofit::io::load_plant(a.model);
    auto& t = rep.text;
    t << "plant: n=" << plant.n() << " v=" << plant.v_dim()
      << " w=" << plant.w_dim() << " u=" << plant.u_dim()
      << " y=" << plant.y_dim() << '\n';
    rep.doc["dims"] = {{"n", plant.n()},       {"v", plant.v_dim()},
                       {"w", plant.w_dim()},   {"u", plant.u_dim()},
                       {"y", plant.y_dim()}};

    retrofit::Complex bad;
    const bool unstab = retrofit::linalg::pbh_uncontrollable_mode(
        plant.A, plant.L, -1e-10, 1e-9, &bad);
    retrofit::Complex bad_obs;
    const bool undet = retrofit::linalg::pbh_uncontrollable_mode(
        plant.A.transpose(), plant.Gamma.transpose(), -1e-10, 1e-9, &bad_obs);
    t << "(A, L) stabilizable: " << (unstab ? "no, mode " + retrofit::linalg::format_complex(bad) : std::string("yes")) << '\n';
    t << "(Gamma, A) detectable: " << (undet ? "no, mode " + retrofit::linalg::format_complex(bad_obs) : std::string("yes")) << '\n';
    rep.doc["stabilizable_A_L"] = !unstab;
    rep.doc["detectable_Gamma_A"] = !undet;

    const auto raw = retrofit::markov_degrees(plant, a.tol);
    t << "relative degrees (input order): " << degrees_text(raw.r, raw.capped) << '\n';
    rep.doc["relative_degrees_input_order"] = raw.r;

    try {
      const auto prof = retrofit::relative_degree(plant, a.tol);
      const retrofit::Plant transformed = plant.with_output_transform(prof.T);
      const auto nf = retrofit::build_coords(transformed, prof);
      t << "relative degrees (after transform): " << degrees_text(prof.r, prof.capped) << '\n';
      t << "output transform T:\n" << matrix_rows(prof.T, "  ");
      t << "decoupling rows smallest singular value: "
        << num(retrofit::linalg::smallest_singular_value(prof.decoupling_rows)) << '\n';
      t << "normal form: z-dimension " << nf.z_dim() << ", condition "
        << num(nf.condition) << '\n';
      t << "assumption on relative degrees: satisfied\n";
      rep.doc["relative_degrees"] = prof.r;
      rep.doc["output_transform"] = retrofit::io::matrix_to_json(prof.T);
      rep.doc["z_dim"] = nf.z_dim();
      rep.doc["coordinate_condition"] = nf.condition;
      rep.doc["assumption_satisfied"] = true;
      rep.emit();
      return kExitOk;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::kAssumptionViolation &&
          e.kind() != ErrorKind::kConstruction)
        throw;
      t << "assumption on relative degrees: violated\n";
      rep.doc["assumption_satisfied"] = false;
      throw Error(ErrorKind::kAssumptionViolation, e.detail());
    }
  } catch (const Error& e) {
    return fail(rep, e);
  }
}

// synthesize --------------------------------------------------------------

struct SynthesizeArgs {
  std::string model;
  std::string out;
  double tol = retrofit::kDefaultDegreeTol;
  double margin = retrofit::kDefaultGainMargin;
  bool json = false;
};

int cmd_synthesize(const SynthesizeArgs& a) {
  Report rep;
  rep.as_json = a.json;
  try {
    const retrofit::Plant plant = retrofit::io::load_plant(a.model);
    retrofit::SynthesisOptions opts;
    opts.degree_tol = a.tol;
    opts.margin = a.margin;
    opts.check_tol = env_default("RETROFIT_CHECK_TOL", retrofit::kDefaultCheckTol);
    const auto rc = retrofit::synthesize(plant, opts);
    const auto cf = retrofit::io::make_controller_file(rc, opts);
    retrofit::io::write_file(a.out, retrofit::io::controller_to_json(cf).dump(2) + "\n");

    auto& t = rep.text;
    t << "relative degrees: " << degrees_text(rc.rect.profile.r, rc.rect.profile.capped) << '\n';
    t << "reduced model states: " << rc.rect.shared.states() << '\n';
    t << "internal controller states: " << rc.Khat.states() << '\n';
    t << "controller states: " << rc.K.states() << '\n';
    t << "K G_yv residual: " << num(rc.kgyv_residual) << '\n';
    t << "Qhat spectral abscissa: " << num(rc.qhat_stable.spectral_abscissa) << '\n';
    t << "Qhat Ghat_yv spectral abscissa: "
      << num(rc.qhat_ghat_yv_stable.spectral_abscissa) << '\n';
    t << "Q identity residual: " << num(rc.q_identity_residual) << '\n';
    t << "wrote " << a.out << '\n';
    rep.doc = cf.metadata;
    rep.doc["controller_states"] = rc.K.states();
    rep.doc["output"] = a.out;
    rep.emit();
    return kExitOk;
  } catch (const Error& e) {
    return fail(rep, e);
  }
}

// verify ------------------------------------------------------------------

struct VerifyArgs {
  std::string model;
  std::string controller;
  int trials = 200;
  std::uint64_t seed = 0;
  double tol = retrofit::kDefaultCheckTol;
  double margin = retrofit::kDefaultGainMargin;
  bool json = false;
};

int cmd_verify(const VerifyArgs& a) {
  Report rep;
  rep.as_json = a.json;
  try {
    const retrofit::Plant plant = retrofit::io::load_plant(a.model);
    const auto cf = retrofit::io::load_controller(a.controller);
    require(cf.K.inputs() == plant.y_dim() && cf.K.outputs() == plant.u_dim(),
            ErrorKind::kDimensionMismatch,
            "controller maps " + std::to_string(cf.K.inputs()) + " inputs to " +
                std::to_string(cf.K.outputs()) + " outputs; plant has y=" +
                std::to_string(plant.y_dim()) + ", u=" +
                std::to_string(plant.u_dim()));

    const auto orv = retrofit::check_output_rectifying(cf.K, plant, a.tol);
    const auto f_wv = retrofit::doubly_coprime(plant.G_wv(), a.margin);
    const auto rv =
        retrofit::check_retrofit(cf.K, plant, f_wv, a.tol, a.trials, a.seed);

    int unstable = 0;
    for (const auto& trial : rv.monte_carlo) unstable += trial.stable() ? 0 : 1;

    bool metadata_ok = true;
    std::optional<bool> stored;
    if (cf.metadata.contains("verdict") &&
        cf.metadata["verdict"].contains("output_rectifying") &&
        cf.metadata["verdict"]["output_rectifying"].is_boolean()) {
      stored = cf.metadata["verdict"]["output_rectifying"].get<bool>();
      metadata_ok = *stored == orv.pass;
    }
    const bool pass = rv.overall && metadata_ok;

    auto& t = rep.text;
    t << "output-rectifying: K G_yv residual " << num(orv.kgyv_residual)
      << ", Q spectral abscissa " << num(orv.q_stable.spectral_abscissa) << ", "
      << (orv.pass ? "yes" : "no") << '\n';
    t << "constraint residual G_wu Qtilde G_yv: " << num(rv.constraint_residual) << '\n';
    t << "Qtilde spectral abscissa: " << num(rv.qtilde_stable.spectral_abscissa) << '\n';
    t << "M_wv invariance residual: " << num(rv.mwv_invariance_residual) << '\n';
    t << "environments: " << rv.monte_carlo.size() << " sampled (seed " << a.seed
      << "), " << unstable << " unstable, worst spectral abscissa "
      << num(rv.monte_carlo.empty() ? 0.0 : rv.worst_abscissa()) << '\n';
    if (stored)
      t << "stored verdict: " << (metadata_ok ? "consistent" : "inconsistent") << '\n';
    t << "verdict: " << (pass ? "PASS" : "FAIL") << '\n';

    json trials = json::array();
    for (const auto& trial : rv.monte_carlo) {
      json entry = {{"seed", trial.seed}, {"order", trial.order}};
      if (trial.error.empty())
        entry["spectral_abscissa"] = trial.spectral_abscissa;
      else
        entry["error"] = trial.error;
      trials.push_back(std::move(entry));
    }
    rep.doc = {{"output_rectifying",
                {{"kgyv_residual", orv.kgyv_residual},
                 {"q_abscissa", orv.q_stable.spectral_abscissa},
                 {"pass", orv.pass}}},
               {"constraint_residual", rv.constraint_residual},
               {"qtilde_abscissa", rv.qtilde_stable.spectral_abscissa},
               {"mwv_invariance_residual", rv.mwv_invariance_residual},
               {"monte_carlo", trials},
               {"unstable_trials", unstable},
               {"metadata_consistent", metadata_ok},
               {"pass", pass}};
    rep.emit();
    return pass ? kExitOk : kExitVerify;
  } catch (const Error& e) {
    return fail(rep, e);
  }
}

// simulate ----------------------------------------------------------------

struct SimulateArgs {
  std::string model;
  std::string controller;
  std::uint64_t env_seed = 0;
  int env_order = 1;
  std::string x0;
  double dt = 1e-2;
  double t_final = 10.0;
  std::string out;
  double margin = retrofit::kDefaultGainMargin;
  bool json = false;
};

/// "a,b,c" lists every state; "random:SEED" draws unit normals. The default
/// sets the plant states to one and everything else to zero.
Vector parse_x0(const std::string& text, const retrofit::ClosedLoop& cl) {
  const auto n = cl.realization.states();
  if (text.empty()) {
    Vector x = Vector::Zero(n);
    x.head(cl.plant_states).setOnes();
    return x;
  }
  if (text.rfind("random:", 0) == 0) {
    const std::string seed_text = text.substr(7);
    char* end = nullptr;
    const unsigned long long seed = std::strtoull(seed_text.c_str(), &end, 10);
    require(!seed_text.empty() && *end == '\0', ErrorKind::kParse,
            "--x0 random:SEED needs an integer seed");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x(i) = normal(rng);
    return x;
  }
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    char* end = nullptr;
    const double v = std::strtod(item.c_str(), &end);
    require(!item.empty() && *end == '\0' && std::isfinite(v), ErrorKind::kParse,
            "--x0 entry '" + item + "' is not a finite number");
    values.push_back(v);
  }
  require(static_cast<Eigen::Index>(values.size()) == n, ErrorKind::kParse,
          "--x0 has " + std::to_string(values.size()) +
              " entries, the closed loop has " + std::to_string(n) + " states");
  return Eigen::Map<Vector>(values.data(), n);
}

int cmd_simulate(const SimulateArgs& a) {
  Report rep;
  rep.as_json = a.json;
  try {
    const retrofit::Plant plant = retrofit::io::load_plant(a.model);
    const auto cf = retrofit::io::load_controller(a.controller);
    require(a.dt > 0.0 && a.t_final > 0.0, ErrorKind::kParse,
            "--dt and --t-final must be positive");
    require(a.env_order >= 0, ErrorKind::kParse, "--env-order must be >= 0");
    const auto f_wv = retrofit::doubly_coprime(plant.G_wv(), a.margin);
    const auto env = retrofit::sample_environment(f_wv, a.env_order, a.env_seed);
    const auto cl = retrofit::close_loop(plant, env, cf.K);
    const Vector x0 = parse_x0(a.x0, cl);
    const auto traj = retrofit::simulate(cl, x0, a.dt, a.t_final);

    std::ostringstream csv;
    retrofit::io::write_trajectory_csv(csv, cl, traj);
    const double abscissa = retrofit::is_hurwitz(cl.realization).spectral_abscissa;
    if (a.out.empty()) {
      std::cout << csv.str();
      return kExitOk;
    }
    retrofit::io::write_file(a.out, csv.str());
    auto& t = rep.text;
    t << "closed loop: " << cl.plant_states << " plant, " << cl.env_states
      << " environment, " << cl.ctrl_states << " controller states\n";
    t << "spectral abscissa: " << num(abscissa) << '\n';
    t << "steps: " << traj.times.size() - 1 << ", final time " << num(traj.times.back()) << '\n';
    t << "state norm: initial " << num(traj.states.front().norm()) << ", final "
      << num(traj.states.back().norm()) << '\n';
    t << "wrote " << a.out << '\n';
    rep.doc = {{"spectral_abscissa", abscissa},
               {"steps", traj.times.size() - 1},
               {"final_time", traj.times.back()},
               {"initial_state_norm", traj.states.front().norm()},
               {"final_state_norm", traj.states.back().norm()},
               {"output", a.out}};
    rep.emit();
    return kExitOk;
  } catch (const Error& e) {
    return fail(rep, e);
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Output-rectifying retrofit controller toolkit"};
  app.require_subcommand(1);

  double degree_tol = retrofit::kDefaultDegreeTol;
  double check_tol = retrofit::kDefaultCheckTol;
  try {
    degree_tol = env_default("RETROFIT_DEGREE_TOL", degree_tol);
    check_tol = env_default("RETROFIT_CHECK_TOL", check_tol);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitIo;
  }

  AnalyzeArgs an;
  an.tol = degree_tol;
  auto* analyze = app.add_subcommand("analyze", "relative degrees, output transform, normal-form data");
  analyze->add_option("model", an.model, "plant JSON file")->required();
  analyze->add_option("--tol", an.tol, "relative-degree tolerance")->capture_default_str();
  analyze->add_flag("--json", an.json, "machine-readable report");

  SynthesizeArgs sy;
  sy.tol = degree_tol;
  auto* synth = app.add_subcommand("synthesize", "build an output-rectifying retrofit controller");
  synth->add_option("model", sy.model, "plant JSON file")->required();
  synth->add_option("--out", sy.out, "controller JSON file to write")->required();
  synth->add_option("--tol", sy.tol, "relative-degree tolerance")->capture_default_str();
  synth->add_option("--margin", sy.margin, "stability margin of the internal controller")->capture_default_str();
  synth->add_flag("--json", sy.json, "machine-readable report");

  VerifyArgs ve;
  ve.tol = check_tol;
  auto* verify = app.add_subcommand("verify", "check a controller against the plant and sampled environments");
  verify->add_option("model", ve.model, "plant JSON file")->required();
  verify->add_option("controller", ve.controller, "controller JSON file")->required();
  verify->add_option("--trials", ve.trials, "number of sampled environments")->capture_default_str()->check(CLI::NonNegativeNumber);
  verify->add_option("--seed", ve.seed, "first environment seed")->capture_default_str();
  verify->add_option("--tol", ve.tol, "zero-test tolerance")->capture_default_str();
  verify->add_option("--margin", ve.margin, "margin of the coprime factorization of G_wv")->capture_default_str();
  verify->add_flag("--json", ve.json, "machine-readable report");

  SimulateArgs si;
  auto* simulate = app.add_subcommand("simulate", "integrate the closed loop with one sampled environment");
  simulate->add_option("model", si.model, "plant JSON file")->required();
  simulate->add_option("controller", si.controller, "controller JSON file")->required();
  simulate->add_option("--env-seed", si.env_seed, "environment seed")->capture_default_str();
  simulate->add_option("--env-order", si.env_order, "environment Youla parameter order")->capture_default_str();
  simulate->add_option("--x0", si.x0, "initial state: comma list or random:SEED");
  simulate->add_option("--dt", si.dt, "step size in seconds")->capture_default_str();
  simulate->add_option("--t-final", si.t_final, "final time in seconds")->capture_default_str();
  simulate->add_option("--out", si.out, "CSV file (stdout when omitted)");
  simulate->add_option("--margin", si.margin, "margin of the coprime factorization of G_wv")->capture_default_str();
  simulate->add_flag("--json", si.json, "machine-readable summary");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitIo;
  }

  if (analyze->parsed()) return cmd_analyze(an);
  if (synth->parsed()) return cmd_synthesize(sy);
  if (verify->parsed()) return cmd_verify(ve);
  return cmd_simulate(si);
}
