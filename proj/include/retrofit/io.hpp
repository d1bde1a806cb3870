#pragma once

// JSON model/controller files and CSV trajectory export.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>
#include <string>

#include "json.hpp"
#include "retrofit/errors.hpp"
#include "retrofit/geometry.hpp"
#include "retrofit/retrofit.hpp"
#include "retrofit/sim.hpp"
#include "retrofit/statespace.hpp"

namespace retrofit::io {

using json = nlohmann::json;

/// Row-major nested array. A matrix with no rows is written as [], and one
/// with rows but no columns as [[], ...].
inline json matrix_to_json(const Matrix& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline Matrix matrix_from_json(const json& j, Eigen::Index rows,
                               Eigen::Index cols, const std::string& name) {
  require(j.is_array(), ErrorKind::kParse, name + ": expected an array of rows");
  if (rows == 0) {
    require(j.empty() || std::all_of(j.begin(), j.end(),
                                     [](const json& r) { return r.is_array(); }),
            ErrorKind::kParse, name + ": expected an empty matrix");
    return Matrix(0, cols);
  }
  require(static_cast<Eigen::Index>(j.size()) == rows, ErrorKind::kParse,
          name + ": expected " + std::to_string(rows) + " rows, got " +
              std::to_string(j.size()));
  Matrix M(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const json& row = j[i];
    require(row.is_array() && static_cast<Eigen::Index>(row.size()) == cols,
            ErrorKind::kParse,
            name + ": row " + std::to_string(i) + " must have " +
                std::to_string(cols) + " entries");
    for (Eigen::Index k = 0; k < cols; ++k) {
      require(row[k].is_number(), ErrorKind::kParse,
              name + "[" + std::to_string(i) + "][" + std::to_string(k) +
                  "] is not a number");
      const double x = row[k].get<double>();
      require(std::isfinite(x), ErrorKind::kParse,
              name + "[" + std::to_string(i) + "][" + std::to_string(k) +
                  "] is not finite");
      M(i, k) = x;
    }
  }
  return M;
}

inline Eigen::Index dim_from_json(const json& j, const char* key,
                                  const std::string& where) {
  require(j.contains(key) && j[key].is_number_integer() && j[key].get<long>() >= 0,
          ErrorKind::kParse,
          where + ": \"" + key + "\" must be a non-negative integer");
  return j[key].get<Eigen::Index>();
}

inline json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::kParse, origin + ": " + e.what());
  }
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorKind::kParse, "cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kParse, "cannot write " + path);
  out << text;
  require(static_cast<bool>(out), ErrorKind::kParse, "write failed: " + path);
}

// Plant files -------------------------------------------------------------

inline Plant plant_from_json(const json& j) {
  require(j.is_object(), ErrorKind::kParse, "plant: expected a JSON object");
  const Eigen::Index n = dim_from_json(j, "n", "plant");
  require(j.contains("dims") && j["dims"].is_object(), ErrorKind::kParse,
          "plant: missing \"dims\" object");
  const json& d = j["dims"];
  const Eigen::Index m = dim_from_json(d, "v", "plant.dims");
  const Eigen::Index wd = dim_from_json(d, "w", "plant.dims");
  const Eigen::Index q = dim_from_json(d, "u", "plant.dims");
  const Eigen::Index p = dim_from_json(d, "y", "plant.dims");
  for (const char* key : {"A", "L", "B", "Gamma", "C"})
    require(j.contains(key), ErrorKind::kParse,
            std::string("plant: missing \"") + key + "\"");
  Plant plant{matrix_from_json(j["A"], n, n, "A"),
              matrix_from_json(j["L"], n, m, "L"),
              matrix_from_json(j["B"], n, q, "B"),
              matrix_from_json(j["Gamma"], wd, n, "Gamma"),
              matrix_from_json(j["C"], p, n, "C")};
  plant.validate();
  return plant;
}

inline json plant_to_json(const Plant& plant) {
  json j;
  j["n"] = plant.n();
  j["dims"] = {{"v", plant.v_dim()},
               {"w", plant.w_dim()},
               {"u", plant.u_dim()},
               {"y", plant.y_dim()}};
  j["A"] = matrix_to_json(plant.A);
  j["L"] = matrix_to_json(plant.L);
  j["B"] = matrix_to_json(plant.B);
  j["Gamma"] = matrix_to_json(plant.Gamma);
  j["C"] = matrix_to_json(plant.C);
  return j;
}

inline Plant load_plant(const std::string& path) {
  return plant_from_json(parse_json_text(read_file(path), path));
}

// Controller files --------------------------------------------------------

struct ControllerFile {
  Realization K;
  json metadata = json::object();
};

inline ControllerFile controller_from_json(const json& j) {
  require(j.is_object(), ErrorKind::kParse, "controller: expected a JSON object");
  for (const char* key : {"A", "B", "C", "D"})
    require(j.contains(key), ErrorKind::kParse,
            std::string("controller: missing \"") + key + "\"");
  require(j.contains("dims") && j["dims"].is_object(), ErrorKind::kParse,
          "controller: missing \"dims\" object");
  const json& d = j["dims"];
  const Eigen::Index nk = dim_from_json(d, "states", "controller.dims");
  const Eigen::Index in = dim_from_json(d, "inputs", "controller.dims");
  const Eigen::Index out = dim_from_json(d, "outputs", "controller.dims");
  ControllerFile cf;
  cf.K = Realization{matrix_from_json(j["A"], nk, nk, "A"),
                     matrix_from_json(j["B"], nk, in, "B"),
                     matrix_from_json(j["C"], out, nk, "C"),
                     matrix_from_json(j["D"], out, in, "D")};
  if (j.contains("metadata")) {
    require(j["metadata"].is_object(), ErrorKind::kParse,
            "controller: \"metadata\" must be an object");
    cf.metadata = j["metadata"];
  }
  return cf;
}

inline json controller_to_json(const ControllerFile& cf) {
  json j;
  j["dims"] = {{"states", cf.K.states()},
               {"inputs", cf.K.inputs()},
               {"outputs", cf.K.outputs()}};
  j["A"] = matrix_to_json(cf.K.A);
  j["B"] = matrix_to_json(cf.K.B);
  j["C"] = matrix_to_json(cf.K.C);
  j["D"] = matrix_to_json(cf.K.D);
  j["metadata"] = cf.metadata;
  return j;
}

inline ControllerFile load_controller(const std::string& path) {
  return controller_from_json(parse_json_text(read_file(path), path));
}

/// Controller file for a synthesized controller, with the relative-degree
/// data, selectors, tolerances and the stored verdict.
inline ControllerFile make_controller_file(const RetrofitController& rc,
                                           const SynthesisOptions& opts) {
  ControllerFile cf;
  cf.K = rc.K;
  const auto& prof = rc.rect.profile;
  const auto m = prof.m;
  const auto p = rc.rect.p();
  json degrees = json::array();
  for (int r : prof.r) degrees.push_back(r);
  json capped = json::array();
  for (bool c : prof.capped) capped.push_back(static_cast<bool>(c));
  json pbar = json::array(), psel = json::array();
  for (Eigen::Index i = 0; i < m; ++i) pbar.push_back(i);
  for (Eigen::Index i = m; i < p; ++i) psel.push_back(i);
  cf.metadata = {
      {"relative_degrees", degrees},
      {"capped", capped},
      {"output_transform", matrix_to_json(rc.rect.T)},
      {"P_rows", psel},
      {"Pbar_rows", pbar},
      {"internal_controller_states", rc.Khat.states()},
      {"tolerances",
       {{"degree", opts.degree_tol},
        {"margin", opts.margin},
        {"check", opts.check_tol}}},
      {"verdict",
       {{"output_rectifying", true},
        {"kgyv_residual", rc.kgyv_residual},
        {"qhat_abscissa", rc.qhat_stable.spectral_abscissa},
        {"qhat_ghat_yv_abscissa", rc.qhat_ghat_yv_stable.spectral_abscissa},
        {"q_identity_residual", rc.q_identity_residual}}}};
  return cf;
}

// CSV ---------------------------------------------------------------------

inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// Columns: t, x_plant..., x_env..., x_ctrl..., u..., y..., v..., w...
inline void write_trajectory_csv(std::ostream& os, const ClosedLoop& cl,
                                 const Trajectory& traj) {
  std::vector<std::string> header{"t"};
  const auto add = [&](const char* prefix, Eigen::Index count) {
    for (Eigen::Index i = 1; i <= count; ++i)
      header.push_back(prefix + std::to_string(i));
  };
  add("x_plant_", cl.plant_states);
  add("x_env_", cl.env_states);
  add("x_ctrl_", cl.ctrl_states);
  add("u_", cl.u_dim);
  add("y_", cl.y_dim);
  add("v_", cl.v_dim);
  add("w_", cl.w_dim);
  for (std::size_t i = 0; i < header.size(); ++i)
    os << (i ? "," : "") << header[i];
  os << '\n';
  for (std::size_t k = 0; k < traj.times.size(); ++k) {
    os << format_double(traj.times[k]);
    for (Eigen::Index i = 0; i < traj.states[k].size(); ++i)
      os << ',' << format_double(traj.states[k](i));
    for (Eigen::Index i = 0; i < traj.outputs[k].size(); ++i)
      os << ',' << format_double(traj.outputs[k](i));
    os << '\n';
  }
}

}  // namespace retrofit::io
