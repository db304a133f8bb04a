#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sdot/oracle.hpp"
#include "sdot/problem.hpp"
#include "sdot/solver.hpp"
#include "sdot/storage_fee.hpp"

namespace sdot::io {

using Json = nlohmann::ordered_json;

/// Parsed problem configuration plus the output paths it names.
struct ProblemConfig {
  std::optional<Problem> problem;
  SolverConfig solver;
  OracleConfig oracle;
  std::string solution_path = "solution.json";
  std::string cells_path;  // empty: no cell export
  std::string oracle_path = "oracle.json";
  std::string stability_json_path = "stability.json";
  std::string stability_csv_path = "stability.csv";
};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InputError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InputError("cannot write " + p.string());
  out << text;
}

inline std::string fmt17(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

/// JSON text with every floating-point number printed to 17 significant
/// digits; non-finite numbers become null.
inline std::string dump(const Json& j, int indent = 2, int depth = 0) {
  const std::string pad(static_cast<std::size_t>(indent * (depth + 1)), ' ');
  const std::string close(static_cast<std::size_t>(indent * depth), ' ');
  switch (j.type()) {
    case Json::value_t::number_float: {
      const double x = j.get<double>();
      return std::isfinite(x) ? fmt17(x) : "null";
    }
    case Json::value_t::array: {
      if (j.empty()) return "[]";
      bool flat = true;
      for (const auto& e : j) flat = flat && !e.is_structured();
      std::string s = "[";
      std::size_t k = 0;
      for (const auto& e : j) {
        s += flat ? (k ? ", " : "") : (k ? ",\n" : "\n") + pad;
        s += dump(e, indent, depth + 1);
        ++k;
      }
      return s + (flat ? "]" : "\n" + close + "]");
    }
    case Json::value_t::object: {
      if (j.empty()) return "{}";
      std::string s = "{";
      std::size_t k = 0;
      for (auto it = j.begin(); it != j.end(); ++it, ++k)
        s += (k ? ",\n" : "\n") + pad + Json(it.key()).dump() + ": " + dump(it.value(), indent, depth + 1);
      return s + "\n" + close + "}";
    }
    default:
      return j.dump();
  }
}

namespace detail {

[[noreturn]] inline void field_error(const std::string& key, const std::string& what) {
  throw InputError("config: " + key + ": " + what);
}

inline double number(const Json& j, const std::string& key) {
  if (!j.is_number()) field_error(key, "expected a number");
  return j.get<double>();
}

inline std::vector<double> numbers(const Json& j, const std::string& key) {
  if (!j.is_array()) field_error(key, "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], key + "[" + std::to_string(i) + "]"));
  return out;
}

inline std::string text(const Json& j, const std::string& key) {
  if (!j.is_string()) field_error(key, "expected a string");
  return j.get<std::string>();
}

inline void only_keys(const Json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) field_error(where, "expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : keys) known = known || it.key() == k;
    if (!known) field_error(where + "." + it.key(), "unknown key");
  }
}

}  // namespace detail

/// Reads a measure CSV: header x1..xn,mass. Masses are renormalized to sum
/// 1, with a warning on `warn` when the raw sum is off by more than 1e-6.
inline QuadratureMeasure read_measure_csv(const std::filesystem::path& path, std::ostream* warn = &std::cerr) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty file");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  std::vector<std::string> header;
  {
    std::stringstream hs(line);
    std::string cell;
    while (std::getline(hs, cell, ',')) header.push_back(cell);
  }
  if (header.size() < 2 || header.back() != "mass")
    throw InputError(path.string() + ": header must be x1,...,xn,mass");
  const std::size_t dim = header.size() - 1;
  for (std::size_t d = 0; d < dim; ++d)
    if (header[d] != "x" + std::to_string(d + 1))
      throw InputError(path.string() + ": header column " + std::to_string(d + 1) + " must be x" +
                       std::to_string(d + 1));
  std::vector<double> coords, masses;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ls, cell, ',')) {
      try {
        std::size_t used = 0;
        vals.push_back(std::stod(cell, &used));
        if (cell.find_first_not_of(" \t", used) != std::string::npos) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        throw InputError(path.string() + ": row " + std::to_string(row) + ": not a number: " + cell);
      }
    }
    if (vals.size() != dim + 1)
      throw InputError(path.string() + ": row " + std::to_string(row) + ": expected " + std::to_string(dim + 1) +
                       " columns");
    coords.insert(coords.end(), vals.begin(), vals.end() - 1);
    masses.push_back(vals.back());
  }
  if (masses.empty()) throw InputError(path.string() + ": no data rows");
  for (double m : masses)
    if (!(m > 0.0)) throw InputError(path.string() + ": masses must be positive");
  const double total = pairwise_sum(masses);
  if (std::abs(total - 1.0) > 1e-6 && warn)
    *warn << "warning: " << path.string() << ": masses sum to " << fmt17(total) << "; renormalized\n";
  for (auto& m : masses) m /= total;
  // Re-normalize once more so the rounded masses pass the 1e-12 sum check.
  const double again = pairwise_sum(masses);
  for (auto& m : masses) m /= again;
  return QuadratureMeasure(PointCloud(dim, std::move(coords)), std::move(masses));
}

inline StorageFee parse_fee(const Json& j, std::size_t sites) {
  using namespace detail;
  if (!j.is_object()) field_error("fee", "expected an object");
  if (!j.contains("type")) field_error("fee.type", "missing");
  const std::string type = text(j["type"], "fee.type");
  StorageFee fee;
  auto need = [&](const char* key) -> const Json& {
    if (!j.contains(key)) field_error(std::string("fee.") + key, "missing for fee type " + type);
    return j[key];
  };
  try {
    if (type == "zero") {
      only_keys(j, "fee", {"type", "offset"});
      fee = StorageFee::zero(sites);
    } else if (type == "linear") {
      only_keys(j, "fee", {"type", "a", "offset"});
      fee = StorageFee::linear(numbers(need("a"), "fee.a"));
    } else if (type == "quadratic") {
      only_keys(j, "fee", {"type", "sigma", "offset"});
      fee = StorageFee::quadratic(sites, number(need("sigma"), "fee.sigma"));
    } else if (type == "separable") {
      only_keys(j, "fee", {"type", "breakpoints", "offset"});
      const Json& bp = need("breakpoints");
      if (!bp.is_array()) field_error("fee.breakpoints", "expected one table per site");
      std::vector<std::vector<std::pair<double, double>>> tables;
      for (std::size_t s = 0; s < bp.size(); ++s) {
        const std::string key = "fee.breakpoints[" + std::to_string(s) + "]";
        if (!bp[s].is_array()) field_error(key, "expected a list of [t, h] pairs");
        std::vector<std::pair<double, double>> tab;
        for (std::size_t k = 0; k < bp[s].size(); ++k) {
          const auto pair = numbers(bp[s][k], key + "[" + std::to_string(k) + "]");
          if (pair.size() != 2) field_error(key + "[" + std::to_string(k) + "]", "expected [t, h]");
          tab.emplace_back(pair[0], pair[1]);
        }
        tables.push_back(std::move(tab));
      }
      fee = StorageFee::separable(std::move(tables));
    } else if (type == "box") {
      only_keys(j, "fee", {"type", "u", "offset"});
      fee = StorageFee::box(numbers(need("u"), "fee.u"));
    } else {
      field_error("fee.type", "unknown fee type '" + type + "' (zero, linear, quadratic, separable, box)");
    }
    if (j.contains("offset")) fee = fee.with_offset(number(j["offset"], "fee.offset"));
  } catch (const InputError& e) {
    const std::string msg = e.what();
    if (msg.rfind("config:", 0) == 0) throw;
    field_error("fee", msg);
  }
  if (fee.size() != sites)
    field_error("fee", "has " + std::to_string(fee.size()) + " entries but there are " + std::to_string(sites) +
                           " sites");
  return fee;
}

inline StepRule parse_step_rule(const std::string& s) {
  if (s == "cut") return StepRule::Cut;
  if (s == "fixed") return StepRule::Fixed;
  if (s == "diminishing") return StepRule::Diminishing;
  if (s == "polyak") return StepRule::Polyak;
  detail::field_error("solver.step_rule", "unknown rule '" + s + "' (cut, fixed, diminishing, polyak)");
}

inline OracleMode parse_oracle_mode(const std::string& s) {
  if (s == "enumerate") return OracleMode::Enumerate;
  if (s == "lambda-scan-1d") return OracleMode::LambdaScan1d;
  throw InputError("oracle: unknown mode '" + s + "' (enumerate, lambda-scan-1d)");
}

inline QuadratureMeasure parse_domain(const Json& j, const std::filesystem::path& base) {
  using namespace detail;
  only_keys(j, "domain", {"bounds", "resolution", "density"});
  if (!j.contains("bounds")) field_error("domain.bounds", "missing");
  if (!j.contains("resolution")) field_error("domain.resolution", "missing");
  (void)base;
  Box box;
  const Json& b = j["bounds"];
  if (b.is_array() && !b.empty() && b[0].is_number()) {
    const auto v = numbers(b, "domain.bounds");
    if (v.size() != 2) field_error("domain.bounds", "expected [lo, hi] or a list of [lo, hi] per dimension");
    box.lo = {v[0]};
    box.hi = {v[1]};
  } else if (b.is_array() && !b.empty()) {
    for (std::size_t d = 0; d < b.size(); ++d) {
      const auto v = numbers(b[d], "domain.bounds[" + std::to_string(d) + "]");
      if (v.size() != 2) field_error("domain.bounds[" + std::to_string(d) + "]", "expected [lo, hi]");
      box.lo.push_back(v[0]);
      box.hi.push_back(v[1]);
    }
  } else {
    field_error("domain.bounds", "expected [lo, hi] or a list of [lo, hi] per dimension");
  }
  std::vector<std::size_t> res;
  const Json& r = j["resolution"];
  auto count = [&](const Json& v, const std::string& key) {
    if (!v.is_number_integer() || v.get<long long>() < 1) field_error(key, "expected an integer >= 1");
    return static_cast<std::size_t>(v.get<long long>());
  };
  if (r.is_array()) {
    for (std::size_t d = 0; d < r.size(); ++d) res.push_back(count(r[d], "domain.resolution[" + std::to_string(d) + "]"));
  } else {
    res.assign(box.lo.size(), count(r, "domain.resolution"));
  }
  if (res.size() != box.lo.size()) field_error("domain.resolution", "needs one entry per dimension");
  Density density;
  if (j.contains("density")) {
    const std::string d = text(j["density"], "domain.density");
    if (d == "linear") density = [](std::span<const double> x) { return x[0]; };
    else if (d != "uniform") field_error("domain.density", "unknown density '" + d + "' (uniform, linear)");
  }
  try {
    return build_grid_measure(box, res, density);
  } catch (const InputError& e) {
    field_error("domain", e.what());
  }
}

/// Parses a problem configuration. Relative paths inside the config are
/// resolved against `base` (the config's directory).
inline ProblemConfig parse_config(const Json& j, const std::filesystem::path& base = {}) {
  using namespace detail;
  only_keys(j, "config", {"domain", "measure_csv", "sites", "cost", "fee", "solver", "oracle", "output"});
  ProblemConfig cfg;

  std::optional<QuadratureMeasure> mu;
  if (j.contains("domain") && j.contains("measure_csv")) field_error("domain", "give either domain or measure_csv");
  if (j.contains("domain")) {
    mu = parse_domain(j["domain"], base);
  } else if (j.contains("measure_csv")) {
    const std::filesystem::path p = base / text(j["measure_csv"], "measure_csv");
    try {
      mu = read_measure_csv(p);
    } catch (const InputError& e) {
      field_error("measure_csv", e.what());
    }
  } else {
    field_error("domain", "missing (or give measure_csv)");
  }

  if (!j.contains("sites")) field_error("sites", "missing");
  const Json& sj = j["sites"];
  if (!sj.is_array() || sj.empty()) field_error("sites", "expected a nonempty list of coordinate arrays");
  std::vector<double> coords;
  std::size_t sdim = 0;
  for (std::size_t s = 0; s < sj.size(); ++s) {
    const std::string key = "sites[" + std::to_string(s) + "]";
    const auto v = sj[s].is_number() ? std::vector<double>{number(sj[s], key)} : numbers(sj[s], key);
    if (v.empty()) field_error(key, "empty coordinates");
    if (s == 0) sdim = v.size();
    else if (v.size() != sdim) field_error(key, "has dimension " + std::to_string(v.size()) + ", expected " + std::to_string(sdim));
    coords.insert(coords.end(), v.begin(), v.end());
  }
  if (sdim != mu->dim())
    field_error("sites", "dimension " + std::to_string(sdim) + " does not match measure dimension " +
                             std::to_string(mu->dim()));
  std::optional<SiteSet> sites;
  try {
    sites.emplace(sdim, std::move(coords));
  } catch (const InputError& e) {
    field_error("sites", e.what());
  }

  CostFunction cost = CostFunction::power(2.0);
  if (j.contains("cost")) {
    const Json& c = j["cost"];
    only_keys(c, "cost", {"type", "exponent", "shift", "values"});
    const std::string type = c.contains("type") ? text(c["type"], "cost.type") : "power";
    try {
      if (type == "power") {
        cost = CostFunction::power(c.contains("exponent") ? number(c["exponent"], "cost.exponent") : 2.0);
      } else if (type == "inner-product") {
        cost = CostFunction::inner_product(c.contains("shift") ? number(c["shift"], "cost.shift") : 0.0);
      } else if (type == "table") {
        if (!c.contains("values")) field_error("cost.values", "missing for cost type table");
        const Json& v = c["values"];
        if (!v.is_array() || v.size() != mu->size())
          field_error("cost.values", "expected one row per quadrature point");
        std::vector<double> flat;
        for (std::size_t i = 0; i < v.size(); ++i) {
          const auto row = numbers(v[i], "cost.values[" + std::to_string(i) + "]");
          if (row.size() != sites->size())
            field_error("cost.values[" + std::to_string(i) + "]", "expected one entry per site");
          flat.insert(flat.end(), row.begin(), row.end());
        }
        cost = CostFunction::table(mu->size(), sites->size(), std::move(flat));
      } else {
        field_error("cost.type", "unknown cost type '" + type + "' (power, inner-product, table)");
      }
    } catch (const InputError& e) {
      const std::string msg = e.what();
      if (msg.rfind("config:", 0) == 0) throw;
      field_error("cost", msg);
    }
  }

  if (!j.contains("fee")) field_error("fee", "missing");
  StorageFee fee = parse_fee(j["fee"], sites->size());

  if (j.contains("solver")) {
    const Json& s = j["solver"];
    only_keys(s, "solver", {"tol_gap", "max_iters", "step_rule", "eta", "tol_certificate", "initial_psi"});
    if (s.contains("tol_gap")) cfg.solver.tol_gap = number(s["tol_gap"], "solver.tol_gap");
    if (s.contains("max_iters")) {
      if (!s["max_iters"].is_number_integer()) field_error("solver.max_iters", "expected an integer");
      cfg.solver.max_iters = s["max_iters"].get<int>();
    }
    if (s.contains("step_rule")) cfg.solver.step_rule = parse_step_rule(text(s["step_rule"], "solver.step_rule"));
    if (s.contains("eta")) cfg.solver.eta = number(s["eta"], "solver.eta");
    if (s.contains("tol_certificate")) cfg.solver.tol_certificate = number(s["tol_certificate"], "solver.tol_certificate");
    if (s.contains("initial_psi")) {
      auto psi = numbers(s["initial_psi"], "solver.initial_psi");
      if (psi.size() != sites->size()) field_error("solver.initial_psi", "needs one entry per site");
      cfg.solver.initial_psi = std::move(psi);
    }
    try {
      cfg.solver.validate();
    } catch (const InputError& e) {
      field_error("solver", e.what());
    }
  }

  if (j.contains("oracle")) {
    const Json& o = j["oracle"];
    only_keys(o, "oracle", {"mode", "splits", "delta"});
    if (o.contains("mode")) cfg.oracle.mode = parse_oracle_mode(text(o["mode"], "oracle.mode"));
    if (o.contains("splits")) {
      if (!o["splits"].is_number_integer()) field_error("oracle.splits", "expected an integer");
      cfg.oracle.splits = o["splits"].get<int>();
    }
    if (o.contains("delta")) cfg.oracle.delta = number(o["delta"], "oracle.delta");
  }

  if (j.contains("output")) {
    const Json& o = j["output"];
    only_keys(o, "output", {"solution", "cells", "oracle", "stability_json", "stability_csv"});
    if (o.contains("solution")) cfg.solution_path = text(o["solution"], "output.solution");
    if (o.contains("cells")) cfg.cells_path = text(o["cells"], "output.cells");
    if (o.contains("oracle")) cfg.oracle_path = text(o["oracle"], "output.oracle");
    if (o.contains("stability_json")) cfg.stability_json_path = text(o["stability_json"], "output.stability_json");
    if (o.contains("stability_csv")) cfg.stability_csv_path = text(o["stability_csv"], "output.stability_csv");
  }

  try {
    cfg.problem.emplace(std::move(*mu), std::move(*sites), std::move(cost), std::move(fee));
  } catch (const InputError& e) {
    const std::string msg = e.what();
    if (msg.rfind("config:", 0) == 0) throw;
    throw InputError("config: " + msg);
  }
  return cfg;
}

inline ProblemConfig load_config(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const Json::parse_error& e) {
    throw InputError(path.string() + ": malformed JSON: " + e.what());
  }
  return parse_config(j, path.parent_path());
}

inline Json certificate_json(const Certificate& c) {
  Json j;
  j["fy_residual"] = c.fy_residual;
  j["mass_mismatch"] = c.mass_mismatch;
  j["conjugacy_residual"] = c.conjugacy_residual;
  j["tied_mass"] = c.tied_mass;
  return j;
}

inline Json solution_json(const SolveReport& r) {
  Json j;
  j["psi"] = r.psi;
  j["lambda"] = r.lambda;
  j["primal_value"] = r.primal_value;
  j["dual_value"] = r.dual_value;
  j["gap"] = r.gap;
  j["iterations"] = r.iterations;
  j["converged"] = r.converged;
  j["certificate"] = certificate_json(r.certificate);
  return j;
}

/// The (psi, lambda) pair and reported values of a stored solution.
struct StoredSolution {
  DualPotential psi;
  WeightVector lambda;
  double primal_value = 0.0;
  double dual_value = 0.0;
  double gap = 0.0;
  bool converged = false;
};

inline StoredSolution parse_solution(const Json& j) {
  using namespace detail;
  if (!j.is_object()) throw InputError("solution: expected an object");
  StoredSolution s;
  auto get = [&](const char* key) -> const Json& {
    if (!j.contains(key)) throw InputError(std::string("solution: ") + key + ": missing");
    return j[key];
  };
  try {
    s.psi = numbers(get("psi"), "psi");
    s.lambda = numbers(get("lambda"), "lambda");
    if (j.contains("primal_value") && j["primal_value"].is_number()) s.primal_value = j["primal_value"].get<double>();
    if (j.contains("dual_value") && j["dual_value"].is_number()) s.dual_value = j["dual_value"].get<double>();
    if (j.contains("gap") && j["gap"].is_number()) s.gap = j["gap"].get<double>();
    if (j.contains("converged") && j["converged"].is_boolean()) s.converged = j["converged"].get<bool>();
  } catch (const InputError& e) {
    std::string msg = e.what();
    if (msg.rfind("config: ", 0) == 0) msg = msg.substr(8);
    throw InputError("solution: " + msg);
  }
  return s;
}

inline StoredSolution load_solution(const std::filesystem::path& path) {
  try {
    return parse_solution(Json::parse(read_file(path)));
  } catch (const Json::parse_error& e) {
    throw InputError(path.string() + ": malformed JSON: " + e.what());
  }
}

/// One row per quadrature point: coordinates, mass, owner (1-based), tied.
inline std::string cells_csv(const Problem& prob, const CellAssignment& a) {
  const std::size_t dim = prob.measure().dim();
  std::string s;
  for (std::size_t d = 0; d < dim; ++d) s += "x" + std::to_string(d + 1) + ",";
  s += "mass,owner,tied\n";
  for (std::size_t i = 0; i < prob.num_points(); ++i) {
    for (double x : prob.measure().point(i)) s += fmt17(x) + ",";
    s += fmt17(prob.measure().mass(i)) + "," + std::to_string(a.owner[i] + 1) + "," + (a.tied[i] ? "1" : "0") + "\n";
  }
  return s;
}

inline Json oracle_json(const OracleResult& r, const OracleConfig& cfg) {
  Json j;
  j["mode"] = to_string(cfg.mode);
  if (cfg.mode == OracleMode::Enumerate) j["splits"] = cfg.splits;
  else j["delta"] = cfg.delta;
  j["value"] = r.value;
  j["lambda"] = r.lambda;
  if (cfg.mode == OracleMode::Enumerate) {
    Json map = Json::array();
    for (auto s : r.map) map.push_back(s + 1);
    j["map"] = map;
  }
  j["work"] = r.work;
  return j;
}

inline Json stability_json(const ConvergenceReport& r, const std::string& perturbation) {
  Json j;
  j["perturbation"] = perturbation;
  j["limit_lambda"] = r.limit_lambda;
  j["limit_value"] = r.limit_value;
  Json steps = Json::array();
  for (const auto& s : r.steps) {
    Json e;
    e["k"] = s.k;
    e["sup_diff"] = s.sup_diff;
    e["slack"] = s.slack;
    e["value_diff"] = s.value_diff;
    e["bound_holds"] = s.bound_holds;
    e["lambda_distance"] = s.lambda_distance;
    e["overlap_mass"] = s.overlap_mass;
    e["converged"] = s.converged;
    steps.push_back(e);
  }
  j["steps"] = steps;
  j["distances_nonincreasing"] = r.passes;
  j["inconclusive"] = r.inconclusive;
  return j;
}

inline std::string stability_csv(const ConvergenceReport& r) {
  std::string s = "k,sup_diff,value_diff,lambda_distance\n";
  for (const auto& e : r.steps)
    s += std::to_string(e.k) + "," + fmt17(e.sup_diff) + "," + fmt17(e.value_diff) + "," + fmt17(e.lambda_distance) + "\n";
  return s;
}

}  // namespace sdot::io
