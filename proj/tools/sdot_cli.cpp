#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "sdot/io.hpp"
#include "sdot/sdot.hpp"

namespace fs = std::filesystem;
using namespace sdot;

namespace {

enum Exit { kOk = 0, kInput = 1, kNotConverged = 2, kCertificate = 3 };

struct Globals {
  std::string out;
  std::optional<double> tol_gap;
  std::optional<int> max_iters;
  unsigned threads = 1;
  bool quiet = false;
};

fs::path output_path(const Globals& g, const std::string& name) {
  return g.out.empty() ? fs::path(name) : fs::path(g.out) / name;
}

io::ProblemConfig load(const Globals& g, const std::string& config) {
  auto cfg = io::load_config(config);
  if (g.tol_gap) cfg.solver.tol_gap = *g.tol_gap;
  if (g.max_iters) cfg.solver.max_iters = *g.max_iters;
  cfg.solver.validate();
  return cfg;
}

std::string vec(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%.6g", i ? ", " : "", v[i]);
    s += buf;
  }
  return s + "]";
}

int cmd_solve(const Globals& g, const std::string& config) {
  const auto cfg = load(g, config);
  const Problem& prob = *cfg.problem;
  const auto r = solve_storage(prob, cfg.solver);
  io::write_file(output_path(g, cfg.solution_path), io::dump(io::solution_json(r)) + "\n");
  if (!cfg.cells_path.empty()) io::write_file(output_path(g, cfg.cells_path), io::cells_csv(prob, r.assignment));
  if (!g.quiet)
    std::printf("lambda=%s gap=%.3g iterations=%d converged=%s\n", vec(r.lambda).c_str(), r.gap, r.iterations,
                r.converged ? "true" : "false");
  if (!r.converged) return kNotConverged;
  return r.certificate.passed() ? kOk : kCertificate;
}

int cmd_check(const Globals& g, const std::string& config, const std::string& solution) {
  const auto cfg = load(g, config);
  const Problem& prob = *cfg.problem;
  const auto sol = io::load_solution(solution);
  if (sol.psi.size() != prob.num_sites() || sol.lambda.size() != prob.num_sites())
    throw InputError("solution: psi and lambda need " + std::to_string(prob.num_sites()) + " entries");
  const auto c = certify(prob, sol.psi, sol.lambda, cfg.solver.tol_certificate);
  if (!g.quiet) {
    auto line = [](const char* name, double v, bool ok) {
      std::printf("%-20s %.17g %s\n", name, v, ok ? "ok" : "FAIL");
    };
    line("fy_residual", c.fy_residual, c.fy_ok);
    line("mass_mismatch", c.mass_mismatch, c.mass_ok);
    line("conjugacy_residual", c.conjugacy_residual, c.conjugacy_ok);
    std::printf("%-20s %.17g\n", "tied_mass", c.tied_mass);
  }
  return c.passed() ? kOk : kCertificate;
}

int cmd_oracle(const Globals& g, const std::string& config, const std::optional<std::string>& mode,
               std::optional<int> splits, std::optional<double> delta, const std::string& solution) {
  auto cfg = load(g, config);
  const Problem& prob = *cfg.problem;
  if (mode) cfg.oracle.mode = io::parse_oracle_mode(*mode);
  if (splits) cfg.oracle.splits = *splits;
  if (delta) cfg.oracle.delta = *delta;
  const auto r = run_oracle(prob, cfg.oracle);
  auto j = io::oracle_json(r, cfg.oracle);
  int code = kOk;
  if (!solution.empty()) {
    const auto sol = io::load_solution(solution);
    if (sol.psi.size() != prob.num_sites()) throw InputError("solution: psi length does not match site count");
    const auto plan = primal_from_potential(prob, sol.psi);
    const double slack = cfg.oracle.mode == OracleMode::Enumerate
                             ? enumeration_slack(prob, plan.plan, cfg.oracle.splits, cfg.solver.tol_gap)
                             : scan_slack(prob, cfg.oracle.delta, cfg.solver.tol_gap);
    const double diff = r.value - sol.primal_value;
    const bool within = diff >= -cfg.solver.tol_gap - 1e-12 && diff <= slack;
    j["solver_value"] = sol.primal_value;
    j["discrepancy"] = diff;
    j["slack"] = slack;
    j["within_slack"] = within;
    if (!g.quiet) std::printf("discrepancy=%.3g slack=%.3g %s\n", diff, slack, within ? "ok" : "FAIL");
    if (!within) code = kCertificate;
  }
  io::write_file(output_path(g, cfg.oracle_path), io::dump(j) + "\n");
  if (!g.quiet) std::printf("oracle value=%.17g lambda=%s\n", r.value, vec(r.lambda).c_str());
  return code;
}

int cmd_stability(const Globals& g, const std::string& config, const std::string& perturb, int steps) {
  if (steps < 1) throw InputError("steps must be ≥ 1");
  const auto cfg = load(g, config);
  const Problem& prob = *cfg.problem;
  const StorageFee& base = prob.fee();
  const std::size_t n = prob.num_sites();
  std::vector<StorageFee> seq;
  for (int k = 1; k <= steps; ++k) {
    const double e = std::ldexp(1.0, -k);
    if (perturb == "constant") {
      seq.push_back(base.with_offset(base.offset() + e));
    } else if (perturb == "linear-shift") {
      std::vector<double> a(n, 0.0);
      if (base.kind() == FeeKind::Linear) a = base.coefficients();
      else if (base.kind() != FeeKind::Zero) throw InputError("linear-shift needs a zero or linear fee");
      a.back() += e;
      seq.push_back(StorageFee::linear(a).with_offset(base.offset()));
    } else if (perturb == "quadratic-sigma") {
      if (base.kind() != FeeKind::Quadratic) throw InputError("quadratic-sigma needs a quadratic fee");
      seq.push_back(StorageFee::quadratic(n, base.sigma() + e).with_offset(base.offset()));
    } else {
      throw InputError("unknown perturbation '" + perturb + "' (constant, linear-shift, quadratic-sigma)");
    }
  }
  const auto rep = stability_convergence_check(prob, seq, base, cfg.solver);
  io::write_file(output_path(g, cfg.stability_json_path), io::dump(io::stability_json(rep, perturb)) + "\n");
  io::write_file(output_path(g, cfg.stability_csv_path), io::stability_csv(rep));
  bool bounds = true;
  for (const auto& s : rep.steps) {
    bounds = bounds && s.bound_holds;
    if (!g.quiet)
      std::printf("k=%d sup_diff=%.6g value_diff=%.6g lambda_distance=%.6g bound=%s\n", s.k, s.sup_diff,
                  s.value_diff, s.lambda_distance, s.bound_holds ? "ok" : "FAIL");
  }
  if (rep.inconclusive) return kNotConverged;
  return bounds && rep.passes ? kOk : kCertificate;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semi-discrete optimal transport with a storage fee"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--out", g.out, "Directory for output files");
  app.add_option("--tol-gap", g.tol_gap, "Duality gap tolerance");
  app.add_option("--max-iters", g.max_iters, "Iteration cap");
  app.add_option("--threads", g.threads, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--quiet", g.quiet, "Suppress the summary on standard output");

  std::string config, solution, perturb = "constant";
  std::optional<std::string> mode;
  std::optional<int> splits;
  std::optional<double> delta;
  int steps = 6;

  auto* solve = app.add_subcommand("solve", "Solve the storage-fee problem");
  solve->add_option("config", config, "Problem config (JSON)")->required();

  auto* check = app.add_subcommand("check", "Re-certify a stored solution");
  check->add_option("config", config, "Problem config (JSON)")->required();
  check->add_option("solution", solution, "Solution JSON")->required();

  auto* oracle = app.add_subcommand("oracle", "Run a brute-force oracle");
  oracle->add_option("config", config, "Problem config (JSON)")->required();
  oracle->add_option("--mode", mode, "enumerate | lambda-scan-1d");
  oracle->add_option("--splits", splits, "Sub-atoms per atom (enumerate)");
  oracle->add_option("--delta", delta, "Simplex mesh (lambda-scan-1d)");
  oracle->add_option("--solution", solution, "Solution JSON to compare against");

  auto* stability = app.add_subcommand("stability", "Fee perturbation study");
  stability->add_option("config", config, "Problem config (JSON)")->required();
  stability->add_option("--perturb", perturb, "constant | linear-shift | quadratic-sigma");
  stability->add_option("--steps", steps, "Number of halving steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kInput;
  }

  try {
    set_thread_count(g.threads);
    if (*solve) return cmd_solve(g, config);
    if (*check) return cmd_check(g, config, solution);
    if (*oracle) return cmd_oracle(g, config, mode, splits, delta, solution);
    if (*stability) return cmd_stability(g, config, perturb, steps);
  } catch (const InputError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInput;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInput;
  }
  return kInput;
}
