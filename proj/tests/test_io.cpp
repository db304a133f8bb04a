#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "fixtures.hpp"
#include "sdot/io.hpp"

using namespace sdot;
using io::Json;
namespace fs = std::filesystem;

namespace {

Json base_config() {
  return Json::parse(R"({
    "domain": {"bounds": [0, 1], "resolution": 50},
    "sites": [[0], [1]],
    "fee": {"type": "linear", "a": [0, 0.3]}
  })");
}

std::string error_of(const Json& j) {
  try {
    io::parse_config(j);
  } catch (const InputError& e) {
    return e.what();
  }
  return "";
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("sdot_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST(Dump, SeventeenDigitsAndNull) {
  Json j;
  j["a"] = 0.1;
  j["b"] = std::vector<double>{1.0 / 3, 2.0};
  j["c"] = std::numeric_limits<double>::infinity();
  j["d"] = 3;
  j["e"] = true;
  const std::string s = io::dump(j);
  EXPECT_NE(s.find("\"a\": 0.10000000000000001"), std::string::npos) << s;
  EXPECT_NE(s.find("[0.33333333333333331, 2]"), std::string::npos) << s;
  EXPECT_NE(s.find("\"c\": null"), std::string::npos);
  EXPECT_NE(s.find("\"d\": 3"), std::string::npos);
  EXPECT_EQ(Json::parse(s)["a"].get<double>(), 0.1);
}

TEST(ParseConfig, Defaults) {
  const auto cfg = io::parse_config(base_config());
  ASSERT_TRUE(cfg.problem);
  EXPECT_EQ(cfg.problem->num_points(), 50u);
  EXPECT_EQ(cfg.problem->fee().kind(), FeeKind::Linear);
  EXPECT_EQ(cfg.problem->cost().exponent(), 2.0);
  EXPECT_EQ(cfg.solver.step_rule, StepRule::Cut);
  EXPECT_EQ(cfg.solution_path, "solution.json");
  EXPECT_TRUE(cfg.cells_path.empty());
}

TEST(ParseConfig, FullSchema) {
  auto j = Json::parse(R"({
    "domain": {"bounds": [[0, 1], [0, 2]], "resolution": [4, 8], "density": "linear"},
    "sites": [[0.1, 0.1], [0.9, 1.5], [0.5, 0.5]],
    "cost": {"type": "power", "exponent": 1},
    "fee": {"type": "separable", "breakpoints": [[[0, 0], [1, 1]], [[0, 0.1], [0.5, 0.2], [1, 0.6]], [[0, 0], [1, 0]]],
            "offset": 0.5},
    "solver": {"tol_gap": 1e-6, "max_iters": 50, "step_rule": "polyak", "eta": 0.5, "tol_certificate": 1e-5,
               "initial_psi": [0, 0.1, 0.2]},
    "oracle": {"mode": "lambda-scan-1d", "splits": 3, "delta": 0.01},
    "output": {"solution": "s.json", "cells": "c.csv", "oracle": "o.json", "stability_json": "sj.json",
               "stability_csv": "sc.csv"}
  })");
  const auto cfg = io::parse_config(j);
  EXPECT_EQ(cfg.problem->num_points(), 32u);
  EXPECT_EQ(cfg.problem->measure().dim(), 2u);
  EXPECT_EQ(cfg.problem->fee().kind(), FeeKind::Separable);
  EXPECT_EQ(cfg.problem->fee().offset(), 0.5);
  EXPECT_EQ(cfg.solver.max_iters, 50);
  EXPECT_EQ(cfg.solver.step_rule, StepRule::Polyak);
  EXPECT_EQ(cfg.solver.initial_psi->size(), 3u);
  EXPECT_EQ(cfg.oracle.mode, OracleMode::LambdaScan1d);
  EXPECT_EQ(cfg.oracle.splits, 3);
  EXPECT_EQ(cfg.cells_path, "c.csv");
  EXPECT_EQ(cfg.stability_csv_path, "sc.csv");
  // Linear density x1: the heavier column sits at larger x1.
  EXPECT_GT(cfg.problem->measure().mass(31), cfg.problem->measure().mass(0));
}

TEST(ParseConfig, OtherCostsAndFees) {
  auto j = base_config();
  j["cost"] = Json::parse(R"({"type": "inner-product", "shift": 1})");
  j["fee"] = Json::parse(R"({"type": "box", "u": [0.6, 0.6]})");
  auto cfg = io::parse_config(j);
  EXPECT_EQ(cfg.problem->cost().kind(), CostKind::InnerProduct);
  EXPECT_EQ(cfg.problem->fee().kind(), FeeKind::Box);
  j["domain"]["resolution"] = 2;
  j["cost"] = Json::parse(R"({"type": "table", "values": [[0, 1], [1, 0]]})");
  j["fee"] = Json::parse(R"({"type": "quadratic", "sigma": 2})");
  cfg = io::parse_config(j);
  EXPECT_EQ(cfg.problem->costs()(1, 0), 1.0);
  j["fee"] = Json::parse(R"({"type": "zero"})");
  EXPECT_EQ(io::parse_config(j).problem->fee().kind(), FeeKind::Zero);
}

TEST(ParseConfig, Errors) {
  auto j = base_config();
  j["sites"] = Json::parse("[[0, 0], [1, 1], [0, 1]]");
  j["fee"] = Json::parse(R"({"type": "zero"})");
  EXPECT_NE(error_of(j).find("sites"), std::string::npos);

  j = base_config();
  j["sites"] = Json::parse("[[0], [0]]");
  EXPECT_NE(error_of(j).find("duplicate"), std::string::npos);

  j = base_config();
  j["fee"] = Json::parse(R"({"type": "separable", "breakpoints": [[[0, 1], [1, 0]], [[0, 0], [1, 0]]]})");
  EXPECT_NE(error_of(j).find("convex fee required"), std::string::npos);

  j = base_config();
  j["fee"]["a"] = Json::parse("[0, 0.1, 0.2]");
  EXPECT_NE(error_of(j).find("fee"), std::string::npos);

  j = base_config();
  j["fee"]["colour"] = "red";
  EXPECT_NE(error_of(j).find("unknown key"), std::string::npos);

  j = base_config();
  j["fee"]["type"] = "cubic";
  EXPECT_NE(error_of(j).find("unknown fee type"), std::string::npos);

  j = base_config();
  j["solver"] = Json::parse(R"({"step_rule": "newton"})");
  EXPECT_NE(error_of(j).find("solver.step_rule"), std::string::npos);

  j = base_config();
  j["solver"] = Json::parse(R"({"max_iters": 0})");
  EXPECT_NE(error_of(j).find("max_iters"), std::string::npos);

  j = base_config();
  j.erase("domain");
  EXPECT_NE(error_of(j).find("domain"), std::string::npos);

  j = base_config();
  j["domain"]["bounds"] = Json::parse("[1, 0]");
  EXPECT_FALSE(error_of(j).empty());

  j = base_config();
  j["domain"]["density"] = "gaussian";
  EXPECT_FALSE(error_of(j).empty());

  j = base_config();
  j["oracle"] = Json::parse(R"({"mode": "guess"})");
  EXPECT_NE(error_of(j).find("unknown mode"), std::string::npos);
}

TEST_F(TempDir, MeasureCsv) {
  io::write_file(dir_ / "m.csv", "x1,x2,mass\n0,0,1\n1,0,1\n0.5,1,2\n");
  std::ostringstream warn;
  const auto mu = io::read_measure_csv(dir_ / "m.csv", &warn);
  EXPECT_EQ(mu.size(), 3u);
  EXPECT_EQ(mu.dim(), 2u);
  EXPECT_DOUBLE_EQ(mu.mass(2), 0.5);
  EXPECT_NE(warn.str().find("renormaliz"), std::string::npos) << warn.str();

  io::write_file(dir_ / "ok.csv", "x1,mass\n0.25,0.5\n0.75,0.5\n");
  warn.str("");
  EXPECT_EQ(io::read_measure_csv(dir_ / "ok.csv", &warn).size(), 2u);
  EXPECT_TRUE(warn.str().empty());

  io::write_file(dir_ / "bad.csv", "x1,mass\n0.25,abc\n");
  EXPECT_THROW(io::read_measure_csv(dir_ / "bad.csv", &warn), InputError);
  io::write_file(dir_ / "hdr.csv", "x,weight\n0.25,1\n");
  EXPECT_THROW(io::read_measure_csv(dir_ / "hdr.csv", &warn), InputError);
  EXPECT_THROW(io::read_measure_csv(dir_ / "missing.csv", &warn), InputError);
}

TEST_F(TempDir, ConfigRelativeCsv) {
  io::write_file(dir_ / "m.csv", "x1,mass\n0.1,0.5\n0.9,0.5\n");
  io::write_file(dir_ / "c.json", R"({"measure_csv": "m.csv", "sites": [[0], [1]], "fee": {"type": "zero"}})");
  const auto cfg = io::load_config(dir_ / "c.json");
  EXPECT_EQ(cfg.problem->num_points(), 2u);
  io::write_file(dir_ / "broken.json", "{\"sites\": [");
  try {
    io::load_config(dir_ / "broken.json");
    FAIL();
  } catch (const InputError& e) {
    EXPECT_NE(std::string(e.what()).find("malformed JSON"), std::string::npos);
  }
}

TEST_F(TempDir, SolutionRoundTrip) {
  const auto prob = sdot::testing::e2(200);
  const auto r = solve_storage(prob);
  io::write_file(dir_ / "sub" / "s.json", io::dump(io::solution_json(r)));
  const auto s = io::load_solution(dir_ / "sub" / "s.json");
  EXPECT_EQ(s.psi, r.psi);
  EXPECT_EQ(s.lambda, r.lambda);
  EXPECT_EQ(s.primal_value, r.primal_value);
  EXPECT_EQ(s.converged, r.converged);
  const auto c = certify(prob, s.psi, s.lambda, 1e-6);
  EXPECT_EQ(c.fy_residual, r.certificate.fy_residual);
  EXPECT_EQ(c.mass_mismatch, r.certificate.mass_mismatch);
  EXPECT_EQ(c.conjugacy_residual, r.certificate.conjugacy_residual);
  EXPECT_EQ(io::dump(io::solution_json(solve_storage(prob))), io::dump(io::solution_json(r)));
  EXPECT_THROW(io::parse_solution(Json::parse(R"({"psi": [0, 1]})")), InputError);
}

TEST(CellsCsv, OneBasedOwners) {
  const auto prob = sdot::testing::atoms_1d({0.5, 0.2}, {0.5, 0.5}, {0.0, 1.0}, StorageFee::zero(2));
  const auto csv = io::cells_csv(prob, assign_cells(prob, std::vector<double>{0.1, 0.0}));
  EXPECT_EQ(csv, "x1,mass,owner,tied\n0.5,0.5,2,0\n0.20000000000000001,0.5,1,0\n");
}

TEST(OracleJson, OneBasedMap) {
  OracleResult r;
  r.value = 0.04;
  r.lambda = {0.5, 0.5};
  r.map = {0, 1};
  r.work = 6;
  const auto j = io::oracle_json(r, OracleConfig{});
  EXPECT_EQ(j["map"], Json::parse("[1, 2]"));
  EXPECT_EQ(j["mode"], "enumerate");
}

TEST(StabilityCsv, Header) {
  ConvergenceReport r;
  r.steps.push_back({1, 0.5, 0.0, 0.25, true, 0.125, 1.0, true});
  EXPECT_EQ(io::stability_csv(r), "k,sup_diff,value_diff,lambda_distance\n1,0.5,0.25,0.125\n");
  const auto j = io::stability_json(r, "linear-shift");
  EXPECT_EQ(j["steps"][0]["k"], 1);
}
