#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>

#include "dplab/scenario.hpp"

using namespace dplab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dplab_test_scenario_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const char* kSmall = R"({
  "name": "small",
  "equation": "pme",
  "solver": {"m": 2.0, "q": 3.0, "grid": {"cells": [20, 20], "time_steps": 20},
             "domain": {"lower": [-1, -1], "upper": [1, 1], "T": 0.1}},
  "mu": {"ambient": "space-time", "atoms": [{"x": [0.3, -0.2], "t": 0.03, "mass": 0.7}]},
  "sigma": {"ambient": "space", "atoms": [{"x": [0.0, 0.1], "mass": 1.0}]}
})";

std::string error_of(const std::string& text, const fs::path& base = {}) {
  try {
    parse_scenario(text, base);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(ParseScenario, MinimalDocumentGetsDefaults) {
  const Scenario s = parse_scenario(R"({"equation": "pme"})");
  const PMEConfig d;
  EXPECT_EQ(s.name, "scenario");
  EXPECT_EQ(s.equation, Equation::pme);
  EXPECT_EQ(s.pme.m, d.m);
  EXPECT_EQ(s.pme.n_reg, d.n_reg);
  EXPECT_EQ(s.pme.grid.cells[0], 32);
  EXPECT_EQ(s.pme.grid.time_steps, 32);
  EXPECT_EQ(s.probes.stride, 2);
  EXPECT_EQ(s.probes.exclusion_cells, 3.0);
  EXPECT_EQ(s.probes.min_probes, 100);
  EXPECT_EQ(s.outputs.size(), 4u);
  EXPECT_TRUE(s.mu.empty());
  EXPECT_TRUE(s.sigma.empty());

  const Json e = emit_scenario(s);
  for (const char* k : {"name", "equation", "solver", "mu", "sigma", "probes", "outputs", "ceilings", "seed"})
    EXPECT_TRUE(e.contains(k)) << k;
  for (const char* k : {"m", "q", "k", "n_reg", "newton_tol", "newton_max_iter", "mollification_scale", "domain", "grid"})
    EXPECT_TRUE(e.at("solver").contains(k)) << k;
}

TEST(ParseScenario, DistinctDiagnostics) {
  const std::string unknown = error_of(R"({"equation": "pme", "colour": 1})");
  EXPECT_NE(unknown.find("unknown key 'colour'"), std::string::npos) << unknown;
  const std::string nested = error_of(R"({"solver": {"m": 2, "theta": 1}})");
  EXPECT_NE(nested.find("unknown key 'theta' in pme config"), std::string::npos) << nested;

  EXPECT_THROW(parse_scenario(R"({"solver": {"m": 2.0, "q": 1.5}})"), HypothesisError);
  const std::string hyp = error_of(R"({"solver": {"m": 2.0, "q": 1.5}})");
  EXPECT_NE(hyp.find("q > max(1, m)"), std::string::npos) << hyp;
  EXPECT_NE(error_of(R"({"equation": "plap", "solver": {"p": 1.8}})").find("p > 2"), std::string::npos);
  EXPECT_NE(error_of(R"({"equation": "plap", "solver": {"p": 3, "q": 1.5}})").find("q > p - 1"), std::string::npos);
  const std::string low_m = error_of(
      R"({"solver": {"m": 0.2, "domain": {"lower": [0, 0, 0], "upper": [1, 1, 1], "T": 1},
          "grid": {"cells": [8, 8, 8], "time_steps": 8}}})");
  EXPECT_NE(low_m.find("m > (N-2)/N"), std::string::npos) << low_m;

  const std::string missing = error_of(R"({"mu": "no_such_measure.json"})", scratch("missing"));
  EXPECT_NE(missing.find("missing file"), std::string::npos) << missing;
  EXPECT_NE(error_of(R"({"ceilings": "nowhere.json"})").find("missing file"), std::string::npos);

  EXPECT_NE(unknown, hyp);
  EXPECT_NE(hyp, missing);
  EXPECT_NE(unknown, missing);
  EXPECT_NE(error_of("{not json").find("malformed"), std::string::npos);
}

TEST(ParseScenario, EmitRoundTrip) {
  const fs::path dir = scratch("roundtrip");
  write_text(dir / "mu.json", R"({"ambient": "space-time", "atoms": [{"x": [0.5, 0.5], "t": 0.1, "mass": 2}]})");
  const std::string text = R"({
    "name": "rt", "equation": "pme", "seed": 11,
    "solver": {"m": 0.8, "q": 2.0, "k": 5.0, "grid": {"cells": [16, 16], "time_steps": 16},
               "domain": {"lower": [0, 0], "upper": [1, 1], "T": 0.5}},
    "mu": "mu.json",
    "probes": {"stride": 3, "max_probes": 150},
    "outputs": ["verify"],
    "slope_fit": {"t_min": 0.05},
    "retention": {"scales": [0.3, 0.2], "t_probe": 0.25}
  })";
  const Scenario a = parse_scenario(text, dir);
  const Json ea = emit_scenario(a);
  const Scenario b = parse_scenario(ea.dump(), dir);
  EXPECT_EQ(emit_scenario(b), ea);
  EXPECT_EQ(b.seed, 11u);
  EXPECT_EQ(b.probes.seed, 11u);
  EXPECT_EQ(b.probes.max_probes, 150u);
  EXPECT_EQ(b.pme.k, 5.0);
  EXPECT_EQ(b.mu.atoms().size(), 1u);

  const Scenario p = parse_scenario(R"({"equation": "plap", "solver": {"p": 3.0, "eps": 1e-7}})");
  EXPECT_EQ(emit_scenario(parse_scenario(emit_scenario(p).dump())), emit_scenario(p));
  EXPECT_EQ(parse_scenario(emit_scenario(p).dump()).plap.eps, 1e-7);
}

TEST(RunScenario, ZeroDataAllPass) {
  const fs::path dir = scratch("zero");
  const Scenario s = load_scenario(fs::path(DPLAB_SOURCE_DIR) / "scenarios" / "zero.json");
  const RunOutcome o = run_scenario(s, dir);
  EXPECT_EQ(o.exit_code, exit_ok) << o.message;
  EXPECT_EQ(o.status, "pass");
  ASSERT_FALSE(o.reports.empty());
  for (const auto& e : o.reports) {
    EXPECT_TRUE(e.pass) << e.id;
    EXPECT_EQ(e.constant, 0.0) << e.id;
  }
  for (const char* f : {"manifest.json", "scenario.json", "mu.json", "sigma.json", "u.grid", "u0.grid", "diagnostics.csv",
                        "probes.csv", "verify.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  const std::string verify = read_file(dir / "verify.csv");
  EXPECT_EQ(verify.rfind("estimate_id,lhs,rhs,constant,pass\n", 0), 0u);
  EXPECT_EQ(verify.find("false"), std::string::npos);

  const Json m = read_json_file(dir / "manifest.json");
  EXPECT_EQ(m.at("version"), kVersion);
  EXPECT_EQ(m.at("exit_code"), 0);
  EXPECT_EQ(m.at("input_hash").get<std::string>().rfind("fnv1a64:", 0), 0u);
  EXPECT_TRUE(m.contains("wall_time_seconds"));
  // every defaulted parameter is explicit in the record
  EXPECT_TRUE(m.at("scenario").at("solver").contains("n_reg"));
  EXPECT_TRUE(m.at("scenario").at("probes").contains("exclusion_cells"));
  EXPECT_FALSE(m.at("scenario").at("ceilings").get<std::string>().empty());
}

TEST(RunScenario, SlopeFitRecordedInManifest) {
  const fs::path dir = scratch("slope");
  const Scenario s = parse_scenario(R"({
    "name": "bb", "solver": {"m": 2.0, "mollification_scale": 0.125,
      "domain": {"lower": [-1.5, -1.5], "upper": [1.5, 1.5], "T": 0.1},
      "grid": {"cells": [48, 48], "time_steps": 50}},
    "sigma": {"ambient": "space", "atoms": [{"x": [0, 0], "mass": 1}]},
    "slope_fit": {"t_min": 0.01}
  })");
  const RunOutcome o = run_scenario(s, dir);
  ASSERT_TRUE(o.slope.has_value());
  EXPECT_NEAR(o.slope->slope, -0.5, 0.05);
  const Json m = read_json_file(dir / "manifest.json");
  ASSERT_TRUE(m.contains("slope_fit"));
  EXPECT_EQ(m.at("slope_fit").at("pass"), true);
  EXPECT_EQ(m.at("slope_fit").at("expected"), -0.5);
  EXPECT_GT(m.at("slope_fit").at("points").get<int>(), 40);
  EXPECT_EQ(o.exit_code, exit_ok) << o.message;
}

TEST(RunScenario, RetentionWritesOneDirectoryPerScale) {
  const fs::path dir = scratch("retention");
  const Scenario s = parse_scenario(R"({
    "name": "ret", "solver": {"m": 2.0, "q": 2.5, "grid": {"cells": [32, 32], "time_steps": 10},
      "domain": {"lower": [-1, -1], "upper": [1, 1], "T": 0.05}},
    "sigma": {"ambient": "space", "atoms": [{"x": [0, 0], "mass": 1}]},
    "retention": {"scales": [0.5, 0.3, 0.2], "t_probe": 0.02}
  })");
  const RunOutcome o = run_scenario(s, dir);
  EXPECT_EQ(o.exit_code, exit_ok) << o.message;
  ASSERT_EQ(o.retention.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_TRUE(fs::is_directory(dir / ("scale_" + std::to_string(i))));
    EXPECT_TRUE(fs::exists(dir / ("scale_" + std::to_string(i)) / "verify.csv"));
    EXPECT_GT(o.retention[i], 0.0);
    EXPECT_LE(o.retention[i], 1.0 + 1e-9);
  }
  const std::string csv = read_file(dir / "retention.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(csv.rfind("scale,retention,converged,exit_code\n", 0), 0u);

  PMEConfig c = s.pme;
  const auto curve = mass_retention_experiment(c, {0, 0, 0}, s.retention->scales, 0.02);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(curve.retention[i], o.retention[i]);
}

TEST(RunScenario, DeterministicOutputs) {
  Scenario s = parse_scenario(kSmall);
  s.probes.max_probes = 120;
  s.probes.seed = 42;
  const fs::path a = scratch("det_a"), b = scratch("det_b");
  run_scenario(s, a);
  run_scenario(s, b);
  for (const char* f : {"verify.csv", "probes.csv", "diagnostics.csv", "u.grid"})
    EXPECT_EQ(read_file(a / f), read_file(b / f)) << f;
  EXPECT_EQ(read_json_file(a / "manifest.json").at("input_hash"), read_json_file(b / "manifest.json").at("input_hash"));

  s.probes.seed = 43;
  const fs::path c = scratch("det_c");
  run_scenario(s, c);
  EXPECT_NE(read_file(a / "probes.csv"), read_file(c / "probes.csv"));
}

TEST(RunScenario, VerifyRunDirReproducesReports) {
  const fs::path dir = scratch("reverify");
  const Scenario s = parse_scenario(kSmall);
  const RunOutcome o = run_scenario(s, dir);
  ASSERT_EQ(o.exit_code, exit_ok) << o.message;
  const auto again = verify_run_dir(dir, scenario_ceilings(s));
  ASSERT_EQ(again.size(), o.reports.size());
  for (std::size_t i = 0; i < again.size(); ++i) {
    EXPECT_EQ(again[i].id, o.reports[i].id);
    EXPECT_NEAR(again[i].constant, o.reports[i].constant, 1e-12 * (1.0 + o.reports[i].constant)) << again[i].id;
    EXPECT_EQ(again[i].pass, o.reports[i].pass);
  }
  // the echoed scenario reloads on its own
  const Scenario echo = load_scenario(dir / "scenario.json");
  EXPECT_EQ(echo.mu.atoms().size(), 1u);
  EXPECT_EQ(echo.sigma.atoms().size(), 1u);
}

TEST(RunScenario, ExitCodes) {
  const fs::path dir = scratch("exit");
  write_text(dir / "tight.json", R"({"version": 9, "ceilings": {"mass_linf_l1": 1e-6, "absorption_l1": 1e-6,
    "weak_lr_u": 1e-6, "weak_lr_grad": 1e-6, "pointwise_pme_slow": 1e-6, "pointwise_pme_fast": 1e-6,
    "pointwise_plap": 1e-6, "decay": 1e-6}})");
  write_text(dir / "partial.json", R"({"ceilings": {"mass_linf_l1": 1.05}})");
  Json j = Json::parse(kSmall);
  j["ceilings"] = "tight.json";
  const RunOutcome tight = run_scenario(scenario_from_json(j, dir), dir / "tight");
  EXPECT_EQ(tight.exit_code, exit_verification);
  EXPECT_EQ(read_json_file(dir / "tight" / "manifest.json").at("ceilings_version"), 9);

  j["ceilings"] = "partial.json";
  const RunOutcome partial = run_scenario(scenario_from_json(j, dir), dir / "partial");
  EXPECT_EQ(partial.exit_code, exit_config);
  EXPECT_EQ(partial.status, "config_error");

  j = Json::parse(kSmall);
  j["solver"]["newton_max_iter"] = 1;
  j["solver"]["newton_tol"] = 1e-14;
  const RunOutcome failed = run_scenario(scenario_from_json(j), dir / "failed");
  EXPECT_EQ(failed.exit_code, exit_solver);
  EXPECT_EQ(read_json_file(dir / "failed" / "manifest.json").at("status"), "solver_failed");
}

TEST(Sweep, ParallelRunsAndReport) {
  const fs::path dir = scratch("sweep");
  Scenario a = parse_scenario(kSmall), b = parse_scenario(kSmall);
  a.name = "a";
  b.name = "b";
  b.pme.m = 1.0;
  const auto out = run_sweep({a, b}, dir, 2);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_EQ(out[0].exit_code, exit_ok);
  EXPECT_EQ(out[1].exit_code, exit_ok);
  EXPECT_EQ(read_file(dir / "summary.csv"), "name,status,exit_code\na,pass,0\nb,pass,0\n");
  const auto rows = collect_report(dir);
  EXPECT_EQ(rows.size(), out[0].reports.size() + out[1].reports.size());
  EXPECT_EQ(rows.front().run, "a");
  EXPECT_THROW(run_sweep({a, a}, dir, 1), ConfigError);
}

TEST(Sweep, StandardSweepShape) {
  const auto s0 = standard_sweep(0), s1 = standard_sweep(1);
  ASSERT_EQ(s0.size(), 18u);
  for (std::size_t i = 0; i < s0.size(); ++i) {
    EXPECT_EQ(s1[i].name, s0[i].name);
    EXPECT_EQ(s1[i].pme.grid.cells[0], 2 * s0[i].pme.grid.cells[0]);
    EXPECT_EQ(s1[i].pme.grid.time_steps, 2 * s0[i].pme.grid.time_steps);
    EXPECT_EQ(s1[i].probes.exclusion_cells, 2 * s0[i].probes.exclusion_cells);
    EXPECT_NEAR(total_variation(s0[i].sigma) + total_variation(s0[i].mu), 1.8, 1e-9) << s0[i].name;
  }
}

TEST(Io, Fnv1aKnownVectors) {
  EXPECT_EQ(fnv1a(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(fnv1a("foobar"), 0x85944171f73967e8ULL);
  EXPECT_EQ(hex64(0xaf63dc4c8601ec8cULL), "af63dc4c8601ec8c");
}

TEST(Io, OutputDirectoryOverride) {
  ::unsetenv("DPLAB_OUTPUT_DIR");
  EXPECT_EQ(resolve_output_dir("runs/x"), fs::path("runs/x"));
  ::setenv("DPLAB_OUTPUT_DIR", "/tmp/elsewhere", 1);
  EXPECT_EQ(resolve_output_dir("runs/x"), fs::path("/tmp/elsewhere/runs/x"));
  EXPECT_EQ(resolve_output_dir("/abs/x"), fs::path("/abs/x"));
  ::unsetenv("DPLAB_OUTPUT_DIR");
}

TEST(Io, SampleScenariosParse) {
  for (const auto& e : fs::directory_iterator(fs::path(DPLAB_SOURCE_DIR) / "scenarios")) {
    if (e.path().extension() != ".json" || e.path().filename() == "ceilings.json") continue;
    EXPECT_NO_THROW(load_scenario(e.path())) << e.path();
  }
  EXPECT_NO_THROW(load_ceilings(default_ceilings_path()));
}
