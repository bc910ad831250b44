#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "eqsel/experiments.hpp"

using namespace eqsel;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("eqsel_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

json small_config() {
  return json::parse(R"({
    "name": "small",
    "game": "stag_hunt",
    "rule": "log_linear",
    "epsilon": 0.05,
    "iterations": 400,
    "n_runs": 5,
    "seed": 3,
    "stride": 10,
    "tracked": [{"stage": 1, "state": "init", "action": [1, 1], "label": "Hare"},
                {"stage": 1, "state": "init", "action": [0, 0]}]
  })");
}

std::string config_error_path(const json& j) {
  try {
    experiment_from_json(j);
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "<accepted>";
}

}  // namespace

TEST(Config, ParsesAndLabelsSeries) {
  const auto c = experiment_from_json(small_config());
  EXPECT_EQ(c.n_runs, 5u);
  ASSERT_EQ(c.tracked.size(), 2u);
  EXPECT_EQ(c.tracked[0].label, "Hare");
  EXPECT_EQ(c.tracked[1].label, "h1 init (0,0)");
  EXPECT_EQ(c.tracked[1].stage, 0);
  EXPECT_EQ(c.run_seed(0), derive_seed(3, {0}));
  auto j = small_config();
  j.erase("tracked");
  // Default: every joint action at the first stage of each start state.
  EXPECT_EQ(experiment_from_json(j).tracked.size(), 4u);
}

TEST(Config, ErrorsNameTheOffendingField) {
  auto j = small_config();
  j.erase("game");
  EXPECT_EQ(config_error_path(j), "$.game");
  j = small_config();
  j["tracked"][0]["stage"] = 3;
  EXPECT_EQ(config_error_path(j), "tracked[0].stage");
  j = small_config();
  j["tracked"][1]["state"] = "nowhere";
  EXPECT_EQ(config_error_path(j), "tracked[1].state");
  j = small_config();
  j["rule"] = "fictitious_play";
  EXPECT_EQ(config_error_path(j), "rule");
  j = small_config();
  j["seeds"] = {1, 2};
  EXPECT_EQ(config_error_path(j), "seeds");
  j = small_config();
  j["window"] = 1.5;
  EXPECT_EQ(config_error_path(j), "window");
  j = small_config();
  j["analysis"] = {{"sweep_epsilons", {1e-3, 1e-2}}};
  EXPECT_EQ(config_error_path(j), "analysis.sweep_epsilons");
  j = small_config();
  j["analysis"] = {{"selections", {"c4"}}};
  EXPECT_EQ(config_error_path(j), "analysis.selections");
}

TEST(Config, ZeroEpsilonIsRejectedWithReason) {
  auto j = small_config();
  j["epsilon"] = 0.0;
  try {
    experiment_from_json(j);
    FAIL() << "epsilon 0 accepted";
  } catch (const std::exception& e) {
    EXPECT_NE(std::string(e.what()).find("ergodic"), std::string::npos) << e.what();
  }
}

TEST(Config, GameByPathResolvesAgainstConfigDirectory) {
  const auto dir = scratch_dir("path");
  write_text(dir / "games" / "g.json", config_to_json({"g", "", {}, treasure_dig_game()}).dump());
  auto j = small_config();
  j["game"] = {{"path", "games/g.json"}};
  j["tracked"] = json::array();
  write_text(dir / "exp.json", j.dump());
  const auto c = load_experiment((dir / "exp.json").string());
  EXPECT_EQ(c.game.n_states(), 4u);
  fs::remove_all(dir);
}

TEST(Aggregation, WindowedFrequencyMatchesDirectCount) {
  Rng rng(4);
  std::vector<std::uint64_t> ts;
  std::vector<std::uint8_t> hit;
  for (std::uint64_t t = 0; t <= 500; t += 5) {
    ts.push_back(t);
    hit.push_back(rng.bernoulli(0.3) ? 1 : 0);
  }
  for (double w : {0.5, 0.2, 1.0}) {
    const auto got = windowed_frequency(ts, hit, w);
    for (std::size_t k = 0; k < ts.size(); ++k) {
      const double lo = static_cast<double>(ts[k]) - std::floor(w * static_cast<double>(ts[k]));
      double n = 0, h = 0;
      for (std::size_t m = 0; m <= k; ++m)
        if (static_cast<double>(ts[m]) >= lo) ++n, h += hit[m];
      EXPECT_DOUBLE_EQ(got[k], h / n) << "k=" << k << " w=" << w;
    }
  }
}

TEST(Aggregation, QuantileInterpolatesLinearly) {
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.2), 1.6);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.8), 3.4);
  EXPECT_DOUBLE_EQ(quantile({7}, 0.2), 7);
  EXPECT_THROW(quantile({}, 0.5), std::invalid_argument);
}

TEST(Determinism, SerialAndParallelRunsAreByteIdentical) {
  const auto c = experiment_from_json(small_config());
  const auto serial = run_experiment(c, 0.05, 1);
  const auto parallel = run_experiment(c, 0.05, 3);
  ASSERT_EQ(serial.runs.size(), parallel.runs.size());
  for (std::size_t k = 0; k < serial.runs.size(); ++k) {
    EXPECT_EQ(serial.runs[k].csv, parallel.runs[k].csv);
    EXPECT_EQ(serial.runs[k].seed, parallel.runs[k].seed);
  }
  std::ostringstream a, b;
  write_aggregate_csv(a, serial.aggregate);
  write_aggregate_csv(b, parallel.aggregate);
  EXPECT_EQ(a.str(), b.str());
}

TEST(Determinism, OfflineReaggregationReproducesSeries) {
  const auto c = experiment_from_json(small_config());
  const auto res = run_experiment(c, 0.05, 2);
  std::vector<std::vector<std::vector<double>>> per_run;
  for (const auto& r : res.runs) {
    std::istringstream in(r.csv);
    auto [ts, series] = series_from_run_csv(in, c.game, c.tracked, c.window);
    EXPECT_EQ(ts, res.snapshot_t);
    EXPECT_EQ(series, r.series);
    per_run.push_back(series);
  }
  std::ostringstream a, b;
  write_aggregate_csv(a, res.aggregate);
  write_aggregate_csv(b, aggregate_series(res.snapshot_t, per_run, c.tracked, c.figure));
  EXPECT_EQ(a.str(), b.str());
}

TEST(Determinism, RunFailureInOneWorkerPropagates) {
  EXPECT_THROW(parallel_for(8, 3,
                            [](std::size_t k) {
                              if (k == 5) throw std::runtime_error("boom");
                            }),
               std::runtime_error);
}

TEST(Commands, RunWritesArtifacts) {
  const auto dir = scratch_dir("run");
  auto j = small_config();
  j["epsilon"] = {0.1, 0.05};
  j["outputs"] = {{"critic", true}};
  const auto c = experiment_from_json(j);
  std::ostringstream log;
  const auto res = cmd_run(c, dir, log);
  ASSERT_EQ(res.size(), 2u);
  for (const char* tag : {"eps_0.1", "eps_0.05"}) {
    const auto d = dir / tag;
    EXPECT_TRUE(fs::exists(d / "runs" / "run_000.csv")) << d;
    EXPECT_TRUE(fs::exists(d / "runs" / "run_004.csv"));
    EXPECT_TRUE(fs::exists(d / "critic" / "run_000.csv"));
    EXPECT_EQ(slurp(d / "aggregate.csv").rfind("t,series,median,q20,q80\n", 0), 0u);
    EXPECT_EQ(slurp(d / "runs" / "run_000.csv").rfind("t,h,state,action_tuple,hidden_desc\n", 0), 0u);
    const auto summary = json::parse(slurp(d / "summary.json"));
    EXPECT_EQ(summary["series"].size(), 2u);
    EXPECT_EQ(summary["seeds"].size(), 5u);
    EXPECT_EQ(slurp(d / "figure.svg").rfind("<svg", 0), 0u);
  }
  EXPECT_NE(log.str().find("Hare: median"), std::string::npos) << log.str();
  fs::remove_all(dir);
}

TEST(Commands, AnalyzeWritesTables) {
  const auto dir = scratch_dir("analyze");
  auto j = small_config();
  j["game"] = "treasure_dig";
  j["epsilon"] = {1e-3};
  j.erase("tracked");
  j["analysis"] = {{"exact_pi_eps", true},
                   {"sse", true},
                   {"sweep_epsilons", {1e-2, 1e-4, 1e-6, 1e-8}},
                   {"selections", {"potential_max"}},
                   {"random_batches", {{{"target", "potential_max"}, {"count", 3}, {"seed", 1}}}}};
  std::ostringstream log;
  const auto rep = cmd_analyze(experiment_from_json(j), dir, log);
  for (const char* f : {"pi_eps.csv", "q_pi_eps.csv", "sse.csv", "analysis.json", "gamma/h1_init.csv"})
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  EXPECT_TRUE(rep["sweep"]["consistent"].get<bool>());
  EXPECT_TRUE(rep["selections"][0]["equal"].get<bool>());
  EXPECT_EQ(rep["random_batches"][0]["passed"].get<int>(), 3);
  fs::remove_all(dir);
}

TEST(Commands, ValidateReportsPathsAndListNamesBuiltins) {
  const auto dir = scratch_dir("validate");
  write_text(dir / "broken.json", "{ \"game\": \"stag_hunt\", ");
  EXPECT_FALSE(cmd_validate((dir / "broken.json").string()).ok());
  auto j = small_config();
  j["tracked"][0]["action"] = {0, 5};
  write_text(dir / "bad_action.json", j.dump());
  const auto rep = cmd_validate((dir / "bad_action.json").string());
  ASSERT_FALSE(rep.ok());
  EXPECT_NE(rep.to_string().find("tracked[0].action"), std::string::npos) << rep.to_string();
  write_text(dir / "good.json", small_config().dump());
  EXPECT_TRUE(cmd_validate((dir / "good.json").string()).ok());
  std::ostringstream os;
  cmd_list(os);
  EXPECT_NE(os.str().find("treasure_dig"), std::string::npos);
  EXPECT_NE(os.str().find("pradelski_young"), std::string::npos);
  fs::remove_all(dir);
}

TEST(Output, SvgEscapesText) {
  EXPECT_EQ(svg_escape("a<b & \"c\">"), "a&lt;b &amp; &quot;c&quot;&gt;");
  auto j = small_config();
  j["figure"] = {{"title", "eps < 1 & more"}};
  const auto c = experiment_from_json(j);
  const auto res = run_experiment(c, 0.05, 1, false);
  std::ostringstream os;
  write_svg(os, res.aggregate, c.tracked, c.figure);
  EXPECT_NE(os.str().find("eps &lt; 1 &amp; more"), std::string::npos);
  EXPECT_EQ(os.str().find("eps < 1"), std::string::npos);
  EXPECT_EQ(parse_format("both"), OutputFormat::both);
  EXPECT_THROW(parse_format("png"), std::invalid_argument);
}

TEST(Workers, ThreadCountFromEnvironment) {
  ::setenv("EQSEL_THREADS", "3", 1);
  EXPECT_EQ(worker_count(), 3u);
  ::setenv("EQSEL_THREADS", "zero", 1);
  EXPECT_GE(worker_count(), 1u);
  ::unsetenv("EQSEL_THREADS");
}
