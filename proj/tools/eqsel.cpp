#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eqsel/experiments.hpp"

namespace {

struct Overrides {
  std::string config;
  std::string out = "out";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs;
  std::string epsilon;
  std::optional<std::uint64_t> iters;
  std::string rule;
  std::string algorithm;
  std::string format;
};

std::vector<double> parse_epsilon_list(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != item.size()) throw std::invalid_argument("--epsilon: cannot parse '" + item + "'");
    out.push_back(v);
  }
  return out;
}

eqsel::ExperimentConfig load_with_overrides(const Overrides& o) {
  auto cfg = eqsel::load_experiment(o.config);
  if (o.seed) cfg.seed = *o.seed, cfg.seeds.clear();
  if (o.runs) cfg.n_runs = *o.runs, cfg.seeds.clear();
  if (o.iters) cfg.iterations = *o.iters;
  if (!o.epsilon.empty()) cfg.epsilons = parse_epsilon_list(o.epsilon);
  if (!o.rule.empty()) {
    cfg.rule = eqsel::LearningRuleSpec{};
    cfg.rule.kind = eqsel::parse_rule(o.rule);
  }
  if (!o.algorithm.empty()) cfg.algorithm = eqsel::parse_critic_mode(o.algorithm);
  if (!o.format.empty()) {
    const auto f = eqsel::parse_format(o.format);
    cfg.outputs.csv = f != eqsel::OutputFormat::svg;
    cfg.outputs.svg = f != eqsel::OutputFormat::csv;
  }
  eqsel::check_config(cfg);
  return cfg;
}

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)")->required();
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--seed", o.seed, "base seed");
  cmd->add_option("--runs", o.runs, "number of runs");
  cmd->add_option("--epsilon", o.epsilon, "mistake rate(s), comma separated");
  cmd->add_option("--iters", o.iters, "iterations per run");
  cmd->add_option("--rule", o.rule, "learning rule")->check(CLI::IsMember(eqsel::builtin_rule_names()));
  cmd->add_option("--algorithm", o.algorithm, "critic")->check(CLI::IsMember({"exact", "sampled"}));
  cmd->add_option("--format", o.format, "artifacts to write")->check(CLI::IsMember({"csv", "svg", "both"}));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Equilibrium selection in finite-horizon stochastic games via perturbed learning"};
  app.require_subcommand(1);

  Overrides run_o, analyze_o;
  auto* run = app.add_subcommand("run", "simulate the learning framework and write CSV/SVG artifacts");
  add_common(run, run_o);
  auto* analyze = app.add_subcommand("analyze", "exact stationary policies, stochastic potentials, selection checks");
  add_common(analyze, analyze_o);
  auto* list = app.add_subcommand("list", "list builtin games and learning rules");
  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "check a config or game document without running it");
  validate->add_option("--config", validate_path, "config or game document")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*list) {
      eqsel::cmd_list(std::cout);
    } else if (*validate) {
      const auto rep = eqsel::cmd_validate(validate_path);
      if (!rep.ok()) {
        std::cerr << rep.to_string();
        return 1;
      }
      std::cout << validate_path << ": ok\n";
    } else if (*run) {
      eqsel::cmd_run(load_with_overrides(run_o), run_o.out);
    } else if (*analyze) {
      eqsel::cmd_analyze(load_with_overrides(analyze_o), analyze_o.out);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
