#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "eqsel/csv.hpp"
#include "eqsel/framework.hpp"
#include "eqsel/game_io.hpp"
#include "eqsel/random_games.hpp"
#include "eqsel/resistance.hpp"

namespace eqsel {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Configuration

struct TrackedSeries {
  int stage = 0;  // 0-based
  std::size_t state = 0;
  std::size_t action = 0;
  std::string label;
};

struct FigureSpec {
  double q_lo = 0.2;
  double q_hi = 0.8;
  std::string title;
  std::string x_label = "iteration t";
  std::string y_label = "empirical frequency";
};

struct OutputToggles {
  bool csv = true;
  bool svg = true;
  bool summary = true;
  bool critic = false;  // final critic table per run
};

struct RandomBatchSpec {
  SelectionTarget target = SelectionTarget::potential_max;
  std::size_t count = 0;
  std::vector<std::vector<int>> sizes{{2, 2}};
  std::uint64_t seed = 0;
};

struct AnalysisToggles {
  bool exact_pi_eps = false;
  bool sse = false;
  std::vector<double> sweep_epsilons;
  std::vector<SgSelection> selections;
  std::vector<RandomBatchSpec> batches;
};

struct ExperimentConfig {
  std::string name;
  std::string description;
  std::string game_label;
  StochasticGame game;
  LearningRuleSpec rule;
  std::vector<double> epsilons;
  CriticMode algorithm = CriticMode::exact;
  std::uint64_t iterations = 1000;
  std::size_t n_runs = 1;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;  // explicit per-run seeds; empty means derived from `seed`
  std::uint64_t stride = 1;
  double window = 0.5;
  StartSampling start = StartSampling::uniform;
  std::vector<TrackedSeries> tracked;
  FigureSpec figure;
  OutputToggles outputs;
  AnalysisToggles analysis;

  std::uint64_t run_seed(std::size_t k) const {
    return seeds.empty() ? derive_seed(seed, {static_cast<std::uint64_t>(k)}) : seeds[k];
  }
};

inline std::string series_label(const StochasticGame& g, int stage, std::size_t state, std::size_t action) {
  return "h" + std::to_string(stage + 1) + " " + g.state_names()[state] + " " +
         format_action_tuple(g.codec().decode(action));
}

namespace detail {

inline StochasticGame game_from_spec(const json& j, const fs::path& base, std::string& label, const std::string& path) {
  if (j.is_string()) {
    label = j.get<std::string>();
    try {
      return builtin_game(label);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path, e.what());
    }
  }
  if (!j.is_object()) throw ConfigError(path, "expected a builtin name or an object");
  if (auto it = j.find("builtin"); it != j.end()) return game_from_spec(*it, base, label, path + ".builtin");
  if (auto it = j.find("path"); it != j.end()) {
    const auto file = (base / get_as<std::string>(*it, path + ".path")).lexically_normal();
    label = file.stem().string();
    return config_from_json(read_json_file(file.string()), file.string()).game;
  }
  if (auto it = j.find("inline"); it != j.end()) {
    label = "inline";
    return config_from_json(*it, path + ".inline").game;
  }
  label = j.value("name", std::string("inline"));
  return config_from_json(j, path).game;
}

inline LearningRuleSpec rule_from_json(const json& j, const std::string& path) {
  LearningRuleSpec r;
  auto kind = [&](const std::string& name, const std::string& p) {
    try {
      return parse_rule(name);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(p, e.what());
    }
  };
  if (j.is_string()) {
    r.kind = kind(j.get<std::string>(), path);
    return r;
  }
  r.kind = kind(get_as<std::string>(require_field(j, "name", path), path + ".name"), path + ".name");
  auto opt = [&](const char* key, std::optional<double>& dst) {
    if (auto it = j.find(key); it != j.end()) dst = get_as<double>(*it, path + "." + key);
  };
  opt("c", r.c);
  opt("phi1", r.phi1);
  opt("phi2", r.phi2);
  opt("gamma1", r.gamma1);
  opt("gamma2", r.gamma2);
  if (auto it = j.find("payoff_grid"); it != j.end()) r.payoff_grid = get_as<double>(*it, path + ".payoff_grid");
  if (auto it = j.find("py_variant"); it != j.end()) {
    const auto v = get_as<std::string>(*it, path + ".py_variant");
    if (v == "original") r.py_variant = PyVariant::original;
    else if (v == "as_written") r.py_variant = PyVariant::as_written;
    else throw ConfigError(path + ".py_variant", "expected original or as_written");
  }
  return r;
}

inline std::vector<double> epsilons_from_json(const json& j, const std::string& path) {
  std::vector<double> out = j.is_array() ? get_as<std::vector<double>>(j, path) : std::vector<double>{get_as<double>(j, path)};
  if (out.empty()) throw ConfigError(path, "need at least one epsilon");
  for (std::size_t k = 0; k < out.size(); ++k) {
    try {
      Epsilon e(out[k]);
      (void)e;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(path + (j.is_array() ? "[" + std::to_string(k) + "]" : ""), e.what());
    }
  }
  return out;
}

inline std::vector<double> strictly_decreasing(std::vector<double> v, const std::string& path) {
  for (std::size_t k = 1; k < v.size(); ++k)
    if (!(v[k] < v[k - 1])) throw ConfigError(path, "epsilon list must be strictly decreasing");
  return v;
}

}  // namespace detail

inline void check_config(const ExperimentConfig& c) {
  const auto rep = validate_game(c.game);
  if (!rep.ok()) throw ConfigError("game", "invalid stochastic game:\n" + rep.to_string());
  try {
    c.rule.validate(c.game.n_agents());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("rule", e.what());
  }
  if (c.epsilons.empty()) throw ConfigError("epsilon", "need at least one epsilon");
  for (double e : c.epsilons) (void)Epsilon(e);
  if (c.n_runs < 1) throw ConfigError("n_runs", "must be >= 1");
  if (!c.seeds.empty() && c.seeds.size() != c.n_runs) throw ConfigError("seeds", "length must equal n_runs");
  if (c.stride < 1) throw ConfigError("stride", "must be >= 1");
  if (!(c.window > 0.0 && c.window <= 1.0)) throw ConfigError("window", "must lie in (0, 1]");
  if (!(c.figure.q_lo >= 0.0 && c.figure.q_lo < 0.5 && std::abs(c.figure.q_lo + c.figure.q_hi - 1.0) < 1e-12))
    throw ConfigError("figure.quantiles", "quantile pair must be symmetric around the median");
}

inline ExperimentConfig experiment_from_json(const json& j, const fs::path& base = ".") {
  using detail::get_as;
  using detail::require_field;
  if (!j.is_object()) throw ConfigError("$", "expected an object");
  ExperimentConfig c;
  c.name = j.value("name", std::string("experiment"));
  c.description = j.value("description", std::string());
  c.game = detail::game_from_spec(require_field(j, "game", "$"), base, c.game_label, "game");
  if (auto it = j.find("rule"); it != j.end()) c.rule = detail::rule_from_json(*it, "rule");
  c.epsilons = detail::epsilons_from_json(require_field(j, "epsilon", "$"), "epsilon");
  if (auto it = j.find("algorithm"); it != j.end()) {
    try {
      c.algorithm = parse_critic_mode(get_as<std::string>(*it, "algorithm"));
    } catch (const std::invalid_argument& e) {
      throw ConfigError("algorithm", e.what());
    }
  }
  if (auto it = j.find("iterations"); it != j.end()) c.iterations = get_as<std::uint64_t>(*it, "iterations");
  if (auto it = j.find("n_runs"); it != j.end()) c.n_runs = get_as<std::size_t>(*it, "n_runs");
  if (auto it = j.find("seed"); it != j.end()) c.seed = get_as<std::uint64_t>(*it, "seed");
  if (auto it = j.find("seeds"); it != j.end()) c.seeds = get_as<std::vector<std::uint64_t>>(*it, "seeds");
  if (auto it = j.find("stride"); it != j.end()) c.stride = get_as<std::uint64_t>(*it, "stride");
  if (auto it = j.find("window"); it != j.end()) c.window = get_as<double>(*it, "window");
  if (auto it = j.find("start"); it != j.end()) {
    const auto s = get_as<std::string>(*it, "start");
    if (s == "uniform") c.start = StartSampling::uniform;
    else if (s == "rho") c.start = StartSampling::rho;
    else throw ConfigError("start", "expected uniform or rho");
  }
  if (auto it = j.find("tracked"); it != j.end()) {
    if (!it->is_array()) throw ConfigError("tracked", "expected an array");
    for (std::size_t k = 0; k < it->size(); ++k) {
      const auto& e = (*it)[k];
      const std::string p = "tracked[" + std::to_string(k) + "]";
      TrackedSeries t;
      t.stage = detail::parse_stage(require_field(e, "stage", p), c.game.horizon(), p + ".stage");
      t.state = detail::parse_state(require_field(e, "state", p), c.game.state_names(), p + ".state");
      t.action = detail::parse_action(require_field(e, "action", p), c.game.codec(), p + ".action");
      t.label = e.contains("label") ? get_as<std::string>(e["label"], p + ".label")
                                    : series_label(c.game, t.stage, t.state, t.action);
      c.tracked.push_back(std::move(t));
    }
  } else {
    for (std::size_t s = 0; s < c.game.n_states(); ++s)
      if (c.game.initial_distribution()[s] > 0.0)
        for (std::size_t a = 0; a < c.game.n_joint(); ++a)
          c.tracked.push_back({0, s, a, series_label(c.game, 0, s, a)});
  }
  if (auto it = j.find("figure"); it != j.end()) {
    const auto& f = *it;
    if (auto q = f.find("quantiles"); q != f.end()) {
      const auto qs = get_as<std::vector<double>>(*q, "figure.quantiles");
      if (qs.size() != 2) throw ConfigError("figure.quantiles", "expected [lo, hi]");
      c.figure.q_lo = qs[0];
      c.figure.q_hi = qs[1];
    }
    c.figure.title = f.value("title", c.figure.title);
    c.figure.x_label = f.value("x_label", c.figure.x_label);
    c.figure.y_label = f.value("y_label", c.figure.y_label);
  }
  if (c.figure.title.empty()) c.figure.title = c.name;
  if (auto it = j.find("outputs"); it != j.end()) {
    c.outputs.csv = it->value("csv", c.outputs.csv);
    c.outputs.svg = it->value("svg", c.outputs.svg);
    c.outputs.summary = it->value("summary", c.outputs.summary);
    c.outputs.critic = it->value("critic", c.outputs.critic);
  }
  if (auto it = j.find("analysis"); it != j.end()) {
    const auto& a = *it;
    c.analysis.exact_pi_eps = a.value("exact_pi_eps", false);
    c.analysis.sse = a.value("sse", false);
    if (auto s = a.find("sweep_epsilons"); s != a.end())
      c.analysis.sweep_epsilons =
          detail::strictly_decreasing(detail::epsilons_from_json(*s, "analysis.sweep_epsilons"), "analysis.sweep_epsilons");
    if (auto s = a.find("selections"); s != a.end())
      for (const auto& name : get_as<std::vector<std::string>>(*s, "analysis.selections")) {
        try {
          c.analysis.selections.push_back(parse_sg_selection(name));
        } catch (const std::invalid_argument& e) {
          throw ConfigError("analysis.selections", e.what());
        }
      }
    if (auto b = a.find("random_batches"); b != a.end()) {
      if (!b->is_array()) throw ConfigError("analysis.random_batches", "expected an array");
      for (std::size_t k = 0; k < b->size(); ++k) {
        const auto& e = (*b)[k];
        const std::string p = "analysis.random_batches[" + std::to_string(k) + "]";
        RandomBatchSpec r;
        try {
          r.target = parse_target(get_as<std::string>(require_field(e, "target", p), p + ".target"));
        } catch (const std::invalid_argument& ex) {
          throw ConfigError(p + ".target", ex.what());
        }
        r.count = get_as<std::size_t>(require_field(e, "count", p), p + ".count");
        if (auto s = e.find("sizes"); s != e.end()) r.sizes = get_as<std::vector<std::vector<int>>>(*s, p + ".sizes");
        if (auto s = e.find("seed"); s != e.end()) r.seed = get_as<std::uint64_t>(*s, p + ".seed");
        if (r.sizes.empty()) throw ConfigError(p + ".sizes", "need at least one size");
        c.analysis.batches.push_back(std::move(r));
      }
    }
  }
  check_config(c);
  return c;
}

inline ExperimentConfig load_experiment(const std::string& file) {
  return experiment_from_json(read_json_file(file), fs::path(file).parent_path());
}

// ---------------------------------------------------------------------------
// Worker pool

/// Worker count: EQSEL_THREADS when set to a positive integer, else the
/// hardware concurrency.
inline std::size_t worker_count() {
  if (const char* env = std::getenv("EQSEL_THREADS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end != env && *end == '\0' && v >= 1) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

/// Calls fn(k) for k in [0, count) on up to `threads` workers. The first
/// exception thrown by any task is rethrown after all workers join.
inline void parallel_for(std::size_t count, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&] {
      for (std::size_t k; (k = next.fetch_add(1)) < count;) {
        try {
          fn(k);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Runs and aggregation

inline void write_run_csv(std::ostream& os, const StochasticGame& g, const LearningRuleSpec& rule, const RunRecord& r) {
  os << "t,h,state,action_tuple,hidden_desc\n";
  for (const auto& snap : r.snapshots)
    for (int h = 0; h < g.horizon(); ++h)
      for (std::size_t s = 0; s < g.n_states(); ++s) {
        const auto& cell = snap.cells[static_cast<std::size_t>(h) * g.n_states() + s];
        write_csv_row(os, {std::to_string(snap.t), std::to_string(h + 1), g.state_names()[s],
                           format_action_tuple(g.codec().decode(cell.action)), hidden_desc(rule, cell)});
      }
}

inline void write_critic_csv(std::ostream& os, const StochasticGame& g, const ValueTables& vt) {
  os << "agent,h,state,action_tuple,q,v\n";
  for (std::size_t i = 0; i < g.n_agents(); ++i)
    for (int h = 0; h < g.horizon(); ++h)
      for (std::size_t s = 0; s < g.n_states(); ++s)
        for (std::size_t a = 0; a < g.n_joint(); ++a)
          write_csv_row(os, {std::to_string(i), std::to_string(h + 1), g.state_names()[s],
                             format_action_tuple(g.codec().decode(a)), format_double(vt.Q(i, h, s, a)),
                             format_double(vt.V(i, h, s))});
}

/// Per snapshot k, the fraction of snapshots with t in [t_k - floor(w t_k), t_k]
/// that show the tracked action.
inline std::vector<double> windowed_frequency(const std::vector<std::uint64_t>& ts, const std::vector<std::uint8_t>& hit,
                                              double window) {
  std::vector<std::uint64_t> prefix(ts.size() + 1, 0);
  for (std::size_t k = 0; k < ts.size(); ++k) prefix[k + 1] = prefix[k] + hit[k];
  std::vector<double> out(ts.size());
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const std::uint64_t t = ts[k];
    const std::uint64_t lo = t - static_cast<std::uint64_t>(std::floor(window * static_cast<double>(t)));
    const auto first = static_cast<std::size_t>(std::lower_bound(ts.begin(), ts.begin() + static_cast<long>(k) + 1, lo) - ts.begin());
    out[k] = static_cast<double>(prefix[k + 1] - prefix[first]) / static_cast<double>(k + 1 - first);
  }
  return out;
}

/// Linear-interpolation quantile of an unsorted sample.
inline double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

struct RunOutput {
  std::uint64_t seed = 0;
  std::string csv;
  std::string critic_csv;
  std::vector<std::vector<double>> series;  // [tracked][snapshot] windowed frequency
  std::vector<double> window_frequency;     // [tracked] over every iteration of the final window
  std::vector<std::string> warnings;
};

struct AggregateRow {
  std::uint64_t t = 0;
  std::string series;
  double median = 0.0, q_lo = 0.0, q_hi = 0.0;
};

struct ExperimentResult {
  double epsilon = 0.0;
  std::vector<std::uint64_t> snapshot_t;
  std::vector<RunOutput> runs;
  std::vector<AggregateRow> aggregate;

  /// Final aggregate row of a series.
  const AggregateRow& final_row(const std::string& series) const {
    for (auto it = aggregate.rbegin(); it != aggregate.rend(); ++it)
      if (it->series == series) return *it;
    throw std::out_of_range("no series '" + series + "'");
  }
};

inline std::vector<AggregateRow> aggregate_series(const std::vector<std::uint64_t>& ts,
                                                  const std::vector<std::vector<std::vector<double>>>& per_run,
                                                  const std::vector<TrackedSeries>& tracked, const FigureSpec& fig) {
  std::vector<AggregateRow> rows;
  std::vector<double> sample(per_run.size());
  for (std::size_t k = 0; k < ts.size(); ++k)
    for (std::size_t j = 0; j < tracked.size(); ++j) {
      for (std::size_t r = 0; r < per_run.size(); ++r) sample[r] = per_run[r][j][k];
      rows.push_back({ts[k], tracked[j].label, quantile(sample, 0.5), quantile(sample, fig.q_lo), quantile(sample, fig.q_hi)});
    }
  return rows;
}

inline void write_aggregate_csv(std::ostream& os, const std::vector<AggregateRow>& rows) {
  os << "t,series,median,q20,q80\n";
  for (const auto& r : rows)
    write_csv_row(os, {std::to_string(r.t), r.series, format_double(r.median), format_double(r.q_lo), format_double(r.q_hi)});
}

/// Recovers snapshot times and per-series windowed frequencies from a run CSV.
inline std::pair<std::vector<std::uint64_t>, std::vector<std::vector<double>>> series_from_run_csv(
    std::istream& in, const StochasticGame& g, const std::vector<TrackedSeries>& tracked, double window) {
  std::string line;
  if (!std::getline(in, line) || line != "t,h,state,action_tuple,hidden_desc")
    throw std::runtime_error("run CSV has an unexpected header");
  std::vector<std::uint64_t> ts;
  std::vector<std::vector<std::uint8_t>> hits(tracked.size());
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = parse_csv_row(line);
    if (f.size() != 5) throw std::runtime_error("run CSV row has " + std::to_string(f.size()) + " fields");
    const auto t = static_cast<std::uint64_t>(std::stoull(f[0]));
    if (ts.empty() || ts.back() != t) {
      ts.push_back(t);
      for (auto& h : hits) h.push_back(0);
    }
    const int h = std::stoi(f[1]) - 1;
    for (std::size_t j = 0; j < tracked.size(); ++j) {
      const auto& tr = tracked[j];
      if (tr.stage == h && g.state_names()[tr.state] == f[2] &&
          format_action_tuple(g.codec().decode(tr.action)) == f[3])
        hits[j].back() = 1;
    }
  }
  std::vector<std::vector<double>> freq;
  for (const auto& h : hits) freq.push_back(windowed_frequency(ts, h, window));
  return {ts, freq};
}

/// Executes cfg.n_runs seeded runs at one epsilon on the worker pool.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, double epsilon, std::size_t threads,
                                       bool keep_csv = true) {
  const Epsilon eps(epsilon);
  ExperimentResult res;
  res.epsilon = epsilon;
  res.runs.resize(cfg.n_runs);
  parallel_for(cfg.n_runs, threads, [&](std::size_t k) {
    RunOptions opt;
    opt.iterations = cfg.iterations;
    opt.seed = cfg.run_seed(k);
    opt.stride = cfg.stride;
    opt.window = cfg.window;
    opt.start = cfg.start;
    const auto rec = cfg.algorithm == CriticMode::exact ? run_algorithm1(cfg.game, cfg.rule, eps, opt)
                                                        : run_algorithm2(cfg.game, cfg.rule, eps, opt);
    RunOutput out;
    out.seed = opt.seed;
    out.warnings = rec.warnings;
    if (keep_csv) {
      std::ostringstream os;
      write_run_csv(os, cfg.game, cfg.rule, rec);
      out.csv = os.str();
      if (cfg.outputs.critic) {
        std::ostringstream cs;
        write_critic_csv(cs, cfg.game, rec.critic);
        out.critic_csv = cs.str();
      }
    }
    std::vector<std::uint64_t> ts;
    for (const auto& s : rec.snapshots) ts.push_back(s.t);
    for (const auto& tr : cfg.tracked) {
      std::vector<std::uint8_t> hit;
      const std::size_t c = static_cast<std::size_t>(tr.stage) * cfg.game.n_states() + tr.state;
      for (const auto& s : rec.snapshots) hit.push_back(s.cells[c].action == tr.action ? 1 : 0);
      out.series.push_back(windowed_frequency(ts, hit, cfg.window));
      out.window_frequency.push_back(cfg.iterations > 0 ? rec.window_frequency(tr.stage, tr.state)[tr.action]
                                                        : out.series.back().back());
    }
    if (k == 0) res.snapshot_t = ts;
    res.runs[k] = std::move(out);
  });
  std::vector<std::vector<std::vector<double>>> per_run;
  for (const auto& r : res.runs) per_run.push_back(r.series);
  res.aggregate = aggregate_series(res.snapshot_t, per_run, cfg.tracked, cfg.figure);
  return res;
}

// ---------------------------------------------------------------------------
// Summary and plot

inline json experiment_summary(const ExperimentConfig& cfg, const ExperimentResult& res) {
  json j;
  j["name"] = cfg.name;
  j["game"] = cfg.game_label;
  j["rule"] = rule_name(cfg.rule.kind);
  j["epsilon"] = res.epsilon;
  j["algorithm"] = critic_mode_name(cfg.algorithm);
  j["iterations"] = cfg.iterations;
  j["n_runs"] = cfg.n_runs;
  j["stride"] = cfg.stride;
  j["window"] = cfg.window;
  json seeds = json::array();
  for (const auto& r : res.runs) seeds.push_back(r.seed);
  j["seeds"] = seeds;
  json series = json::array();
  for (std::size_t k = 0; k < cfg.tracked.size(); ++k) {
    const auto& tr = cfg.tracked[k];
    const auto& last = res.final_row(tr.label);
    std::vector<double> wf;
    for (const auto& r : res.runs) wf.push_back(r.window_frequency[k]);
    series.push_back({{"label", tr.label},
                      {"stage", tr.stage + 1},
                      {"state", cfg.game.state_names()[tr.state]},
                      {"action", cfg.game.codec().decode(tr.action)},
                      {"final_t", last.t},
                      {"final_median", last.median},
                      {"final_q20", last.q_lo},
                      {"final_q80", last.q_hi},
                      {"window_frequency_median", quantile(wf, 0.5)}});
  }
  j["series"] = series;
  std::set<std::string> warnings;
  for (const auto& r : res.runs) warnings.insert(r.warnings.begin(), r.warnings.end());
  j["warnings"] = std::vector<std::string>(warnings.begin(), warnings.end());
  return j;
}

inline std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

/// Median lines with quantile bands, one colour per series.
inline void write_svg(std::ostream& os, const std::vector<AggregateRow>& rows, const std::vector<TrackedSeries>& tracked,
                      const FigureSpec& fig) {
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
  const double W = 720, H = 440, ml = 70, mr = 190, mt = 40, mb = 60;
  const double pw = W - ml - mr, ph = H - mt - mb;
  std::uint64_t tmax = 1;
  for (const auto& r : rows) tmax = std::max(tmax, r.t);
  auto X = [&](std::uint64_t t) { return ml + pw * static_cast<double>(t) / static_cast<double>(tmax); };
  auto Y = [&](double y) { return mt + ph * (1.0 - y); };
  os << std::fixed << std::setprecision(2);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">"
     << svg_escape(fig.title) << "</text>\n";
  for (int k = 0; k <= 5; ++k) {
    const double y = k / 5.0;
    os << "<line x1=\"" << ml << "\" y1=\"" << Y(y) << "\" x2=\"" << ml + pw << "\" y2=\"" << Y(y)
       << "\" stroke=\"#e0e0e0\"/>\n";
    os << "<text x=\"" << ml - 8 << "\" y=\"" << Y(y) + 4 << "\" text-anchor=\"end\" font-family=\"sans-serif\" "
       << "font-size=\"11\">" << std::setprecision(1) << y << std::setprecision(2) << "</text>\n";
    const auto t = static_cast<std::uint64_t>(std::llround(static_cast<double>(tmax) * k / 5.0));
    os << "<text x=\"" << X(t) << "\" y=\"" << mt + ph + 18 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
       << "font-size=\"11\">" << t << "</text>\n";
  }
  os << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << ml + pw / 2 << "\" y=\"" << H - 18 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
     << "font-size=\"13\">" << svg_escape(fig.x_label) << "</text>\n";
  os << "<text transform=\"translate(18," << mt + ph / 2 << ") rotate(-90)\" text-anchor=\"middle\" "
     << "font-family=\"sans-serif\" font-size=\"13\">" << svg_escape(fig.y_label) << "</text>\n";
  for (std::size_t j = 0; j < tracked.size(); ++j) {
    const char* col = palette[j % 8];
    std::vector<const AggregateRow*> pts;
    for (const auto& r : rows)
      if (r.series == tracked[j].label) pts.push_back(&r);
    if (pts.empty()) continue;
    os << "<polygon fill=\"" << col << "\" fill-opacity=\"0.2\" stroke=\"none\" points=\"";
    for (const auto* p : pts) os << X(p->t) << ',' << Y(p->q_hi) << ' ';
    for (auto it = pts.rbegin(); it != pts.rend(); ++it) os << X((*it)->t) << ',' << Y((*it)->q_lo) << ' ';
    os << "\"/>\n<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
    for (const auto* p : pts) os << X(p->t) << ',' << Y(p->median) << ' ';
    os << "\"/>\n";
    const double ly = mt + 16 + 20.0 * static_cast<double>(j);
    os << "<line x1=\"" << ml + pw + 14 << "\" y1=\"" << ly << "\" x2=\"" << ml + pw + 40 << "\" y2=\"" << ly
       << "\" stroke=\"" << col << "\" stroke-width=\"3\"/>\n";
    os << "<text x=\"" << ml + pw + 46 << "\" y=\"" << ly + 4 << "\" font-family=\"sans-serif\" font-size=\"12\">"
       << svg_escape(tracked[j].label) << "</text>\n";
  }
  os << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Commands

enum class OutputFormat { csv, svg, both };

inline OutputFormat parse_format(std::string_view s) {
  if (s == "csv") return OutputFormat::csv;
  if (s == "svg") return OutputFormat::svg;
  if (s == "both") return OutputFormat::both;
  throw std::invalid_argument("unknown format '" + std::string(s) + "' (expected csv, svg or both)");
}

inline void write_text(const fs::path& file, const std::string& text) {
  fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << text;
}

inline std::string epsilon_tag(double e) {
  std::ostringstream os;
  os << "eps_" << format_double(e);
  return os.str();
}

inline std::string run_file_name(std::size_t k) {
  std::ostringstream os;
  os << "run_" << std::setw(3) << std::setfill('0') << k << ".csv";
  return os.str();
}

/// Runs every epsilon of the config and writes per-run CSVs, the aggregate
/// CSV, a summary document and an SVG plot. Returns the results per epsilon.
inline std::vector<ExperimentResult> cmd_run(const ExperimentConfig& cfg, const fs::path& out_dir,
                                             std::ostream& log = std::cerr) {
  const bool csv = cfg.outputs.csv, svg = cfg.outputs.svg;
  std::vector<ExperimentResult> all;
  for (double e : cfg.epsilons) {
    const fs::path dir = cfg.epsilons.size() == 1 ? out_dir : out_dir / epsilon_tag(e);
    const auto t0 = std::chrono::steady_clock::now();
    auto res = run_experiment(cfg, e, worker_count(), csv);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    fs::create_directories(dir);
    if (csv) {
      for (std::size_t k = 0; k < res.runs.size(); ++k) {
        write_text(dir / "runs" / run_file_name(k), res.runs[k].csv);
        if (cfg.outputs.critic) write_text(dir / "critic" / run_file_name(k), res.runs[k].critic_csv);
      }
      std::ostringstream os;
      write_aggregate_csv(os, res.aggregate);
      write_text(dir / "aggregate.csv", os.str());
    }
    if (svg) {
      std::ostringstream os;
      write_svg(os, res.aggregate, cfg.tracked, cfg.figure);
      write_text(dir / "figure.svg", os.str());
    }
    if (cfg.outputs.summary) write_text(dir / "summary.json", experiment_summary(cfg, res).dump(2) + "\n");
    log << cfg.name << ": epsilon " << format_double(e) << ", " << cfg.n_runs << " runs x " << cfg.iterations
        << " iterations in " << std::fixed << std::setprecision(1) << secs << " s\n" << std::defaultfloat;
    for (const auto& tr : cfg.tracked) {
      const auto& r = res.final_row(tr.label);
      log << "  " << tr.label << ": median " << format_double(r.median) << " [" << format_double(r.q_lo) << ", "
          << format_double(r.q_hi) << "] at t=" << r.t << '\n';
    }
    for (auto& r : res.runs) r.csv.clear();
    all.push_back(std::move(res));
  }
  return all;
}

struct BatchOutcome {
  std::size_t total = 0;
  std::size_t passed = 0;
  std::vector<std::string> failures;
};

/// Random normal-form games checked against a selection statement with the
/// rule that statement belongs to.
inline BatchOutcome run_random_batch(const RandomBatchSpec& spec) {
  BatchOutcome out;
  Rng rng(spec.seed);
  const LearningRuleSpec rule = spec.target == SelectionTarget::potential_max ? LearningRuleSpec::log_linear()
                                : spec.target == SelectionTarget::pareto       ? LearningRuleSpec::marden()
                                                                               : LearningRuleSpec::pradelski_young();
  for (std::size_t k = 0; k < spec.count; ++k) {
    const auto& size = spec.sizes[k % spec.sizes.size()];
    NormalFormGame g = spec.target == SelectionTarget::potential_max ? random_potential_game(size, rng)
                                                                     : random_interdependent_game(size, rng);
    if (spec.target == SelectionTarget::pareto_ne && pure_nash_equilibria(g, true).empty()) {
      --k;  // needs a pure NE
      continue;
    }
    const auto rep = validate_corollary(rule, g, spec.target);
    ++out.total;
    if (rep.equal) ++out.passed;
    else out.failures.push_back("game " + std::to_string(k) + ": " + rep.message);
  }
  return out;
}

/// Oracle analyses: exact pi^eps tables, stochastic potentials, the epsilon
/// sweep, selection-statement verdicts and random batches.
inline json cmd_analyze(const ExperimentConfig& cfg, const fs::path& out_dir, std::ostream& log = std::cerr) {
  const auto& g = cfg.game;
  fs::create_directories(out_dir);
  json report;
  report["name"] = cfg.name;
  report["game"] = cfg.game_label;
  report["rule"] = rule_name(cfg.rule.kind);
  const auto reach = reachable_states(g);

  std::optional<ExactPiEps> smallest;
  if (cfg.analysis.exact_pi_eps || cfg.analysis.sse) {
    std::ostringstream pi_csv, q_csv;
    pi_csv << "epsilon,h,state,action_tuple,probability\n";
    q_csv << "epsilon,agent,h,state,action_tuple,q\n";
    json exact = json::array();
    for (double e : cfg.epsilons) {
      auto ex = exact_pi_eps(g, cfg.rule, Epsilon(e));
      for (int h = 0; h < g.horizon(); ++h)
        for (std::size_t s = 0; s < g.n_states(); ++s)
          for (std::size_t a = 0; a < g.n_joint(); ++a) {
            const std::string tuple = format_action_tuple(g.codec().decode(a));
            write_csv_row(pi_csv, {format_double(e), std::to_string(h + 1), g.state_names()[s], tuple,
                                   format_double(ex.marginal(h, s, g.n_states())[a])});
            for (std::size_t i = 0; i < g.n_agents(); ++i)
              write_csv_row(q_csv, {format_double(e), std::to_string(i), std::to_string(h + 1), g.state_names()[s], tuple,
                                    format_double(ex.values.Q(i, h, s, a))});
          }
      json cells = json::array();
      for (std::size_t s = 0; s < g.n_states(); ++s)
        if (g.initial_distribution()[s] > 0.0) {
          const auto& m = ex.marginal(0, s, g.n_states());
          const auto best = static_cast<std::size_t>(std::max_element(m.begin(), m.end()) - m.begin());
          cells.push_back({{"state", g.state_names()[s]},
                           {"mode", format_action_tuple(g.codec().decode(best))},
                           {"probability", m[best]}});
        }
      exact.push_back({{"epsilon", e}, {"stage1", cells}, {"notes", ex.notes}});
      log << "exact pi^eps at epsilon " << format_double(e) << ":";
      for (const auto& c : cells)
        log << ' ' << c["state"].get<std::string>() << " -> " << c["mode"].get<std::string>() << " ("
            << format_double(c["probability"].get<double>()) << ")";
      log << '\n';
      smallest = std::move(ex);
    }
    write_text(out_dir / "pi_eps.csv", pi_csv.str());
    write_text(out_dir / "q_pi_eps.csv", q_csv.str());
    report["exact_pi_eps"] = exact;
  }

  if (cfg.analysis.sse && smallest) {
    std::ostringstream sse_csv;
    sse_csv << "h,state,sse_set,min_gamma\n";
    json sse = json::array();
    for (int h = 0; h < g.horizon(); ++h)
      for (std::size_t s = 0; s < g.n_states(); ++s) {
        if (!reach[static_cast<std::size_t>(h)][s]) continue;
        const auto r = sse_set(cfg.rule, learner_game(g, cfg.rule, smallest->values, h, s));
        const std::string set = format_action_set(g.codec(), r.actions);
        write_csv_row(sse_csv, {std::to_string(h + 1), g.state_names()[s], set, format_double(r.table.min_gamma)});
        std::ostringstream gamma;
        write_gamma_csv(gamma, r.graph, r.table);
        write_text(out_dir / "gamma" / ("h" + std::to_string(h + 1) + "_" + g.state_names()[s] + ".csv"), gamma.str());
        sse.push_back({{"stage", h + 1}, {"state", g.state_names()[s]}, {"sse", set}, {"min_gamma", r.table.min_gamma}});
        log << "SSE at stage " << h + 1 << ", " << g.state_names()[s] << ": " << set << '\n';
      }
    write_text(out_dir / "sse.csv", sse_csv.str());
    report["sse"] = sse;
  }

  if (!cfg.analysis.sweep_epsilons.empty()) {
    const auto sw = sweep_limit_policy(g, cfg.rule, cfg.analysis.sweep_epsilons);
    json cells = json::array();
    for (const auto& c : sw.cells) {
      if (!c.reachable) continue;
      cells.push_back({{"stage", c.stage + 1},
                       {"state", g.state_names()[c.state]},
                       {"support", format_action_set(g.codec(), c.support)},
                       {"gamma_argmin", format_action_set(g.codec(), c.gamma_argmin)},
                       {"argmin_mass", c.argmin_mass},
                       {"contained", c.contained},
                       {"mass_nondecreasing", c.mass_nondecreasing}});
    }
    report["sweep"] = {{"epsilons", sw.epsilons}, {"consistent", sw.consistent}, {"cells", cells}};
    log << "sweep: " << (sw.consistent ? "limit support within the stochastic-potential minimizers"
                                       : "some limit support lies outside the stochastic-potential minimizers")
        << '\n';
    json verdicts = json::array();
    for (auto which : cfg.analysis.selections) {
      const auto rep = validate_sg_corollary(g, cfg.rule, which, cfg.analysis.sweep_epsilons);
      verdicts.push_back({{"selection", sg_selection_name(which)},
                          {"equal", rep.equal},
                          {"failed_preconditions", rep.failed_preconditions},
                          {"message", rep.message}});
      log << sg_selection_name(which) << ": " << rep.message << '\n';
      for (const auto& f : rep.failed_preconditions) log << "  precondition: " << f << '\n';
    }
    if (!verdicts.empty()) report["selections"] = verdicts;
  }

  if (!cfg.analysis.batches.empty()) {
    json batches = json::array();
    for (const auto& b : cfg.analysis.batches) {
      const auto r = run_random_batch(b);
      batches.push_back({{"target", target_name(b.target)},
                         {"total", r.total},
                         {"passed", r.passed},
                         {"failures", r.failures}});
      log << "random batch " << target_name(b.target) << ": " << r.passed << "/" << r.total << " pass\n";
    }
    report["random_batches"] = batches;
  }
  write_text(out_dir / "analysis.json", report.dump(2) + "\n");
  return report;
}

/// Validates either an experiment config or a bare game document.
inline ValidationReport cmd_validate(const std::string& file) {
  ValidationReport rep;
  try {
    const auto j = read_json_file(file);
    if (j.is_object() && j.contains("game")) {
      load_experiment(file);
    } else {
      const auto c = config_from_json(j, file);
      return validate_game(c.game);
    }
  } catch (const ConfigError& e) {
    rep.violations.push_back({e.path(), std::string(e.what()).substr(e.path().size() + 2)});
  } catch (const std::exception& e) {
    rep.violations.push_back({file, e.what()});
  }
  return rep;
}

inline void cmd_list(std::ostream& os) {
  os << "games:\n";
  for (const auto& g : builtin_game_names()) os << "  " << g << '\n';
  os << "rules:\n";
  for (const auto& r : builtin_rule_names()) os << "  " << r << '\n';
}

}  // namespace eqsel
