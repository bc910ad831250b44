#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eqsel/chain_analysis.hpp"
#include "eqsel/game_model.hpp"
#include "eqsel/learning_rules.hpp"
#include "eqsel/policy_eval.hpp"
#include "eqsel/random.hpp"
#include "eqsel/resistance.hpp"

namespace eqsel {

enum class CriticMode { exact, sampled };
enum class StartSampling { uniform, rho };

inline std::string_view critic_mode_name(CriticMode m) { return m == CriticMode::exact ? "exact" : "sampled"; }

inline CriticMode parse_critic_mode(std::string_view s) {
  if (s == "exact") return CriticMode::exact;
  if (s == "sampled") return CriticMode::sampled;
  throw std::invalid_argument("unknown algorithm '" + std::string(s) + "' (expected exact or sampled)");
}

/// Range [lo, hi] that stage-h Q-values can occupy: (H - h) stages of
/// rewards, with [0, 1] always included so normalized games map to
/// themselves.
struct PayoffRange {
  double lo = 0.0;
  double hi = 1.0;
};

inline PayoffRange q_range(const StochasticGame& g, int stage) {
  const double m = static_cast<double>(g.horizon() - stage);
  return {m * std::min(0.0, g.min_reward()), m * std::max(1.0, g.max_reward())};
}

/// The normal-form game a learner at (stage, state) plays against: the
/// Q-slice, normalized into [0, 1] for mood rules.
inline NormalFormGame learner_game(const StochasticGame& g, const LearningRuleSpec& rule, const ValueTables& vt,
                                   int stage, std::size_t state) {
  auto nfg = q_stage_game(g, vt, stage, state);
  if (!rule.is_mood_rule()) return nfg;
  const auto r = q_range(g, stage);
  return normalize_payoffs(nfg, r.lo, r.hi);
}

namespace detail {

inline constexpr std::uint64_t kCellStream = 1;
inline constexpr std::uint64_t kTrajectoryStream = 2;

/// Nonzero next-state probabilities per (stage, state, joint action).
struct SparseTransitions {
  std::vector<std::vector<std::pair<std::size_t, double>>> next;  // ((h * S + s) * A + a)

  explicit SparseTransitions(const StochasticGame& g) {
    const std::size_t S = g.n_states(), A = g.n_joint();
    next.resize(static_cast<std::size_t>(g.horizon()) * S * A);
    for (int h = 0; h < g.horizon(); ++h)
      for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a)
          for (std::size_t n = 0; n < S; ++n) {
            const double p = g.transition(h, s, a, n);
            if (p != 0.0) next[(static_cast<std::size_t>(h) * S + s) * A + a].push_back({n, p});
          }
  }
};

inline std::size_t sample_index(const std::vector<std::pair<std::size_t, double>>& dist, Rng& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < dist.size(); ++k) {
    acc += dist[k].second;
    if (u < acc) return dist[k].first;
  }
  return dist.back().first;
}

}  // namespace detail

/// Seed of the random stream owned by the learner at (stage, state).
inline std::uint64_t cell_seed(std::uint64_t seed, int stage, std::size_t state) {
  return derive_seed(seed, {detail::kCellStream, static_cast<std::uint64_t>(stage), static_cast<std::uint64_t>(state)});
}

/// Actor and critic state of the learning framework.
///
/// One iteration performs, for every (stage, state) cell, the actor draw
/// (a^{t+1}, xi^{t+1}) ~ K^eps(. | a^t, xi^t; Q^t(s, .)), then the critic
/// updates
///   V^{t+1}(s) = t/(t+1) V^t(s) + 1/(t+1) Q^t(s, a^t(s))
/// and either the exact Bellman step Q^{t+1} = r + P V^{t+1}_{next stage}
/// or, in sampled mode, a running average along one simulated trajectory
/// that follows a^{t+1}. Because the V update reads Q^t, running all actor
/// draws before the critic is the same as interleaving them stage by stage
/// from the last stage down.
class FrameworkState {
 public:
  FrameworkState(const StochasticGame& g, LearningRuleSpec rule, Epsilon eps, CriticMode mode, std::uint64_t seed,
                 StartSampling start = StartSampling::uniform)
      : game_(&g),
        rule_(std::move(rule)),
        eps_(eps),
        mode_(mode),
        start_(start),
        H_(g.horizon()),
        S_(g.n_states()),
        A_(g.n_joint()),
        n_(g.n_agents()),
        trans_(g),
        critic_(n_, H_, S_, A_),
        traj_rng_(derive_seed(seed, {detail::kTrajectoryStream})) {
    require_valid(g);
    rule_.validate(n_);
    const std::size_t cells = static_cast<std::size_t>(H_) * S_;
    for (std::size_t i = 0; i < n_; ++i)
      for (int h = 0; h < H_; ++h)
        for (std::size_t s = 0; s < S_; ++s)
          for (std::size_t a = 0; a < A_; ++a) critic_.q[critic_.q_index(i, h, s, a)] = g.reward(i, h, s, a);
    if (mode_ == CriticMode::sampled) visits_.assign(cells * A_, 0);
    rngs_.reserve(cells);
    games_.reserve(cells);
    cells_.reserve(cells);
    for (int h = 0; h < H_; ++h)
      for (std::size_t s = 0; s < S_; ++s) {
        rngs_.emplace_back(cell_seed(seed, h, s));
        games_.push_back(learner_game(g, rule_, critic_, h, s));
        const std::size_t a0 = static_cast<std::size_t>(rngs_.back().below(A_));
        cells_.push_back(initial_cell(rule_, games_.back(), a0));
      }
    if (start_ == StartSampling::rho) {
      for (std::size_t s = 0; s < S_; ++s)
        if (g.initial_distribution()[s] > 0.0) start_dist_.push_back({s, g.initial_distribution()[s]});
    }
    slice_.resize(n_ * A_);
  }

  std::uint64_t t() const { return t_; }
  const ValueTables& critic() const { return critic_; }
  const std::vector<LearnerCell>& cells() const { return cells_; }
  const LearnerCell& cell(int stage, std::size_t state) const { return cells_[index(stage, state)]; }
  const std::vector<std::uint64_t>& visits() const { return visits_; }
  std::uint64_t visit_count(int stage, std::size_t state, std::size_t a) const {
    return visits_[index(stage, state) * A_ + a];
  }
  const LearningRuleSpec& rule() const { return rule_; }
  CriticMode mode() const { return mode_; }

  void iterate() {
    // Actor.
    prev_actions_.resize(cells_.size());
    for (int h = H_ - 1; h >= 0; --h)
      for (std::size_t s = 0; s < S_; ++s) {
        const std::size_t c = index(h, s);
        prev_actions_[c] = cells_[c].action;
        refresh_game(h, s);
        cells_[c] = step(rule_, cells_[c], games_[c], eps_, rngs_[c]);
      }

    // Trajectory under a^{t+1} (sampled mode).
    if (mode_ == CriticMode::sampled) {
      path_.resize(static_cast<std::size_t>(H_) + 1);
      std::size_t s = start_ == StartSampling::uniform ? static_cast<std::size_t>(traj_rng_.below(S_))
                                                       : detail::sample_index(start_dist_, traj_rng_);
      for (int h = 0; h < H_; ++h) {
        const std::size_t a = cells_[index(h, s)].action;
        path_[static_cast<std::size_t>(h)] = {s, a};
        ++visits_[index(h, s) * A_ + a];
        s = detail::sample_index(trans_.next[index(h, s) * A_ + a], traj_rng_);
      }
    }

    // Critic: V^{t+1} from Q^t at a^t.
    const double tt = static_cast<double>(t_);
    for (std::size_t i = 0; i < n_; ++i)
      for (int h = 0; h < H_; ++h)
        for (std::size_t s = 0; s < S_; ++s) {
          double& v = critic_.v[critic_.v_index(i, h, s)];
          v = (tt * v + critic_.Q(i, h, s, prev_actions_[index(h, s)])) / (tt + 1.0);
        }

    if (mode_ == CriticMode::exact) {
      for (int h = 0; h < H_; ++h)
        for (std::size_t s = 0; s < S_; ++s)
          for (std::size_t a = 0; a < A_; ++a) {
            const auto& nx = trans_.next[index(h, s) * A_ + a];
            for (std::size_t i = 0; i < n_; ++i) {
              double q = game_->reward(i, h, s, a);
              if (h + 1 < H_)
                for (auto [sn, p] : nx) q += p * critic_.V(i, h + 1, sn);
              critic_.q[critic_.q_index(i, h, s, a)] = q;
            }
          }
    } else {
      for (int h = 0; h < H_; ++h) {
        const auto [s, a] = path_[static_cast<std::size_t>(h)];
        const double N = static_cast<double>(visits_[index(h, s) * A_ + a]);
        for (std::size_t i = 0; i < n_; ++i) {
          const double target =
              game_->reward(i, h, s, a) + (h + 1 < H_ ? critic_.V(i, h + 1, path_[static_cast<std::size_t>(h) + 1].first) : 0.0);
          double& q = critic_.q[critic_.q_index(i, h, s, a)];
          q = ((N - 1.0) * q + target) / N;
        }
      }
    }
    ++t_;
  }

 private:
  std::size_t index(int stage, std::size_t state) const { return static_cast<std::size_t>(stage) * S_ + state; }

  void refresh_game(int h, std::size_t s) {
    const std::size_t c = index(h, s);
    for (std::size_t i = 0; i < n_; ++i)
      for (std::size_t a = 0; a < A_; ++a) slice_[i * A_ + a] = critic_.Q(i, h, s, a);
    if (rule_.is_mood_rule()) {
      const auto r = q_range(*game_, h);
      const double w = r.hi - r.lo;
      for (double& x : slice_) {
        x = (x - r.lo) / w;
        if (x < 0.0 && x > -kNormalizedTol) x = 0.0;
        if (x > 1.0 && x < 1.0 + kNormalizedTol) x = 1.0;
      }
    }
    games_[c].assign_payoffs(slice_);
  }

  const StochasticGame* game_;
  LearningRuleSpec rule_;
  Epsilon eps_;
  CriticMode mode_;
  StartSampling start_;
  int H_;
  std::size_t S_, A_, n_;
  detail::SparseTransitions trans_;
  ValueTables critic_;
  Rng traj_rng_;
  std::vector<Rng> rngs_;
  std::vector<NormalFormGame> games_;
  std::vector<LearnerCell> cells_;
  std::vector<std::size_t> prev_actions_;
  std::vector<std::pair<std::size_t, std::size_t>> path_;
  std::vector<std::pair<std::size_t, double>> start_dist_;
  std::vector<std::uint64_t> visits_;
  std::vector<double> slice_;
  std::uint64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// Runs

struct RunOptions {
  std::uint64_t iterations = 0;
  std::uint64_t seed = 0;
  std::uint64_t stride = 1;
  /// Fraction of the final iterations used for empirical frequencies.
  double window = 0.5;
  bool record_critic = false;
  StartSampling start = StartSampling::uniform;
};

struct Snapshot {
  std::uint64_t t = 0;
  std::vector<LearnerCell> cells;  // stage-major (h * S + s)
};

struct CriticSnapshot {
  std::uint64_t t = 0;
  ValueTables tables;
};

struct RunRecord {
  CriticMode mode = CriticMode::exact;
  LearningRuleSpec rule;
  double epsilon = 0.0;
  RunOptions options;
  int horizon = 0;
  std::size_t n_states = 0, n_joint = 0, n_agents = 0;
  std::vector<Snapshot> snapshots;
  std::vector<CriticSnapshot> critic_snapshots;
  ValueTables critic;                       // tables after the last iteration
  std::vector<std::uint64_t> visits;        // N_h(s, a), sampled mode only
  std::uint64_t window_first = 0;           // first t counted in window_counts
  std::vector<std::uint64_t> window_counts; // ((h * S + s) * A + a)
  std::vector<std::string> warnings;

  /// Empirical distribution of a^t over the final window at (stage, state).
  std::vector<double> window_frequency(int stage, std::size_t state) const {
    std::vector<double> out(n_joint, 0.0);
    const std::size_t base = (static_cast<std::size_t>(stage) * n_states + state) * n_joint;
    std::uint64_t total = 0;
    for (std::size_t a = 0; a < n_joint; ++a) total += window_counts[base + a];
    if (total == 0) throw std::logic_error("no iterations in the frequency window");
    for (std::size_t a = 0; a < n_joint; ++a)
      out[a] = static_cast<double>(window_counts[base + a]) / static_cast<double>(total);
    return out;
  }
};

/// States visited with positive probability at each stage when the first
/// state is drawn from `start` (uniform over S or rho).
inline std::vector<std::vector<bool>> reachable_from(const StochasticGame& g, StartSampling start) {
  const std::size_t S = g.n_states();
  std::vector<std::vector<bool>> reach(static_cast<std::size_t>(g.horizon()), std::vector<bool>(S, false));
  for (std::size_t s = 0; s < S; ++s) reach[0][s] = start == StartSampling::uniform || g.initial_distribution()[s] > 0.0;
  for (int h = 0; h + 1 < g.horizon(); ++h)
    for (std::size_t s = 0; s < S; ++s) {
      if (!reach[static_cast<std::size_t>(h)][s]) continue;
      for (std::size_t a = 0; a < g.n_joint(); ++a)
        for (std::size_t n = 0; n < S; ++n)
          if (g.transition(h, s, a, n) > 0.0) reach[static_cast<std::size_t>(h) + 1][n] = true;
    }
  return reach;
}

namespace detail {

inline RunRecord run_framework(const StochasticGame& g, const LearningRuleSpec& rule, Epsilon eps, CriticMode mode,
                               const RunOptions& opt) {
  if (opt.stride == 0) throw std::invalid_argument("stride must be >= 1");
  if (!(opt.window > 0.0 && opt.window <= 1.0)) throw std::invalid_argument("window must lie in (0, 1]");
  FrameworkState st(g, rule, eps, mode, opt.seed, opt.start);

  RunRecord rec;
  rec.mode = mode;
  rec.rule = rule;
  rec.epsilon = eps.value();
  rec.options = opt;
  rec.horizon = g.horizon();
  rec.n_states = g.n_states();
  rec.n_joint = g.n_joint();
  rec.n_agents = g.n_agents();

  if (mode == CriticMode::sampled) {
    const auto reach = reachable_from(g, opt.start);
    for (int h = 0; h < g.horizon(); ++h)
      for (std::size_t s = 0; s < g.n_states(); ++s)
        if (!reach[static_cast<std::size_t>(h)][s])
          rec.warnings.push_back("state " + g.state_names()[s] + " is unreachable at stage " + std::to_string(h + 1) +
                                 "; its Q-values are never updated from samples");
  }

  const std::uint64_t T = opt.iterations;
  const std::uint64_t W =
      T == 0 ? 0 : std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::floor(opt.window * static_cast<double>(T))));
  rec.window_first = T - W + 1;
  const std::size_t cells = static_cast<std::size_t>(g.horizon()) * g.n_states();
  rec.window_counts.assign(cells * g.n_joint(), 0);

  auto snap = [&] {
    rec.snapshots.push_back({st.t(), st.cells()});
    if (opt.record_critic) rec.critic_snapshots.push_back({st.t(), st.critic()});
  };
  snap();
  for (std::uint64_t t = 1; t <= T; ++t) {
    st.iterate();
    if (t >= rec.window_first)
      for (std::size_t c = 0; c < cells; ++c) ++rec.window_counts[c * g.n_joint() + st.cells()[c].action];
    if (t % opt.stride == 0 || t == T) snap();
  }
  rec.critic = st.critic();
  rec.visits = st.visits();
  return rec;
}

}  // namespace detail

/// Actor-critic loop with the exact Bellman critic (needs P).
inline RunRecord run_algorithm1(const StochasticGame& g, const LearningRuleSpec& rule, Epsilon eps,
                                const RunOptions& opt) {
  return detail::run_framework(g, rule, eps, CriticMode::exact, opt);
}

/// Actor-critic loop whose critic only sees sampled trajectories.
inline RunRecord run_algorithm2(const StochasticGame& g, const LearningRuleSpec& rule, Epsilon eps,
                                const RunOptions& opt) {
  return detail::run_framework(g, rule, eps, CriticMode::sampled, opt);
}

// ---------------------------------------------------------------------------
// Exact stationary policy by backward recursion

struct ExactPiEps {
  double epsilon = 0.0;
  std::vector<KernelMatrix> kernels;              // per (h * S + s)
  std::vector<StationaryDistribution> joint;      // pi^eps_h(a, xi | s)
  std::vector<std::vector<double>> marginals;     // pi^eps_h(a | s)
  ValueTables values;                             // V^{pi^eps}, Q^{pi^eps}
  Policy policy;                                  // stochastic policy of the marginals
  std::vector<std::string> notes;

  const std::vector<double>& marginal(int stage, std::size_t state, std::size_t n_states) const {
    return marginals[static_cast<std::size_t>(stage) * n_states + state];
  }
};

/// From the last stage down: the stationary distribution of K^eps against
/// the Q-slice of the already-fixed continuation, then V = pi . Q and the
/// Bellman step to the previous stage. An unreachable cell whose chain has
/// no unique closed class (a constant game under the Pradelski-Young rule,
/// for instance) gets a uniform marginal and a note; a reachable one throws.
inline ExactPiEps exact_pi_eps(const StochasticGame& g, const LearningRuleSpec& rule, Epsilon eps,
                               StationaryMethod method = StationaryMethod::gth) {
  require_valid(g);
  rule.validate(g.n_agents());
  const std::size_t S = g.n_states(), A = g.n_joint();
  const int H = g.horizon();
  ExactPiEps out;
  out.epsilon = eps.value();
  out.kernels.resize(static_cast<std::size_t>(H) * S);
  out.joint.resize(static_cast<std::size_t>(H) * S);
  out.marginals.resize(static_cast<std::size_t>(H) * S);
  out.values = ValueTables(g.n_agents(), H, S, A);
  const auto reach = reachable_states(g);
  std::vector<double> table(static_cast<std::size_t>(H) * S * A, 0.0);
  for (int h = H - 1; h >= 0; --h) {
    bellman_q_stage(g, out.values, h);
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t c = static_cast<std::size_t>(h) * S + s;
      const auto nfg = learner_game(g, rule, out.values, h, s);
      try {
        out.kernels[c] = kernel_matrix(rule, nfg, eps);
        out.joint[c] = stationary_linear(out.kernels[c], method);
        out.marginals[c] = out.joint[c].marginal();
      } catch (const std::domain_error& e) {
        const std::string where = "stage " + std::to_string(h + 1) + ", state " + g.state_names()[s];
        if (reach[static_cast<std::size_t>(h)][s]) throw std::domain_error(where + ": " + e.what());
        out.marginals[c].assign(A, 1.0 / static_cast<double>(A));
        out.notes.push_back(where + " (unreachable) uses a uniform marginal: " + e.what());
      }
      for (std::size_t a = 0; a < A; ++a) table[c * A + a] = out.marginals[c][a];
      for (std::size_t i = 0; i < g.n_agents(); ++i) {
        double v = 0.0;
        for (std::size_t a = 0; a < A; ++a) v += out.marginals[c][a] * out.values.Q(i, h, s, a);
        out.values.v[out.values.v_index(i, h, s)] = v;
      }
    }
  }
  // Marginals sum to 1 only up to rounding; renormalize for the policy type.
  for (std::size_t c = 0; c < static_cast<std::size_t>(H) * S; ++c) {
    double z = 0.0;
    for (std::size_t a = 0; a < A; ++a) z += table[c * A + a];
    for (std::size_t a = 0; a < A; ++a) table[c * A + a] /= z;
  }
  out.policy = Policy(Policy::Kind::stochastic, H, S, A, std::move(table));
  return out;
}

// ---------------------------------------------------------------------------
// Epsilon sweep

struct SweepOptions {
  /// Entries of the smallest-epsilon marginal below this are treated as 0.
  double support_threshold = 1e-3;
  /// Tolerance for ties in the stochastic potential.
  double gamma_tie = 1e-6;
};

struct CellSweep {
  int stage = 0;
  std::size_t state = 0;
  bool reachable = false;
  std::vector<std::vector<double>> marginals;  // one per epsilon
  std::vector<std::size_t> support;            // at the smallest epsilon
  std::vector<double> action_gamma;            // min over xi of gamma(a, xi)
  std::vector<std::size_t> gamma_argmin;
  std::vector<double> argmin_mass;             // pi^eps mass on gamma_argmin, per epsilon
  // Stochastic-potential fields stay empty for unreachable cells.
  bool contained = false;                      // support within gamma_argmin
  bool mass_nondecreasing = false;
};

struct SweepReport {
  std::vector<double> epsilons;
  Policy limit_estimate;
  ValueTables limit_values;  // Q^{limit estimate}
  std::vector<CellSweep> cells;
  bool consistent = false;   // every reachable cell contained
};

inline std::vector<std::size_t> support_of(const std::vector<double>& p, double threshold) {
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a < p.size(); ++a)
    if (p[a] >= threshold) out.push_back(a);
  return out;
}

inline bool is_subset(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

/// Exact pi^eps along a decreasing epsilon list, a limit estimate from the
/// smallest epsilon, and the stochastic-potential minimizers of each cell's
/// game under the Q-values of that estimate.
inline SweepReport sweep_limit_policy(const StochasticGame& g, const LearningRuleSpec& rule,
                                      const std::vector<double>& epsilons, const SweepOptions& opt = {}) {
  if (epsilons.empty()) throw std::invalid_argument("epsilon list is empty");
  for (std::size_t k = 1; k < epsilons.size(); ++k)
    if (!(epsilons[k] < epsilons[k - 1])) throw std::invalid_argument("epsilon list must be strictly decreasing");
  const std::size_t S = g.n_states(), A = g.n_joint();
  const int H = g.horizon();
  SweepReport rep;
  rep.epsilons = epsilons;
  std::vector<ExactPiEps> runs;
  for (double e : epsilons) runs.push_back(exact_pi_eps(g, rule, Epsilon(e)));

  std::vector<double> table(static_cast<std::size_t>(H) * S * A, 0.0);
  for (std::size_t c = 0; c < static_cast<std::size_t>(H) * S; ++c) {
    const auto& m = runs.back().marginals[c];
    double z = 0.0;
    for (std::size_t a = 0; a < A; ++a) {
      table[c * A + a] = m[a] >= opt.support_threshold ? m[a] : 0.0;
      z += table[c * A + a];
    }
    for (std::size_t a = 0; a < A; ++a) table[c * A + a] /= z;
  }
  rep.limit_estimate = Policy(Policy::Kind::stochastic, H, S, A, std::move(table));
  rep.limit_values = evaluate_policy(g, rep.limit_estimate);

  const auto reach = reachable_states(g);
  rep.consistent = true;
  for (int h = 0; h < H; ++h)
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t c = static_cast<std::size_t>(h) * S + s;
      CellSweep cs;
      cs.stage = h;
      cs.state = s;
      cs.reachable = reach[static_cast<std::size_t>(h)][s];
      for (const auto& r : runs) cs.marginals.push_back(r.marginals[c]);
      cs.support = support_of(runs.back().marginals[c], opt.support_threshold);
      if (!cs.reachable) {
        rep.cells.push_back(std::move(cs));
        continue;
      }
      const auto sse = sse_set(rule, learner_game(g, rule, rep.limit_values, h, s), opt.gamma_tie);
      cs.action_gamma = action_potentials(sse.graph, sse.table);
      cs.gamma_argmin = sse.actions;
      for (const auto& m : cs.marginals) {
        double mass = 0.0;
        for (std::size_t a : cs.gamma_argmin) mass += m[a];
        cs.argmin_mass.push_back(mass);
      }
      cs.mass_nondecreasing = true;
      for (std::size_t k = 1; k < cs.argmin_mass.size(); ++k)
        if (cs.argmin_mass[k] < cs.argmin_mass[k - 1] - 1e-12) cs.mass_nondecreasing = false;
      cs.contained = is_subset(cs.support, cs.gamma_argmin);
      if (cs.reachable && !cs.contained) rep.consistent = false;
      rep.cells.push_back(std::move(cs));
    }
  return rep;
}

// ---------------------------------------------------------------------------
// Selection statements on stochastic games

enum class SgSelection { potential_max, pareto_optimal, pareto_mpe };

inline std::string_view sg_selection_name(SgSelection w) {
  switch (w) {
    case SgSelection::potential_max: return "potential_max";
    case SgSelection::pareto_optimal: return "pareto_optimal";
    case SgSelection::pareto_mpe: return "pareto_mpe";
  }
  return "?";
}

inline SgSelection parse_sg_selection(std::string_view s) {
  if (s == "potential_max") return SgSelection::potential_max;
  if (s == "pareto_optimal" || s == "pareto") return SgSelection::pareto_optimal;
  if (s == "pareto_mpe") return SgSelection::pareto_mpe;
  throw std::invalid_argument("unknown selection '" + std::string(s) + "'");
}

struct SgCellVerdict {
  int stage = 0;
  std::size_t state = 0;
  std::vector<std::size_t> support;
  std::vector<std::size_t> target;
  bool contained = false;
};

struct SgCorollaryReport {
  SgSelection which = SgSelection::potential_max;
  std::vector<std::string> failed_preconditions;
  std::vector<SgCellVerdict> cells;  // reachable cells only
  Policy target_policy;
  bool equal = false;
  std::string message;
};

struct SgCorollaryOptions {
  SweepOptions sweep;
  double target_tol = 1e-9;
  /// Throw std::domain_error when a precondition fails instead of reporting it.
  bool strict = false;
  std::uint64_t policy_seed = 0;
};

namespace detail {

inline std::vector<Policy> mpg_probe_policies(const StochasticGame& g, std::uint64_t seed) {
  const std::size_t cells = static_cast<std::size_t>(g.horizon()) * g.n_states();
  const double count = std::pow(static_cast<double>(g.n_joint()), static_cast<double>(cells));
  std::vector<Policy> out;
  if (count <= 256.0) {
    std::vector<std::size_t> choice(cells, 0);
    while (true) {
      out.push_back(Policy::deterministic(g.horizon(), g.n_states(), g.n_joint(), choice));
      std::size_t k = 0;
      while (k < cells && ++choice[k] == g.n_joint()) choice[k++] = 0;
      if (k == cells) break;
    }
    return out;
  }
  Rng rng(seed);
  for (int k = 0; k < 10; ++k) {
    std::vector<std::size_t> choice(cells);
    for (auto& c : choice) c = static_cast<std::size_t>(rng.below(g.n_joint()));
    out.push_back(Policy::deterministic(g.horizon(), g.n_states(), g.n_joint(), choice));
  }
  return out;
}

inline std::vector<std::size_t> argmax_over(const std::vector<double>& score, std::size_t base, std::size_t A,
                                            const std::vector<std::size_t>& candidates, double tol) {
  double best = -kInf;
  for (std::size_t a : candidates) best = std::max(best, score[base + a]);
  std::vector<std::size_t> out;
  for (std::size_t a : candidates)
    if (score[base + a] >= best - tol) out.push_back(a);
  (void)A;
  return out;
}

}  // namespace detail

/// Compares the limit support of the sweep with the policy a selection
/// statement predicts: a potential-maximizing policy, a Pareto optimal
/// policy, or the Pareto optimal MPE. The comparison is set-valued per
/// reachable (stage, state): the limit support must lie within the target's
/// optimal action set there.
inline SgCorollaryReport validate_sg_corollary(const StochasticGame& g, const LearningRuleSpec& rule, SgSelection which,
                                               const std::vector<double>& epsilons,
                                               const SgCorollaryOptions& opt = {}) {
  SgCorollaryReport rep;
  rep.which = which;
  const std::size_t S = g.n_states(), A = g.n_joint();
  const int H = g.horizon();
  const auto sweep = sweep_limit_policy(g, rule, epsilons, opt.sweep);
  const auto reach = reachable_states(g);

  std::vector<std::size_t> all(A);
  for (std::size_t a = 0; a < A; ++a) all[a] = a;
  std::vector<std::vector<std::size_t>> target(static_cast<std::size_t>(H) * S);

  switch (which) {
    case SgSelection::potential_max: {
      bool evidence = g.is_identical_interest();
      std::optional<ParetoResult> pm;
      try {
        if (!evidence) evidence = check_mpg_on_policies(g, detail::mpg_probe_policies(g, opt.policy_seed)).passes;
        pm = potential_maximizing_policy(g);
      } catch (const std::domain_error& e) {
        rep.failed_preconditions.push_back(std::string("stage potentials: ") + e.what());
      }
      if (!evidence && pm) rep.failed_preconditions.push_back("Markov potential game check failed on probe policies");
      if (pm) {
        rep.target_policy = pm->policy;
        for (std::size_t c = 0; c < target.size(); ++c)
          target[c] = detail::argmax_over(pm->social_q, c * A, A, all, opt.target_tol);
      }
      break;
    }
    case SgSelection::pareto_optimal:
    case SgSelection::pareto_mpe: {
      if (g.n_agents() >= 2)
        for (int h = 0; h < H; ++h)
          for (std::size_t s = 0; s < S; ++s) {
            if (!reach[static_cast<std::size_t>(h)][s]) continue;
            if (!check_interdependence(q_stage_game(g, sweep.limit_values, h, s)))
              rep.failed_preconditions.push_back("Q-stage game at stage " + std::to_string(h + 1) + ", state " +
                                                 g.state_names()[s] + " is not interdependent");
          }
      if (which == SgSelection::pareto_optimal) {
        const auto po = pareto_optimal_policy(g);
        rep.target_policy = po.policy;
        for (std::size_t c = 0; c < target.size(); ++c)
          target[c] = detail::argmax_over(po.social_q, c * A, A, all, opt.target_tol);
      } else {
        std::optional<Policy> mpe;
        try {
          mpe = pareto_optimal_mpe(g);
        } catch (const std::domain_error& e) {
          rep.failed_preconditions.push_back(e.what());
        }
        if (mpe) {
          rep.target_policy = *mpe;
          const auto vt = evaluate_policy(g, *mpe);
          for (int h = 0; h < H; ++h)
            for (std::size_t s = 0; s < S; ++s) {
              const auto nfg = q_stage_game(g, vt, h, s);
              auto ne = pure_nash_equilibria(nfg, true);
              if (ne.empty()) ne = {mpe->action(h, s)};
              std::vector<double> social(A);
              for (std::size_t a = 0; a < A; ++a) social[a] = nfg.social(a);
              target[static_cast<std::size_t>(h) * S + s] = detail::argmax_over(social, 0, A, ne, opt.target_tol);
            }
        }
      }
      break;
    }
  }

  if (opt.strict && !rep.failed_preconditions.empty()) {
    std::string msg = std::string(sg_selection_name(which)) + " preconditions failed:";
    for (const auto& f : rep.failed_preconditions) msg += "\n  " + f;
    throw std::domain_error(msg);
  }

  rep.equal = true;
  bool have_target = false;
  for (const auto& t : target) have_target = have_target || !t.empty();
  for (const auto& cs : sweep.cells) {
    if (!cs.reachable) continue;
    SgCellVerdict v;
    v.stage = cs.stage;
    v.state = cs.state;
    v.support = cs.support;
    v.target = target[static_cast<std::size_t>(cs.stage) * S + cs.state];
    v.contained = have_target && is_subset(v.support, v.target);
    if (!v.contained) rep.equal = false;
    rep.cells.push_back(std::move(v));
  }
  rep.message = std::string(rep.equal ? "equal" : "mismatch");
  for (const auto& v : rep.cells)
    rep.message += "; stage " + std::to_string(v.stage + 1) + " " + g.state_names()[v.state] +
                   ": support=" + format_action_set(g.codec(), v.support) +
                   " target=" + format_action_set(g.codec(), v.target);
  return rep;
}

}  // namespace eqsel
