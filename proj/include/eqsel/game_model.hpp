#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "eqsel/joint_action.hpp"

namespace eqsel {

// Stage indices are 0-based throughout the C++ API (stage 0 is the first
// decision epoch). External documents use 1-based stages.

/// A static game {r_i : A -> R}. Payoffs are stored agent-major:
/// payoff(i, a) lives at i * |A| + a.
class NormalFormGame {
 public:
  NormalFormGame() = default;

  NormalFormGame(std::vector<int> action_counts, std::vector<double> payoffs)
      : codec_(std::move(action_counts)), payoffs_(std::move(payoffs)) {
    if (payoffs_.size() != codec_.n_agents() * codec_.size())
      throw std::invalid_argument("payoff tensor has " + std::to_string(payoffs_.size()) +
                                  " entries, expected " +
                                  std::to_string(codec_.n_agents() * codec_.size()));
    for (double v : payoffs_)
      if (!std::isfinite(v)) throw std::invalid_argument("payoffs must be finite");
  }

  /// Common-payoff game where every agent receives `common[a]`.
  static NormalFormGame identical_interest(std::vector<int> action_counts,
                                           const std::vector<double>& common) {
    const std::size_t n = action_counts.size();
    std::vector<double> p;
    p.reserve(n * common.size());
    for (std::size_t i = 0; i < n; ++i) p.insert(p.end(), common.begin(), common.end());
    return NormalFormGame(std::move(action_counts), std::move(p));
  }

  std::size_t n_agents() const { return codec_.n_agents(); }
  std::size_t n_joint() const { return codec_.size(); }
  const JointActionCodec& codec() const { return codec_; }
  const std::vector<int>& action_counts() const { return codec_.counts(); }
  const std::vector<double>& payoffs() const { return payoffs_; }

  double payoff(std::size_t agent, std::size_t joint) const {
    return payoffs_[agent * codec_.size() + joint];
  }

  double social(std::size_t joint) const {
    double s = 0.0;
    for (std::size_t i = 0; i < n_agents(); ++i) s += payoff(i, joint);
    return s;
  }

  double min_payoff() const;
  double max_payoff() const;

  /// Overwrites all payoffs in place (same layout and size).
  void assign_payoffs(std::span<const double> p) {
    if (p.size() != payoffs_.size()) throw std::invalid_argument("assign_payoffs: size mismatch");
    std::copy(p.begin(), p.end(), payoffs_.begin());
  }

  bool operator==(const NormalFormGame&) const = default;

 private:
  JointActionCodec codec_;
  std::vector<double> payoffs_;
};

inline double NormalFormGame::min_payoff() const {
  double m = payoffs_.empty() ? 0.0 : payoffs_.front();
  for (double v : payoffs_) m = std::min(m, v);
  return m;
}

inline double NormalFormGame::max_payoff() const {
  double m = payoffs_.empty() ? 0.0 : payoffs_.front();
  for (double v : payoffs_) m = std::max(m, v);
  return m;
}

/// Finite-horizon stochastic game M = {S, {A_i}, P, r, rho, H}.
///
/// Reward layout: ((agent * H + stage) * |S| + state) * |A| + joint.
/// Transition layout: ((stage * |S| + state) * |A| + joint) * |S| + next.
/// Shapes are checked on construction; value invariants (row sums, reward
/// range, rho) are checked by validate_game so that malformed games can still
/// be inspected and reported on.
class StochasticGame {
 public:
  StochasticGame() = default;

  StochasticGame(std::size_t n_agents, int horizon, std::vector<std::string> state_names,
                 std::vector<int> action_counts, std::vector<double> rewards,
                 std::vector<double> transitions, std::vector<double> initial_distribution,
                 bool allow_unnormalized = false)
      : horizon_(horizon),
        state_names_(std::move(state_names)),
        codec_(std::move(action_counts)),
        rewards_(std::move(rewards)),
        transitions_(std::move(transitions)),
        rho_(std::move(initial_distribution)),
        allow_unnormalized_(allow_unnormalized) {
    if (n_agents != codec_.n_agents())
      throw std::invalid_argument("n_agents does not match action_counts length");
    if (horizon_ <= 0) throw std::invalid_argument("horizon must be positive");
    if (state_names_.empty()) throw std::invalid_argument("state space must be nonempty");
    const std::size_t S = n_states(), A = n_joint(), H = static_cast<std::size_t>(horizon_);
    if (rewards_.size() != n_agents * H * S * A)
      throw std::invalid_argument("reward tensor has wrong size");
    if (transitions_.size() != H * S * A * S)
      throw std::invalid_argument("transition tensor has wrong size");
    if (rho_.size() != S) throw std::invalid_argument("initial distribution has wrong size");
  }

  std::size_t n_agents() const { return codec_.n_agents(); }
  int horizon() const { return horizon_; }
  std::size_t n_states() const { return state_names_.size(); }
  std::size_t n_joint() const { return codec_.size(); }
  const JointActionCodec& codec() const { return codec_; }
  const std::vector<int>& action_counts() const { return codec_.counts(); }
  const std::vector<std::string>& state_names() const { return state_names_; }
  const std::vector<double>& rewards() const { return rewards_; }
  const std::vector<double>& transitions() const { return transitions_; }
  const std::vector<double>& initial_distribution() const { return rho_; }
  bool allow_unnormalized() const { return allow_unnormalized_; }

  std::optional<std::size_t> state_index(std::string_view name) const {
    for (std::size_t s = 0; s < state_names_.size(); ++s)
      if (state_names_[s] == name) return s;
    return std::nullopt;
  }

  std::size_t reward_index(std::size_t agent, int stage, std::size_t state, std::size_t joint) const {
    return ((agent * static_cast<std::size_t>(horizon_) + static_cast<std::size_t>(stage)) * n_states() +
            state) * n_joint() + joint;
  }
  std::size_t transition_index(int stage, std::size_t state, std::size_t joint, std::size_t next) const {
    return ((static_cast<std::size_t>(stage) * n_states() + state) * n_joint() + joint) * n_states() + next;
  }

  double reward(std::size_t agent, int stage, std::size_t state, std::size_t joint) const {
    return rewards_[reward_index(agent, stage, state, joint)];
  }
  double transition(int stage, std::size_t state, std::size_t joint, std::size_t next) const {
    return transitions_[transition_index(stage, state, joint, next)];
  }

  double min_reward() const {
    double m = rewards_.front();
    for (double v : rewards_) m = std::min(m, v);
    return m;
  }
  double max_reward() const {
    double m = rewards_.front();
    for (double v : rewards_) m = std::max(m, v);
    return m;
  }

  /// True when every agent receives the same reward at every (stage, state, joint).
  bool is_identical_interest(double tol = 0.0) const {
    for (std::size_t i = 1; i < n_agents(); ++i)
      for (int h = 0; h < horizon_; ++h)
        for (std::size_t s = 0; s < n_states(); ++s)
          for (std::size_t a = 0; a < n_joint(); ++a)
            if (std::abs(reward(i, h, s, a) - reward(0, h, s, a)) > tol) return false;
    return true;
  }

  bool operator==(const StochasticGame&) const = default;

 private:
  int horizon_ = 0;
  std::vector<std::string> state_names_;
  JointActionCodec codec_;
  std::vector<double> rewards_;
  std::vector<double> transitions_;
  std::vector<double> rho_;
  bool allow_unnormalized_ = false;
};

/// Markov policy pi_h(a | s) over joint actions.
class Policy {
 public:
  enum class Kind { deterministic, stochastic };

  Policy() = default;

  Policy(Kind kind, int horizon, std::size_t n_states, std::size_t n_joint, std::vector<double> probs)
      : kind_(kind), horizon_(horizon), n_states_(n_states), n_joint_(n_joint), probs_(std::move(probs)) {
    if (probs_.size() != static_cast<std::size_t>(horizon_) * n_states_ * n_joint_)
      throw std::invalid_argument("policy table has wrong size");
  }

  /// Deterministic policy from one joint-action index per (stage, state),
  /// laid out stage-major.
  static Policy deterministic(int horizon, std::size_t n_states, std::size_t n_joint,
                              const std::vector<std::size_t>& choice) {
    if (choice.size() != static_cast<std::size_t>(horizon) * n_states)
      throw std::invalid_argument("deterministic policy needs one action per (stage, state)");
    std::vector<double> p(static_cast<std::size_t>(horizon) * n_states * n_joint, 0.0);
    for (std::size_t k = 0; k < choice.size(); ++k) {
      if (choice[k] >= n_joint) throw std::out_of_range("policy action out of range");
      p[k * n_joint + choice[k]] = 1.0;
    }
    return Policy(Kind::deterministic, horizon, n_states, n_joint, std::move(p));
  }

  static Policy constant(const StochasticGame& g, std::size_t joint) {
    return deterministic(g.horizon(), g.n_states(), g.n_joint(),
                         std::vector<std::size_t>(static_cast<std::size_t>(g.horizon()) * g.n_states(), joint));
  }

  Kind kind() const { return kind_; }
  bool is_deterministic() const { return kind_ == Kind::deterministic; }
  int horizon() const { return horizon_; }
  std::size_t n_states() const { return n_states_; }
  std::size_t n_joint() const { return n_joint_; }
  const std::vector<double>& table() const { return probs_; }

  double prob(int stage, std::size_t state, std::size_t joint) const {
    return probs_[(static_cast<std::size_t>(stage) * n_states_ + state) * n_joint_ + joint];
  }

  std::span<const double> distribution(int stage, std::size_t state) const {
    return {probs_.data() + (static_cast<std::size_t>(stage) * n_states_ + state) * n_joint_, n_joint_};
  }

  /// The point-mass action at (stage, state); requires a deterministic policy.
  std::size_t action(int stage, std::size_t state) const {
    auto d = distribution(stage, state);
    for (std::size_t a = 0; a < d.size(); ++a)
      if (d[a] == 1.0) return a;
    throw std::logic_error("policy is not a point mass at this (stage, state)");
  }

  bool operator==(const Policy&) const = default;

 private:
  Kind kind_ = Kind::stochastic;
  int horizon_ = 0;
  std::size_t n_states_ = 0;
  std::size_t n_joint_ = 0;
  std::vector<double> probs_;
};

struct Violation {
  std::string path;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string to_string() const {
    std::ostringstream os;
    for (const auto& v : violations) os << v.path << ": " << v.message << '\n';
    return os.str();
  }
};

inline constexpr double kDistributionTol = 1e-12;

/// Checks the value invariants of a stochastic game. Never throws on bad
/// values; every violated invariant is listed with its tensor coordinates.
inline ValidationReport validate_game(const StochasticGame& g) {
  ValidationReport rep;
  auto add = [&](std::string path, std::string msg) { rep.violations.push_back({std::move(path), std::move(msg)}); };
  const auto& codec = g.codec();
  auto coord = [&](int h, std::size_t s, std::size_t a) {
    return "[stage=" + std::to_string(h + 1) + ",state=" + g.state_names()[s] +
           ",action=" + format_action_tuple(codec.decode(a)) + "]";
  };

  for (std::size_t i = 0; i < g.n_agents(); ++i)
    for (int h = 0; h < g.horizon(); ++h)
      for (std::size_t s = 0; s < g.n_states(); ++s)
        for (std::size_t a = 0; a < g.n_joint(); ++a) {
          const double r = g.reward(i, h, s, a);
          const std::string path = "rewards[agent=" + std::to_string(i) + "]" + coord(h, s, a);
          if (!std::isfinite(r))
            add(path, "reward is not finite");
          else if (!g.allow_unnormalized() && (r < 0.0 || r > 1.0))
            add(path, "reward " + std::to_string(r) + " outside [0,1] (set allow_unnormalized to permit)");
        }

  for (int h = 0; h < g.horizon(); ++h)
    for (std::size_t s = 0; s < g.n_states(); ++s)
      for (std::size_t a = 0; a < g.n_joint(); ++a) {
        double sum = 0.0;
        bool negative = false;
        for (std::size_t n = 0; n < g.n_states(); ++n) {
          const double p = g.transition(h, s, a, n);
          if (!(p >= 0.0)) negative = true;
          sum += p;
        }
        const std::string path = "transitions" + coord(h, s, a);
        if (negative) add(path, "transition probabilities must be nonnegative and finite");
        if (!(std::abs(sum - 1.0) <= kDistributionTol))
          add(path, "transition row sums to " + std::to_string(sum) + ", expected 1");
      }

  double rho_sum = 0.0;
  bool rho_negative = false;
  for (double p : g.initial_distribution()) {
    if (!(p >= 0.0)) rho_negative = true;
    rho_sum += p;
  }
  if (rho_negative) add("rho", "initial distribution has negative or non-finite entries");
  if (!(std::abs(rho_sum - 1.0) <= kDistributionTol))
    add("rho", "initial distribution sums to " + std::to_string(rho_sum) + ", expected 1");
  return rep;
}

inline void require_valid(const StochasticGame& g) {
  auto rep = validate_game(g);
  if (!rep.ok()) throw std::invalid_argument("invalid stochastic game:\n" + rep.to_string());
}

/// Checks that a policy is shaped for the game and is a family of
/// distributions (point masses when deterministic).
inline ValidationReport validate_policy(const StochasticGame& g, const Policy& pi) {
  ValidationReport rep;
  if (pi.horizon() != g.horizon() || pi.n_states() != g.n_states() || pi.n_joint() != g.n_joint()) {
    rep.violations.push_back({"policy", "shape does not match game"});
    return rep;
  }
  for (int h = 0; h < g.horizon(); ++h)
    for (std::size_t s = 0; s < g.n_states(); ++s) {
      auto d = pi.distribution(h, s);
      double sum = 0.0;
      int ones = 0;
      bool bad = false;
      for (double p : d) {
        if (!(p >= 0.0)) bad = true;
        if (p == 1.0) ++ones;
        sum += p;
      }
      const std::string path = "policy[stage=" + std::to_string(h + 1) + ",state=" + g.state_names()[s] + "]";
      if (bad || std::abs(sum - 1.0) > kDistributionTol) rep.violations.push_back({path, "not a distribution"});
      if (pi.is_deterministic() && ones != 1) rep.violations.push_back({path, "deterministic policy is not a point mass"});
    }
  return rep;
}

/// Extracts the normal-form game {r_{i,h}(s, .)}.
inline NormalFormGame stage_game(const StochasticGame& g, int stage, std::size_t state) {
  if (stage < 0 || stage >= g.horizon()) throw std::out_of_range("stage out of range");
  if (state >= g.n_states()) throw std::out_of_range("state out of range");
  std::vector<double> p(g.n_agents() * g.n_joint());
  for (std::size_t i = 0; i < g.n_agents(); ++i)
    for (std::size_t a = 0; a < g.n_joint(); ++a) p[i * g.n_joint() + a] = g.reward(i, stage, state, a);
  return NormalFormGame(g.action_counts(), std::move(p));
}

/// States reachable at each stage from the support of rho under some action
/// sequence. Result is indexed [stage][state].
inline std::vector<std::vector<bool>> reachable_states(const StochasticGame& g) {
  const std::size_t S = g.n_states();
  std::vector<std::vector<bool>> reach(static_cast<std::size_t>(g.horizon()), std::vector<bool>(S, false));
  for (std::size_t s = 0; s < S; ++s) reach[0][s] = g.initial_distribution()[s] > 0.0;
  for (int h = 0; h + 1 < g.horizon(); ++h)
    for (std::size_t s = 0; s < S; ++s) {
      if (!reach[static_cast<std::size_t>(h)][s]) continue;
      for (std::size_t a = 0; a < g.n_joint(); ++a)
        for (std::size_t n = 0; n < S; ++n)
          if (g.transition(h, s, a, n) > 0.0) reach[static_cast<std::size_t>(h) + 1][n] = true;
    }
  return reach;
}

// ---------------------------------------------------------------------------
// Built-in games

namespace detail {

struct GameBuilder {
  std::size_t n_agents;
  int horizon;
  std::vector<std::string> states;
  JointActionCodec codec;
  std::vector<double> rewards, transitions, rho;

  GameBuilder(std::size_t n, int H, std::vector<std::string> names, std::vector<int> counts)
      : n_agents(n), horizon(H), states(std::move(names)), codec(std::move(counts)) {
    const std::size_t S = states.size(), A = codec.size();
    rewards.assign(n * static_cast<std::size_t>(H) * S * A, 0.0);
    transitions.assign(static_cast<std::size_t>(H) * S * A * S, 0.0);
    rho.assign(S, 0.0);
  }
  std::size_t st(std::string_view name) const {
    for (std::size_t s = 0; s < states.size(); ++s)
      if (states[s] == name) return s;
    throw std::logic_error("unknown state");
  }
  void reward(std::size_t i, int h, std::string_view s, ActionTuple a, double v) {
    rewards[((i * static_cast<std::size_t>(horizon) + static_cast<std::size_t>(h)) * states.size() + st(s)) *
                codec.size() + codec.encode(a)] = v;
  }
  void move(int h, std::size_t s, std::size_t a, std::size_t next) {
    const std::size_t S = states.size();
    const std::size_t base = ((static_cast<std::size_t>(h) * S + s) * codec.size() + a) * S;
    for (std::size_t n = 0; n < S; ++n) transitions[base + n] = 0.0;
    transitions[base + next] = 1.0;
  }
  void self_loops() {
    for (int h = 0; h < horizon; ++h)
      for (std::size_t s = 0; s < states.size(); ++s)
        for (std::size_t a = 0; a < codec.size(); ++a) move(h, s, a, s);
  }
  StochasticGame build(bool allow_unnormalized) {
    return StochasticGame(n_agents, horizon, states, codec.counts(), rewards, transitions, rho,
                          allow_unnormalized);
  }
};

}  // namespace detail

/// Two-stage cooperative treasure-digging game. Single state space
/// {init, A, O, B}: the first stage starts in init, the second stage is in
/// A, O or B depending on whether the players agreed on location 0, failed to
/// agree, or agreed on location 1. Unreachable (stage, state) pairs carry
/// zero reward and self-loop transitions.
inline StochasticGame treasure_dig_game() {
  detail::GameBuilder b(2, 2, {"init", "A", "O", "B"}, {2, 2});
  b.self_loops();
  const std::size_t init = b.st("init");
  for (std::size_t a = 0; a < b.codec.size(); ++a) {
    const auto t = b.codec.decode(a);
    const char* next = (t[0] == 0 && t[1] == 0) ? "A" : (t[0] == 1 && t[1] == 1) ? "B" : "O";
    b.move(0, init, a, b.st(next));
  }
  for (std::size_t i = 0; i < 2; ++i) {
    b.reward(i, 0, "init", {0, 0}, 1.0);
    b.reward(i, 1, "A", {0, 0}, 0.5);
    b.reward(i, 1, "O", {0, 0}, 1.0);
    b.reward(i, 1, "B", {0, 0}, 1.0);
    b.reward(i, 1, "B", {1, 1}, 2.0);
  }
  b.rho[init] = 1.0;
  return b.build(true);
}

/// Two-stage stag hunt. Action 0 is Stag, action 1 is Hare. Joint Stag in
/// the first stage leads to A where joint Stag pays `stag_payoff` to each
/// player; anything else leads to B, a one-shot hare game.
inline StochasticGame stag_hunt_game(double stag_payoff) {
  detail::GameBuilder b(2, 2, {"init", "A", "B"}, {2, 2});
  b.self_loops();
  const std::size_t init = b.st("init");
  for (std::size_t a = 0; a < b.codec.size(); ++a)
    b.move(0, init, a, b.st(a == 0 ? "A" : "B"));
  auto hare_table = [&](int h, std::string_view s) {
    b.reward(0, h, s, {0, 1}, 0.0);
    b.reward(1, h, s, {0, 1}, 2.0);
    b.reward(0, h, s, {1, 0}, 2.0);
    b.reward(1, h, s, {1, 0}, 0.0);
    b.reward(0, h, s, {1, 1}, 1.0);
    b.reward(1, h, s, {1, 1}, 1.0);
  };
  hare_table(0, "init");
  hare_table(1, "B");
  b.reward(0, 1, "A", {0, 0}, stag_payoff);
  b.reward(1, 1, "A", {0, 0}, stag_payoff);
  b.rho[init] = 1.0;
  return b.build(true);
}

inline const std::vector<std::string>& builtin_game_names() {
  static const std::vector<std::string> names{"treasure_dig", "stag_hunt", "stag_hunt_table"};
  return names;
}

/// `stag_hunt` uses the 3.75 stag payoff described in prose (each player's
/// half of 7.5); `stag_hunt_table` uses the 0.5 printed in the reward table.
inline StochasticGame builtin_game(std::string_view name) {
  if (name == "treasure_dig") return treasure_dig_game();
  if (name == "stag_hunt") return stag_hunt_game(3.75);
  if (name == "stag_hunt_table") return stag_hunt_game(0.5);
  throw std::invalid_argument("unknown builtin game '" + std::string(name) + "'");
}

}  // namespace eqsel
