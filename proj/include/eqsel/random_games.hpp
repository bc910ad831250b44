#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "eqsel/game_model.hpp"
#include "eqsel/policy_eval.hpp"
#include "eqsel/random.hpp"

namespace eqsel {

inline constexpr int kGeneratorAttempts = 100000;

/// Second-best gap of a score vector; 0 when the maximum is shared.
inline double top_gap(const std::vector<double>& v) {
  if (v.size() < 2) return std::numeric_limits<double>::infinity();
  std::vector<double> s = v;
  std::sort(s.begin(), s.end(), std::greater<>());
  return s[0] - s[1];
}

/// u_i(a) = (phi(a) + d_i(a_{-i})) / 2 with phi and the dummy terms uniform
/// on [0,1], so payoffs stay normalized and phi is an exact potential.
/// Resamples until the maximizer of phi leads by at least `min_gap`.
inline NormalFormGame random_potential_game(const std::vector<int>& counts, Rng& rng, double min_gap = 0.05) {
  const JointActionCodec codec(counts);
  const std::size_t n = counts.size(), A = codec.size();
  for (int attempt = 0; attempt < kGeneratorAttempts; ++attempt) {
    std::vector<double> phi(A);
    for (auto& x : phi) x = rng.uniform();
    if (top_gap(phi) < min_gap) continue;
    std::vector<double> pay(n * A);
    for (std::size_t i = 0; i < n; ++i) {
      // d_i depends on a_{-i} only: index it by a with a_i zeroed.
      std::vector<double> dummy(A);
      for (auto& x : dummy) x = rng.uniform();
      for (std::size_t a = 0; a < A; ++a) pay[i * A + a] = 0.5 * (phi[a] + dummy[codec.with_action(a, i, 0)]);
    }
    return NormalFormGame(counts, std::move(pay));
  }
  throw std::runtime_error("random_potential_game: no admissible draw");
}

/// The potential random_potential_game was built from, recovered by path
/// integration (unique up to a constant, which does not move the argmax).
inline std::vector<double> potential_of(const NormalFormGame& g) {
  std::vector<std::size_t> order(g.n_agents());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  return integrate_potential(g, order);
}

struct InterdependentGameOptions {
  double grid = 0.1;
  /// Welfare leader among all profiles, and among pure NE when any exist,
  /// must lead by this much.
  double min_gap = 0.05;
  /// Reject games with a pure NE that is not strict.
  bool strict_equilibria_only = true;
};

/// Interdependent game with payoffs on a grid in [0,1].
inline NormalFormGame random_interdependent_game(const std::vector<int>& counts, Rng& rng,
                                                 const InterdependentGameOptions& opt = {}) {
  const JointActionCodec codec(counts);
  const std::size_t n = counts.size(), A = codec.size();
  const auto steps = static_cast<std::uint64_t>(std::llround(1.0 / opt.grid));
  for (int attempt = 0; attempt < kGeneratorAttempts; ++attempt) {
    std::vector<double> pay(n * A);
    for (auto& x : pay) x = static_cast<double>(rng.below(steps + 1)) / static_cast<double>(steps);
    NormalFormGame g(counts, std::move(pay));
    if (!check_interdependence(g)) continue;
    std::vector<double> social(A);
    for (std::size_t a = 0; a < A; ++a) social[a] = g.social(a);
    if (top_gap(social) < opt.min_gap) continue;
    const auto strict = pure_nash_equilibria(g, true);
    if (opt.strict_equilibria_only && pure_nash_equilibria(g, false).size() != strict.size()) continue;
    if (strict.size() >= 2) {
      std::vector<double> ne_social;
      for (std::size_t a : strict) ne_social.push_back(social[a]);
      if (top_gap(ne_social) < opt.min_gap) continue;
    }
    return g;
  }
  throw std::runtime_error("random_interdependent_game: no admissible draw");
}

/// Identical-interest stochastic game in which every (stage, state) has one
/// distinguished joint action paying 1 while all others pay at most
/// `others_max`. Transitions are random. The distinguished profile is then
/// the unique optimal deterministic policy.
struct PlantedOptimumGame {
  StochasticGame game;
  std::vector<std::size_t> optimum;  // per (h * S + s)
};

inline PlantedOptimumGame random_identical_interest_game(std::size_t n_agents, int horizon, std::size_t n_states,
                                                         const std::vector<int>& counts, Rng& rng,
                                                         double others_max = 0.3) {
  if (counts.size() != n_agents) throw std::invalid_argument("action counts must have one entry per agent");
  const JointActionCodec codec(counts);
  const std::size_t A = codec.size(), S = n_states, H = static_cast<std::size_t>(horizon);
  std::vector<std::string> names;
  for (std::size_t s = 0; s < S; ++s) names.push_back("s" + std::to_string(s));
  std::vector<double> rewards(n_agents * H * S * A), transitions(H * S * A * S, 0.0), rho(S, 1.0 / static_cast<double>(S));
  PlantedOptimumGame out;
  out.optimum.resize(H * S);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t s = 0; s < S; ++s) {
      const auto best = static_cast<std::size_t>(rng.below(A));
      out.optimum[h * S + s] = best;
      for (std::size_t a = 0; a < A; ++a) {
        const double r = a == best ? 1.0 : others_max * rng.uniform();
        for (std::size_t i = 0; i < n_agents; ++i) rewards[((i * H + h) * S + s) * A + a] = r;
        double z = 0.0;
        for (std::size_t k = 0; k < S; ++k) z += transitions[((h * S + s) * A + a) * S + k] = rng.uniform();
        for (std::size_t k = 0; k < S; ++k) transitions[((h * S + s) * A + a) * S + k] /= z;
      }
    }
  out.game = StochasticGame(n_agents, horizon, names, counts, std::move(rewards), std::move(transitions), rho, false);
  return out;
}

}  // namespace eqsel
