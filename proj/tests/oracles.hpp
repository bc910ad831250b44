#pragma once

// Reference implementations used only by the tests. Each one is written for
// clarity over speed and shares no code path with the library routine it
// checks.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "eqsel/arborescence.hpp"
#include "eqsel/game_model.hpp"
#include "eqsel/random.hpp"

namespace oracle {

using eqsel::Rng;

/// Minimum in-tree cost by enumerating every successor function.
inline std::optional<double> brute_force_in_tree(std::size_t n, const std::vector<eqsel::WeightedEdge>& edges,
                                                 std::size_t root) {
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<std::vector<double>> w(n, std::vector<double>(n, inf));
  for (const auto& e : edges)
    if (e.from != e.to) w[e.from][e.to] = std::min(w[e.from][e.to], e.weight);
  std::vector<std::size_t> succ(n, 0);
  std::optional<double> best;
  std::vector<std::size_t> others;
  for (std::size_t v = 0; v < n; ++v)
    if (v != root) others.push_back(v);
  while (true) {
    double cost = 0.0;
    bool ok = true;
    for (std::size_t v : others) {
      if (!(w[v][succ[v]] < inf)) {
        ok = false;
        break;
      }
      cost += w[v][succ[v]];
    }
    if (ok) {
      for (std::size_t v : others) {
        std::size_t x = v;
        std::size_t steps = 0;
        while (x != root && steps <= n) x = succ[x], ++steps;
        if (x != root) {
          ok = false;
          break;
        }
      }
    }
    if (ok && (!best || cost < *best)) best = cost;
    std::size_t k = 0;
    while (k < others.size() && ++succ[others[k]] == n) succ[others[k++]] = 0;
    if (k == others.size()) break;
  }
  if (n == 1) return 0.0;
  return best;
}

/// Stationary vector by power iteration on the lazy chain (I + P) / 2.
inline std::vector<double> power_stationary(const std::vector<std::vector<double>>& P, int max_iter = 2'000'000) {
  const std::size_t n = P.size();
  std::vector<double> x(n, 1.0 / static_cast<double>(n)), y(n);
  for (int it = 0; it < max_iter; ++it) {
    std::fill(y.begin(), y.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) y[j] += x[i] * 0.5 * (P[i][j] + (i == j ? 1.0 : 0.0));
    double diff = 0.0;
    for (std::size_t j = 0; j < n; ++j) diff += std::abs(y[j] - x[j]);
    x.swap(y);
    if (diff < 1e-15) break;
  }
  return x;
}

/// Dense random row-stochastic matrix with every entry positive.
inline std::vector<std::vector<double>> random_positive_kernel(std::size_t n, Rng& rng) {
  std::vector<std::vector<double>> P(n, std::vector<double>(n));
  for (auto& row : P) {
    double z = 0.0;
    for (auto& x : row) z += x = 0.05 + rng.uniform();
    for (auto& x : row) x /= z;
  }
  return P;
}

/// Q_{i,h}(s,a) of a policy by summing over every trajectory continuation.
inline double q_by_paths(const eqsel::StochasticGame& g, const eqsel::Policy& pi, std::size_t i, int h, std::size_t s,
                         std::size_t a) {
  double q = g.reward(i, h, s, a);
  if (h + 1 == g.horizon()) return q;
  for (std::size_t n = 0; n < g.n_states(); ++n) {
    const double p = g.transition(h, s, a, n);
    if (p == 0.0) continue;
    double v = 0.0;
    for (std::size_t b = 0; b < g.n_joint(); ++b) {
      const double w = pi.prob(h + 1, n, b);
      if (w != 0.0) v += w * q_by_paths(g, pi, i, h + 1, n, b);
    }
    q += p * v;
  }
  return q;
}

/// Log-linear transition probability from its defining formula: one agent
/// drawn uniformly revises and picks x with weight eps^(-u_i(x, a_-i)).
inline double log_linear_probability(const eqsel::NormalFormGame& g, std::size_t from, std::size_t to, double eps) {
  const auto& codec = g.codec();
  const double n = static_cast<double>(g.n_agents());
  double p = 0.0;
  for (std::size_t i = 0; i < g.n_agents(); ++i) {
    bool only_i = true;
    for (std::size_t j = 0; j < g.n_agents(); ++j)
      if (j != i && codec.action_of(from, j) != codec.action_of(to, j)) only_i = false;
    if (!only_i) continue;
    double z = 0.0;
    for (int x = 0; x < codec.count(i); ++x) z += std::pow(eps, -g.payoff(i, codec.with_action(from, i, x)));
    p += std::pow(eps, -g.payoff(i, to)) / z / n;
  }
  return p;
}

/// Every deterministic policy of a small game.
inline std::vector<eqsel::Policy> all_deterministic_policies(const eqsel::StochasticGame& g) {
  const std::size_t cells = static_cast<std::size_t>(g.horizon()) * g.n_states();
  std::vector<std::size_t> choice(cells, 0);
  std::vector<eqsel::Policy> out;
  while (true) {
    out.push_back(eqsel::Policy::deterministic(g.horizon(), g.n_states(), g.n_joint(), choice));
    std::size_t k = 0;
    while (k < cells && ++choice[k] == g.n_joint()) choice[k++] = 0;
    if (k == cells) break;
  }
  return out;
}

}  // namespace oracle
