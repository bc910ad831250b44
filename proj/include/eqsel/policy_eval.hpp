#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "eqsel/game_model.hpp"

namespace eqsel {

/// V_{i,h}(s) and Q_{i,h}(s,a) for every agent, stage and state.
struct ValueTables {
  std::size_t n_agents = 0;
  int horizon = 0;
  std::size_t n_states = 0;
  std::size_t n_joint = 0;
  std::vector<double> v;  // ((i * H + h) * S + s)
  std::vector<double> q;  // (((i * H + h) * S + s) * A + a)

  ValueTables() = default;
  ValueTables(std::size_t n, int H, std::size_t S, std::size_t A)
      : n_agents(n), horizon(H), n_states(S), n_joint(A),
        v(n * static_cast<std::size_t>(H) * S, 0.0), q(n * static_cast<std::size_t>(H) * S * A, 0.0) {}

  std::size_t v_index(std::size_t i, int h, std::size_t s) const {
    return (i * static_cast<std::size_t>(horizon) + static_cast<std::size_t>(h)) * n_states + s;
  }
  std::size_t q_index(std::size_t i, int h, std::size_t s, std::size_t a) const {
    return v_index(i, h, s) * n_joint + a;
  }
  double V(std::size_t i, int h, std::size_t s) const { return v[v_index(i, h, s)]; }
  double Q(std::size_t i, int h, std::size_t s, std::size_t a) const { return q[q_index(i, h, s, a)]; }
  /// V at stage H (one past the last) is identically zero.
  double V_next(std::size_t i, int h, std::size_t s) const { return h + 1 >= horizon ? 0.0 : V(i, h + 1, s); }
};

/// The normal-form game {Q_{i,h}(s, .)} read from a value table.
inline NormalFormGame q_stage_game(const StochasticGame& g, const ValueTables& vt, int stage, std::size_t state) {
  std::vector<double> p(g.n_agents() * g.n_joint());
  for (std::size_t i = 0; i < g.n_agents(); ++i)
    for (std::size_t a = 0; a < g.n_joint(); ++a) p[i * g.n_joint() + a] = vt.Q(i, stage, state, a);
  return NormalFormGame(g.action_counts(), std::move(p));
}

/// Q_{i,h}(s,a) = r_{i,h}(s,a) + sum_{s'} P_h(s'|s,a) V_{i,h+1}(s') for one stage.
inline void bellman_q_stage(const StochasticGame& g, ValueTables& vt, int h) {
  const std::size_t S = g.n_states(), A = g.n_joint();
  for (std::size_t i = 0; i < g.n_agents(); ++i)
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t a = 0; a < A; ++a) {
        double q = g.reward(i, h, s, a);
        if (h + 1 < g.horizon())
          for (std::size_t n = 0; n < S; ++n) {
            const double p = g.transition(h, s, a, n);
            if (p != 0.0) q += p * vt.V(i, h + 1, n);
          }
        vt.q[vt.q_index(i, h, s, a)] = q;
      }
}

/// Exact V^pi and Q^pi by backward induction.
inline ValueTables evaluate_policy(const StochasticGame& g, const Policy& pi) {
  if (pi.horizon() != g.horizon() || pi.n_states() != g.n_states() || pi.n_joint() != g.n_joint())
    throw std::invalid_argument("policy shape does not match game");
  ValueTables vt(g.n_agents(), g.horizon(), g.n_states(), g.n_joint());
  for (int h = g.horizon() - 1; h >= 0; --h) {
    bellman_q_stage(g, vt, h);
    for (std::size_t i = 0; i < g.n_agents(); ++i)
      for (std::size_t s = 0; s < g.n_states(); ++s) {
        double v = 0.0;
        auto d = pi.distribution(h, s);
        for (std::size_t a = 0; a < g.n_joint(); ++a)
          if (d[a] != 0.0) v += d[a] * vt.Q(i, h, s, a);
        vt.v[vt.v_index(i, h, s)] = v;
      }
  }
  return vt;
}

/// Expected total reward of each agent from the initial distribution.
inline std::vector<double> initial_values(const StochasticGame& g, const ValueTables& vt) {
  std::vector<double> out(g.n_agents(), 0.0);
  for (std::size_t i = 0; i < g.n_agents(); ++i)
    for (std::size_t s = 0; s < g.n_states(); ++s) out[i] += g.initial_distribution()[s] * vt.V(i, 0, s);
  return out;
}

// ---------------------------------------------------------------------------
// Pure equilibria of normal-form games

/// Whether joint action `a` is a pure NE of `nfg`. Strict mode demands every
/// unilateral deviation be strictly worse by more than `tol`.
inline bool is_pure_nash(const NormalFormGame& nfg, std::size_t a, bool strict = true, double tol = 1e-12) {
  const auto& codec = nfg.codec();
  for (std::size_t i = 0; i < nfg.n_agents(); ++i) {
    const double here = nfg.payoff(i, a);
    const int cur = codec.action_of(a, i);
    for (int x = 0; x < codec.count(i); ++x) {
      if (x == cur) continue;
      const double dev = nfg.payoff(i, codec.with_action(a, i, x));
      if (strict ? !(here > dev + tol) : (dev > here + tol)) return false;
    }
  }
  return true;
}

inline std::vector<std::size_t> pure_nash_equilibria(const NormalFormGame& nfg, bool strict = true) {
  std::vector<std::size_t> out;
  for (std::size_t a = 0; a < nfg.n_joint(); ++a)
    if (is_pure_nash(nfg, a, strict)) out.push_back(a);
  return out;
}

// ---------------------------------------------------------------------------
// Markov perfect equilibria
//
// The equilibrium condition is the strict inequality
//   Q_{i,h}(s, a*) > Q_{i,h}(s, a_i, a*_{-i})  for all a_i != a*_i,
// so weak equilibria are excluded. The condition is imposed at (stage, state)
// pairs reachable from rho; unreachable pairs cannot influence any reachable
// value and often carry constant payoffs that admit no strict equilibrium.

struct MpeWitness {
  std::size_t agent = 0;
  int stage = 0;
  std::size_t state = 0;
  int deviation = 0;
  double equilibrium_q = 0.0;
  double deviation_q = 0.0;
};

struct MpeCheck {
  bool is_mpe = false;
  std::optional<MpeWitness> witness;
  explicit operator bool() const { return is_mpe; }
};

inline MpeCheck is_mpe(const StochasticGame& g, const Policy& pi) {
  if (!pi.is_deterministic()) throw std::invalid_argument("is_mpe requires a deterministic policy");
  const auto vt = evaluate_policy(g, pi);
  const auto reach = reachable_states(g);
  const auto& codec = g.codec();
  for (int h = 0; h < g.horizon(); ++h)
    for (std::size_t s = 0; s < g.n_states(); ++s) {
      if (!reach[static_cast<std::size_t>(h)][s]) continue;
      const std::size_t a = pi.action(h, s);
      for (std::size_t i = 0; i < g.n_agents(); ++i) {
        const double here = vt.Q(i, h, s, a);
        for (int x = 0; x < codec.count(i); ++x) {
          if (x == codec.action_of(a, i)) continue;
          const double dev = vt.Q(i, h, s, codec.with_action(a, i, x));
          if (!(here > dev)) return {false, MpeWitness{i, h, s, x, here, dev}};
        }
      }
    }
  return {true, std::nullopt};
}

inline constexpr std::size_t kMpeEnumerationGuard = 1'000'000;

/// All MPEs by backward induction: at each stage, every continuation
/// selection is extended by the strict pure NEs of the stage games
/// {Q_{i,h}(s, .)} at every reachable state. Unreachable cells use action 0.
inline std::vector<Policy> enumerate_mpe(const StochasticGame& g, std::size_t guard = kMpeEnumerationGuard) {
  const std::size_t S = g.n_states(), A = g.n_joint(), n = g.n_agents();
  const int H = g.horizon();
  const auto reach = reachable_states(g);

  struct Partial {
    std::vector<std::size_t> choice;  // stage-major, (H * S)
    ValueTables vt;
  };
  std::vector<Partial> partials;
  partials.push_back({std::vector<std::size_t>(static_cast<std::size_t>(H) * S, 0), ValueTables(n, H, S, A)});

  std::size_t work = 0;
  for (int h = H - 1; h >= 0; --h) {
    std::vector<Partial> next;
    for (auto& p : partials) {
      work += S * A;
      if (work > guard) throw std::length_error("enumerate_mpe: stage-cell guard exceeded");
      bellman_q_stage(g, p.vt, h);
      std::vector<std::vector<std::size_t>> options(S);
      bool dead = false;
      for (std::size_t s = 0; s < S && !dead; ++s) {
        if (!reach[static_cast<std::size_t>(h)][s]) {
          options[s] = {0};
          continue;
        }
        options[s] = pure_nash_equilibria(q_stage_game(g, p.vt, h, s), true);
        if (options[s].empty()) dead = true;
      }
      if (dead) continue;
      std::vector<std::size_t> pick(S, 0);
      while (true) {
        Partial q = p;
        for (std::size_t s = 0; s < S; ++s) {
          const std::size_t a = options[s][pick[s]];
          q.choice[static_cast<std::size_t>(h) * S + s] = a;
          for (std::size_t i = 0; i < n; ++i) q.vt.v[q.vt.v_index(i, h, s)] = q.vt.Q(i, h, s, a);
        }
        next.push_back(std::move(q));
        if (next.size() > guard) throw std::length_error("enumerate_mpe: too many equilibria");
        std::size_t k = 0;
        while (k < S && ++pick[k] == options[k].size()) pick[k++] = 0;
        if (k == S) break;
      }
    }
    partials = std::move(next);
    if (partials.empty()) break;
  }
  std::vector<Policy> out;
  out.reserve(partials.size());
  for (const auto& p : partials) out.push_back(Policy::deterministic(H, S, A, p.choice));
  return out;
}

// ---------------------------------------------------------------------------
// Social optimum

struct ParetoResult {
  Policy policy;
  /// sum_i V_{i,h}(s) under the returned policy, indexed h * S + s.
  std::vector<double> social_value;
  /// Optimal social Q, indexed (h * S + s) * A + a.
  std::vector<double> social_q;
  double social_value_at(int h, std::size_t s, std::size_t n_states) const {
    return social_value[static_cast<std::size_t>(h) * n_states + s];
  }
};

inline constexpr double kTieTol = 1e-12;

namespace detail {

/// Backward induction for a scalar reward(h, s, a); ties go to the lowest
/// joint-action index.
template <typename Reward>
ParetoResult optimal_control(const StochasticGame& g, Reward&& reward) {
  const std::size_t S = g.n_states(), A = g.n_joint();
  const int H = g.horizon();
  std::vector<double> value(static_cast<std::size_t>(H) * S, 0.0), q(static_cast<std::size_t>(H) * S * A, 0.0);
  std::vector<std::size_t> choice(static_cast<std::size_t>(H) * S, 0);
  for (int h = H - 1; h >= 0; --h)
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t cell = static_cast<std::size_t>(h) * S + s;
      double best = -std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t a = 0; a < A; ++a) {
        double x = reward(h, s, a);
        if (h + 1 < H)
          for (std::size_t n = 0; n < S; ++n) {
            const double p = g.transition(h, s, a, n);
            if (p != 0.0) x += p * value[static_cast<std::size_t>(h + 1) * S + n];
          }
        q[cell * A + a] = x;
        if (x > best + kTieTol) {
          best = x;
          arg = a;
        }
      }
      value[cell] = q[cell * A + arg];
      choice[cell] = arg;
    }
  return {Policy::deterministic(H, S, A, choice), std::move(value), std::move(q)};
}

}  // namespace detail

/// Deterministic policy maximizing sum_i V_{i,h}(s) at every (h, s).
inline ParetoResult pareto_optimal_policy(const StochasticGame& g) {
  return detail::optimal_control(g, [&](int h, std::size_t s, std::size_t a) {
    double x = 0.0;
    for (std::size_t i = 0; i < g.n_agents(); ++i) x += g.reward(i, h, s, a);
    return x;
  });
}

/// The MPE with the largest expected social value from rho. Ties go to the
/// lexicographically smallest joint-action table (stage-major).
inline Policy pareto_optimal_mpe(const StochasticGame& g) {
  auto mpes = enumerate_mpe(g);
  if (mpes.empty()) throw std::domain_error("pareto_optimal_mpe: game has no Markov perfect equilibrium");
  std::optional<std::size_t> best;
  double best_value = 0.0;
  std::vector<std::size_t> best_key;
  for (std::size_t k = 0; k < mpes.size(); ++k) {
    const auto vals = initial_values(g, evaluate_policy(g, mpes[k]));
    double social = 0.0;
    for (double v : vals) social += v;
    std::vector<std::size_t> key;
    for (int h = 0; h < g.horizon(); ++h)
      for (std::size_t s = 0; s < g.n_states(); ++s) key.push_back(mpes[k].action(h, s));
    if (!best || social > best_value + kTieTol || (std::abs(social - best_value) <= kTieTol && key < best_key)) {
      best = k;
      best_value = social;
      best_key = std::move(key);
    }
  }
  return mpes[*best];
}

// ---------------------------------------------------------------------------
// Potential games

struct PotentialCertificate {
  bool exists = false;
  std::vector<double> potential;  // phi(a), empty unless exists
  double max_violation = 0.0;
};

inline constexpr double kPotentialTol = 1e-9;

/// Path-integrated candidate potential: phi(0) = 0 and phi(a) accumulates
/// unilateral payoff differences while agents switch to a's actions in the
/// given order.
inline std::vector<double> integrate_potential(const NormalFormGame& nfg, const std::vector<std::size_t>& order) {
  const auto& codec = nfg.codec();
  std::vector<double> phi(nfg.n_joint(), 0.0);
  for (std::size_t a = 0; a < nfg.n_joint(); ++a) {
    std::size_t cur = 0;
    double acc = 0.0;
    for (std::size_t i : order) {
      const std::size_t nxt = codec.with_action(cur, i, codec.action_of(a, i));
      acc += nfg.payoff(i, nxt) - nfg.payoff(i, cur);
      cur = nxt;
    }
    phi[a] = acc;
  }
  return phi;
}

/// Largest |[phi(a_i', a_-i) - phi(a)] - [r_i(a_i', a_-i) - r_i(a)]|.
inline double potential_violation(const NormalFormGame& nfg, const std::vector<double>& phi) {
  const auto& codec = nfg.codec();
  double worst = 0.0;
  for (std::size_t a = 0; a < nfg.n_joint(); ++a)
    for (std::size_t i = 0; i < nfg.n_agents(); ++i)
      for (int x = 0; x < codec.count(i); ++x) {
        const std::size_t b = codec.with_action(a, i, x);
        worst = std::max(worst, std::abs((phi[b] - phi[a]) - (nfg.payoff(i, b) - nfg.payoff(i, a))));
      }
  return worst;
}

inline PotentialCertificate verify_potential(const NormalFormGame& nfg) {
  std::vector<std::size_t> order(nfg.n_agents());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  auto phi = integrate_potential(nfg, order);
  const double viol = potential_violation(nfg, phi);
  if (viol <= kPotentialTol) return {true, std::move(phi), viol};
  return {false, {}, viol};
}

// ---------------------------------------------------------------------------
// Interdependence

struct InterdependenceCheck {
  bool interdependent = false;
  std::optional<std::size_t> joint;     // violating a
  std::vector<std::size_t> subset;      // violating J
  explicit operator bool() const { return interdependent; }
};

/// For every a and nonempty proper subset J of agents, some agent outside J
/// must have a payoff that J can change by switching actions.
inline InterdependenceCheck check_interdependence(const NormalFormGame& nfg) {
  const std::size_t n = nfg.n_agents();
  if (n < 2) throw std::invalid_argument("interdependence needs at least two agents");
  if (n > 20) throw std::length_error("interdependence check is exponential in the agent count");
  const auto& codec = nfg.codec();
  for (std::size_t a = 0; a < nfg.n_joint(); ++a)
    for (std::size_t mask = 1; mask + 1 < (std::size_t{1} << n); ++mask) {
      std::vector<std::size_t> J;
      for (std::size_t j = 0; j < n; ++j)
        if (mask >> j & 1) J.push_back(j);
      bool affected = false;
      // Enumerate a'_J by odometer over J's coordinates.
      std::vector<int> pick(J.size(), 0);
      while (!affected) {
        std::size_t b = a;
        for (std::size_t k = 0; k < J.size(); ++k) b = codec.with_action(b, J[k], pick[k]);
        for (std::size_t i = 0; i < n && !affected; ++i)
          if (!(mask >> i & 1) && nfg.payoff(i, b) != nfg.payoff(i, a)) affected = true;
        std::size_t k = 0;
        while (k < J.size() && ++pick[k] == codec.count(J[k])) pick[k++] = 0;
        if (k == J.size()) break;
      }
      if (!affected) return {false, a, std::move(J)};
    }
  return {true, std::nullopt, {}};
}

// ---------------------------------------------------------------------------
// Markov potential games
//
// Stage potentials are path-integrated per (h, s) and then anchored so that
// phi_h(s, 0) equals the mean agent reward at joint action 0; for identical
// interest games this reproduces phi = r exactly. The potential identity is
// checked in its unilateral-deviation form
//   Phi_h(s, a_i', a_-i) - Phi_h(s, a) = Q_{i,h}(s, a_i', a_-i) - Q_{i,h}(s, a).

struct StagePotentials {
  std::vector<double> phi;  // (h * S + s) * A + a
  double at(int h, std::size_t s, std::size_t a, std::size_t S, std::size_t A) const {
    return phi[(static_cast<std::size_t>(h) * S + s) * A + a];
  }
};

inline StagePotentials stage_potentials(const StochasticGame& g) {
  const std::size_t S = g.n_states(), A = g.n_joint();
  StagePotentials out{std::vector<double>(static_cast<std::size_t>(g.horizon()) * S * A)};
  for (int h = 0; h < g.horizon(); ++h)
    for (std::size_t s = 0; s < S; ++s) {
      const auto nfg = stage_game(g, h, s);
      const auto cert = verify_potential(nfg);
      if (!cert.exists)
        throw std::domain_error("stage game at stage " + std::to_string(h + 1) + ", state " + g.state_names()[s] +
                                " admits no exact potential (violation " + std::to_string(cert.max_violation) + ")");
      double anchor = 0.0;
      for (std::size_t i = 0; i < g.n_agents(); ++i) anchor += nfg.payoff(i, 0);
      anchor /= static_cast<double>(g.n_agents());
      for (std::size_t a = 0; a < A; ++a)
        out.phi[(static_cast<std::size_t>(h) * S + s) * A + a] = cert.potential[a] + anchor;
    }
  return out;
}

/// Total potential Phi^pi_h(s, a), indexed (h * S + s) * A + a.
inline std::vector<double> total_potential(const StochasticGame& g, const StagePotentials& sp, const Policy& pi) {
  const std::size_t S = g.n_states(), A = g.n_joint();
  const int H = g.horizon();
  std::vector<double> Phi(static_cast<std::size_t>(H) * S * A, 0.0), Psi(static_cast<std::size_t>(H) * S, 0.0);
  for (int h = H - 1; h >= 0; --h)
    for (std::size_t s = 0; s < S; ++s) {
      const std::size_t cell = static_cast<std::size_t>(h) * S + s;
      double psi = 0.0;
      for (std::size_t a = 0; a < A; ++a) {
        double x = sp.phi[cell * A + a];
        if (h + 1 < H)
          for (std::size_t n = 0; n < S; ++n) {
            const double p = g.transition(h, s, a, n);
            if (p != 0.0) x += p * Psi[static_cast<std::size_t>(h + 1) * S + n];
          }
        Phi[cell * A + a] = x;
        psi += pi.prob(h, s, a) * x;
      }
      Psi[cell] = psi;
    }
  return Phi;
}

struct MpgReport {
  bool passes = false;
  double worst_violation = 0.0;
  std::vector<double> per_policy_violation;
  StagePotentials potentials;
};

inline constexpr double kMpgTol = 1e-8;

inline MpgReport check_mpg_on_policies(const StochasticGame& g, const std::vector<Policy>& policies) {
  MpgReport rep;
  rep.potentials = stage_potentials(g);
  const std::size_t S = g.n_states(), A = g.n_joint();
  const auto& codec = g.codec();
  for (const auto& pi : policies) {
    const auto vt = evaluate_policy(g, pi);
    const auto Phi = total_potential(g, rep.potentials, pi);
    double worst = 0.0;
    for (int h = 0; h < g.horizon(); ++h)
      for (std::size_t s = 0; s < S; ++s) {
        const std::size_t cell = static_cast<std::size_t>(h) * S + s;
        for (std::size_t a = 0; a < A; ++a)
          for (std::size_t i = 0; i < g.n_agents(); ++i)
            for (int x = 0; x < codec.count(i); ++x) {
              const std::size_t b = codec.with_action(a, i, x);
              const double dphi = Phi[cell * A + b] - Phi[cell * A + a];
              const double dq = vt.Q(i, h, s, b) - vt.Q(i, h, s, a);
              worst = std::max(worst, std::abs(dphi - dq));
            }
      }
    rep.per_policy_violation.push_back(worst);
    rep.worst_violation = std::max(rep.worst_violation, worst);
  }
  rep.passes = rep.worst_violation <= kMpgTol;
  return rep;
}

/// Policy whose total potential dominates every other policy's: the optimal
/// control policy for stage reward phi_h(s, a).
inline ParetoResult potential_maximizing_policy(const StochasticGame& g) {
  const auto sp = stage_potentials(g);
  const std::size_t S = g.n_states(), A = g.n_joint();
  return detail::optimal_control(g, [&](int h, std::size_t s, std::size_t a) { return sp.at(h, s, a, S, A); });
}

}  // namespace eqsel
