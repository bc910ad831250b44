#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "eqsel/game_model.hpp"
#include "eqsel/random.hpp"

namespace eqsel {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class RuleKind { log_linear, marden_mood, pradelski_young };

/// Ordering of the content-agent branches of the Pradelski-Young rule.
/// `original`: an experimenting content agent may adopt a better action,
/// a non-experimenting one turns hopeful/watchful on payoff changes.
/// `as_written`: the two branches swapped.
enum class PyVariant { original, as_written };

inline std::string_view rule_name(RuleKind k) {
  switch (k) {
    case RuleKind::log_linear: return "log_linear";
    case RuleKind::marden_mood: return "marden_mood";
    case RuleKind::pradelski_young: return "pradelski_young";
  }
  return "?";
}

inline RuleKind parse_rule(std::string_view name) {
  if (name == "log_linear") return RuleKind::log_linear;
  if (name == "marden_mood" || name == "marden") return RuleKind::marden_mood;
  if (name == "pradelski_young" || name == "py") return RuleKind::pradelski_young;
  throw std::invalid_argument("unknown learning rule '" + std::string(name) + "'");
}

inline std::vector<std::string> builtin_rule_names() { return {"log_linear", "marden_mood", "pradelski_young"}; }

/// Mistake rate, 0 < eps < 1.
class Epsilon {
 public:
  explicit Epsilon(double v) : v_(v) {
    if (!(v > 0.0 && v < 1.0))
      throw std::invalid_argument("epsilon must lie in (0,1); the perturbed chain is only ergodic for positive epsilon");
  }
  double value() const { return v_; }
  operator double() const { return v_; }

 private:
  double v_;
};

struct LearningRuleSpec {
  RuleKind kind = RuleKind::log_linear;
  std::optional<double> c;       // Marden experimentation exponent, default n
  std::optional<double> phi1, phi2, gamma1, gamma2;  // Pradelski-Young, defaults n/8, n/4, 1/8, 1/4
  double payoff_grid = 1e-6;
  PyVariant py_variant = PyVariant::original;

  static LearningRuleSpec log_linear() { return {}; }
  static LearningRuleSpec marden(std::optional<double> c = std::nullopt) {
    LearningRuleSpec r;
    r.kind = RuleKind::marden_mood;
    r.c = c;
    return r;
  }
  static LearningRuleSpec pradelski_young(PyVariant v = PyVariant::original) {
    LearningRuleSpec r;
    r.kind = RuleKind::pradelski_young;
    r.py_variant = v;
    return r;
  }

  bool is_mood_rule() const { return kind != RuleKind::log_linear; }

  double c_for(std::size_t n) const { return c.value_or(static_cast<double>(n)); }
  double phi1_for(std::size_t n) const { return phi1.value_or(static_cast<double>(n) / 8.0); }
  double phi2_for(std::size_t n) const { return phi2.value_or(static_cast<double>(n) / 4.0); }
  double gamma1_for() const { return gamma1.value_or(0.125); }
  double gamma2_for() const { return gamma2.value_or(0.25); }
  double F(double x, std::size_t n) const { return -phi1_for(n) * x + phi2_for(n); }
  double G(double x) const { return -gamma1_for() * x + gamma2_for(); }

  /// Throws std::invalid_argument when the parameters break the rule's bounds.
  void validate(std::size_t n) const {
    const double nn = static_cast<double>(n);
    if (kind == RuleKind::marden_mood && !(c_for(n) >= nn))
      throw std::invalid_argument("marden_mood: experimentation exponent c must be >= n_agents");
    if (kind == RuleKind::pradelski_young) {
      if (!(phi1_for(n) > 0 && phi2_for(n) > 0 && gamma1_for() > 0 && gamma2_for() > 0))
        throw std::invalid_argument("pradelski_young: phi1, phi2, gamma1, gamma2 must be positive");
      if (!(F(1.0, n) > 0 && F(0.0, n) < nn / 2))
        throw std::invalid_argument("pradelski_young: F(x) = -phi1 x + phi2 must lie in (0, n/2) on [0,1]");
      if (!(G(1.0) > 0 && G(-1.0) < 0.5))
        throw std::invalid_argument("pradelski_young: G(x) = -gamma1 x + gamma2 must lie in (0, 1/2) on [-1,1]");
      if (!(payoff_grid > 0 && payoff_grid <= 0.5)) throw std::invalid_argument("payoff_grid must lie in (0, 0.5]");
    }
  }
};

// ---------------------------------------------------------------------------
// Learner state

enum class Mood : std::uint8_t { content, hopeful, watchful, discontent };

inline std::string_view mood_label(Mood m) {
  switch (m) {
    case Mood::content: return "C";
    case Mood::hopeful: return "C+";
    case Mood::watchful: return "C-";
    case Mood::discontent: return "D";
  }
  return "?";
}

/// Per-agent hidden variable. Marden uses only the mood (content or
/// discontent); Pradelski-Young adds a benchmark action and a benchmark
/// payoff stored as an integer number of grid ticks.
struct AgentHidden {
  Mood mood = Mood::content;
  int bench_action = 0;
  std::int64_t bench_ticks = 0;
  auto operator<=>(const AgentHidden&) const = default;
};

struct LearnerCell {
  std::size_t action = 0;
  std::vector<AgentHidden> hidden;  // empty for log-linear
  auto operator<=>(const LearnerCell&) const = default;
};

inline std::int64_t payoff_ticks(double r, double grid) { return std::llround(r / grid); }

inline std::string hidden_desc(const LearningRuleSpec& rule, const LearnerCell& cell) {
  if (cell.hidden.empty()) return "-";
  std::string out;
  for (std::size_t i = 0; i < cell.hidden.size(); ++i) {
    if (i) out += '/';
    const auto& h = cell.hidden[i];
    out += mood_label(h.mood);
    if (rule.kind == RuleKind::pradelski_young) {
      char buf[64];
      std::snprintf(buf, sizeof buf, ":%d:%.10g", h.bench_action, static_cast<double>(h.bench_ticks) * rule.payoff_grid);
      out += buf;
    }
  }
  return out;
}

/// Starting cell: the given joint action with every agent content and
/// benchmarked on it.
inline LearnerCell initial_cell(const LearningRuleSpec& rule, const NormalFormGame& g, std::size_t action) {
  LearnerCell cell{action, {}};
  if (rule.kind == RuleKind::log_linear) return cell;
  for (std::size_t i = 0; i < g.n_agents(); ++i) {
    AgentHidden h;
    if (rule.kind == RuleKind::pradelski_young) {
      h.bench_action = g.codec().action_of(action, i);
      h.bench_ticks = payoff_ticks(g.payoff(i, action), rule.payoff_grid);
    }
    cell.hidden.push_back(h);
  }
  return cell;
}

// ---------------------------------------------------------------------------
// Payoff normalization

inline constexpr double kNormalizedTol = 1e-9;

/// Affine map r -> (r - lo) / (hi - lo). Values that land outside [0,1] by
/// rounding noise only are clamped.
inline NormalFormGame normalize_payoffs(const NormalFormGame& g, double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("normalize_payoffs: need hi > lo");
  if (lo == 0.0 && hi == 1.0) return g;
  std::vector<double> p = g.payoffs();
  const double w = hi - lo;
  for (double& x : p) {
    x = (x - lo) / w;
    if (x < 0.0 && x > -kNormalizedTol) x = 0.0;
    if (x > 1.0 && x < 1.0 + kNormalizedTol) x = 1.0;
  }
  return NormalFormGame(g.action_counts(), std::move(p));
}

inline bool payoffs_normalized(const NormalFormGame& g) {
  for (double x : g.payoffs())
    if (!(x >= 0.0 && x <= 1.0)) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Transition structure
//
// Every transition probability of the mood rules is a product of per-agent
// factors of the form coef * eps^k or (1 - eps^k). The resistance of such a
// product is the sum of the k of the first kind; a (1 - eps^0) factor makes
// the product identically zero. Log-linear entries are coef * eps^k / Z(eps)
// with Z -> (number of best responses) so their resistance is k as well.

struct Factor {
  double coef = 1.0;
  double k = 0.0;
  bool one_minus = false;

  static Factor power(double coef, double k) { return {coef, k, false}; }
  static Factor complement(double k) { return {1.0, k, true}; }

  /// eps = 0 gives the unperturbed limit (0^0 = 1).
  double value(double eps) const {
    if (one_minus) return eps == 0.0 ? 1.0 : -std::expm1(k * std::log(eps));
    return coef * (k == 0.0 ? 1.0 : std::pow(eps, k));
  }
  double resistance() const {
    if (one_minus) return k > 0.0 ? 0.0 : kInf;
    return coef > 0.0 ? k : kInf;
  }
};

namespace detail {

struct ActionOption {
  int action;
  std::optional<Factor> factor;
  bool experimented;
};

struct MoodOption {
  AgentHidden next;
  std::optional<Factor> factor;
};

inline std::vector<ActionOption> mood_action_options(const LearningRuleSpec& rule, const NormalFormGame& g,
                                                     const LearnerCell& cell, std::size_t i) {
  const int Ai = g.codec().count(i);
  const auto& h = cell.hidden[i];
  std::vector<ActionOption> out;
  if (rule.kind == RuleKind::marden_mood) {
    const int cur = g.codec().action_of(cell.action, i);
    const double c = rule.c_for(g.n_agents());
    if (h.mood == Mood::content) {
      out.push_back({cur, Ai > 1 ? std::optional<Factor>(Factor::complement(c)) : std::nullopt, false});
      for (int x = 0; x < Ai; ++x)
        if (x != cur) out.push_back({x, Factor::power(1.0 / (Ai - 1), c), true});
    } else {
      for (int x = 0; x < Ai; ++x) out.push_back({x, Factor::power(1.0 / Ai, 0.0), true});
    }
    return out;
  }
  // Pradelski-Young: content agents experiment with probability eps.
  switch (h.mood) {
    case Mood::content:
      out.push_back({h.bench_action, Ai > 1 ? std::optional<Factor>(Factor::complement(1.0)) : std::nullopt, false});
      for (int x = 0; x < Ai; ++x)
        if (x != h.bench_action) out.push_back({x, Factor::power(1.0 / (Ai - 1), 1.0), true});
      break;
    case Mood::hopeful:
    case Mood::watchful:
      out.push_back({h.bench_action, std::nullopt, false});
      break;
    case Mood::discontent:
      for (int x = 0; x < Ai; ++x) out.push_back({x, Factor::power(1.0 / Ai, 0.0), true});
      break;
  }
  return out;
}

/// Mood outcomes for agent i after the joint action `next_action` realized.
inline std::vector<MoodOption> mood_update_options(const LearningRuleSpec& rule, const NormalFormGame& g,
                                                   const LearnerCell& cell, std::size_t next_action, std::size_t i,
                                                   const ActionOption& chosen) {
  const auto& h = cell.hidden[i];
  const double r = g.payoff(i, next_action);
  std::vector<MoodOption> out;
  if (rule.kind == RuleKind::marden_mood) {
    if (h.mood == Mood::content && next_action == cell.action) {
      out.push_back({{Mood::content, 0, 0}, std::nullopt});
    } else {
      const double k = 1.0 - r;
      out.push_back({{Mood::content, 0, 0}, Factor::power(1.0, k)});
      out.push_back({{Mood::discontent, 0, 0}, Factor::complement(k)});
    }
    return out;
  }

  const double grid = rule.payoff_grid;
  const std::int64_t rt = payoff_ticks(r, grid);
  const double rq = static_cast<double>(rt) * grid;
  const double bq = static_cast<double>(h.bench_ticks) * grid;
  const AgentHidden same = h;
  auto with = [&](Mood m, int a, std::int64_t t) { return AgentHidden{m, a, t}; };

  switch (h.mood) {
    case Mood::content: {
      const bool adopt_branch = (rule.py_variant == PyVariant::original) == chosen.experimented;
      if (adopt_branch) {
        if (rt > h.bench_ticks) {
          const double k = rule.G(rq - bq);
          out.push_back({with(Mood::content, chosen.action, rt), Factor::power(1.0, k)});
          out.push_back({same, Factor::complement(k)});
        } else {
          out.push_back({same, std::nullopt});
        }
      } else {
        if (rt > h.bench_ticks)
          out.push_back({with(Mood::hopeful, h.bench_action, h.bench_ticks), std::nullopt});
        else if (rt < h.bench_ticks)
          out.push_back({with(Mood::watchful, h.bench_action, h.bench_ticks), std::nullopt});
        else
          out.push_back({same, std::nullopt});
      }
      break;
    }
    case Mood::watchful:
      if (rt < h.bench_ticks)
        out.push_back({with(Mood::discontent, h.bench_action, h.bench_ticks), std::nullopt});
      else if (rt > h.bench_ticks)
        out.push_back({with(Mood::hopeful, h.bench_action, h.bench_ticks), std::nullopt});
      else
        out.push_back({with(Mood::content, h.bench_action, h.bench_ticks), std::nullopt});
      break;
    case Mood::hopeful:
      if (rt < h.bench_ticks)
        out.push_back({with(Mood::watchful, h.bench_action, h.bench_ticks), std::nullopt});
      else if (rt > h.bench_ticks)
        out.push_back({with(Mood::content, h.bench_action, rt), std::nullopt});
      else
        out.push_back({with(Mood::content, h.bench_action, h.bench_ticks), std::nullopt});
      break;
    case Mood::discontent: {
      const double k = rule.F(rq, g.n_agents());
      out.push_back({with(Mood::content, chosen.action, rt), Factor::power(1.0, k)});
      out.push_back({same, Factor::complement(k)});
      break;
    }
  }
  return out;
}

inline void check_cell_shape(const LearningRuleSpec& rule, const NormalFormGame& g, const LearnerCell& cell) {
  if (cell.action >= g.n_joint()) throw std::invalid_argument("learner cell action out of range");
  const std::size_t want = rule.kind == RuleKind::log_linear ? 0 : g.n_agents();
  if (cell.hidden.size() != want) throw std::invalid_argument("learner cell hidden state has wrong length");
}

inline void check_normalized(const LearningRuleSpec& rule, const NormalFormGame& g) {
  if (rule.is_mood_rule() && !payoffs_normalized(g))
    throw std::invalid_argument(std::string(rule_name(rule.kind)) + " requires payoffs normalized to [0,1]");
}

inline double max_payoff_given_others(const NormalFormGame& g, std::size_t a, std::size_t i) {
  double m = -kInf;
  for (int x = 0; x < g.codec().count(i); ++x) m = std::max(m, g.payoff(i, g.codec().with_action(a, i, x)));
  return m;
}

}  // namespace detail

/// Calls visit(to, resistance, probability) for every transition with finite
/// resistance out of `from`. The same destination can be visited more than
/// once; probabilities add and resistances take the minimum. eps = 0 yields
/// the unperturbed limit probabilities.
template <typename Visit>
void for_each_transition(const LearningRuleSpec& rule, const NormalFormGame& g, const LearnerCell& from, double eps,
                         Visit&& visit) {
  detail::check_cell_shape(rule, g, from);
  const auto& codec = g.codec();
  const std::size_t n = g.n_agents();

  if (rule.kind == RuleKind::log_linear) {
    for (std::size_t i = 0; i < n; ++i) {
      const double best = detail::max_payoff_given_others(g, from.action, i);
      double z = 0.0;
      for (int x = 0; x < codec.count(i); ++x) {
        const double k = best - g.payoff(i, codec.with_action(from.action, i, x));
        z += k == 0.0 ? 1.0 : std::pow(eps, k);
      }
      for (int x = 0; x < codec.count(i); ++x) {
        const std::size_t b = codec.with_action(from.action, i, x);
        const double k = best - g.payoff(i, b);
        const double w = k == 0.0 ? 1.0 : std::pow(eps, k);
        visit(LearnerCell{b, {}}, k, w / (static_cast<double>(n) * z));
      }
    }
    return;
  }

  std::vector<std::vector<detail::ActionOption>> acts(n);
  for (std::size_t i = 0; i < n; ++i) acts[i] = detail::mood_action_options(rule, g, from, i);

  std::vector<std::size_t> pick(n, 0);
  std::vector<Factor> factors;
  while (true) {
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) next += static_cast<std::size_t>(acts[i][pick[i]].action) * codec.stride(i);
    std::vector<std::vector<detail::MoodOption>> moods(n);
    for (std::size_t i = 0; i < n; ++i)
      moods[i] = detail::mood_update_options(rule, g, from, next, i, acts[i][pick[i]]);
    std::vector<std::size_t> mp(n, 0);
    while (true) {
      factors.clear();
      LearnerCell to{next, std::vector<AgentHidden>(n)};
      for (std::size_t i = 0; i < n; ++i) {
        if (acts[i][pick[i]].factor) factors.push_back(*acts[i][pick[i]].factor);
        const auto& mo = moods[i][mp[i]];
        if (mo.factor) factors.push_back(*mo.factor);
        to.hidden[i] = mo.next;
      }
      double res = 0.0, p = 1.0;
      for (const auto& f : factors) {
        res += f.resistance();
        p *= f.value(eps);
      }
      if (res < kInf) visit(to, res, p);
      std::size_t k = 0;
      while (k < n && ++mp[k] == moods[k].size()) mp[k++] = 0;
      if (k == n) break;
    }
    std::size_t k = 0;
    while (k < n && ++pick[k] == acts[k].size()) pick[k++] = 0;
    if (k == n) break;
  }
}

namespace detail {

template <typename Option>
std::size_t sample_option(const std::vector<Option>& opts, double eps, Rng& rng) {
  if (opts.size() == 1) return 0;
  const double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t k = 0; k + 1 < opts.size(); ++k) {
    acc += opts[k].factor ? opts[k].factor->value(eps) : 1.0;
    if (u < acc) return k;
  }
  return opts.size() - 1;
}

}  // namespace detail

/// One draw from K^eps(. | cell; payoffs).
inline LearnerCell step(const LearningRuleSpec& rule, const LearnerCell& cell, const NormalFormGame& g, Epsilon eps,
                        Rng& rng) {
  detail::check_cell_shape(rule, g, cell);
  detail::check_normalized(rule, g);
  const auto& codec = g.codec();
  const std::size_t n = g.n_agents();
  const double e = eps.value();

  if (rule.kind == RuleKind::log_linear) {
    const std::size_t i = static_cast<std::size_t>(rng.below(n));
    const int Ai = codec.count(i);
    const double best = detail::max_payoff_given_others(g, cell.action, i);
    double w[64];
    std::vector<double> wv;
    double* ws = w;
    if (Ai > 64) {
      wv.resize(static_cast<std::size_t>(Ai));
      ws = wv.data();
    }
    double z = 0.0;
    for (int x = 0; x < Ai; ++x) {
      const double k = best - g.payoff(i, codec.with_action(cell.action, i, x));
      ws[x] = k == 0.0 ? 1.0 : std::pow(e, k);
      z += ws[x];
    }
    const double u = rng.uniform() * z;
    double acc = 0.0;
    int pick = Ai - 1;
    for (int x = 0; x + 1 < Ai; ++x) {
      acc += ws[x];
      if (u < acc) {
        pick = x;
        break;
      }
    }
    return LearnerCell{codec.with_action(cell.action, i, pick), {}};
  }

  std::vector<detail::ActionOption> chosen(n);
  std::size_t next = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto opts = detail::mood_action_options(rule, g, cell, i);
    chosen[i] = opts[detail::sample_option(opts, e, rng)];
    next += static_cast<std::size_t>(chosen[i].action) * codec.stride(i);
  }
  LearnerCell out{next, std::vector<AgentHidden>(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const auto opts = detail::mood_update_options(rule, g, cell, next, i, chosen[i]);
    out.hidden[i] = opts[detail::sample_option(opts, e, rng)].next;
  }
  return out;
}

inline LearnerCell step(const LearningRuleSpec& rule, const LearnerCell& cell, const NormalFormGame& g, Epsilon eps,
                        std::uint64_t seed) {
  Rng rng(seed);
  return step(rule, cell, g, eps, rng);
}

/// R(from -> to): minimum over the product expansions reaching `to`, +inf if
/// the entry is identically zero.
inline double analytic_resistance(const LearningRuleSpec& rule, const NormalFormGame& g, const LearnerCell& from,
                                  const LearnerCell& to) {
  detail::check_normalized(rule, g);
  double best = kInf;
  for_each_transition(rule, g, from, 0.5, [&](const LearnerCell& c, double r, double) {
    if (c == to) best = std::min(best, r);
  });
  return best;
}

// ---------------------------------------------------------------------------
// Node space and kernel matrix

inline constexpr std::size_t kKernelNodeGuard = 10'000;

/// Enumeration of the (a, xi) node space of a rule on a payoff profile.
class NodeSpace {
 public:
  NodeSpace() = default;

  NodeSpace(const LearningRuleSpec& rule, const NormalFormGame& g, std::size_t guard = kKernelNodeGuard)
      : n_joint_(g.n_joint()) {
    const std::size_t n = g.n_agents();
    if (rule.kind != RuleKind::log_linear) {
      per_agent_.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        auto& list = per_agent_[i];
        if (rule.kind == RuleKind::marden_mood) {
          list = {{Mood::content, 0, 0}, {Mood::discontent, 0, 0}};
        } else {
          for (Mood m : {Mood::content, Mood::hopeful, Mood::watchful, Mood::discontent})
            for (int ba = 0; ba < g.codec().count(i); ++ba) {
              std::vector<std::int64_t> ticks;
              for (std::size_t a = 0; a < g.n_joint(); ++a)
                if (g.codec().action_of(a, i) == ba) ticks.push_back(payoff_ticks(g.payoff(i, a), rule.payoff_grid));
              std::sort(ticks.begin(), ticks.end());
              ticks.erase(std::unique(ticks.begin(), ticks.end()), ticks.end());
              for (auto t : ticks) list.push_back({m, ba, t});
            }
        }
        std::sort(list.begin(), list.end());
      }
    }
    hidden_count_ = 1;
    for (const auto& l : per_agent_) {
      hidden_count_ *= l.size();
      if (hidden_count_ * n_joint_ > guard) throw std::length_error(too_big(guard));
    }
    if (hidden_count_ * n_joint_ > guard) throw std::length_error(too_big(guard));
  }

  std::size_t size() const { return n_joint_ * hidden_count_; }
  std::size_t hidden_count() const { return hidden_count_; }

  LearnerCell cell(std::size_t id) const {
    LearnerCell c{id / hidden_count_, {}};
    std::size_t rest = id % hidden_count_;
    c.hidden.resize(per_agent_.size());
    for (std::size_t i = per_agent_.size(); i-- > 0;) {
      c.hidden[i] = per_agent_[i][rest % per_agent_[i].size()];
      rest /= per_agent_[i].size();
    }
    return c;
  }

  std::optional<std::size_t> index(const LearnerCell& c) const {
    if (c.action >= n_joint_ || c.hidden.size() != per_agent_.size()) return std::nullopt;
    std::size_t h = 0;
    for (std::size_t i = 0; i < per_agent_.size(); ++i) {
      auto it = std::lower_bound(per_agent_[i].begin(), per_agent_[i].end(), c.hidden[i]);
      if (it == per_agent_[i].end() || *it != c.hidden[i]) return std::nullopt;
      h = h * per_agent_[i].size() + static_cast<std::size_t>(it - per_agent_[i].begin());
    }
    return c.action * hidden_count_ + h;
  }

 private:
  std::string too_big(std::size_t guard) const {
    return "node space exceeds the guard of " + std::to_string(guard) + " nodes";
  }

  std::size_t n_joint_ = 0;
  std::size_t hidden_count_ = 1;
  std::vector<std::vector<AgentHidden>> per_agent_;
};

struct KernelEntry {
  std::size_t to;
  double probability;
  double resistance;
};

/// Sparse row-stochastic matrix over a node list, with each entry's
/// resistance alongside its probability.
struct KernelMatrix {
  LearningRuleSpec rule;
  JointActionCodec codec;
  std::vector<LearnerCell> nodes;
  std::vector<std::vector<KernelEntry>> rows;
  double epsilon = 0.0;
  /// Size of the product space before restriction to its closed class.
  std::size_t full_size = 0;

  std::size_t size() const { return nodes.size(); }
  double at(std::size_t i, std::size_t j) const {
    for (const auto& e : rows[i])
      if (e.to == j) return e.probability;
    return 0.0;
  }
  std::size_t node_of(const LearnerCell& c) const {
    auto it = std::lower_bound(nodes.begin(), nodes.end(), c);
    if (it == nodes.end() || *it != c) throw std::out_of_range("cell is not a node of this kernel");
    return static_cast<std::size_t>(it - nodes.begin());
  }
  std::optional<std::size_t> find(const LearnerCell& c) const {
    auto it = std::lower_bound(nodes.begin(), nodes.end(), c);
    if (it == nodes.end() || *it != c) return std::nullopt;
    return static_cast<std::size_t>(it - nodes.begin());
  }
  /// Adjacency over finite-resistance (structurally positive) entries.
  std::vector<std::vector<std::size_t>> support() const {
    std::vector<std::vector<std::size_t>> adj(size());
    for (std::size_t i = 0; i < size(); ++i)
      for (const auto& e : rows[i]) adj[i].push_back(e.to);
    return adj;
  }
};

// ---------------------------------------------------------------------------
// Graph utilities on adjacency lists

namespace detail {

/// Tarjan SCC, iterative. Returns component id per node (reverse topological
/// numbering: sink components first).
inline std::vector<std::size_t> strongly_connected_components(const std::vector<std::vector<std::size_t>>& adj,
                                                              std::size_t& n_comp) {
  const std::size_t N = adj.size();
  const std::size_t none = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> index(N, none), low(N, 0), comp(N, none), stack;
  std::vector<bool> on(N, false);
  std::vector<std::pair<std::size_t, std::size_t>> call;
  std::size_t counter = 0;
  n_comp = 0;
  for (std::size_t root = 0; root < N; ++root) {
    if (index[root] != none) continue;
    call.push_back({root, 0});
    index[root] = low[root] = counter++;
    stack.push_back(root);
    on[root] = true;
    while (!call.empty()) {
      auto& [v, k] = call.back();
      if (k < adj[v].size()) {
        const std::size_t w = adj[v][k++];
        if (index[w] == none) {
          index[w] = low[w] = counter++;
          stack.push_back(w);
          on[w] = true;
          call.push_back({w, 0});
        } else if (on[w]) {
          low[v] = std::min(low[v], index[w]);
        }
      } else {
        const std::size_t vv = v;
        if (low[vv] == index[vv]) {
          std::size_t w;
          do {
            w = stack.back();
            stack.pop_back();
            on[w] = false;
            comp[w] = n_comp;
          } while (w != vv);
          ++n_comp;
        }
        call.pop_back();
        if (!call.empty()) low[call.back().first] = std::min(low[call.back().first], low[vv]);
      }
    }
  }
  return comp;
}

/// Components with no edge leaving them.
inline std::vector<std::vector<std::size_t>> closed_classes(const std::vector<std::vector<std::size_t>>& adj) {
  std::size_t nc = 0;
  const auto comp = strongly_connected_components(adj, nc);
  std::vector<bool> leaves(nc, false);
  for (std::size_t v = 0; v < adj.size(); ++v)
    for (std::size_t w : adj[v])
      if (comp[w] != comp[v]) leaves[comp[v]] = true;
  std::vector<std::vector<std::size_t>> out;
  std::vector<std::size_t> slot(nc, std::numeric_limits<std::size_t>::max());
  for (std::size_t v = 0; v < adj.size(); ++v) {
    if (leaves[comp[v]]) continue;
    if (slot[comp[v]] == std::numeric_limits<std::size_t>::max()) {
      slot[comp[v]] = out.size();
      out.emplace_back();
    }
    out[slot[comp[v]]].push_back(v);
  }
  return out;
}

/// Period of a strongly connected digraph via BFS levels.
inline std::size_t period(const std::vector<std::vector<std::size_t>>& adj) {
  const std::size_t N = adj.size();
  if (N == 0) return 0;
  std::vector<long long> level(N, -1);
  std::vector<std::size_t> queue{0};
  level[0] = 0;
  for (std::size_t q = 0; q < queue.size(); ++q) {
    const std::size_t v = queue[q];
    for (std::size_t w : adj[v])
      if (level[w] < 0) {
        level[w] = level[v] + 1;
        queue.push_back(w);
      }
  }
  long long g = 0;
  for (std::size_t v = 0; v < N; ++v)
    for (std::size_t w : adj[v])
      if (level[v] >= 0 && level[w] >= 0) g = std::gcd(g, std::llabs(level[v] + 1 - level[w]));
  return static_cast<std::size_t>(g);
}

}  // namespace detail

/// Exact kernel over A x E, restricted to the unique closed communicating
/// class of the product space. Mood rules have transient nodes (for example
/// a discontent agent whose payoff is 1 always turns content), which carry no
/// stationary mass.
/// eps = 0 is accepted here to build the unperturbed (best-response) limit.
inline KernelMatrix build_kernel(const LearningRuleSpec& rule, const NormalFormGame& g, double eps,
                                 std::size_t guard = kKernelNodeGuard) {
  rule.validate(g.n_agents());
  detail::check_normalized(rule, g);
  if (!(eps >= 0.0 && eps < 1.0)) throw std::invalid_argument("epsilon must lie in [0,1)");
  const NodeSpace space(rule, g, guard);
  const std::size_t N = space.size();

  std::vector<std::vector<KernelEntry>> rows(N);
  std::vector<std::size_t> stamp(N, std::numeric_limits<std::size_t>::max()), slot(N, 0);
  for (std::size_t u = 0; u < N; ++u) {
    const LearnerCell from = space.cell(u);
    auto& row = rows[u];
    for_each_transition(rule, g, from, eps, [&](const LearnerCell& to, double r, double p) {
      const auto v = space.index(to);
      if (!v) throw std::logic_error("transition leaves the enumerated node space");
      if (stamp[*v] != u) {
        stamp[*v] = u;
        slot[*v] = row.size();
        row.push_back({*v, 0.0, kInf});
      }
      auto& e = row[slot[*v]];
      e.probability += p;
      e.resistance = std::min(e.resistance, r);
    });
    std::sort(row.begin(), row.end(), [](const KernelEntry& a, const KernelEntry& b) { return a.to < b.to; });
  }

  KernelMatrix K;
  K.rule = rule;
  K.codec = g.codec();
  K.epsilon = eps;
  K.full_size = N;

  std::vector<std::vector<std::size_t>> adj(N);
  for (std::size_t u = 0; u < N; ++u)
    for (const auto& e : rows[u]) adj[u].push_back(e.to);
  auto classes = detail::closed_classes(adj);
  if (classes.size() != 1)
    throw std::domain_error(std::string(rule_name(rule.kind)) + " chain has " + std::to_string(classes.size()) +
                            " closed classes; it is not ergodic on this game");
  std::vector<std::size_t> keep = std::move(classes.front());
  std::sort(keep.begin(), keep.end());

  std::vector<std::size_t> remap(N, std::numeric_limits<std::size_t>::max());
  for (std::size_t k = 0; k < keep.size(); ++k) remap[keep[k]] = k;
  K.nodes.reserve(keep.size());
  K.rows.resize(keep.size());
  for (std::size_t k = 0; k < keep.size(); ++k) {
    K.nodes.push_back(space.cell(keep[k]));
    for (const auto& e : rows[keep[k]]) {
      if (remap[e.to] == std::numeric_limits<std::size_t>::max()) throw std::logic_error("closed class leaks");
      K.rows[k].push_back({remap[e.to], e.probability, e.resistance});
    }
  }
  return K;
}

inline KernelMatrix kernel_matrix(const LearningRuleSpec& rule, const NormalFormGame& g, Epsilon eps,
                                  std::size_t guard = kKernelNodeGuard) {
  return build_kernel(rule, g, eps.value(), guard);
}

/// Kernel of the eps -> 0 limit: only zero-resistance moves remain.
inline KernelMatrix unperturbed_kernel(const LearningRuleSpec& rule, const NormalFormGame& g,
                                       std::size_t guard = kKernelNodeGuard) {
  auto K = build_kernel(rule, g, 0.0, guard);
  for (auto& row : K.rows)
    row.erase(std::remove_if(row.begin(), row.end(), [](const KernelEntry& e) { return !(e.probability > 0.0); }),
              row.end());
  return K;
}

/// Strongly connected and aperiodic over the entries with positive
/// probability.
inline bool is_ergodic(const KernelMatrix& K) {
  std::vector<std::vector<std::size_t>> adj(K.size());
  for (std::size_t i = 0; i < K.size(); ++i)
    for (const auto& e : K.rows[i])
      if (e.probability > 0.0) adj[i].push_back(e.to);
  std::size_t nc = 0;
  detail::strongly_connected_components(adj, nc);
  return nc == 1 && detail::period(adj) == 1;
}

inline bool check_ergodicity(const LearningRuleSpec& rule, const NormalFormGame& g, Epsilon eps,
                             std::size_t guard = kKernelNodeGuard) {
  try {
    return is_ergodic(kernel_matrix(rule, g, eps, guard));
  } catch (const std::domain_error&) {
    return false;
  }
}

}  // namespace eqsel
