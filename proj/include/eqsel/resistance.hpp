#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "eqsel/arborescence.hpp"
#include "eqsel/csv.hpp"
#include "eqsel/learning_rules.hpp"
#include "eqsel/policy_eval.hpp"

namespace eqsel {

/// Digraph over (a, xi) nodes weighted by transition resistances. Edges of
/// infinite resistance and self-loops are absent.
struct ResistanceGraph {
  LearningRuleSpec rule;
  JointActionCodec codec;
  std::vector<LearnerCell> nodes;
  std::vector<WeightedEdge> edges;

  std::size_t size() const { return nodes.size(); }

  /// Adjacency restricted to zero-resistance edges.
  std::vector<std::vector<std::size_t>> zero_resistance_adjacency(double tol = 1e-12) const {
    std::vector<std::vector<std::size_t>> adj(size());
    for (const auto& e : edges)
      if (e.weight <= tol) adj[e.from].push_back(e.to);
    return adj;
  }
};

inline ResistanceGraph resistance_graph_from_kernel(const KernelMatrix& K) {
  ResistanceGraph G;
  G.rule = K.rule;
  G.codec = K.codec;
  G.nodes = K.nodes;
  for (std::size_t u = 0; u < K.size(); ++u)
    for (const auto& e : K.rows[u])
      if (e.to != u) G.edges.push_back({u, e.to, e.resistance});
  return G;
}

inline ResistanceGraph build_resistance_graph(const LearningRuleSpec& rule, const NormalFormGame& g,
                                              std::size_t guard = kKernelNodeGuard) {
  // Resistances do not depend on epsilon; any interior value builds the same
  // support.
  return resistance_graph_from_kernel(build_kernel(rule, g, 0.5, guard));
}

struct StochasticPotentialTable {
  std::vector<double> gamma;                 // +inf when the node is no tree root
  std::vector<std::optional<InTree>> trees;  // minimizing in-tree per node
  double min_gamma = kInf;
  std::vector<std::size_t> argmin;           // nodes within the tie tolerance of the minimum
};

inline constexpr double kGammaTieTol = 1e-9;

inline StochasticPotentialTable stochastic_potentials(const ResistanceGraph& G, double tie_tol = kGammaTieTol) {
  StochasticPotentialTable t;
  const std::size_t N = G.size();
  t.gamma.assign(N, kInf);
  t.trees.resize(N);
  for (std::size_t v = 0; v < N; ++v) {
    auto tree = min_arborescence(N, G.edges, v);
    if (tree) {
      t.gamma[v] = tree->cost;
      t.trees[v] = std::move(tree);
    }
  }
  for (double g : t.gamma) t.min_gamma = std::min(t.min_gamma, g);
  if (!(t.min_gamma < kInf)) throw std::domain_error("no node roots a finite-resistance spanning in-tree");
  for (std::size_t v = 0; v < N; ++v)
    if (t.gamma[v] <= t.min_gamma + tie_tol) t.argmin.push_back(v);
  return t;
}

struct SseResult {
  ResistanceGraph graph;
  StochasticPotentialTable table;
  std::vector<std::size_t> actions;  // sorted joint-action indices
};

/// Joint actions a* that carry some xi* with gamma(a*, xi*) = min gamma.
inline SseResult sse_set(const LearningRuleSpec& rule, const NormalFormGame& g, double tie_tol = kGammaTieTol,
                         std::size_t guard = kKernelNodeGuard) {
  SseResult r;
  r.graph = build_resistance_graph(rule, g, guard);
  r.table = stochastic_potentials(r.graph, tie_tol);
  std::set<std::size_t> acts;
  for (std::size_t v : r.table.argmin) acts.insert(r.graph.nodes[v].action);
  r.actions.assign(acts.begin(), acts.end());
  return r;
}

/// Lowest stochastic potential over the hidden states of each joint action.
inline std::vector<double> action_potentials(const ResistanceGraph& G, const StochasticPotentialTable& t) {
  std::vector<double> out(G.codec.size(), kInf);
  for (std::size_t v = 0; v < G.size(); ++v) out[G.nodes[v].action] = std::min(out[G.nodes[v].action], t.gamma[v]);
  return out;
}

// ---------------------------------------------------------------------------
// Selection statements on normal-form games

enum class SelectionTarget { potential_max, pareto, pareto_ne };

inline std::string_view target_name(SelectionTarget w) {
  switch (w) {
    case SelectionTarget::potential_max: return "potential_max";
    case SelectionTarget::pareto: return "pareto";
    case SelectionTarget::pareto_ne: return "pareto_ne";
  }
  return "?";
}

inline SelectionTarget parse_target(std::string_view s) {
  if (s == "potential_max") return SelectionTarget::potential_max;
  if (s == "pareto") return SelectionTarget::pareto;
  if (s == "pareto_ne") return SelectionTarget::pareto_ne;
  throw std::invalid_argument("unknown selection target '" + std::string(s) + "'");
}

/// Indices whose score lies within tol of the maximum over `candidates`.
inline std::vector<std::size_t> argmax_set(const std::vector<double>& score, const std::vector<std::size_t>& candidates,
                                           double tol = kGammaTieTol) {
  double best = -kInf;
  for (std::size_t a : candidates) best = std::max(best, score[a]);
  std::vector<std::size_t> out;
  for (std::size_t a : candidates)
    if (score[a] >= best - tol) out.push_back(a);
  std::sort(out.begin(), out.end());
  return out;
}

/// The set a selection statement predicts for a normal-form game. Throws
/// std::domain_error naming the failed precondition.
inline std::vector<std::size_t> selection_target(const NormalFormGame& g, SelectionTarget which) {
  std::vector<std::size_t> all(g.n_joint());
  for (std::size_t a = 0; a < all.size(); ++a) all[a] = a;
  std::vector<double> social(g.n_joint());
  for (std::size_t a = 0; a < g.n_joint(); ++a) social[a] = g.social(a);
  switch (which) {
    case SelectionTarget::potential_max: {
      const auto cert = verify_potential(g);
      if (!cert.exists) throw std::domain_error("precondition failed: game admits no exact potential");
      return argmax_set(cert.potential, all);
    }
    case SelectionTarget::pareto:
    case SelectionTarget::pareto_ne: {
      if (g.n_agents() >= 2 && !check_interdependence(g))
        throw std::domain_error("precondition failed: game is not interdependent");
      if (which == SelectionTarget::pareto) return argmax_set(social, all);
      const auto ne = pure_nash_equilibria(g, true);
      if (ne.empty()) throw std::domain_error("precondition failed: game has no strict pure Nash equilibrium");
      return argmax_set(social, ne);
    }
  }
  return {};
}

inline RuleKind natural_rule(SelectionTarget which) {
  switch (which) {
    case SelectionTarget::potential_max: return RuleKind::log_linear;
    case SelectionTarget::pareto: return RuleKind::marden_mood;
    case SelectionTarget::pareto_ne: return RuleKind::pradelski_young;
  }
  return RuleKind::log_linear;
}

struct CorollaryReport {
  SelectionTarget which = SelectionTarget::potential_max;
  bool equal = false;
  std::vector<std::size_t> sse;
  std::vector<std::size_t> target;
  std::string message;
};

inline std::string format_action_set(const JointActionCodec& codec, const std::vector<std::size_t>& s) {
  std::string out = "{";
  for (std::size_t k = 0; k < s.size(); ++k) {
    if (k) out += ", ";
    out += format_action_tuple(codec.decode(s[k]));
  }
  return out + "}";
}

/// Compares the SSE set of `rule` with the target set of `which`.
inline CorollaryReport validate_corollary(const LearningRuleSpec& rule, const NormalFormGame& g, SelectionTarget which) {
  CorollaryReport rep;
  rep.which = which;
  rep.target = selection_target(g, which);
  rep.sse = sse_set(rule, g).actions;
  rep.equal = rep.sse == rep.target;
  rep.message = std::string(rep.equal ? "equal" : "mismatch") + ": sse=" + format_action_set(g.codec(), rep.sse) +
                " target=" + format_action_set(g.codec(), rep.target);
  return rep;
}

// ---------------------------------------------------------------------------
// Export

inline void write_gamma_csv(std::ostream& os, const ResistanceGraph& G, const StochasticPotentialTable& t) {
  os << "node,action_tuple,hidden_desc,gamma,is_min\n";
  std::vector<bool> is_min(G.size(), false);
  for (std::size_t v : t.argmin) is_min[v] = true;
  for (std::size_t v = 0; v < G.size(); ++v)
    write_csv_row(os, {std::to_string(v), format_action_tuple(G.codec.decode(G.nodes[v].action)),
                       hidden_desc(G.rule, G.nodes[v]), t.gamma[v] < kInf ? format_double(t.gamma[v]) : "inf",
                       is_min[v] ? "1" : "0"});
}

inline void write_resistance_csv(std::ostream& os, const ResistanceGraph& G) {
  os << "src,dst,src_action,src_hidden,dst_action,dst_hidden,resistance\n";
  for (const auto& e : G.edges)
    write_csv_row(os, {std::to_string(e.from), std::to_string(e.to),
                       format_action_tuple(G.codec.decode(G.nodes[e.from].action)), hidden_desc(G.rule, G.nodes[e.from]),
                       format_action_tuple(G.codec.decode(G.nodes[e.to].action)), hidden_desc(G.rule, G.nodes[e.to]),
                       format_double(e.weight)});
}

/// Plain-text edge list, one `src_action src_hidden dst_action dst_hidden
/// weight` line per edge.
inline void write_edge_list(std::ostream& os, const ResistanceGraph& G) {
  for (const auto& e : G.edges)
    os << format_action_tuple(G.codec.decode(G.nodes[e.from].action)) << ' ' << hidden_desc(G.rule, G.nodes[e.from])
       << ' ' << format_action_tuple(G.codec.decode(G.nodes[e.to].action)) << ' ' << hidden_desc(G.rule, G.nodes[e.to])
       << ' ' << format_double(e.weight) << '\n';
}

}  // namespace eqsel
