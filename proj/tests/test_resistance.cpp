#include <gtest/gtest.h>

#include <sstream>

#include "eqsel/random_games.hpp"
#include "eqsel/resistance.hpp"

using namespace eqsel;

namespace {

NormalFormGame coordination() { return NormalFormGame({2, 2}, {0.5, 0, 0, 1, 0.5, 0, 0, 1}); }

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

}  // namespace

TEST(ResistanceGraph, LogLinearEdgesAreBestResponseShortfalls) {
  const auto g = coordination();
  const auto G = build_resistance_graph(LearningRuleSpec::log_linear(), g);
  ASSERT_EQ(G.size(), 4u);
  for (const auto& e : G.edges) {
    const auto& c = g.codec();
    std::size_t mover = 0;
    for (std::size_t i = 0; i < 2; ++i)
      if (c.action_of(G.nodes[e.from].action, i) != c.action_of(G.nodes[e.to].action, i)) mover = i;
    const double best = std::max(g.payoff(mover, c.with_action(G.nodes[e.from].action, mover, 0)),
                                 g.payoff(mover, c.with_action(G.nodes[e.from].action, mover, 1)));
    EXPECT_DOUBLE_EQ(e.weight, best - g.payoff(mover, G.nodes[e.to].action));
  }
}

TEST(StochasticPotential, CoordinationGameSelectsPayoffDominantUnderLogLinear) {
  const auto r = sse_set(LearningRuleSpec::log_linear(), coordination());
  EXPECT_EQ(r.actions, (std::vector<std::size_t>{3}));
  const auto pot = action_potentials(r.graph, r.table);
  // Leaving (1,1) costs 1 for one agent; leaving (0,0) costs 0.5.
  EXPECT_DOUBLE_EQ(pot[0] - pot[3], 0.5);
}

TEST(Selection, LogLinearSelectsPotentialMaximizers) {
  Rng rng(100);
  for (int k = 0; k < 15; ++k) {
    const auto g = random_potential_game(k % 2 ? std::vector<int>{3, 3} : std::vector<int>{2, 2}, rng);
    const auto rep = validate_corollary(LearningRuleSpec::log_linear(), g, SelectionTarget::potential_max);
    EXPECT_TRUE(rep.equal) << rep.message;
  }
}

TEST(Selection, MardenSelectsWelfareMaximizers) {
  Rng rng(101);
  for (int k = 0; k < 10; ++k) {
    const auto g = random_interdependent_game({2, 2}, rng);
    const auto rep = validate_corollary(LearningRuleSpec::marden(), g, SelectionTarget::pareto);
    EXPECT_TRUE(rep.equal) << rep.message;
  }
}

TEST(Selection, PradelskiYoungSelectsWelfareMaximizingEquilibria) {
  Rng rng(102);
  int checked = 0;
  for (int k = 0; k < 10; ++k) {
    const auto g = random_interdependent_game({2, 2}, rng);
    if (pure_nash_equilibria(g, true).empty()) continue;
    ++checked;
    const auto rep = validate_corollary(LearningRuleSpec::pradelski_young(), g, SelectionTarget::pareto_ne);
    EXPECT_TRUE(rep.equal) << rep.message;
  }
  EXPECT_GT(checked, 0);
}

TEST(Selection, PreconditionsAreNamed) {
  const NormalFormGame mp({2, 2}, {1, 0, 0, 1, 0, 1, 1, 0});
  try {
    selection_target(mp, SelectionTarget::potential_max);
    FAIL();
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("no exact potential"), std::string::npos);
  }
  const NormalFormGame isolated({2, 2}, {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.5, 0.6});
  EXPECT_THROW(selection_target(isolated, SelectionTarget::pareto), std::domain_error);
  try {
    selection_target(mp, SelectionTarget::pareto_ne);
    FAIL();
  } catch (const std::domain_error& e) {
    EXPECT_NE(std::string(e.what()).find("strict pure Nash"), std::string::npos);
  }
  EXPECT_EQ(parse_target("pareto_ne"), SelectionTarget::pareto_ne);
  EXPECT_THROW(parse_target("risk_dominant"), std::invalid_argument);
  EXPECT_EQ(natural_rule(SelectionTarget::pareto), RuleKind::marden_mood);
}

TEST(Selection, MismatchIsReportedNotThrown) {
  // Stag hunt with Hare paying more against a Stag hunter: log-linear picks
  // the potential-maximizing Hare, the welfare target is Stag.
  const NormalFormGame sh({2, 2}, {1, 0, 0.7, 0.6, 1, 0.7, 0, 0.6});
  const auto rep = validate_corollary(LearningRuleSpec::log_linear(), sh, SelectionTarget::pareto);
  EXPECT_FALSE(rep.equal);
  EXPECT_EQ(rep.message.rfind("mismatch", 0), 0u) << rep.message;
}

TEST(Export, WritersEmitOneRowPerItem) {
  const auto r = sse_set(LearningRuleSpec::marden(), coordination());
  std::ostringstream gamma, res, edges;
  write_gamma_csv(gamma, r.graph, r.table);
  write_resistance_csv(res, r.graph);
  write_edge_list(edges, r.graph);
  EXPECT_EQ(count_lines(gamma.str()), r.graph.size() + 1);
  EXPECT_EQ(gamma.str().rfind("node,action_tuple,hidden_desc,gamma,is_min\n", 0), 0u);
  EXPECT_EQ(count_lines(res.str()), r.graph.edges.size() + 1);
  EXPECT_EQ(count_lines(edges.str()), r.graph.edges.size());
}
