#include <gtest/gtest.h>

#include "eqsel/game_io.hpp"
#include "eqsel/game_model.hpp"

using namespace eqsel;

TEST(JointActionCodec, RoundTripsEveryIndex) {
  const JointActionCodec codec({2, 3, 4});
  ASSERT_EQ(codec.size(), 24u);
  for (std::size_t a = 0; a < codec.size(); ++a) {
    const auto t = codec.decode(a);
    EXPECT_EQ(codec.encode(t), a);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(codec.action_of(a, i), t[i]);
  }
}

TEST(JointActionCodec, WithActionChangesOneCoordinate) {
  const JointActionCodec codec({3, 3});
  const auto a = codec.encode(std::vector<int>{2, 1});
  const auto b = codec.with_action(a, 0, 0);
  EXPECT_EQ(codec.decode(b), (ActionTuple{0, 1}));
  EXPECT_EQ(format_action_tuple(codec.decode(b)), "(0,1)");
}

TEST(JointActionCodec, RejectsOutOfRangeActions) {
  const JointActionCodec codec({2, 2});
  EXPECT_THROW(codec.encode(std::vector<int>{2, 0}), std::out_of_range);
  EXPECT_THROW(codec.encode(std::vector<int>{0}), std::invalid_argument);
}

TEST(NormalFormGame, AgentMajorPayoffs) {
  const NormalFormGame g({2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  EXPECT_DOUBLE_EQ(g.payoff(0, 3), 4);
  EXPECT_DOUBLE_EQ(g.payoff(1, 0), 5);
  EXPECT_DOUBLE_EQ(g.social(1), 2 + 6);
  EXPECT_THROW(NormalFormGame({2, 2}, {1, 2, 3}), std::invalid_argument);
}

TEST(NormalFormGame, AssignPayoffsKeepsShape) {
  NormalFormGame g({2, 2}, std::vector<double>(8, 0.0));
  const std::vector<double> p{1, 1, 1, 1, 0, 0, 0, 0};
  g.assign_payoffs(p);
  EXPECT_DOUBLE_EQ(g.payoff(0, 2), 1.0);
  EXPECT_THROW(g.assign_payoffs(std::vector<double>(3, 0.0)), std::invalid_argument);
}

TEST(TreasureDig, MatchesItsDefinition) {
  const auto g = treasure_dig_game();
  EXPECT_TRUE(validate_game(g).ok());
  ASSERT_EQ(g.horizon(), 2);
  ASSERT_EQ(g.n_states(), 4u);
  const auto init = *g.state_index("init"), A = *g.state_index("A"), O = *g.state_index("O"), B = *g.state_index("B");
  const auto& c = g.codec();
  const auto a00 = c.encode(std::vector<int>{0, 0}), a11 = c.encode(std::vector<int>{1, 1}),
             a01 = c.encode(std::vector<int>{0, 1});
  EXPECT_DOUBLE_EQ(g.transition(0, init, a00, A), 1.0);
  EXPECT_DOUBLE_EQ(g.transition(0, init, a11, B), 1.0);
  EXPECT_DOUBLE_EQ(g.transition(0, init, a01, O), 1.0);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_DOUBLE_EQ(g.reward(i, 0, init, a00), 1.0);
    EXPECT_DOUBLE_EQ(g.reward(i, 0, init, a11), 0.0);
    EXPECT_DOUBLE_EQ(g.reward(i, 1, A, a00), 0.5);
    EXPECT_DOUBLE_EQ(g.reward(i, 1, O, a00), 1.0);
    EXPECT_DOUBLE_EQ(g.reward(i, 1, B, a00), 1.0);
    EXPECT_DOUBLE_EQ(g.reward(i, 1, B, a11), 2.0);
  }
  EXPECT_TRUE(g.is_identical_interest());
  EXPECT_TRUE(g.allow_unnormalized());
}

TEST(StagHunt, HareTableAndStagPayoff) {
  for (double stag : {3.75, 0.5}) {
    const auto g = stag_hunt_game(stag);
    EXPECT_TRUE(validate_game(g).ok());
    const auto init = *g.state_index("init"), A = *g.state_index("A"), B = *g.state_index("B");
    const auto& c = g.codec();
    const auto a00 = c.encode(std::vector<int>{0, 0}), a10 = c.encode(std::vector<int>{1, 0});
    EXPECT_DOUBLE_EQ(g.reward(0, 1, A, a00), stag);
    EXPECT_DOUBLE_EQ(g.reward(0, 0, init, a10), 2.0);
    EXPECT_DOUBLE_EQ(g.reward(1, 1, B, a10), 0.0);
    EXPECT_DOUBLE_EQ(g.transition(0, init, a00, A), 1.0);
    EXPECT_DOUBLE_EQ(g.transition(0, init, a10, B), 1.0);
  }
  EXPECT_DOUBLE_EQ(builtin_game("stag_hunt").max_reward(), 3.75);
  EXPECT_DOUBLE_EQ(builtin_game("stag_hunt_table").max_reward(), 2.0);
  EXPECT_THROW(builtin_game("nope"), std::invalid_argument);
}

TEST(Validation, ReportsEveryBrokenRowWithCoordinates) {
  const auto good = treasure_dig_game();
  auto trans = good.transitions();
  trans[good.transition_index(0, 0, 1, 2)] = 0.5;  // row (stage 1, init, (0,1)) now sums to 0.5
  trans[good.transition_index(1, 3, 0, 3)] = -1.0;
  auto rewards = good.rewards();
  rewards[good.reward_index(0, 1, 1, 0)] = std::nan("");
  const StochasticGame bad(2, 2, good.state_names(), good.action_counts(), rewards, trans, {0.5, 0.0, 0.0, 0.0});
  const auto rep = validate_game(bad);
  ASSERT_FALSE(rep.ok());
  const auto text = rep.to_string();
  EXPECT_NE(text.find("transitions[stage=1,state=init,action=(0,1)]"), std::string::npos) << text;
  EXPECT_NE(text.find("nonnegative"), std::string::npos);
  EXPECT_NE(text.find("not finite"), std::string::npos);
  EXPECT_NE(text.find("rho"), std::string::npos);
  EXPECT_NE(text.find("outside [0,1]"), std::string::npos);  // reward 2 at B without allow_unnormalized
  EXPECT_THROW(require_valid(bad), std::invalid_argument);
}

TEST(Policy, DeterministicAndStochasticAccessors) {
  const auto g = treasure_dig_game();
  const auto pi = Policy::constant(g, 3);
  EXPECT_TRUE(pi.is_deterministic());
  EXPECT_EQ(pi.action(1, 2), 3u);
  EXPECT_DOUBLE_EQ(pi.prob(0, 0, 3), 1.0);
  EXPECT_TRUE(validate_policy(g, pi).ok());
  std::vector<double> p(2 * 4 * 4, 0.25);
  const Policy mix(Policy::Kind::stochastic, 2, 4, 4, p);
  EXPECT_FALSE(mix.is_deterministic());
  EXPECT_THROW(mix.action(0, 0), std::logic_error);
  p[0] = 0.5;
  EXPECT_FALSE(validate_policy(g, Policy(Policy::Kind::stochastic, 2, 4, 4, p)).ok());
}

TEST(Reachability, FollowsPositiveTransitionsFromRho) {
  const auto g = treasure_dig_game();
  const auto r = reachable_states(g);
  EXPECT_EQ(r[0], (std::vector<bool>{true, false, false, false}));
  EXPECT_EQ(r[1], (std::vector<bool>{false, true, true, true}));
}

TEST(StageGame, ExtractsRewardSlice) {
  const auto g = treasure_dig_game();
  const auto nfg = stage_game(g, 1, *g.state_index("B"));
  EXPECT_DOUBLE_EQ(nfg.payoff(0, 3), 2.0);
  EXPECT_DOUBLE_EQ(nfg.payoff(1, 0), 1.0);
}

TEST(GameIo, RoundTripsBuiltins) {
  for (const auto& name : builtin_game_names()) {
    GameConfig c{name, "d", {"t"}, builtin_game(name)};
    const auto back = config_from_json(json::parse(config_to_json(c).dump()));
    EXPECT_EQ(back, c) << name;
  }
}

TEST(GameIo, DiagnosticsNameTheField) {
  auto j = game_to_json(treasure_dig_game());
  j["transitions"].erase(j["transitions"].begin());
  try {
    game_from_json(j);
    FAIL() << "missing row accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "game.transitions");
    EXPECT_NE(std::string(e.what()).find("missing row for stage 1, state init"), std::string::npos) << e.what();
  }
  auto k = game_to_json(treasure_dig_game());
  k["rewards"][0]["state"] = "nowhere";
  try {
    game_from_json(k);
    FAIL() << "unknown state accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "game.rewards[0].state");
  }
  auto m = game_to_json(treasure_dig_game());
  m.erase("rho");
  EXPECT_THROW(game_from_json(m), ConfigError);
}
