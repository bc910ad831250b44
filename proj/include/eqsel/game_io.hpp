#pragma once

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "eqsel/game_model.hpp"

namespace eqsel {

using json = nlohmann::json;

/// Raised for malformed documents; `path()` names the offending field.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::runtime_error(path + ": " + message), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

struct GameConfig {
  std::string name;
  std::string description;
  std::vector<std::string> tags;
  StochasticGame game;

  bool operator==(const GameConfig&) const = default;
};

namespace detail {

inline const json& require_field(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError(path + "." + key, "missing required field");
  return *it;
}

template <typename T>
T get_as(const json& j, const std::string& path) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path, std::string("wrong type (") + e.what() + ")");
  }
}

inline std::size_t parse_state(const json& j, const std::vector<std::string>& names, const std::string& path) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    for (std::size_t k = 0; k < names.size(); ++k)
      if (names[k] == s) return k;
    throw ConfigError(path, "unknown state '" + s + "'");
  }
  if (j.is_number_integer()) {
    const auto k = j.get<long long>();
    if (k < 0 || static_cast<std::size_t>(k) >= names.size()) throw ConfigError(path, "state index out of range");
    return static_cast<std::size_t>(k);
  }
  throw ConfigError(path, "state must be a name or an index");
}

inline int parse_stage(const json& j, int horizon, const std::string& path) {
  const int h = get_as<int>(j, path);
  if (h < 1 || h > horizon) throw ConfigError(path, "stage must lie in [1, horizon]");
  return h - 1;
}

inline std::size_t parse_action(const json& j, const JointActionCodec& codec, const std::string& path) {
  const auto a = get_as<std::vector<int>>(j, path);
  try {
    return codec.encode(a);
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
}

}  // namespace detail

/// Decodes the `game` part of a config document. Omitted reward entries
/// default to zero; every (stage, state, action) transition row must be given.
inline StochasticGame game_from_json(const json& j, const std::string& path = "game") {
  using detail::get_as;
  using detail::require_field;
  const auto n_agents = get_as<std::size_t>(require_field(j, "n_agents", path), path + ".n_agents");
  const int horizon = get_as<int>(require_field(j, "horizon", path), path + ".horizon");
  const auto states = get_as<std::vector<std::string>>(require_field(j, "states", path), path + ".states");
  const auto counts = get_as<std::vector<int>>(require_field(j, "action_counts", path), path + ".action_counts");
  if (n_agents == 0) throw ConfigError(path + ".n_agents", "must be positive");
  if (horizon <= 0) throw ConfigError(path + ".horizon", "must be positive");
  if (states.empty()) throw ConfigError(path + ".states", "must be nonempty");
  if (counts.size() != n_agents) throw ConfigError(path + ".action_counts", "length must equal n_agents");
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (counts[i] <= 0) throw ConfigError(path + ".action_counts[" + std::to_string(i) + "]", "must be positive");

  const JointActionCodec codec(counts);
  const std::size_t S = states.size(), A = codec.size(), H = static_cast<std::size_t>(horizon);
  std::vector<double> rewards(n_agents * H * S * A, 0.0);
  std::vector<double> transitions(H * S * A * S, 0.0);
  std::vector<bool> row_seen(H * S * A, false);

  if (auto it = j.find("rewards"); it != j.end()) {
    if (!it->is_array()) throw ConfigError(path + ".rewards", "expected an array");
    for (std::size_t k = 0; k < it->size(); ++k) {
      const auto& e = (*it)[k];
      const std::string p = path + ".rewards[" + std::to_string(k) + "]";
      const auto agent = get_as<std::size_t>(require_field(e, "agent", p), p + ".agent");
      if (agent >= n_agents) throw ConfigError(p + ".agent", "agent out of range");
      const int h = detail::parse_stage(require_field(e, "stage", p), horizon, p + ".stage");
      const auto s = detail::parse_state(require_field(e, "state", p), states, p + ".state");
      const auto a = detail::parse_action(require_field(e, "action", p), codec, p + ".action");
      const double v = get_as<double>(require_field(e, "value", p), p + ".value");
      rewards[((agent * H + static_cast<std::size_t>(h)) * S + s) * A + a] = v;
    }
  }

  const auto& tr = require_field(j, "transitions", path);
  if (!tr.is_array()) throw ConfigError(path + ".transitions", "expected an array");
  for (std::size_t k = 0; k < tr.size(); ++k) {
    const auto& e = tr[k];
    const std::string p = path + ".transitions[" + std::to_string(k) + "]";
    const int h = detail::parse_stage(require_field(e, "stage", p), horizon, p + ".stage");
    const auto s = detail::parse_state(require_field(e, "state", p), states, p + ".state");
    const auto a = detail::parse_action(require_field(e, "action", p), codec, p + ".action");
    const auto& next = require_field(e, "next", p);
    if (!next.is_object()) throw ConfigError(p + ".next", "expected an object mapping state to probability");
    const std::size_t row = (static_cast<std::size_t>(h) * S + s) * A + a;
    if (row_seen[row]) throw ConfigError(p, "duplicate transition row");
    row_seen[row] = true;
    for (auto nit = next.begin(); nit != next.end(); ++nit) {
      const std::string np = p + ".next." + nit.key();
      const auto n = detail::parse_state(json(nit.key()), states, np);
      transitions[row * S + n] = get_as<double>(nit.value(), np);
    }
  }
  for (std::size_t row = 0; row < row_seen.size(); ++row)
    if (!row_seen[row]) {
      const std::size_t a = row % A, s = (row / A) % S, h = row / (A * S);
      throw ConfigError(path + ".transitions", "missing row for stage " + std::to_string(h + 1) + ", state " +
                                                   states[s] + ", action " + format_action_tuple(codec.decode(a)));
    }

  const auto rho = get_as<std::vector<double>>(require_field(j, "rho", path), path + ".rho");
  if (rho.size() != S) throw ConfigError(path + ".rho", "length must equal number of states");
  bool allow = false;
  if (auto it = j.find("allow_unnormalized"); it != j.end()) allow = get_as<bool>(*it, path + ".allow_unnormalized");
  return StochasticGame(n_agents, horizon, states, counts, std::move(rewards), std::move(transitions), rho, allow);
}

inline json game_to_json(const StochasticGame& g) {
  json j;
  j["n_agents"] = g.n_agents();
  j["horizon"] = g.horizon();
  j["states"] = g.state_names();
  j["action_counts"] = g.action_counts();
  const auto& codec = g.codec();
  json rewards = json::array();
  for (std::size_t i = 0; i < g.n_agents(); ++i)
    for (int h = 0; h < g.horizon(); ++h)
      for (std::size_t s = 0; s < g.n_states(); ++s)
        for (std::size_t a = 0; a < g.n_joint(); ++a) {
          const double v = g.reward(i, h, s, a);
          if (v == 0.0 && !std::signbit(v)) continue;
          rewards.push_back({{"agent", i}, {"stage", h + 1}, {"state", g.state_names()[s]},
                             {"action", codec.decode(a)}, {"value", v}});
        }
  j["rewards"] = std::move(rewards);
  json transitions = json::array();
  for (int h = 0; h < g.horizon(); ++h)
    for (std::size_t s = 0; s < g.n_states(); ++s)
      for (std::size_t a = 0; a < g.n_joint(); ++a) {
        json next = json::object();
        for (std::size_t n = 0; n < g.n_states(); ++n) {
          const double p = g.transition(h, s, a, n);
          if (p != 0.0 || std::signbit(p)) next[g.state_names()[n]] = p;
        }
        transitions.push_back(
            {{"stage", h + 1}, {"state", g.state_names()[s]}, {"action", codec.decode(a)}, {"next", std::move(next)}});
      }
  j["transitions"] = std::move(transitions);
  j["rho"] = g.initial_distribution();
  j["allow_unnormalized"] = g.allow_unnormalized();
  return j;
}

inline json config_to_json(const GameConfig& c) {
  json j = game_to_json(c.game);
  j["name"] = c.name;
  j["description"] = c.description;
  j["tags"] = c.tags;
  return j;
}

inline GameConfig config_from_json(const json& j, const std::string& path = "game") {
  GameConfig c;
  if (auto it = j.find("name"); it != j.end()) c.name = detail::get_as<std::string>(*it, path + ".name");
  if (auto it = j.find("description"); it != j.end())
    c.description = detail::get_as<std::string>(*it, path + ".description");
  if (auto it = j.find("tags"); it != j.end()) c.tags = detail::get_as<std::vector<std::string>>(*it, path + ".tags");
  c.game = game_from_json(j, path);
  return c;
}

inline json read_json_file(const std::string& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError(file, "cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(file, std::string("parse error: ") + e.what());
  }
}

}  // namespace eqsel
