#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace eqsel {

using ActionTuple = std::vector<int>;

/// Row-major codec between per-agent action tuples and flat joint-action
/// indices. Agent 0 is the slowest-varying coordinate.
class JointActionCodec {
 public:
  JointActionCodec() = default;

  explicit JointActionCodec(std::vector<int> action_counts) : counts_(std::move(action_counts)) {
    if (counts_.empty()) throw std::invalid_argument("joint action codec needs at least one agent");
    strides_.assign(counts_.size(), 1);
    size_ = 1;
    for (std::size_t i = counts_.size(); i-- > 0;) {
      if (counts_[i] <= 0) throw std::invalid_argument("action counts must be positive");
      strides_[i] = size_;
      size_ *= static_cast<std::size_t>(counts_[i]);
    }
  }

  std::size_t n_agents() const { return counts_.size(); }
  std::size_t size() const { return size_; }
  const std::vector<int>& counts() const { return counts_; }
  int count(std::size_t agent) const { return counts_[agent]; }
  std::size_t stride(std::size_t agent) const { return strides_[agent]; }

  std::size_t encode(std::span<const int> actions) const {
    if (actions.size() != counts_.size()) throw std::invalid_argument("action tuple has wrong length");
    std::size_t idx = 0;
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      if (actions[i] < 0 || actions[i] >= counts_[i])
        throw std::out_of_range("action " + std::to_string(actions[i]) + " out of range for agent " +
                                std::to_string(i));
      idx += static_cast<std::size_t>(actions[i]) * strides_[i];
    }
    return idx;
  }

  ActionTuple decode(std::size_t index) const {
    if (index >= size_) throw std::out_of_range("joint action index out of range");
    ActionTuple a(counts_.size());
    for (std::size_t i = 0; i < counts_.size(); ++i) {
      a[i] = static_cast<int>(index / strides_[i]);
      index %= strides_[i];
    }
    return a;
  }

  int action_of(std::size_t index, std::size_t agent) const {
    return static_cast<int>((index / strides_[agent]) % static_cast<std::size_t>(counts_[agent]));
  }

  /// Index of the joint action obtained by replacing agent's action.
  std::size_t with_action(std::size_t index, std::size_t agent, int action) const {
    const int cur = action_of(index, agent);
    return index + (static_cast<std::size_t>(action) * strides_[agent]) -
           (static_cast<std::size_t>(cur) * strides_[agent]);
  }

  bool operator==(const JointActionCodec& other) const { return counts_ == other.counts_; }

 private:
  std::vector<int> counts_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
};

inline std::string format_action_tuple(std::span<const int> a) {
  std::string out = "(";
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(a[i]);
  }
  out += ')';
  return out;
}

}  // namespace eqsel
