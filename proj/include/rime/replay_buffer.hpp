#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include <json.hpp>

#include "rime/env.hpp"

namespace rime {

struct Minibatch {
  Mat s;        // state_dim x B
  Mat a;        // action_dim x B
  Mat s_next;   // state_dim x B
  Vec reward;   // B
  Vec not_terminal;  // B, 0 where bootstrapping stops
  std::vector<std::size_t> indices;

  Eigen::Index size() const { return reward.size(); }
};

/// Ring buffer of transitions. Stored rewards are rewritten in place on relabeling.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t capacity, int state_dim, int action_dim)
      : capacity_(capacity), state_dim_(state_dim), action_dim_(action_dim) {
    if (capacity == 0) throw std::invalid_argument("ReplayBuffer capacity must be positive");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
  }

  void add(Transition t) {
    if (t.s.size() != state_dim_ || t.s_next.size() != state_dim_ || t.a.size() != action_dim_)
      throw std::invalid_argument("ReplayBuffer::add: transition dimension mismatch");
    if (data_.size() < capacity_) {
      data_.push_back(std::move(t));
    } else {
      data_[head_] = std::move(t);
      head_ = (head_ + 1) % capacity_;
    }
  }

  std::size_t size() const { return data_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return data_.empty(); }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }

  /// i-th oldest transition.
  const Transition& at(std::size_t i) const { return data_[physical(i)]; }
  Transition& at(std::size_t i) { return data_[physical(i)]; }

  Minibatch sample(std::size_t batch_size, std::mt19937_64& rng) const {
    if (empty()) throw std::logic_error("ReplayBuffer::sample on empty buffer");
    std::uniform_int_distribution<std::size_t> pick(0, size() - 1);
    std::vector<std::size_t> idx(batch_size);
    for (auto& i : idx) i = pick(rng);
    return gather(idx);
  }

  Minibatch gather(const std::vector<std::size_t>& idx) const {
    const auto n = static_cast<Eigen::Index>(idx.size());
    Minibatch b;
    b.s.resize(state_dim_, n);
    b.a.resize(action_dim_, n);
    b.s_next.resize(state_dim_, n);
    b.reward.resize(n);
    b.not_terminal.resize(n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const Transition& t = at(idx[static_cast<std::size_t>(j)]);
      b.s.col(j) = t.s;
      b.a.col(j) = t.a;
      b.s_next.col(j) = t.s_next;
      b.reward[j] = t.reward;
      b.not_terminal[j] = t.terminal ? 0.0 : 1.0;
    }
    b.indices = idx;
    return b;
  }

  nlohmann::json to_json() const {
    nlohmann::json items = nlohmann::json::array();
    for (std::size_t i = 0; i < size(); ++i) items.push_back(rime::to_json(at(i)));
    return {{"capacity", capacity_}, {"state_dim", state_dim_}, {"action_dim", action_dim_}, {"transitions", items}};
  }

  static ReplayBuffer from_json(const nlohmann::json& j) {
    ReplayBuffer b(j.at("capacity"), j.at("state_dim"), j.at("action_dim"));
    for (const auto& t : j.at("transitions")) b.add(transition_from_json(t));
    return b;
  }

 private:
  std::size_t physical(std::size_t i) const {
    if (i >= data_.size()) throw std::out_of_range("ReplayBuffer index out of range");
    return data_.size() < capacity_ ? i : (head_ + i) % capacity_;
  }

  std::size_t capacity_;
  int state_dim_;
  int action_dim_;
  std::vector<Transition> data_;
  std::size_t head_ = 0;
};

}  // namespace rime
