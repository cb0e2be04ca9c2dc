#pragma once

// Unsupervised pre-training with a particle-based state-entropy bonus and the
// warm start of the reward model on the normalized bonus.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "rime/env.hpp"
#include "rime/replay_buffer.hpp"
#include "rime/reward_model.hpp"
#include "rime/sac.hpp"

namespace rime {

inline constexpr double kMinNeighborDistance = 1e-12;

/// ln of the Euclidean distance from s to its k-th nearest neighbour among the
/// columns of `archive`. The column at `self_index`, if given, is not a neighbour.
inline double intrinsic_reward(const Eigen::Ref<const Mat>& archive, const Vec& s, int k,
                               std::optional<Eigen::Index> self_index = std::nullopt) {
  if (k < 1) throw std::invalid_argument("intrinsic_reward: k must be positive");
  const Eigen::Index available = archive.cols() - (self_index ? 1 : 0);
  if (available < k) throw std::invalid_argument("intrinsic_reward: archive holds fewer than k neighbours");
  std::vector<double> d2;
  d2.reserve(static_cast<std::size_t>(archive.cols()));
  for (Eigen::Index j = 0; j < archive.cols(); ++j)
    if (!self_index || j != *self_index) d2.push_back((archive.col(j) - s).squaredNorm());
  std::nth_element(d2.begin(), d2.begin() + (k - 1), d2.end());
  return std::log(std::max(std::sqrt(d2[static_cast<std::size_t>(k - 1)]), kMinNeighborDistance));
}

/// clip((r - mean) / (3 std), -1 + delta, 1 - delta); 0 when std is 0.
inline double normalize_intrinsic(double r, double mean, double std_dev, double delta) {
  if (std_dev < 0.0) throw std::invalid_argument("normalize_intrinsic: negative standard deviation");
  if (std_dev == 0.0) return 0.0;
  return std::clamp((r - mean) / (3.0 * std_dev), -1.0 + delta, 1.0 - delta);
}

/// State archive plus running moments of every raw intrinsic reward computed so far.
class IntrinsicRewardState {
 public:
  IntrinsicRewardState(int state_dim, int k = 5, double delta = 1e-8)
      : state_dim_(state_dim), k_(k), delta_(delta), archive_(state_dim, 256) {
    if (k < 1) throw std::invalid_argument("IntrinsicRewardState: k must be positive");
  }

  int k() const { return k_; }
  double delta() const { return delta_; }
  Eigen::Index size() const { return count_; }
  Eigen::Ref<const Mat> archive() const { return archive_.leftCols(count_); }
  double mean() const { return mean_; }
  double std_dev() const { return n_ > 0 ? std::sqrt(m2_ / static_cast<double>(n_)) : 0.0; }

  Eigen::Index add_state(const Vec& s) {
    if (s.size() != state_dim_) throw std::invalid_argument("IntrinsicRewardState: state dimension mismatch");
    if (count_ == archive_.cols()) archive_.conservativeResize(Eigen::NoChange, 2 * archive_.cols());
    archive_.col(count_) = s;
    return count_++;
  }

  void observe(double raw) {
    ++n_;
    const double d = raw - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (raw - mean_);
  }

  /// Raw reward of archived state i, or nullopt while fewer than k neighbours exist.
  std::optional<double> raw_reward(Eigen::Index i) const {
    if (count_ - 1 < k_) return std::nullopt;
    return intrinsic_reward(archive(), archive_.col(i), k_, i);
  }

  double normalized(double raw) const { return normalize_intrinsic(raw, mean_, std_dev(), delta_); }

  /// Archives s, updates the running moments and returns the normalized reward.
  double push(const Vec& s) {
    const Eigen::Index i = add_state(s);
    const auto raw = raw_reward(i);
    if (!raw) return 0.0;
    observe(*raw);
    return normalized(*raw);
  }

  /// Normalized rewards of several archived states against the full archive.
  Vec normalized_targets(const std::vector<std::size_t>& indices) const {
    Vec out(static_cast<Eigen::Index>(indices.size()));
    for (std::size_t j = 0; j < indices.size(); ++j) {
      const auto raw = raw_reward(static_cast<Eigen::Index>(indices[j]));
      out[static_cast<Eigen::Index>(j)] = raw ? normalized(*raw) : 0.0;
    }
    return out;
  }

 private:
  int state_dim_;
  int k_;
  double delta_;
  Mat archive_;
  Eigen::Index count_ = 0;
  std::int64_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

/// Where the environment loop currently stands; carried from pre-training into online training.
struct Rollout {
  Vec state;
  std::int64_t episode = 0;
  double true_return = 0.0;
  bool started = false;
};

struct PretrainOptions {
  std::size_t steps = 2000;
  std::size_t random_steps = 500;  // uniform random actions, no updates
  bool warm_start = true;
  std::size_t reward_batch = 128;
};

struct PretrainStats {
  double last_warm_mse = 0.0;
  SacLosses last_sac;
};

/// Called after every environment step with the global step count and the transition
/// (whose reward field holds the normalized intrinsic reward).
using StepHook = std::function<void(std::size_t step, const Transition&, double true_reward)>;

/// Runs the pre-training loop: act, store the transition with its normalized
/// intrinsic reward, update SAC on stored rewards and, with warm start, take
/// one MSE step of the reward ensemble toward the normalized intrinsic reward.
inline PretrainStats pretrain_phase(SacAgent& agent, ContinuousEnv& env, RewardEnsemble& ens, ReplayBuffer& buffer,
                                    IntrinsicRewardState& intrinsic, Rollout& rollout, const PretrainOptions& opt,
                                    std::mt19937_64& rng, const StepHook& hook = {}) {
  if (buffer.size() + opt.steps > buffer.capacity())
    throw std::invalid_argument("pretrain_phase: replay capacity must cover the pre-training steps");
  if (static_cast<std::size_t>(intrinsic.size()) != buffer.size())
    throw std::logic_error("pretrain_phase: archive and buffer are out of step");
  PretrainStats stats;
  for (std::size_t step = 0; step < opt.steps; ++step) {
    if (!rollout.started) {
      rollout.state = env.reset();
      rollout.true_return = 0.0;
      rollout.started = true;
    }
    const Vec action = step < opt.random_steps ? agent.random_action() : agent.act(rollout.state, false);
    Transition tr = env.step(rollout.state, action);
    const double true_reward = tr.reward;
    tr.reward = intrinsic.push(tr.s);
    tr.episode = rollout.episode;
    rollout.true_return += true_reward;
    buffer.add(tr);
    if (hook) hook(step, tr, true_reward);
    if (tr.done) {
      ++rollout.episode;
      rollout.started = false;
    } else {
      rollout.state = tr.s_next;
    }

    if (step + 1 < opt.random_steps || buffer.size() < 2) continue;
    stats.last_sac = agent.update(buffer.sample(agent.config().batch_size, rng));
    if (opt.warm_start) {
      const Minibatch b = buffer.sample(opt.reward_batch, rng);
      const Vec targets = intrinsic.normalized_targets(b.indices);
      const LossResult l = ens.warm_mse_loss(b.s, b.a, targets);
      ens.apply(l);
      stats.last_warm_mse = l.loss / static_cast<double>(ens.size());
    }
  }
  return stats;
}

}  // namespace rime
