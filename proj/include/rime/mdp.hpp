#pragma once

// Random finite MDPs and exact policy evaluation, used to certify the
// reward-error to Q-error bound numerically.

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>

#include "rime/nn.hpp"

namespace rime {

struct TabularMdp {
  int num_states = 0;
  int num_actions = 0;
  double gamma = 0.9;
  // transition(s * A + a, s') = P(s' | s, a)
  Mat transition;
  // reward(s, a)
  Mat reward;

  void validate() const {
    if (num_states < 1 || num_states > 64) throw std::invalid_argument("TabularMdp: num_states must be in [1, 64]");
    if (num_actions < 1 || num_actions > 8) throw std::invalid_argument("TabularMdp: num_actions must be in [1, 8]");
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("TabularMdp: gamma must lie in (0, 1)");
    if (transition.rows() != num_states * num_actions || transition.cols() != num_states)
      throw std::invalid_argument("TabularMdp: transition shape mismatch");
    for (Eigen::Index r = 0; r < transition.rows(); ++r)
      if (std::abs(transition.row(r).sum() - 1.0) > 1e-12 || (transition.row(r).array() < 0.0).any())
        throw std::invalid_argument("TabularMdp: transition rows must be probability vectors");
  }
};

/// Transitions are normalized Exp(1) draws (a flat Dirichlet), rewards U[0, 1].
inline TabularMdp random_mdp(std::uint64_t seed, int num_states, int num_actions, double gamma) {
  TabularMdp m;
  m.num_states = num_states;
  m.num_actions = num_actions;
  m.gamma = gamma;
  if (num_states < 1 || num_states > 64 || num_actions < 1 || num_actions > 8)
    throw std::invalid_argument("random_mdp: sizes out of range");
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  m.transition.resize(num_states * num_actions, num_states);
  for (Eigen::Index r = 0; r < m.transition.rows(); ++r) {
    for (int c = 0; c < num_states; ++c) m.transition(r, c) = expo(rng) + 1e-12;
    m.transition.row(r) /= m.transition.row(r).sum();
  }
  m.reward.resize(num_states, num_actions);
  for (int s = 0; s < num_states; ++s)
    for (int a = 0; a < num_actions; ++a) m.reward(s, a) = unit(rng);
  m.validate();
  return m;
}

/// Random stochastic policy, pi(s, a) rows summing to one.
inline Mat random_policy(std::uint64_t seed, int num_states, int num_actions) {
  std::mt19937_64 rng(seed);
  std::exponential_distribution<double> expo(1.0);
  Mat pi(num_states, num_actions);
  for (int s = 0; s < num_states; ++s) {
    for (int a = 0; a < num_actions; ++a) pi(s, a) = expo(rng) + 1e-12;
    pi.row(s) /= pi.row(s).sum();
  }
  return pi;
}

/// Solves Q = r + gamma * P * pi * Q exactly. Returns Q(s, a).
inline Mat policy_eval(const TabularMdp& mdp, const Mat& policy, const Mat& reward_table) {
  const int S = mdp.num_states, A = mdp.num_actions;
  if (policy.rows() != S || policy.cols() != A) throw std::invalid_argument("policy_eval: policy shape mismatch");
  if (reward_table.rows() != S || reward_table.cols() != A)
    throw std::invalid_argument("policy_eval: reward shape mismatch");
  for (int s = 0; s < S; ++s)
    if (std::abs(policy.row(s).sum() - 1.0) > 1e-9) throw std::invalid_argument("policy_eval: policy rows must sum to 1");

  const int n = S * A;
  // M((s,a), (s',a')) = P(s'|s,a) * pi(a'|s')
  Mat system = Mat::Identity(n, n);
  for (int sa = 0; sa < n; ++sa)
    for (int s2 = 0; s2 < S; ++s2)
      for (int a2 = 0; a2 < A; ++a2)
        system(sa, s2 * A + a2) -= mdp.gamma * mdp.transition(sa, s2) * policy(s2, a2);

  Vec r(n);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) r[s * A + a] = reward_table(s, a);

  Eigen::PartialPivLU<Mat> lu(system);
  Vec q = lu.solve(r);
  const double residual = (system * q - r).cwiseAbs().maxCoeff();
  if (!(residual <= 1e-10 * std::max(1.0, q.cwiseAbs().maxCoeff())))
    throw std::runtime_error("policy_eval: linear solve residual too large");

  Mat out(S, A);
  for (int s = 0; s < S; ++s)
    for (int a = 0; a < A; ++a) out(s, a) = q[s * A + a];
  return out;
}

}  // namespace rime
