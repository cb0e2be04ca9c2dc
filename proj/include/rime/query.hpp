#pragma once

// Segment-pair generation from the replay buffer and disagreement-based selection.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include "rime/log.hpp"
#include "rime/replay_buffer.hpp"
#include "rime/reward_model.hpp"

namespace rime {

struct QuerySchedule {
  int total_budget = 200;
  int per_session = 20;
  int session_interval_steps = 1000;
  int candidate_pool_size = 200;  // default 10x per_session

  void validate() const {
    if (per_session <= 0 || total_budget <= 0) throw std::invalid_argument("query budgets must be positive");
    if (per_session > total_budget) throw std::invalid_argument("per-session budget exceeds the total budget");
    if (session_interval_steps <= 0) throw std::invalid_argument("session interval must be positive");
    if (candidate_pool_size < per_session) throw std::invalid_argument("candidate pool smaller than a session");
  }
};

using SegmentPair = std::pair<Segment, Segment>;

/// Buffer indices i such that [i, i + H) are consecutive steps of one episode.
inline std::vector<std::size_t> segment_starts(const ReplayBuffer& buffer, std::size_t H) {
  std::vector<std::size_t> starts;
  if (H == 0 || buffer.size() < H) return starts;
  std::size_t run = 1;  // length of the consecutive same-episode run ending at i
  for (std::size_t i = 0; i < buffer.size(); ++i) {
    if (i > 0) {
      const Transition& prev = buffer.at(i - 1);
      const Transition& cur = buffer.at(i);
      run = (cur.episode == prev.episode && cur.step == prev.step + 1) ? run + 1 : 1;
    }
    if (run >= H) starts.push_back(i + 1 - H);
  }
  return starts;
}

inline Segment extract_segment(const ReplayBuffer& buffer, std::size_t start, std::size_t H) {
  Segment seg;
  seg.states.resize(buffer.state_dim(), static_cast<Eigen::Index>(H));
  seg.actions.resize(buffer.action_dim(), static_cast<Eigen::Index>(H));
  for (std::size_t t = 0; t < H; ++t) {
    const Transition& tr = buffer.at(start + t);
    seg.states.col(static_cast<Eigen::Index>(t)) = tr.s;
    seg.actions.col(static_cast<Eigen::Index>(t)) = tr.a;
  }
  seg.episode = buffer.at(start).episode;
  seg.start = start;
  return seg;
}

/// n candidate pairs, each segment an independent uniform draw over valid
/// windows. Windows never cross an episode boundary.
inline std::vector<SegmentPair> sample_segment_pairs(const ReplayBuffer& buffer, std::size_t n, std::size_t H,
                                                     std::mt19937_64& rng) {
  const auto starts = segment_starts(buffer, H);
  std::vector<SegmentPair> out;
  if (starts.empty()) {
    log_warn("sample_segment_pairs: no complete window of length " + std::to_string(H) + " in the buffer");
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick(0, starts.size() - 1);
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t a = starts[pick(rng)];
    const std::size_t b = starts[pick(rng)];
    out.emplace_back(extract_segment(buffer, a, H), extract_segment(buffer, b, H));
  }
  return out;
}

/// Standard deviation across members of P[seg0 > seg1] for every candidate.
inline std::vector<double> disagreement_scores(const RewardEnsemble& ens, const std::vector<SegmentPair>& candidates) {
  std::vector<PreferenceTriple> tmp;
  tmp.reserve(candidates.size());
  for (const auto& [a, b] : candidates) tmp.push_back({a, b, PreferenceLabel::equal(), 0, std::nullopt});
  const Mat p = ens.member_probs(RewardEnsemble::pointers(tmp));
  std::vector<double> scores(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    // population variance as sum_{a<b} (p_a - p_b)^2 / m^2, exactly 0 for identical members
    const auto col = p.col(static_cast<Eigen::Index>(i));
    double ss = 0.0;
    for (Eigen::Index a = 0; a < col.size(); ++a)
      for (Eigen::Index b = a + 1; b < col.size(); ++b) ss += (col[a] - col[b]) * (col[a] - col[b]);
    scores[i] = std::sqrt(ss) / static_cast<double>(col.size());
  }
  return scores;
}

/// Candidate indices ordered by descending disagreement, ties by index.
inline std::vector<std::size_t> disagreement_order(const RewardEnsemble& ens, const std::vector<SegmentPair>& candidates) {
  if (ens.size() < 2) log_warn("disagreement_select: single-member ensemble, falling back to candidate order");
  const auto scores = disagreement_scores(ens, candidates);
  std::vector<std::size_t> order(candidates.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

/// Indices of the m candidates with the highest disagreement.
inline std::vector<std::size_t> disagreement_select(const RewardEnsemble& ens, const std::vector<SegmentPair>& candidates,
                                                    std::size_t m) {
  if (m > candidates.size()) throw std::invalid_argument("disagreement_select: m exceeds the candidate count");
  auto order = disagreement_order(ens, candidates);
  order.resize(m);
  return order;
}

}  // namespace rime
