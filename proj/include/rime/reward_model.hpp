#pragma once

// Ensemble reward model with Bradley-Terry preference prediction.
//
// Every preference loss in this library is a function of the per-member
// logit z = R(seg0) - R(seg1), where R sums the predicted per-step reward
// over a segment, so P[seg0 > seg1] = sigmoid(z). Loss functors supply
// (loss, d loss / d z) per sample; backpropagation to the network is shared.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rime/nn.hpp"
#include "rime/replay_buffer.hpp"

namespace rime {

inline constexpr double kProbClamp = 1e-7;

struct Segment {
  Mat states;   // state_dim x H, one column per step
  Mat actions;  // action_dim x H
  std::int64_t episode = -1;
  std::size_t start = 0;  // buffer index of the first step

  Eigen::Index length() const { return states.cols(); }
};

struct PreferenceLabel {
  double y0 = 0.5;
  double y1 = 0.5;

  static PreferenceLabel left() { return {1.0, 0.0}; }
  static PreferenceLabel right() { return {0.0, 1.0}; }
  static PreferenceLabel equal() { return {0.5, 0.5}; }

  PreferenceLabel flipped() const { return {y1, y0}; }
  bool is_equal() const { return y0 == 0.5; }
  bool operator==(const PreferenceLabel&) const = default;

  void validate() const {
    const bool ok = (y0 == 1.0 && y1 == 0.0) || (y0 == 0.0 && y1 == 1.0) || (y0 == 0.5 && y1 == 0.5);
    if (!ok) throw std::invalid_argument("preference label must be (1,0), (0,1) or (0.5,0.5)");
  }
};

struct PreferenceTriple {
  Segment seg0;
  Segment seg1;
  PreferenceLabel label;
  int session = 0;
  std::optional<PreferenceLabel> true_label;  // evaluation only; never read by training code
};

using PreferenceDataset = std::vector<PreferenceTriple>;

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double clamped_log(double p) { return std::log(std::clamp(p, kProbClamp, 1.0 - kProbClamp)); }
inline bool in_clamp_range(double p) { return p >= kProbClamp && p <= 1.0 - kProbClamp; }

/// Cross-entropy  -[y0 ln P0 + y1 ln P1]  with clamped probabilities.
inline double cross_entropy(double p0, const PreferenceLabel& y) {
  return -(y.y0 * clamped_log(p0) + y.y1 * clamped_log(1.0 - p0));
}

/// KL(y || P) with 0 ln 0 = 0.
inline double kl_divergence(double p0, const PreferenceLabel& y) {
  double kl = 0.0;
  if (y.y0 > 0.0) kl += y.y0 * (std::log(y.y0) - clamped_log(p0));
  if (y.y1 > 0.0) kl += y.y1 * (std::log(y.y1) - clamped_log(1.0 - p0));
  return std::max(kl, 0.0);
}

/// Per-sample loss on the logit: returns loss, writes d loss / d z.
using LogitLoss = std::function<double(double z, const PreferenceLabel& y, double* dz)>;

inline double ce_logit_loss(double z, const PreferenceLabel& y, double* dz) {
  const double p0 = sigmoid(z), p1 = 1.0 - p0;
  if (dz) {
    // d/dz ln P0 = P1, d/dz ln P1 = -P0; clamped branches contribute nothing
    *dz = -(y.y0 * (in_clamp_range(p0) ? p1 : 0.0)) + y.y1 * (in_clamp_range(p1) ? p0 : 0.0);
  }
  return -(y.y0 * clamped_log(p0) + y.y1 * clamped_log(p1));
}

enum class EnsembleKl { mean_prob, mean_kl };

struct RewardModelConfig {
  int ensemble_size = 3;
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::relu;
  double lr = 3e-4;
  EnsembleKl kl_mode = EnsembleKl::mean_prob;
};

struct KlStats {
  std::vector<double> per_member;
  double mean_prob_kl = 0.0;  // KL against the mean member probability
  double mean_kl = 0.0;       // mean of member KLs
  double value(EnsembleKl mode) const { return mode == EnsembleKl::mean_prob ? mean_prob_kl : mean_kl; }
};

struct LossResult {
  double loss = 0.0;             // summed over members, each member a batch mean
  std::vector<double> member_loss;
  std::vector<Vec> grads;        // one per member
  std::size_t clamped = 0;       // probabilities that hit the log clamp
};

class RewardEnsemble {
 public:
  RewardEnsemble() = default;

  RewardEnsemble(int state_dim, int action_dim, RewardModelConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), state_dim_(state_dim), action_dim_(action_dim), seed_(seed) {
    if (cfg_.ensemble_size < 1) throw std::invalid_argument("RewardEnsemble needs at least one member");
    std::vector<int> d{state_dim + action_dim};
    d.insert(d.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    d.push_back(1);
    for (int m = 0; m < cfg_.ensemble_size; ++m) {
      members_.emplace_back(d, cfg_.activation, OutputActivation::tanh, seed * 1000003ULL + static_cast<std::uint64_t>(m));
      opts_.emplace_back(members_.back().num_params(), AdamConfig{cfg_.lr});
    }
  }

  std::size_t size() const { return members_.size(); }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  const RewardModelConfig& config() const { return cfg_; }
  Mlp& member(std::size_t m) { return members_.at(m); }
  const Mlp& member(std::size_t m) const { return members_.at(m); }
  Adam& optimizer(std::size_t m) { return opts_.at(m); }

  Mat inputs(const Mat& states, const Mat& actions) const {
    if (states.rows() != state_dim_ || actions.rows() != action_dim_ || states.cols() != actions.cols())
      throw std::invalid_argument("RewardEnsemble: state/action shape mismatch");
    Mat x(state_dim_ + action_dim_, states.cols());
    x.topRows(state_dim_) = states;
    x.bottomRows(action_dim_) = actions;
    return x;
  }

  /// Ensemble-mean predicted reward per column.
  Vec reward(const Mat& states, const Mat& actions) const {
    const Mat x = inputs(states, actions);
    Vec r = Vec::Zero(x.cols());
    for (const auto& m : members_) r += m.forward(x).row(0).transpose();
    return r / static_cast<double>(members_.size());
  }

  double reward(const Vec& s, const Vec& a) const { return reward(Mat(s), Mat(a))[0]; }

  /// Per-member logits z_m = R_m(seg0) - R_m(seg1); returns size() x n.
  Mat logits(const std::vector<const PreferenceTriple*>& batch) const {
    Mat z(static_cast<Eigen::Index>(members_.size()), static_cast<Eigen::Index>(batch.size()));
    if (batch.empty()) return z;
    const auto [x, offsets] = stack_batch(batch);
    for (std::size_t m = 0; m < members_.size(); ++m) {
      const Mat r = members_[m].forward(x);
      for (std::size_t i = 0; i < batch.size(); ++i)
        z(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(i)) = logit_from_rewards(r, offsets, i);
    }
    return z;
  }

  Mat logits(const PreferenceDataset& data) const { return logits(pointers(data)); }

  /// Member-probability matrix P_m[seg0 > seg1], size() x n.
  Mat member_probs(const std::vector<const PreferenceTriple*>& batch) const {
    return logits(batch).unaryExpr([](double z) { return sigmoid(z); });
  }

  /// Preference loss summed over members, each member averaged over the batch,
  /// with the gradient for every member.
  LossResult preference_loss(const std::vector<const PreferenceTriple*>& batch,
                             const std::vector<PreferenceLabel>& labels, const LogitLoss& loss_fn) const {
    if (batch.empty()) throw std::invalid_argument("preference loss on an empty batch");
    if (labels.size() != batch.size()) throw std::invalid_argument("preference loss: label count mismatch");
    LossResult out;
    const auto [x, offsets] = stack_batch(batch);
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    for (const auto& net : members_) {
      Tape tape = net.forward_tape(x);
      Mat dr = Mat::Zero(1, x.cols());
      double loss = 0.0;
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const double z = logit_from_rewards(tape.output(), offsets, i);
        double dz = 0.0;
        loss += loss_fn(z, labels[i], &dz);
        const double p0 = sigmoid(z);
        if (!in_clamp_range(p0) || !in_clamp_range(1.0 - p0)) ++out.clamped;
        const Eigen::Index h0 = batch[i]->seg0.length(), h1 = batch[i]->seg1.length();
        dr.block(0, offsets[i], 1, h0).array() += dz * inv_n;
        dr.block(0, offsets[i] + h0, 1, h1).array() -= dz * inv_n;
      }
      Vec g = Vec::Zero(net.num_params());
      net.backward(tape, dr, g);
      out.member_loss.push_back(loss * inv_n);
      out.loss += loss * inv_n;
      out.grads.push_back(std::move(g));
    }
    return out;
  }

  LossResult ce_loss(const std::vector<const PreferenceTriple*>& batch,
                     const std::vector<PreferenceLabel>& labels) const {
    return preference_loss(batch, labels, ce_logit_loss);
  }

  LossResult ce_loss(const PreferenceDataset& data) const {
    const auto ptrs = pointers(data);
    return ce_loss(ptrs, labels_of(ptrs));
  }

  /// Warm-start regression loss  mean[1/2 (r(s,a) - target)^2]  per member.
  LossResult warm_mse_loss(const Mat& states, const Mat& actions, const Vec& targets) const {
    if (targets.size() != states.cols() || targets.size() == 0)
      throw std::invalid_argument("warm_mse_loss: target count mismatch");
    for (Eigen::Index i = 0; i < targets.size(); ++i)
      if (!(targets[i] > -1.0 && targets[i] < 1.0))
        throw std::invalid_argument("warm_mse_loss: targets must lie in (-1, 1)");
    const Mat x = inputs(states, actions);
    const double inv_n = 1.0 / static_cast<double>(targets.size());
    LossResult out;
    for (const auto& net : members_) {
      Tape tape = net.forward_tape(x);
      const Vec d = tape.output().row(0).transpose() - targets;
      Vec g = Vec::Zero(net.num_params());
      net.backward(tape, inv_n * d.transpose(), g);
      const double l = 0.5 * d.squaredNorm() * inv_n;
      out.member_loss.push_back(l);
      out.loss += l;
      out.grads.push_back(std::move(g));
    }
    return out;
  }

  void apply(const LossResult& r) {
    if (r.grads.size() != members_.size()) throw std::invalid_argument("RewardEnsemble::apply: gradient count mismatch");
    for (std::size_t m = 0; m < members_.size(); ++m) opts_[m].step(members_[m].params(), r.grads[m]);
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"version", 1},
                        {"state_dim", state_dim_},
                        {"action_dim", action_dim_},
                        {"seed", seed_},
                        {"ensemble_size", cfg_.ensemble_size},
                        {"hidden", cfg_.hidden},
                        {"activation", rime::to_string(cfg_.activation)},
                        {"lr", cfg_.lr},
                        {"kl_mode", cfg_.kl_mode == EnsembleKl::mean_prob ? "mean_prob" : "mean_kl"}};
    for (std::size_t m = 0; m < members_.size(); ++m) {
      j["members"].push_back(members_[m].to_json());
      j["optimizers"].push_back(opts_[m].to_json());
    }
    return j;
  }

  static RewardEnsemble from_json(const nlohmann::json& j) {
    RewardModelConfig cfg;
    cfg.ensemble_size = j.at("ensemble_size");
    cfg.hidden = j.at("hidden").get<std::vector<int>>();
    cfg.activation = parse_activation(j.at("activation"));
    cfg.lr = j.at("lr");
    cfg.kl_mode = j.at("kl_mode") == "mean_kl" ? EnsembleKl::mean_kl : EnsembleKl::mean_prob;
    RewardEnsemble e(j.at("state_dim"), j.at("action_dim"), cfg, j.at("seed"));
    for (std::size_t m = 0; m < e.members_.size(); ++m) {
      e.members_[m] = Mlp::from_json(j.at("members").at(m));
      e.opts_[m] = Adam::from_json(j.at("optimizers").at(m));
    }
    return e;
  }

  static std::vector<const PreferenceTriple*> pointers(const PreferenceDataset& data) {
    std::vector<const PreferenceTriple*> p;
    p.reserve(data.size());
    for (const auto& t : data) p.push_back(&t);
    return p;
  }

  static std::vector<PreferenceLabel> labels_of(const std::vector<const PreferenceTriple*>& batch) {
    std::vector<PreferenceLabel> l;
    l.reserve(batch.size());
    for (const auto* t : batch) l.push_back(t->label);
    return l;
  }

 private:
  std::pair<Mat, std::vector<Eigen::Index>> stack_batch(const std::vector<const PreferenceTriple*>& batch) const {
    Eigen::Index cols = 0;
    std::vector<Eigen::Index> offsets;
    offsets.reserve(batch.size());
    for (const auto* t : batch) {
      if (t->seg0.length() != t->seg1.length()) throw std::invalid_argument("preference segments differ in length");
      offsets.push_back(cols);
      cols += t->seg0.length() + t->seg1.length();
    }
    Mat x(state_dim_ + action_dim_, cols);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto& t = *batch[i];
      const Eigen::Index h = t.seg0.length();
      x.block(0, offsets[i], state_dim_, h) = t.seg0.states;
      x.block(state_dim_, offsets[i], action_dim_, h) = t.seg0.actions;
      x.block(0, offsets[i] + h, state_dim_, h) = t.seg1.states;
      x.block(state_dim_, offsets[i] + h, action_dim_, h) = t.seg1.actions;
    }
    return {std::move(x), std::move(offsets)};
  }

  static double logit_from_rewards(const Mat& r, const std::vector<Eigen::Index>& offsets, std::size_t i) {
    const Eigen::Index begin = offsets[i];
    const Eigen::Index end = i + 1 < offsets.size() ? offsets[i + 1] : r.cols();
    const Eigen::Index h = (end - begin) / 2;
    return r.block(0, begin, 1, h).sum() - r.block(0, begin + h, 1, h).sum();
  }

  RewardModelConfig cfg_;
  int state_dim_ = 0;
  int action_dim_ = 0;
  std::uint64_t seed_ = 0;
  std::vector<Mlp> members_;
  std::vector<Adam> opts_;
};

enum class PrefMode { mean_prob, per_member };

/// P[seg0 > seg1]; with mean_prob a single averaged probability, otherwise one per member.
inline std::vector<double> predict_pref(const RewardEnsemble& ens, const Segment& seg0, const Segment& seg1,
                                        PrefMode mode = PrefMode::mean_prob) {
  PreferenceTriple t{seg0, seg1, PreferenceLabel::equal(), 0, std::nullopt};
  const Mat p = ens.member_probs({&t});
  if (mode == PrefMode::per_member) return {p.col(0).data(), p.col(0).data() + p.rows()};
  return {p.col(0).mean()};
}

inline KlStats kl_from_member_probs(const Eigen::Ref<const Vec>& member_p0, const PreferenceLabel& y) {
  KlStats s;
  for (Eigen::Index m = 0; m < member_p0.size(); ++m) s.per_member.push_back(kl_divergence(member_p0[m], y));
  s.mean_kl = std::accumulate(s.per_member.begin(), s.per_member.end(), 0.0) / static_cast<double>(s.per_member.size());
  s.mean_prob_kl = kl_divergence(member_p0.mean(), y);
  return s;
}

inline KlStats kl_to_label(const RewardEnsemble& ens, const PreferenceTriple& t) {
  const Mat p = ens.member_probs({&t});
  return kl_from_member_probs(p.col(0), t.label);
}

/// KL of every sample against `labels` (defaults to the stored labels), in the ensemble's KL mode.
inline std::vector<double> dataset_kl(const RewardEnsemble& ens, const std::vector<const PreferenceTriple*>& batch,
                                      const std::vector<PreferenceLabel>* labels = nullptr) {
  const Mat p = ens.member_probs(batch);
  std::vector<double> out(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const PreferenceLabel& y = labels ? (*labels)[i] : batch[i]->label;
    out[i] = kl_from_member_probs(p.col(static_cast<Eigen::Index>(i)), y).value(ens.config().kl_mode);
  }
  return out;
}

/// Rewrites every stored reward with the ensemble-mean prediction.
inline std::size_t relabel(const RewardEnsemble& ens, ReplayBuffer& buffer) {
  constexpr std::size_t chunk = 4096;
  for (std::size_t begin = 0; begin < buffer.size(); begin += chunk) {
    const std::size_t end = std::min(buffer.size(), begin + chunk);
    Mat s(buffer.state_dim(), static_cast<Eigen::Index>(end - begin));
    Mat a(buffer.action_dim(), static_cast<Eigen::Index>(end - begin));
    for (std::size_t i = begin; i < end; ++i) {
      s.col(static_cast<Eigen::Index>(i - begin)) = buffer.at(i).s;
      a.col(static_cast<Eigen::Index>(i - begin)) = buffer.at(i).a;
    }
    const Vec r = ens.reward(s, a);
    for (std::size_t i = begin; i < end; ++i) buffer.at(i).reward = r[static_cast<Eigen::Index>(i - begin)];
  }
  return buffer.size();
}

// Preference dataset files: one JSON object per line.
inline nlohmann::json segment_to_json(const Segment& s) {
  nlohmann::json states = nlohmann::json::array(), actions = nlohmann::json::array();
  for (Eigen::Index t = 0; t < s.length(); ++t) {
    states.push_back(std::vector<double>(s.states.col(t).data(), s.states.col(t).data() + s.states.rows()));
    actions.push_back(std::vector<double>(s.actions.col(t).data(), s.actions.col(t).data() + s.actions.rows()));
  }
  return {{"states", states}, {"actions", actions}, {"episode", s.episode}, {"start", s.start}};
}

inline Segment segment_from_json(const nlohmann::json& j) {
  auto mat = [](const nlohmann::json& rows) {
    const auto n = static_cast<Eigen::Index>(rows.size());
    const auto d = n ? static_cast<Eigen::Index>(rows[0].size()) : 0;
    Mat m(d, n);
    for (Eigen::Index t = 0; t < n; ++t)
      for (Eigen::Index i = 0; i < d; ++i) m(i, t) = rows[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)];
    return m;
  };
  Segment s;
  s.states = mat(j.at("states"));
  s.actions = mat(j.at("actions"));
  s.episode = j.value("episode", std::int64_t{-1});
  s.start = j.value("start", std::size_t{0});
  return s;
}

inline nlohmann::json triple_to_json(const PreferenceTriple& t) {
  nlohmann::json j = {{"seg0", segment_to_json(t.seg0)},
                      {"seg1", segment_to_json(t.seg1)},
                      {"label", {t.label.y0, t.label.y1}},
                      {"session", t.session}};
  if (t.true_label) j["true_label"] = {t.true_label->y0, t.true_label->y1};
  return j;
}

inline PreferenceTriple triple_from_json(const nlohmann::json& j) {
  PreferenceTriple t;
  t.seg0 = segment_from_json(j.at("seg0"));
  t.seg1 = segment_from_json(j.at("seg1"));
  t.label = {j.at("label")[0], j.at("label")[1]};
  t.label.validate();
  t.session = j.value("session", 0);
  if (j.contains("true_label")) t.true_label = PreferenceLabel{j["true_label"][0], j["true_label"][1]};
  return t;
}

}  // namespace rime
