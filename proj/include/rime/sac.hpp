#pragma once

// Soft actor-critic: squashed-Gaussian policy, twin critics with EMA targets,
// learned temperature.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rime/nn.hpp"
#include "rime/replay_buffer.hpp"

namespace rime {

struct SacConfig {
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::relu;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double alpha_lr = 3e-4;
  double gamma = 0.99;
  double tau = 0.005;
  double init_temperature = 0.1;
  std::optional<double> target_entropy;  // defaults to -action_dim
  int critic_target_update_freq = 2;
  int actor_update_freq = 1;
  std::size_t batch_size = 256;
  bool learn_temperature = true;

  nlohmann::json to_json() const {
    nlohmann::json j = {{"hidden", hidden},
                        {"activation", rime::to_string(activation)},
                        {"actor_lr", actor_lr},
                        {"critic_lr", critic_lr},
                        {"alpha_lr", alpha_lr},
                        {"gamma", gamma},
                        {"tau", tau},
                        {"init_temperature", init_temperature},
                        {"critic_target_update_freq", critic_target_update_freq},
                        {"actor_update_freq", actor_update_freq},
                        {"batch_size", batch_size},
                        {"learn_temperature", learn_temperature}};
    if (target_entropy) j["target_entropy"] = *target_entropy;
    return j;
  }

  static SacConfig from_json(const nlohmann::json& j) {
    SacConfig c;
    c.hidden = j.at("hidden").get<std::vector<int>>();
    c.activation = parse_activation(j.at("activation"));
    c.actor_lr = j.at("actor_lr");
    c.critic_lr = j.at("critic_lr");
    c.alpha_lr = j.at("alpha_lr");
    c.gamma = j.at("gamma");
    c.tau = j.at("tau");
    c.init_temperature = j.at("init_temperature");
    c.critic_target_update_freq = j.at("critic_target_update_freq");
    c.actor_update_freq = j.at("actor_update_freq");
    c.batch_size = j.at("batch_size");
    c.learn_temperature = j.at("learn_temperature");
    if (j.contains("target_entropy")) c.target_entropy = j.at("target_entropy").get<double>();
    return c;
  }
};

struct SacLosses {
  double critic = 0.0;
  double actor = 0.0;
  double temperature = 0.0;
  double alpha = 0.0;
  double entropy = 0.0;  // mean of -log pi over the batch
};

/// One reparameterized pass of the squashed Gaussian policy.
struct PolicySample {
  Tape tape;
  Mat noise;
  Mat mean;
  Mat log_std;         // clamped
  Mat log_std_raw;     // network output before clamping
  Mat pre_tanh;
  Mat action;
  Vec log_prob;
};

class SacAgent {
 public:
  static constexpr double kLogStdMin = -10.0;
  static constexpr double kLogStdMax = 2.0;

  SacAgent(int state_dim, int action_dim, SacConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)), state_dim_(state_dim), action_dim_(action_dim), rng_(seed) {
    if (!(cfg_.gamma >= 0.0 && cfg_.gamma < 1.0)) throw std::invalid_argument("SacAgent: gamma must lie in [0, 1)");
    policy_ = Mlp(dims(state_dim, 2 * action_dim), cfg_.activation, OutputActivation::none, seed * 7919 + 1);
    policy_opt_ = Adam(policy_.num_params(), {cfg_.actor_lr});
    reset_critics(seed * 7919 + 2);
    log_alpha_ = std::log(cfg_.init_temperature);
    alpha_opt_ = Adam(1, {cfg_.alpha_lr});
  }

  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }
  const SacConfig& config() const { return cfg_; }
  double alpha() const { return std::exp(log_alpha_); }
  double log_alpha() const { return log_alpha_; }
  void set_log_alpha(double v) { log_alpha_ = v; }
  double target_entropy() const { return cfg_.target_entropy.value_or(-static_cast<double>(action_dim_)); }
  std::int64_t updates() const { return updates_; }

  Mlp& policy() { return policy_; }
  const Mlp& policy() const { return policy_; }
  Mlp& q1() { return q1_; }
  Mlp& q2() { return q2_; }
  const Mlp& q1() const { return q1_; }
  const Mlp& q2() const { return q2_; }
  const Mlp& q1_target() const { return q1_targ_; }
  const Mlp& q2_target() const { return q2_targ_; }

  /// Fresh critics (targets copied from them) with fresh optimizer state.
  void reset_critics(std::uint64_t seed) {
    q1_ = Mlp(dims(state_dim_ + action_dim_, 1), cfg_.activation, OutputActivation::none, seed);
    q2_ = Mlp(dims(state_dim_ + action_dim_, 1), cfg_.activation, OutputActivation::none, seed + 1);
    q1_targ_ = q1_;
    q2_targ_ = q2_;
    q1_opt_ = Adam(q1_.num_params(), {cfg_.critic_lr});
    q2_opt_ = Adam(q2_.num_params(), {cfg_.critic_lr});
  }

  Vec act(const Vec& state, bool deterministic) {
    if (!state.allFinite()) throw std::invalid_argument("SacAgent::act: non-finite state");
    const Vec out = policy_.forward(state);
    if (deterministic) return out.head(action_dim_).array().tanh();
    Vec noise(action_dim_);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& x : noise) x = n(rng_);
    const Vec log_std = out.tail(action_dim_).cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
    return (out.head(action_dim_).array() + log_std.array().exp() * noise.array()).tanh();
  }

  Vec random_action() {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    Vec a(action_dim_);
    for (auto& x : a) x = u(rng_);
    return a;
  }

  PolicySample sample_policy(const Mat& states, const Mat& noise) const {
    PolicySample p;
    p.tape = policy_.forward_tape(states);
    const Mat& out = p.tape.output();
    p.noise = noise;
    p.mean = out.topRows(action_dim_);
    p.log_std_raw = out.bottomRows(action_dim_);
    p.log_std = p.log_std_raw.cwiseMax(kLogStdMin).cwiseMin(kLogStdMax);
    p.pre_tanh = p.mean.array() + p.log_std.array().exp() * noise.array();
    p.action = p.pre_tanh.array().tanh();
    // log(1 - tanh(u)^2) = 2 (log 2 - u - softplus(-2u))
    const Mat& u = p.pre_tanh;
    const Mat softplus = (-2.0 * u.array()).max(0.0) + (-(2.0 * u.array()).abs()).exp().log1p();
    const Mat log_det = 2.0 * (std::log(2.0) - u.array() - softplus.array());
    const double half_log_2pi = 0.5 * std::log(2.0 * M_PI);
    const Mat per_dim = -0.5 * noise.array().square() - p.log_std.array() - half_log_2pi - log_det.array();
    p.log_prob = per_dim.colwise().sum().transpose();
    return p;
  }

  /// Twin-critic Bellman loss  mean[(Q1 - y)^2 + (Q2 - y)^2]  with the
  /// entropy-regularized target built from the target critics.
  double critic_loss(const Minibatch& b, const Mat& next_noise, Vec* grad_q1 = nullptr, Vec* grad_q2 = nullptr) const {
    const Eigen::Index n = b.size();
    const Vec y = critic_target(b, next_noise);
    const Mat sa = stack(b.s, b.a);
    Tape t1 = q1_.forward_tape(sa), t2 = q2_.forward_tape(sa);
    const Vec d1 = t1.output().row(0).transpose() - y;
    const Vec d2 = t2.output().row(0).transpose() - y;
    const double loss = (d1.squaredNorm() + d2.squaredNorm()) / static_cast<double>(n);
    if (grad_q1) q1_.backward(t1, (2.0 / n) * d1.transpose(), *grad_q1);
    if (grad_q2) q2_.backward(t2, (2.0 / n) * d2.transpose(), *grad_q2);
    return loss;
  }

  Vec critic_target(const Minibatch& b, const Mat& next_noise) const {
    const PolicySample next = sample_policy(b.s_next, next_noise);
    const Mat sa = stack(b.s_next, next.action);
    const Vec q1 = q1_targ_.forward(sa).row(0).transpose();
    const Vec q2 = q2_targ_.forward(sa).row(0).transpose();
    const Vec soft_v = q1.cwiseMin(q2) - alpha() * next.log_prob;
    return b.reward + cfg_.gamma * b.not_terminal.cwiseProduct(soft_v);
  }

  /// Reparameterized actor loss  mean[alpha * log pi(a|s) - min(Q1, Q2)(s, a)]
  /// with critics and temperature held fixed.
  double actor_loss(const Mat& states, const Mat& noise, Vec* grad = nullptr, double* mean_log_prob = nullptr) const {
    const Eigen::Index n = states.cols();
    const double alpha_v = alpha();
    PolicySample p = sample_policy(states, noise);
    const Mat sa = stack(states, p.action);
    Tape t1 = q1_.forward_tape(sa), t2 = q2_.forward_tape(sa);
    const Vec q1 = t1.output().row(0).transpose();
    const Vec q2 = t2.output().row(0).transpose();
    const Vec qmin = q1.cwiseMin(q2);
    const double loss = (alpha_v * p.log_prob - qmin).mean();
    if (mean_log_prob) *mean_log_prob = p.log_prob.mean();
    if (grad) {
      Mat g1 = Mat::Zero(1, n), g2 = Mat::Zero(1, n);
      for (Eigen::Index j = 0; j < n; ++j) (q1[j] <= q2[j] ? g1 : g2)(0, j) = -1.0 / static_cast<double>(n);
      Vec scratch1 = Vec::Zero(q1_.num_params()), scratch2 = Vec::Zero(q2_.num_params());
      Mat dsa1, dsa2;
      q1_.backward(t1, g1, scratch1, &dsa1);
      q2_.backward(t2, g2, scratch2, &dsa2);
      const Mat dq_da = (dsa1 + dsa2).bottomRows(action_dim_);

      const Mat tanh_u = p.action;
      const Mat du = (alpha_v * 2.0 * tanh_u.array() / static_cast<double>(n)) +
                     dq_da.array() * (1.0 - tanh_u.array().square());
      Mat dout(2 * action_dim_, n);
      dout.topRows(action_dim_) = du;
      const Mat stdv = p.log_std.array().exp();
      Mat dls = du.array() * stdv.array() * p.noise.array() - alpha_v / static_cast<double>(n);
      dls = (p.log_std_raw.array() < kLogStdMin || p.log_std_raw.array() > kLogStdMax).select(0.0, dls);
      dout.bottomRows(action_dim_) = dls;
      policy_.backward(p.tape, dout, *grad);
    }
    return loss;
  }

  /// Temperature loss  alpha * mean(-log pi - target_entropy); gradient with respect to log(alpha).
  double temperature_loss(double mean_log_prob, double* grad_log_alpha = nullptr) const {
    const double c = -mean_log_prob - target_entropy();
    if (grad_log_alpha) *grad_log_alpha = alpha() * c;
    return alpha() * c;
  }

  SacLosses update(const Minibatch& b) {
    if (b.size() == 0) throw std::invalid_argument("SacAgent::update: empty minibatch");
    if (!b.reward.allFinite()) throw std::invalid_argument("SacAgent::update: non-finite reward");
    SacLosses out;
    out.alpha = alpha();

    Vec g1 = Vec::Zero(q1_.num_params()), g2 = Vec::Zero(q2_.num_params());
    out.critic = critic_loss(b, gaussian(action_dim_, b.size()), &g1, &g2);
    if (!std::isfinite(out.critic)) throw NonFiniteError("SAC critic loss is not finite");
    q1_opt_.step(q1_.params(), g1);
    q2_opt_.step(q2_.params(), g2);

    if (updates_ % cfg_.actor_update_freq == 0) {
      Vec gp = Vec::Zero(policy_.num_params());
      double mean_lp = 0.0;
      out.actor = actor_loss(b.s, gaussian(action_dim_, b.size()), &gp, &mean_lp);
      if (!std::isfinite(out.actor)) throw NonFiniteError("SAC actor loss is not finite");
      policy_opt_.step(policy_.params(), gp);
      out.entropy = -mean_lp;
      if (cfg_.learn_temperature) {
        double ga = 0.0;
        out.temperature = temperature_loss(mean_lp, &ga);
        Vec la(1);
        la[0] = log_alpha_;
        Vec g(1);
        g[0] = ga;
        alpha_opt_.step(la, g);
        log_alpha_ = la[0];
      }
    }

    if (updates_ % cfg_.critic_target_update_freq == 0) {
      soft_update(q1_targ_, q1_, cfg_.tau);
      soft_update(q2_targ_, q2_, cfg_.tau);
    }
    ++updates_;
    return out;
  }

  Mat gaussian(Eigen::Index rows, Eigen::Index cols) {
    std::normal_distribution<double> n(0.0, 1.0);
    Mat m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng_);
    return m;
  }

  static Mat stack(const Mat& top, const Mat& bottom) {
    Mat out(top.rows() + bottom.rows(), top.cols());
    out.topRows(top.rows()) = top;
    out.bottomRows(bottom.rows()) = bottom;
    return out;
  }

  nlohmann::json to_json() const {
    std::ostringstream rng_state;
    rng_state << rng_;
    return {{"version", 1},
            {"state_dim", state_dim_},
            {"action_dim", action_dim_},
            {"config", cfg_.to_json()},
            {"policy", policy_.to_json()},
            {"q1", q1_.to_json()},
            {"q2", q2_.to_json()},
            {"q1_target", q1_targ_.to_json()},
            {"q2_target", q2_targ_.to_json()},
            {"policy_opt", policy_opt_.to_json()},
            {"q1_opt", q1_opt_.to_json()},
            {"q2_opt", q2_opt_.to_json()},
            {"alpha_opt", alpha_opt_.to_json()},
            {"log_alpha", log_alpha_},
            {"updates", updates_},
            {"rng", rng_state.str()}};
  }

  static SacAgent from_json(const nlohmann::json& j) {
    if (j.at("version") != 1) throw std::invalid_argument("unsupported SAC checkpoint version");
    SacAgent a(j.at("state_dim"), j.at("action_dim"), SacConfig::from_json(j.at("config")), 0);
    a.policy_ = Mlp::from_json(j.at("policy"));
    a.q1_ = Mlp::from_json(j.at("q1"));
    a.q2_ = Mlp::from_json(j.at("q2"));
    a.q1_targ_ = Mlp::from_json(j.at("q1_target"));
    a.q2_targ_ = Mlp::from_json(j.at("q2_target"));
    a.policy_opt_ = Adam::from_json(j.at("policy_opt"));
    a.q1_opt_ = Adam::from_json(j.at("q1_opt"));
    a.q2_opt_ = Adam::from_json(j.at("q2_opt"));
    a.alpha_opt_ = Adam::from_json(j.at("alpha_opt"));
    a.log_alpha_ = j.at("log_alpha");
    a.updates_ = j.at("updates");
    std::istringstream rng_state(j.at("rng").get<std::string>());
    rng_state >> a.rng_;
    return a;
  }

 private:
  std::vector<int> dims(int in, int out) const {
    std::vector<int> d{in};
    d.insert(d.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    d.push_back(out);
    return d;
  }

  SacConfig cfg_;
  int state_dim_;
  int action_dim_;
  std::mt19937_64 rng_;
  Mlp policy_, q1_, q2_, q1_targ_, q2_targ_;
  Adam policy_opt_, q1_opt_, q2_opt_, alpha_opt_;
  double log_alpha_ = 0.0;
  std::int64_t updates_ = 0;
};

}  // namespace rime
