#pragma once

// End-to-end training: unsupervised pre-training, then interleaved rollouts,
// preference sessions, denoised reward learning, buffer relabeling and SAC.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rime/config.hpp"
#include "rime/denoise.hpp"
#include "rime/env.hpp"
#include "rime/feedback_service.hpp"
#include "rime/log.hpp"
#include "rime/metrics.hpp"
#include "rime/pretrain.hpp"
#include "rime/query.hpp"
#include "rime/replay_buffer.hpp"
#include "rime/reward_model.hpp"
#include "rime/sac.hpp"
#include "rime/teachers.hpp"

namespace rime {

struct EvalResult {
  double mean_return = 0.0;
  double success_rate = kNaN;  // NaN when the environment defines no success
};

/// Deterministic-policy rollouts on a fresh environment, scored with the ground-truth reward.
inline EvalResult evaluate_policy(SacAgent& agent, const std::string& env_name,
                                  const std::map<std::string, double>& env_options, int episodes, std::uint64_t seed) {
  auto env = make_env(env_name, env_options, seed);
  double total = 0.0;
  int successes = 0, defined = 0;
  for (int e = 0; e < episodes; ++e) {
    Vec s = env->reset();
    for (;;) {
      const Transition tr = env->step(s, agent.act(s, true));
      total += tr.reward;
      s = tr.s_next;
      if (tr.done) break;
    }
    if (const auto ok = env->success(s)) {
      ++defined;
      successes += *ok ? 1 : 0;
    }
  }
  EvalResult r;
  r.mean_return = total / episodes;
  if (defined) r.success_rate = static_cast<double>(successes) / defined;
  return r;
}

struct SessionReport {
  int session = 0;
  std::size_t env_step = 0;
  int labels = 0;           // labels added this session
  int attempts = 0;         // teacher queries, skipped ones included
  bool operator_skip = false;
  FilterReport filter;      // the filter that produced the final training set
  FilterQuality quality;
  double reward_loss = kNaN;
  int epochs = 0;
  double rho_after = kInfinity;

  nlohmann::json to_json() const {
    nlohmann::json f = filter.to_json();
    f.erase("kl");
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(format_number(v)); };
    return {{"session", session},
            {"env_step", env_step},
            {"labels", labels},
            {"attempts", attempts},
            {"operator_skip", operator_skip},
            {"filter", f},
            {"flip_precision", quality.flip_precision},
            {"flip_recall", quality.flip_recall},
            {"trusted_corruption", quality.trusted_corruption},
            {"corrupted_total", quality.corrupted_total},
            {"reward_loss", num(reward_loss)},
            {"epochs", epochs},
            {"rho_after", num(rho_after)}};
  }
};

struct RunResult {
  std::vector<MetricsRecord> metrics;
  std::vector<SessionReport> sessions;
  int labels_total = 0;
  EvalResult final_eval;
};

class Trainer {
 public:
  explicit Trainer(RunConfig cfg, FeedbackHub* hub = nullptr)
      : cfg_(std::move(cfg)),
        hub_(hub),
        env_(make_env(cfg_.env, cfg_.env_options, derive(3))),
        agent_(env_->state_dim(), env_->action_dim(), cfg_.sac, derive(1)),
        ens_(env_->state_dim(), env_->action_dim(), cfg_.reward, derive(2)),
        buffer_(std::max(cfg_.replay_capacity, cfg_.pretrain_steps), env_->state_dim(), env_->action_dim()),
        intrinsic_(env_->state_dim(), cfg_.intrinsic_k, cfg_.intrinsic_delta),
        disc_(cfg_.discriminator),
        rng_(derive(5)) {
    cfg_.validate();
    TeacherConfig tc = cfg_.teacher;
    tc.seed = derive(6);
    tc.episode_length = env_->horizon();
    if (tc.kind == TeacherKind::human) {
      if (!hub_) throw std::invalid_argument("teacher=human needs a feedback service");
    } else {
      teacher_.emplace(tc);
    }
  }

  const RunConfig& config() const { return cfg_; }
  SacAgent& agent() { return agent_; }
  RewardEnsemble& ensemble() { return ens_; }
  ReplayBuffer& buffer() { return buffer_; }
  const PreferenceDataset& dataset() const { return data_; }
  const DiscriminatorState& discriminator() const { return disc_; }
  std::size_t env_steps() const { return step_; }
  int labels_total() const { return labels_total_; }

  /// Runs the whole configured schedule. Outputs go to out_dir when it is non-empty.
  RunResult run(const std::string& out_dir = "") {
    out_dir_ = out_dir;
    if (!out_dir_.empty()) std::filesystem::create_directories(out_dir_);
    try {
      pretrain();
      while (step_ < cfg_.total_steps) online_step();
    } catch (const std::exception& e) {
      log_warn(std::string("run aborted: ") + e.what());
      if (!out_dir_.empty()) save_checkpoint(out_dir_ + "/checkpoint_error.json", e.what());
      write_outputs();
      throw;
    }
    result_.labels_total = labels_total_;
    result_.final_eval = evaluate();
    write_outputs();
    if (!out_dir_.empty()) save_checkpoint(out_dir_ + "/checkpoint_final.json", "");
    return result_;
  }

  void pretrain() {
    PretrainOptions opt;
    opt.steps = cfg_.pretrain_steps;
    opt.random_steps = cfg_.random_steps;
    opt.warm_start = cfg_.warm_start;
    opt.reward_batch = cfg_.reward_batch;
    pretrain_phase(agent_, *env_, ens_, buffer_, intrinsic_, rollout_, opt, rng_,
                   [&](std::size_t, const Transition& tr, double) {
                     ++step_;
                     if (tr.done) end_episode();
                     if (step_ % cfg_.metrics_every == 0) record("pretrain");
                   });
    if (cfg_.resets_critics()) agent_.reset_critics(derive(7));
  }

  void online_step() {
    const std::size_t online = step_ - cfg_.pretrain_steps;
    if (online % static_cast<std::size_t>(cfg_.schedule.session_interval_steps) == 0 &&
        labels_total_ < cfg_.schedule.total_budget)
      run_session();

    if (!rollout_.started) {
      rollout_.state = env_->reset();
      rollout_.true_return = 0.0;
      rollout_.started = true;
    }
    Transition tr = env_->step(rollout_.state, agent_.act(rollout_.state, false));
    rollout_.true_return += tr.reward;
    tr.reward = ens_.reward(tr.s, tr.a);
    tr.episode = rollout_.episode;
    buffer_.add(tr);
    ++step_;
    if (tr.done) end_episode();
    else rollout_.state = tr.s_next;

    for (int u = 0; u < cfg_.updates_per_step; ++u) last_sac_ = agent_.update(buffer_.sample(cfg_.sac.batch_size, rng_));
    if (step_ % cfg_.metrics_every == 0 || step_ == cfg_.total_steps) record("online");
  }

  /// One feedback session: query, label, filter, train, relabel, update rho.
  SessionReport run_session() {
    SessionReport rep;
    rep.session = static_cast<int>(result_.sessions.size());
    rep.env_step = step_;
    const int quota = std::min(cfg_.schedule.per_session, cfg_.schedule.total_budget - labels_total_);
    const std::size_t before = data_.size();
    if (quota > 0) {
      if (teacher_) scripted_labels(quota, rep);
      else human_labels(quota, rep);
    }
    rep.labels = static_cast<int>(data_.size() - before);
    labels_total_ += rep.labels;

    if (!data_.empty()) {
      train_reward(rep);
      relabel(ens_, buffer_);
      if (cfg_.strategy == StrategyKind::rime && cfg_.counter_unit == CounterUnit::session) {
        if (cfg_.rho_update == RhoUpdate::post_update) update_rho(disc_, ens_, data_, rep.filter);
        ++disc_.t;
      }
    }
    rep.rho_after = disc_.rho;
    rep.quality = evaluate_filter(rep.filter, data_);
    result_.sessions.push_back(rep);
    last_session_ = rep;
    log_info("session " + std::to_string(rep.session) + " at step " + std::to_string(step_) + ": " +
             std::to_string(rep.labels) + " labels, trusted " + std::to_string(rep.filter.trusted.size()) +
             ", flipped " + std::to_string(rep.filter.flipped.size()) + ", discarded " +
             std::to_string(rep.filter.discarded.size()));
    return rep;
  }

  nlohmann::json checkpoint(const std::string& reason) const {
    nlohmann::json j = {{"env_step", step_},
                        {"labels_total", labels_total_},
                        {"discriminator", disc_.to_json()},
                        {"agent", agent_.to_json()},
                        {"ensemble", ens_.to_json()}};
    if (!reason.empty()) j["error"] = reason;
    return j;
  }

  void save_checkpoint(const std::string& path, const std::string& reason) const {
    write_text(path, checkpoint(reason).dump() + "\n");
  }

 private:
  std::uint64_t derive(std::uint64_t stream) const { return cfg_.seed * 1000003ULL + stream * 7919ULL; }

  void end_episode() {
    if (teacher_) teacher_->update_running_return(rollout_.true_return);
    ++rollout_.episode;
    rollout_.started = false;
  }

  std::vector<double> true_rewards(const Segment& seg) const {
    std::vector<double> r(static_cast<std::size_t>(seg.length()));
    for (Eigen::Index t = 0; t < seg.length(); ++t)
      r[static_cast<std::size_t>(t)] = env_->reward(seg.states.col(t), seg.actions.col(t));
    return r;
  }

  PreferenceLabel oracle_of(const Segment& a, const Segment& b) const {
    const auto ra = true_rewards(a), rb = true_rewards(b);
    return oracle_label(std::accumulate(ra.begin(), ra.end(), 0.0), std::accumulate(rb.begin(), rb.end(), 0.0));
  }

  void scripted_labels(int quota, SessionReport& rep) {
    // skipped queries are replaced from fresh candidate pools, up to 10x the quota in attempts
    const int max_attempts = 10 * quota;
    int collected = 0;
    while (collected < quota && rep.attempts < max_attempts) {
      auto pool = sample_segment_pairs(buffer_, static_cast<std::size_t>(cfg_.schedule.candidate_pool_size),
                                       cfg_.segment_length, rng_);
      if (pool.empty()) break;
      for (std::size_t i : disagreement_order(ens_, pool)) {
        if (collected >= quota || rep.attempts >= max_attempts) break;
        ++rep.attempts;
        auto& [a, b] = pool[i];
        const TeacherOutcome out = teacher_->label(true_rewards(a), true_rewards(b));
        if (!out.label) continue;
        data_.push_back({std::move(a), std::move(b), *out.label, rep.session, out.oracle});
        ++collected;
      }
    }
    if (collected < quota)
      log_warn("session " + std::to_string(rep.session) + ": only " + std::to_string(collected) + " of " +
               std::to_string(quota) + " labels after " + std::to_string(rep.attempts) + " queries");
  }

  void human_labels(int quota, SessionReport& rep) {
    auto pool = sample_segment_pairs(buffer_, static_cast<std::size_t>(cfg_.schedule.candidate_pool_size),
                                     cfg_.segment_length, rng_);
    if (pool.size() < static_cast<std::size_t>(quota)) return;
    const auto chosen = disagreement_select(ens_, pool, static_cast<std::size_t>(quota));
    std::vector<nlohmann::json> queries;
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      const auto& [a, b] = pool[chosen[k]];
      queries.push_back({{"id", "q" + std::to_string(k)},
                         {"seg0", segment_payload(a, *env_)},
                         {"seg1", segment_payload(b, *env_)}});
    }
    const std::string session_id = "session-" + std::to_string(rep.session);
    hub_->open_session(session_id, queries, static_cast<std::size_t>(quota), env_->render_metadata());
    log_info("waiting for " + std::to_string(quota) + " human labels in " + session_id);
    const SessionOutcome outcome = hub_->wait(session_id);
    if (outcome.shutdown) throw std::runtime_error("feedback service shut down during " + session_id);
    rep.operator_skip = outcome.skipped;
    rep.attempts = static_cast<int>(chosen.size());
    for (std::size_t k = 0; k < chosen.size(); ++k) {
      const auto it = outcome.answers.find("q" + std::to_string(k));
      if (it == outcome.answers.end()) continue;
      auto& [a, b] = pool[chosen[k]];
      const PreferenceLabel truth = oracle_of(a, b);
      data_.push_back({std::move(a), std::move(b), it->second.label, rep.session, truth});
    }
  }

  FilterReport trust_all() const {
    DiscriminatorState s(cfg_.discriminator);
    s.params.use_lower = s.params.use_upper = false;
    return filter_by_kl(s, dataset_kl(ens_, RewardEnsemble::pointers(data_)));
  }

  void train_reward(SessionReport& rep) {
    if (cfg_.strategy != StrategyKind::rime) {
      rep.filter = trust_all();
      rep.reward_loss = train_epochs(training_set(rep.filter, data_), cfg_.reward_epochs, rep.epochs);
      return;
    }
    if (cfg_.counter_unit == CounterUnit::session) {
      rep.filter = filter(disc_, ens_, data_);
      if (cfg_.rho_update == RhoUpdate::pre_update) update_rho(disc_, ens_, data_, rep.filter);
      rep.reward_loss = train_epochs(training_set(rep.filter, data_), cfg_.reward_epochs, rep.epochs);
      return;
    }
    // per-epoch counter: re-filter before every epoch
    for (int e = 0; e < cfg_.reward_epochs; ++e) {
      rep.filter = filter(disc_, ens_, data_);
      if (cfg_.rho_update == RhoUpdate::pre_update) update_rho(disc_, ens_, data_, rep.filter);
      int one = 0;
      rep.reward_loss = train_epochs(training_set(rep.filter, data_), 1, one);
      rep.epochs += one;
      if (cfg_.rho_update == RhoUpdate::post_update) update_rho(disc_, ens_, data_, rep.filter);
      ++disc_.t;
      if (rep.reward_loss < cfg_.reward_early_stop) break;
    }
  }

  /// Minibatch epochs under the configured loss; stops early once the epoch-mean
  /// loss per member drops below the threshold. Returns the last epoch mean.
  double train_epochs(const TrainingSet& ts, int max_epochs, int& epochs_run) {
    epochs_run = 0;
    if (ts.size() == 0) {
      log_warn("reward training skipped: empty training set");
      return kNaN;
    }
    std::vector<std::size_t> order(ts.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t bs = std::max<std::size_t>(1, cfg_.reward_batch);
    double epoch_mean = kNaN;
    for (int e = 0; e < max_epochs; ++e) {
      std::shuffle(order.begin(), order.end(), rng_);
      double total = 0.0;
      for (std::size_t begin = 0; begin < order.size(); begin += bs) {
        const std::size_t end = std::min(order.size(), begin + bs);
        std::vector<const PreferenceTriple*> batch;
        std::vector<PreferenceLabel> labels;
        for (std::size_t k = begin; k < end; ++k) {
          batch.push_back(ts.samples[order[k]]);
          labels.push_back(ts.labels[order[k]]);
        }
        const StrategyResult r = robust_strategy_loss(cfg_.strategy, cfg_.robust, ens_, batch, labels, reward_iteration_++);
        if (!std::isfinite(r.loss.loss)) throw NonFiniteError("reward loss is not finite");
        ens_.apply(r.loss);
        total += r.loss.loss / static_cast<double>(ens_.size()) * static_cast<double>(end - begin);
      }
      ++epochs_run;
      epoch_mean = total / static_cast<double>(order.size());
      if (epoch_mean < cfg_.reward_early_stop) break;
    }
    return epoch_mean;
  }

  EvalResult evaluate() {
    return evaluate_policy(agent_, cfg_.env, cfg_.env_options, cfg_.eval_episodes, derive(4));
  }

  void record(const std::string& phase) {
    MetricsRecord m;
    m.env_step = step_;
    m.phase = phase;
    const EvalResult ev = evaluate();
    m.eval_return = ev.mean_return;
    m.success_rate = ev.success_rate;
    m.sessions = static_cast<int>(result_.sessions.size());
    m.labels = labels_total_;
    if (last_session_) {
      const auto& s = *last_session_;
      m.n_trusted = s.filter.trusted.size();
      m.n_flipped = s.filter.flipped.size();
      m.n_discarded = s.filter.discarded.size();
      m.rho = s.rho_after;
      m.tau_lower = s.filter.tau_lower;
      m.flip_precision = s.quality.flip_precision;
      m.flip_recall = s.quality.flip_recall;
      m.trusted_corruption = s.quality.trusted_corruption;
      m.reward_loss = s.reward_loss;
    }
    m.critic_loss = last_sac_.critic;
    m.actor_loss = last_sac_.actor;
    m.alpha = agent_.alpha();
    result_.metrics.push_back(m);
  }

  void write_outputs() const {
    if (out_dir_.empty()) return;
    write_text(out_dir_ + "/metrics.csv", metrics_csv(result_.metrics));
    write_text(out_dir_ + "/metrics.jsonl", metrics_jsonl(result_.metrics));
    std::string sessions;
    for (const auto& s : result_.sessions) sessions += s.to_json().dump() + "\n";
    write_text(out_dir_ + "/sessions.jsonl", sessions);
    std::string prefs;
    for (const auto& t : data_) prefs += triple_to_json(t).dump() + "\n";
    write_text(out_dir_ + "/preferences.jsonl", prefs);
  }

  RunConfig cfg_;
  FeedbackHub* hub_;
  std::unique_ptr<ContinuousEnv> env_;
  SacAgent agent_;
  RewardEnsemble ens_;
  ReplayBuffer buffer_;
  IntrinsicRewardState intrinsic_;
  DiscriminatorState disc_;
  std::optional<ScriptedTeacher> teacher_;
  std::mt19937_64 rng_;
  Rollout rollout_;
  PreferenceDataset data_;
  std::size_t step_ = 0;
  int labels_total_ = 0;
  std::int64_t reward_iteration_ = 0;
  SacLosses last_sac_;
  std::optional<SessionReport> last_session_;
  RunResult result_;
  std::string out_dir_;
};

inline RunResult run(const RunConfig& cfg, const std::string& out_dir = "", FeedbackHub* hub = nullptr) {
  Trainer t(cfg, hub);
  return t.run(out_dir);
}

enum class AblationToggle { warm_start, tau_lower, tau_upper };

struct AblationVariant {
  std::string name;
  RunConfig config;
};

/// Every on/off combination of the toggled components; untoggled components stay on.
/// With all three off the variant is the PEBBLE baseline: no warm start and an
/// unfiltered training set.
inline std::vector<AblationVariant> ablation_matrix(const RunConfig& base, const std::vector<AblationToggle>& toggles) {
  for (std::size_t i = 0; i < toggles.size(); ++i)
    for (std::size_t j = i + 1; j < toggles.size(); ++j)
      if (toggles[i] == toggles[j]) throw std::invalid_argument("ablation_matrix: repeated toggle");
  std::vector<AblationVariant> out;
  const std::size_t n = std::size_t{1} << toggles.size();
  for (std::size_t mask = 0; mask < n; ++mask) {
    RunConfig c = base;
    c.strategy = StrategyKind::rime;
    c.warm_start = true;
    c.discriminator.use_lower = c.discriminator.use_upper = true;
    for (std::size_t k = 0; k < toggles.size(); ++k) {
      const bool on = (mask >> k) & 1u;
      switch (toggles[k]) {
        case AblationToggle::warm_start: c.warm_start = on; break;
        case AblationToggle::tau_lower: c.discriminator.use_lower = on; break;
        case AblationToggle::tau_upper: c.discriminator.use_upper = on; break;
      }
    }
    const std::string name = std::string("ws") + (c.warm_start ? "1" : "0") + "_lower" +
                             (c.discriminator.use_lower ? "1" : "0") + "_upper" + (c.discriminator.use_upper ? "1" : "0");
    out.push_back({name, c});
  }
  return out;
}

}  // namespace rime
