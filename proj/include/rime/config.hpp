#pragma once

// Run configuration. Files are plain "key = value" lines; '#' starts a comment.
// Environment options use the "env." prefix and are forwarded to the env registry.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rime/denoise.hpp"
#include "rime/query.hpp"
#include "rime/reward_model.hpp"
#include "rime/sac.hpp"
#include "rime/teachers.hpp"

namespace rime {

using KeyValues = std::map<std::string, std::string>;

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline KeyValues load_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  return parse_key_values(in);
}

inline double parse_number(const std::string& key, const std::string& v) {
  // accepts plain numbers and the forms "a/b" and "a*ln(b)"
  auto plain = [&](const std::string& s) {
    std::size_t used = 0;
    double x = 0.0;
    try {
      x = std::stod(s, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("config key '" + key + "': not a number: " + v);
    }
    if (trim(s.substr(used)).size()) throw std::invalid_argument("config key '" + key + "': not a number: " + v);
    return x;
  };
  if (const auto slash = v.find('/'); slash != std::string::npos)
    return plain(trim(v.substr(0, slash))) / plain(trim(v.substr(slash + 1)));
  if (const auto ln = v.find("ln("); ln != std::string::npos) {
    const auto close = v.find(')', ln);
    std::string coef = trim(v.substr(0, ln));
    if (!coef.empty() && coef.back() == '*') coef.pop_back();
    const double c = coef.empty() ? 1.0 : plain(trim(coef));
    return c * std::log(plain(v.substr(ln + 3, close - ln - 3)));
  }
  return plain(v);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw std::invalid_argument("config key '" + key + "': not a boolean: " + v);
}

inline std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<int>(parse_number(key, trim(item))));
  if (out.empty()) throw std::invalid_argument("config key '" + key + "': empty list");
  return out;
}

enum class RhoUpdate { post_update, pre_update };
enum class CounterUnit { session, epoch };

struct RunConfig {
  std::string env = "point_mass";
  std::map<std::string, double> env_options;
  std::uint64_t seed = 1;

  std::size_t total_steps = 12000;
  std::size_t pretrain_steps = 2000;
  std::size_t random_steps = 500;
  std::size_t replay_capacity = 100000;
  std::size_t segment_length = 50;

  QuerySchedule schedule;
  TeacherConfig teacher;

  StrategyKind strategy = StrategyKind::rime;
  DiscriminatorParams discriminator;
  RobustParams robust;
  RhoUpdate rho_update = RhoUpdate::post_update;
  CounterUnit counter_unit = CounterUnit::session;

  bool warm_start = true;
  int reset_critics = -1;  // -1: reset exactly when warm start is off

  RewardModelConfig reward;
  std::size_t reward_batch = 128;
  int reward_epochs = 50;
  double reward_early_stop = 0.01;
  int intrinsic_k = 5;
  double intrinsic_delta = 1e-8;

  SacConfig sac;
  int updates_per_step = 1;

  std::size_t metrics_every = 1000;
  int eval_episodes = 10;

  bool resets_critics() const { return reset_critics < 0 ? !warm_start : reset_critics != 0; }

  void validate() const {
    schedule.validate();
    teacher.validate();
    discriminator.validate();
    robust.validate();
    if (pretrain_steps > total_steps) throw std::invalid_argument("pretrain_steps exceeds total_steps");
    if (replay_capacity < pretrain_steps) throw std::invalid_argument("replay capacity must cover pre-training");
    if (segment_length < 1) throw std::invalid_argument("segment_length must be positive");
    if (reward_epochs < 1) throw std::invalid_argument("reward_epochs must be positive");
    if (updates_per_step < 0) throw std::invalid_argument("updates_per_step must be non-negative");
    if (metrics_every == 0) throw std::invalid_argument("metrics_every must be positive");
    if (eval_episodes < 1) throw std::invalid_argument("eval_episodes must be positive");
  }

  static RunConfig from_key_values(const KeyValues& kv) {
    RunConfig c;
    for (const auto& [key, value] : kv) c.set(key, value);
    c.teacher.seed = c.seed * 31 + 7;
    c.teacher.episode_length = static_cast<int>(c.env_options.count("horizon") ? c.env_options.at("horizon") : 100);
    c.validate();
    return c;
  }

  static RunConfig from_file(const std::string& path) { return from_key_values(load_key_values(path)); }

  void set(const std::string& key, const std::string& v) {
    auto num = [&] { return parse_number(key, v); };
    auto count = [&] {
      const double x = num();
      if (x < 0 || std::floor(x) != x) throw std::invalid_argument("config key '" + key + "': expected a count");
      return static_cast<std::size_t>(x);
    };
    if (key.rfind("env.", 0) == 0) {
      env_options[key.substr(4)] = num();
      if (key == "env.horizon") teacher.episode_length = static_cast<int>(num());
    }
    else if (key == "env") env = v;
    else if (key == "seed") seed = count();
    else if (key == "total_steps") total_steps = count();
    else if (key == "pretrain_steps") pretrain_steps = count();
    else if (key == "random_steps") random_steps = count();
    else if (key == "replay_capacity") replay_capacity = count();
    else if (key == "segment_length") segment_length = count();
    else if (key == "budget.total") schedule.total_budget = static_cast<int>(count());
    else if (key == "budget.per_session") schedule.per_session = static_cast<int>(count());
    else if (key == "budget.interval") schedule.session_interval_steps = static_cast<int>(count());
    else if (key == "budget.candidates") schedule.candidate_pool_size = static_cast<int>(count());
    else if (key == "teacher") teacher.kind = parse_teacher_kind(v);
    else if (key == "teacher.epsilon") teacher.epsilon = num();
    else if (key == "teacher.eps_adapt") teacher.eps_adapt = num();
    else if (key == "teacher.gamma") teacher.gamma_myopic = num();
    else if (key == "strategy") strategy = parse_strategy(v);
    else if (key == "rime.alpha") discriminator.alpha = num();
    else if (key == "rime.beta_min") discriminator.beta_min = num();
    else if (key == "rime.beta_max") discriminator.beta_max = num();
    else if (key == "rime.decay") discriminator.decay = num();
    else if (key == "rime.tau_upper") discriminator.tau_upper = num();
    else if (key == "rime.use_lower") discriminator.use_lower = parse_bool(key, v);
    else if (key == "rime.use_upper") discriminator.use_upper = parse_bool(key, v);
    else if (key == "rime.rho_update") {
      if (v == "post") rho_update = RhoUpdate::post_update;
      else if (v == "pre") rho_update = RhoUpdate::pre_update;
      else throw std::invalid_argument("rime.rho_update must be pre or post");
    } else if (key == "rime.counter") {
      if (v == "session") counter_unit = CounterUnit::session;
      else if (v == "epoch") counter_unit = CounterUnit::epoch;
      else throw std::invalid_argument("rime.counter must be session or epoch");
    }
    else if (key == "adt.tau_max") robust.adt_tau_max = num();
    else if (key == "adt.gamma") robust.adt_gamma = num();
    else if (key == "tce.order") robust.tce_order = static_cast<int>(count());
    else if (key == "ls.r") robust.ls_r = num();
    else if (key == "warm_start") warm_start = parse_bool(key, v);
    else if (key == "reset_critics") reset_critics = parse_bool(key, v) ? 1 : 0;
    else if (key == "reward.ensemble") reward.ensemble_size = static_cast<int>(count());
    else if (key == "reward.hidden") reward.hidden = parse_int_list(key, v);
    else if (key == "reward.activation") reward.activation = parse_activation(v);
    else if (key == "reward.lr") reward.lr = num();
    else if (key == "reward.kl_mode") {
      if (v == "mean_prob") reward.kl_mode = EnsembleKl::mean_prob;
      else if (v == "mean_kl") reward.kl_mode = EnsembleKl::mean_kl;
      else throw std::invalid_argument("reward.kl_mode must be mean_prob or mean_kl");
    }
    else if (key == "reward.batch") reward_batch = count();
    else if (key == "reward.epochs") reward_epochs = static_cast<int>(count());
    else if (key == "reward.early_stop") reward_early_stop = num();
    else if (key == "intrinsic.k") intrinsic_k = static_cast<int>(count());
    else if (key == "intrinsic.delta") intrinsic_delta = num();
    else if (key == "sac.hidden") sac.hidden = parse_int_list(key, v);
    else if (key == "sac.activation") sac.activation = parse_activation(v);
    else if (key == "sac.actor_lr") sac.actor_lr = num();
    else if (key == "sac.critic_lr") sac.critic_lr = num();
    else if (key == "sac.alpha_lr") sac.alpha_lr = num();
    else if (key == "sac.lr") sac.actor_lr = sac.critic_lr = sac.alpha_lr = num();
    else if (key == "sac.gamma") sac.gamma = num();
    else if (key == "sac.tau") sac.tau = num();
    else if (key == "sac.init_temperature") sac.init_temperature = num();
    else if (key == "sac.target_entropy") sac.target_entropy = num();
    else if (key == "sac.target_update_freq") sac.critic_target_update_freq = static_cast<int>(count());
    else if (key == "sac.actor_update_freq") sac.actor_update_freq = static_cast<int>(count());
    else if (key == "sac.batch") sac.batch_size = count();
    else if (key == "sac.updates_per_step") updates_per_step = static_cast<int>(count());
    else if (key == "metrics.every") metrics_every = count();
    else if (key == "metrics.eval_episodes") eval_episodes = static_cast<int>(count());
    else throw std::invalid_argument("unknown config key: " + key);
  }
};

}  // namespace rime
