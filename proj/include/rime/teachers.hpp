#pragma once

// Scripted preference teachers (oracle, mistake, equal, skip, myopic).
// Labels come from ground-truth per-step rewards of the two segments.

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>

#include "rime/reward_model.hpp"

namespace rime {

enum class TeacherKind { oracle, mistake, equal, skip, myopic, human };

inline TeacherKind parse_teacher_kind(const std::string& s) {
  if (s == "oracle") return TeacherKind::oracle;
  if (s == "mistake") return TeacherKind::mistake;
  if (s == "equal") return TeacherKind::equal;
  if (s == "skip") return TeacherKind::skip;
  if (s == "myopic") return TeacherKind::myopic;
  if (s == "human") return TeacherKind::human;
  throw std::invalid_argument("unknown teacher kind: " + s);
}

inline std::string to_string(TeacherKind k) {
  switch (k) {
    case TeacherKind::oracle: return "oracle";
    case TeacherKind::mistake: return "mistake";
    case TeacherKind::equal: return "equal";
    case TeacherKind::skip: return "skip";
    case TeacherKind::myopic: return "myopic";
    case TeacherKind::human: return "human";
  }
  return "?";
}

struct TeacherConfig {
  TeacherKind kind = TeacherKind::oracle;
  double epsilon = 0.0;       // mistake flip probability
  double eps_adapt = 0.1;     // equal / skip threshold scale
  double gamma_myopic = 0.9;
  std::uint64_t seed = 0;
  int episode_length = 100;

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 0.5)) throw std::invalid_argument("teacher epsilon must lie in [0, 0.5]");
    if (!(gamma_myopic > 0.0 && gamma_myopic < 1.0)) throw std::invalid_argument("myopic gamma must lie in (0, 1)");
    if (eps_adapt < 0.0) throw std::invalid_argument("teacher eps_adapt must be non-negative");
    if (episode_length <= 0) throw std::invalid_argument("teacher episode length must be positive");
  }
};

/// Prefers the larger return; an exact tie gives (0.5, 0.5).
inline PreferenceLabel oracle_label(double return0, double return1) {
  if (return0 > return1) return PreferenceLabel::left();
  if (return1 > return0) return PreferenceLabel::right();
  return PreferenceLabel::equal();
}

struct TeacherOutcome {
  std::optional<PreferenceLabel> label;  // nullopt when the query is skipped
  PreferenceLabel oracle;                // noise-free label for evaluation
  bool flipped = false;
};

class ScriptedTeacher {
 public:
  explicit ScriptedTeacher(TeacherConfig cfg) : cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    if (cfg_.kind == TeacherKind::human) throw std::invalid_argument("human labels come from the feedback service");
  }

  const TeacherConfig& config() const { return cfg_; }
  double running_return() const { return r_avg_; }

  /// delta = (H / T) * R_avg * eps_adapt
  double threshold(std::size_t segment_length) const {
    return static_cast<double>(segment_length) / cfg_.episode_length * r_avg_ * cfg_.eps_adapt;
  }

  TeacherOutcome label(std::span<const double> rewards0, std::span<const double> rewards1) {
    if (rewards0.empty() || rewards1.empty()) throw std::invalid_argument("teacher needs ground-truth rewards");
    if (rewards0.size() != rewards1.size()) throw std::invalid_argument("teacher segments differ in length");
    const double r0 = sum(rewards0), r1 = sum(rewards1);
    TeacherOutcome out;
    out.oracle = oracle_label(r0, r1);
    const double delta = threshold(rewards0.size());
    switch (cfg_.kind) {
      case TeacherKind::oracle:
        out.label = out.oracle;
        break;
      case TeacherKind::mistake: {
        const bool flip = std::bernoulli_distribution(cfg_.epsilon)(rng_);
        out.label = flip ? out.oracle.flipped() : out.oracle;
        out.flipped = flip && !out.oracle.is_equal();
        break;
      }
      case TeacherKind::equal:
        // threshold on an absolute difference; |delta| keeps it meaningful for negative returns
        out.label = std::abs(r1 - r0) < std::abs(delta) ? PreferenceLabel::equal() : out.oracle;
        break;
      case TeacherKind::skip:
        if (std::max(r0, r1) < delta) return out;
        out.label = out.oracle;
        break;
      case TeacherKind::myopic:
        out.label = oracle_label(discounted(rewards0), discounted(rewards1));
        break;
      case TeacherKind::human:
        break;
    }
    return out;
  }

  /// EMA with coefficient 0.1; the first episode initializes R_avg.
  double update_running_return(double episode_return) {
    if (!has_return_) {
      r_avg_ = episode_return;
      has_return_ = true;
    } else {
      r_avg_ = 0.9 * r_avg_ + 0.1 * episode_return;
    }
    return r_avg_;
  }

 private:
  static double sum(std::span<const double> r) {
    double s = 0.0;
    for (double x : r) s += x;
    return s;
  }

  // sum_t gamma^(H - t) r_t, t = 1..H
  double discounted(std::span<const double> r) const {
    double s = 0.0, w = 1.0;
    for (std::size_t i = r.size(); i-- > 0;) {
      s += w * r[i];
      w *= cfg_.gamma_myopic;
    }
    return s;
  }

  TeacherConfig cfg_;
  std::mt19937_64 rng_;
  double r_avg_ = 0.0;
  bool has_return_ = false;
};

}  // namespace rime
