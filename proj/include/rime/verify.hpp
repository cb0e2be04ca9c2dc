#pragma once

// Executable checks of the corrupted-sample KL bound, the reward-error to
// Q-error bound, and scripted-teacher noise rates.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "rime/denoise.hpp"
#include "rime/mdp.hpp"
#include "rime/stats.hpp"
#include "rime/teachers.hpp"

namespace rime {

struct Counterexample {
  double rho = 0.0;
  std::string label_case;
  double p0 = 0.0;
  double observed = 0.0;
  double bound = 0.0;
};

/// worst_margin = max over checked points of (bound - observed); passes when
/// worst_margin <= tolerance.
struct BoundCheckReport {
  std::string grid;
  double worst_margin = -kInfinity;
  double tolerance = 0.0;
  bool pass = true;
  std::size_t points_checked = 0;
  std::optional<Counterexample> counterexample;
  nlohmann::json details = nlohmann::json::object();

  void record(double observed, double bound, const Counterexample& where) {
    ++points_checked;
    const double margin = bound - observed;
    if (margin > worst_margin) {
      worst_margin = margin;
      if (margin > tolerance) {
        pass = false;
        counterexample = where;
        counterexample->observed = observed;
        counterexample->bound = bound;
      }
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j = {{"grid", grid},
                        {"worst_margin", worst_margin},
                        {"tolerance", tolerance},
                        {"pass", pass},
                        {"points_checked", points_checked},
                        {"details", details}};
    if (counterexample)
      j["counterexample"] = {{"rho", counterexample->rho},
                             {"label_case", counterexample->label_case},
                             {"p0", counterexample->p0},
                             {"observed", counterexample->observed},
                             {"bound", counterexample->bound}};
    return j;
  }
};

inline std::vector<double> default_rho_grid() { return {0.01, 0.05, 0.1, 0.5, std::log(2.0), 1.0, 2.0, 5.0}; }

/// Brute force over every rho, label case y(0) in {0, 1, 0.5}, and P0 on an open
/// grid plus the analytic constraint boundaries: wherever the clean-label CE is
/// at most rho, the KL to the corrupted label must be at least -ln(1 - e^-rho).
inline BoundCheckReport check_theorem1(const std::vector<double>& rho_grid, std::size_t p_grid_size,
                                       double tolerance = 1e-9) {
  if (rho_grid.empty() || p_grid_size == 0) throw std::invalid_argument("check_theorem1: empty grid");
  BoundCheckReport rep;
  rep.tolerance = tolerance;
  rep.grid = std::to_string(rho_grid.size()) + " rho values x " + std::to_string(p_grid_size) + " probabilities x 3 label cases";
  std::size_t feasible[3] = {0, 0, 0};
  double case_margin[3] = {-kInfinity, -kInfinity, -kInfinity};
  auto check = [&](int c, double observed, double bound, const Counterexample& where) {
    ++feasible[c];
    case_margin[c] = std::max(case_margin[c], bound - observed);
    rep.record(observed, bound, where);
  };

  for (double rho : rho_grid) {
    const double bound = theorem1_bound(rho);
    std::vector<double> ps;
    ps.reserve(p_grid_size + 4);
    for (std::size_t i = 0; i < p_grid_size; ++i) ps.push_back(static_cast<double>(i + 1) / static_cast<double>(p_grid_size + 1));
    const double edge = -std::expm1(-rho);  // 1 - e^-rho
    ps.push_back(edge);
    ps.push_back(1.0 - edge);
    if (rho >= std::log(2.0)) {
      const double root = std::sqrt(std::max(0.0, 1.0 - 4.0 * std::exp(-2.0 * rho)));
      ps.push_back(0.5 * (1.0 + root));
      ps.push_back(0.5 * (1.0 - root));
    }
    for (double p : ps) {
      if (!(p > 0.0 && p < 1.0)) continue;
      const double ln_p = std::log(p), ln_q = std::log1p(-p);
      // y(0) = 0: clean CE -ln(1 - P0), corrupted label (1, 0)
      if (-ln_q <= rho) check(0, -ln_p, bound, {rho, "y0=0", p});
      // y(0) = 1: clean CE -ln P0, corrupted label (0, 1)
      if (-ln_p <= rho) check(1, -ln_q, bound, {rho, "y0=1", p});
      // y(0) = 0.5: feasible only for rho >= ln 2; corrupted to either hard label
      if (rho >= std::log(2.0) && -0.5 * (ln_p + ln_q) <= rho) check(2, std::min(-ln_p, -ln_q), bound, {rho, "y0=0.5", p});
    }
  }
  auto margin_json = [](double m) { return std::isinf(m) ? nlohmann::json(nullptr) : nlohmann::json(m); };
  rep.details = {{"feasible_y0_0", feasible[0]},
                 {"feasible_y0_1", feasible[1]},
                 {"feasible_y0_half", feasible[2]},
                 {"worst_margin_y0_0", margin_json(case_margin[0])},
                 {"worst_margin_y0_1", margin_json(case_margin[1])},
                 {"worst_margin_y0_half", margin_json(case_margin[2])}};
  return rep;
}

struct QBoundOptions {
  int num_states = 8;
  int num_actions = 3;
  std::uint64_t seed = 0;
};

/// For random MDPs and policies, perturbs the reward by at most delta in sup
/// norm and checks max |Q_perturbed - Q| <= delta / (1 - gamma). The roles are
/// swapped in the report, so margin = error - delta / (1 - gamma).
inline BoundCheckReport check_q_bound(std::size_t num_mdps, double delta, double gamma, QBoundOptions opt = {},
                                      double tolerance = 1e-8) {
  if (delta < 0.0 || !(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("check_q_bound: bad delta or gamma");
  BoundCheckReport rep;
  rep.tolerance = tolerance;
  rep.grid = std::to_string(num_mdps) + " MDPs, delta=" + std::to_string(delta) + ", gamma=" + std::to_string(gamma);
  const double bound = delta / (1.0 - gamma);
  double worst_ratio = 0.0;
  for (std::size_t i = 0; i < num_mdps; ++i) {
    const std::uint64_t seed = opt.seed + 1000 * i;
    const TabularMdp mdp = random_mdp(seed, opt.num_states, opt.num_actions, gamma);
    const Mat pi = random_policy(seed + 1, opt.num_states, opt.num_actions);
    std::mt19937_64 rng(seed + 2);
    std::uniform_real_distribution<double> u(-delta, delta);
    Mat perturbed = mdp.reward;
    for (Eigen::Index k = 0; k < perturbed.size(); ++k) perturbed.data()[k] += u(rng);
    const Mat q_true = policy_eval(mdp, pi, mdp.reward);
    const Mat q_hat = policy_eval(mdp, pi, perturbed);
    const double err = (q_hat - q_true).cwiseAbs().maxCoeff();
    if (bound > 0.0) worst_ratio = std::max(worst_ratio, err / bound);
    rep.record(bound, err, {0.0, "mdp " + std::to_string(i), 0.0});
  }

  // constant shift r + delta attains the bound
  double witness_ratio = 1.0;
  if (num_mdps > 0 && delta > 0.0) {
    const TabularMdp mdp = random_mdp(opt.seed, opt.num_states, opt.num_actions, gamma);
    const Mat pi = random_policy(opt.seed + 1, opt.num_states, opt.num_actions);
    const Mat shifted = mdp.reward.array() + delta;
    const Mat diff = policy_eval(mdp, pi, shifted) - policy_eval(mdp, pi, mdp.reward);
    witness_ratio = diff.cwiseAbs().minCoeff() / bound;
  }
  rep.details = {{"bound", bound}, {"worst_error_ratio", worst_ratio}, {"witness_ratio", witness_ratio}};
  return rep;
}

struct TeacherStatistics {
  std::size_t pairs = 0;
  std::size_t ties = 0;
  stats::BinomialEstimate flip;   // over non-tie labeled pairs: label differs from oracle
  stats::BinomialEstimate skip;   // over all pairs
  stats::BinomialEstimate equal;  // over labeled pairs

  nlohmann::json to_json() const {
    auto est = [](const stats::BinomialEstimate& e) {
      return nlohmann::json{{"rate", e.rate}, {"lower", e.lower}, {"upper", e.upper}, {"n", e.trials}};
    };
    return {{"pairs", pairs}, {"ties", ties}, {"flip", est(flip)}, {"skip", est(skip)}, {"equal", est(equal)}};
  }
};

using RewardPairGenerator = std::function<std::pair<std::vector<double>, std::vector<double>>(std::mt19937_64&)>;

/// Per-step rewards U(lo, hi) for two segments of length H.
inline RewardPairGenerator uniform_reward_pairs(std::size_t H, double lo = 0.0, double hi = 1.0) {
  return [=](std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> a(H), b(H);
    for (auto& x : a) x = u(rng);
    for (auto& x : b) x = u(rng);
    return std::make_pair(a, b);
  };
}

/// Empirical flip, skip and equal rates of a scripted teacher with 3-sigma intervals.
inline TeacherStatistics teacher_statistics(ScriptedTeacher& teacher, std::size_t n_pairs, const RewardPairGenerator& gen,
                                            std::uint64_t seed = 0) {
  std::mt19937_64 rng(seed);
  TeacherStatistics s;
  std::size_t flips = 0, non_tie_labeled = 0, skips = 0, equals = 0, labeled = 0;
  for (std::size_t i = 0; i < n_pairs; ++i) {
    const auto [r0, r1] = gen(rng);
    const TeacherOutcome out = teacher.label(r0, r1);
    ++s.pairs;
    if (out.oracle.is_equal()) ++s.ties;
    if (!out.label) {
      ++skips;
      continue;
    }
    ++labeled;
    if (out.label->is_equal()) ++equals;
    if (!out.oracle.is_equal()) {
      ++non_tie_labeled;
      if (!(*out.label == out.oracle)) ++flips;
    }
  }
  s.flip = stats::binomial_estimate(flips, non_tie_labeled);
  s.skip = stats::binomial_estimate(skips, n_pairs);
  s.equal = stats::binomial_estimate(equals, labeled);
  return s;
}

}  // namespace rime
