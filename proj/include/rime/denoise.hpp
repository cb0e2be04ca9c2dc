#pragma once

// Denoising discriminator for noisy preference labels, plus the alternative
// robust-training strategies it is compared against.
//
// Per session: every stored sample gets KL(label || P). Samples below the
// dynamic lower bound
//     tau_lower = -ln(rho) + alpha * rho + beta_t * s_KL
// are trusted; samples above the fixed upper bound tau_upper have their
// label reversed; everything in between sits out this update and is
// re-evaluated next session. rho is the largest KL on the training set after
// the last reward update, and starts at +infinity, which makes tau_lower
// infinite so the first session trusts everything.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "rime/log.hpp"
#include "rime/reward_model.hpp"

namespace rime {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

struct DiscriminatorParams {
  double alpha = 0.5;
  double beta_min = 1.0;
  double beta_max = 3.0;
  double decay = 1.0 / 30.0;            // k, per session
  double tau_upper = 3.0 * std::log(10.0);
  bool use_lower = true;                // off: trust everything at or below tau_upper
  bool use_upper = true;                // off: never flip

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 0.5)) throw std::invalid_argument("discriminator alpha must lie in (0, 0.5]");
    if (!(beta_min <= beta_max)) throw std::invalid_argument("discriminator needs beta_min <= beta_max");
    if (!(tau_upper > 0.0)) throw std::invalid_argument("discriminator tau_upper must be positive");
    if (decay < 0.0) throw std::invalid_argument("discriminator decay rate must be non-negative");
  }
};

struct DiscriminatorState {
  DiscriminatorParams params;
  double rho = kInfinity;
  int t = 0;

  DiscriminatorState() = default;
  explicit DiscriminatorState(DiscriminatorParams p) : params(p) { params.validate(); }

  nlohmann::json to_json() const {
    return {{"rho", std::isinf(rho) ? nlohmann::json("inf") : nlohmann::json(rho)}, {"t", t}};
  }
};

/// beta_t = max(beta_min, beta_max - k t)
inline double beta_t(const DiscriminatorState& s) {
  if (s.t < 0) throw std::invalid_argument("beta_t: negative session counter");
  return std::max(s.params.beta_min, s.params.beta_max - s.params.decay * s.t);
}

inline double tau_lower(const DiscriminatorState& s, double s_kl) {
  if (s_kl < 0.0) throw std::invalid_argument("tau_lower: negative KL spread");
  if (std::isinf(s.rho)) return kInfinity;
  if (!(s.rho > 0.0)) throw std::invalid_argument("tau_lower: rho must be positive");
  return -std::log(s.rho) + s.params.alpha * s.rho + beta_t(s) * s_kl;
}

/// Exact KL lower bound for corrupted samples when clean CE <= rho:
/// -ln(1 - e^-rho) = -ln(rho) + rho/2 + O(rho^2).
inline double theorem1_bound(double rho) {
  if (!(rho > 0.0)) throw std::invalid_argument("theorem1_bound: rho must be positive");
  return -std::log(-std::expm1(-rho));
}

struct FilterReport {
  std::vector<double> kl;
  double s_kl = 0.0;
  double tau_lower = 0.0;
  double tau_upper = 0.0;
  double beta = 0.0;
  double rho = kInfinity;
  std::vector<std::size_t> trusted;
  std::vector<std::size_t> flipped;
  std::vector<std::size_t> discarded;

  nlohmann::json to_json() const {
    auto num = [](double v) { return std::isinf(v) ? nlohmann::json("inf") : nlohmann::json(v); };
    return {{"s_kl", s_kl},         {"tau_lower", num(tau_lower)}, {"tau_upper", num(tau_upper)},
            {"beta", beta},         {"rho", num(rho)},             {"n_trusted", trusted.size()},
            {"n_flipped", flipped.size()}, {"n_discarded", discarded.size()}, {"kl", kl},
            {"trusted", trusted},   {"flipped", flipped},          {"discarded", discarded}};
  }
};

inline double population_std(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

/// Partitions samples by precomputed KL. The trusted set takes precedence, so
/// the three index sets always partition the input.
inline FilterReport filter_by_kl(const DiscriminatorState& s, std::vector<double> kl) {
  FilterReport r;
  r.s_kl = population_std(kl);
  r.beta = beta_t(s);
  r.rho = s.rho;
  r.tau_upper = s.params.use_upper ? s.params.tau_upper : kInfinity;
  r.tau_lower = s.params.use_lower ? tau_lower(s, r.s_kl) : s.params.tau_upper;
  for (std::size_t i = 0; i < kl.size(); ++i) {
    if (kl[i] < r.tau_lower || (!s.params.use_lower && !s.params.use_upper))
      r.trusted.push_back(i);
    else if (kl[i] > r.tau_upper)
      r.flipped.push_back(i);
    else
      r.discarded.push_back(i);
  }
  r.kl = std::move(kl);
  return r;
}

inline FilterReport filter(const DiscriminatorState& s, const RewardEnsemble& ens, const PreferenceDataset& data) {
  if (data.empty()) throw std::invalid_argument("filter: empty preference dataset");
  return filter_by_kl(s, dataset_kl(ens, RewardEnsemble::pointers(data)));
}

/// Training set D_t u D_f: trusted samples keep their label, flipped samples get 1 - y.
struct TrainingSet {
  std::vector<const PreferenceTriple*> samples;
  std::vector<PreferenceLabel> labels;
  std::size_t size() const { return samples.size(); }
};

inline TrainingSet training_set(const FilterReport& r, const PreferenceDataset& data) {
  TrainingSet ts;
  for (std::size_t i : r.trusted) {
    ts.samples.push_back(&data[i]);
    ts.labels.push_back(data[i].label);
  }
  for (std::size_t i : r.flipped) {
    ts.samples.push_back(&data[i]);
    ts.labels.push_back(data[i].label.flipped());
  }
  return ts;
}

inline TrainingSet full_set(const PreferenceDataset& data) {
  TrainingSet ts;
  ts.samples = RewardEnsemble::pointers(data);
  ts.labels = RewardEnsemble::labels_of(ts.samples);
  return ts;
}

/// rho <- max KL over D_t u D_f (flipped labels for D_f) under the current model.
/// Returns false and leaves rho unchanged when both sets are empty.
inline bool update_rho(DiscriminatorState& s, const RewardEnsemble& ens, const PreferenceDataset& data,
                       const FilterReport& r) {
  const TrainingSet ts = training_set(r, data);
  if (ts.size() == 0) {
    log_warn("update_rho: trusted and flipped sets are empty; rho unchanged");
    return false;
  }
  const auto kl = dataset_kl(ens, ts.samples, &ts.labels);
  s.rho = std::max(*std::max_element(kl.begin(), kl.end()), kProbClamp);
  return true;
}

struct FilterQuality {
  std::size_t corrupted_total = 0;
  std::size_t flipped_correct = 0;     // samples in D_f that were corrupted
  std::size_t trusted_corrupted = 0;   // corrupted samples left in D_t
  double flip_precision = 0.0;         // of D_f, fraction corrupted (1 when D_f is empty)
  double flip_recall = 0.0;            // of corrupted samples, fraction in D_f
  double trusted_corruption = 0.0;     // of D_t, fraction corrupted
};

/// Scores a report against ground-truth labels; evaluation only.
inline FilterQuality evaluate_filter(const FilterReport& r, const PreferenceDataset& data) {
  auto corrupted = [&](std::size_t i) {
    return data[i].true_label && !(data[i].label == *data[i].true_label);
  };
  FilterQuality q;
  for (std::size_t i = 0; i < data.size(); ++i) q.corrupted_total += corrupted(i);
  for (std::size_t i : r.flipped) q.flipped_correct += corrupted(i);
  for (std::size_t i : r.trusted) q.trusted_corrupted += corrupted(i);
  q.flip_precision = r.flipped.empty() ? 1.0 : static_cast<double>(q.flipped_correct) / r.flipped.size();
  q.flip_recall = q.corrupted_total == 0 ? 1.0 : static_cast<double>(q.flipped_correct) / q.corrupted_total;
  q.trusted_corruption = r.trusted.empty() ? 0.0 : static_cast<double>(q.trusted_corrupted) / r.trusted.size();
  return q;
}

// ---------------------------------------------------------------------------
// Alternative robust-training strategies.

enum class StrategyKind { rime, none, adt, mae, tce, label_smoothing };

inline StrategyKind parse_strategy(const std::string& s) {
  if (s == "rime") return StrategyKind::rime;
  if (s == "none" || s == "pebble") return StrategyKind::none;
  if (s == "adt") return StrategyKind::adt;
  if (s == "mae") return StrategyKind::mae;
  if (s == "tce" || s == "t-ce") return StrategyKind::tce;
  if (s == "label_smoothing" || s == "ls") return StrategyKind::label_smoothing;
  throw std::invalid_argument("unknown robust strategy: " + s);
}

inline std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::rime: return "rime";
    case StrategyKind::none: return "none";
    case StrategyKind::adt: return "adt";
    case StrategyKind::mae: return "mae";
    case StrategyKind::tce: return "tce";
    case StrategyKind::label_smoothing: return "label_smoothing";
  }
  return "?";
}

struct RobustParams {
  double adt_tau_max = 0.3;
  double adt_gamma = 0.003;
  int tce_order = 4;
  double ls_r = 0.1;

  void validate() const {
    if (!(adt_tau_max >= 0.0 && adt_tau_max < 1.0)) throw std::invalid_argument("ADT tau_max must lie in [0, 1)");
    if (adt_gamma < 0.0) throw std::invalid_argument("ADT gamma must be non-negative");
    if (tce_order < 1) throw std::invalid_argument("t-CE order must be at least 1");
    if (!(ls_r >= 0.0 && ls_r <= 1.0)) throw std::invalid_argument("label smoothing r must lie in [0, 1]");
  }
};

/// L1 distance |y - P| summed over both components: 2 |y0 - P0|.
inline double mae_logit_loss(double z, const PreferenceLabel& y, double* dz) {
  const double p0 = sigmoid(z);
  const double diff = p0 - y.y0;
  if (dz) *dz = 2.0 * (diff > 0.0 ? 1.0 : diff < 0.0 ? -1.0 : 0.0) * p0 * (1.0 - p0);
  return 2.0 * std::abs(diff);
}

/// sum_{i=1..t} (1 - y.P)^i / i
inline LogitLoss make_tce_loss(int order) {
  return [order](double z, const PreferenceLabel& y, double* dz) {
    const double p0 = sigmoid(z);
    const double q = 1.0 - (y.y0 * p0 + y.y1 * (1.0 - p0));
    double loss = 0.0, dq = 0.0, pw = 1.0;
    for (int i = 1; i <= order; ++i) {
      dq += pw;  // q^(i-1)
      pw *= q;
      loss += pw / i;
    }
    if (dz) *dz = dq * -(y.y0 - y.y1) * p0 * (1.0 - p0);
    return loss;
  };
}

inline PreferenceLabel smooth_label(const PreferenceLabel& y, double r) {
  return {(1.0 - r) * y.y0 + 0.5 * r, (1.0 - r) * y.y1 + 0.5 * r};
}

/// Cross-entropy against (1 - r) y + r/2 [1, 1].
inline LogitLoss make_label_smoothing_loss(double r) {
  return [r](double z, const PreferenceLabel& y, double* dz) { return ce_logit_loss(z, smooth_label(y, r), dz); };
}

/// Fraction of largest-loss samples dropped at an ADT iteration: min(gamma t, tau_max).
inline double adt_drop_rate(const RobustParams& p, std::int64_t iteration) {
  return std::min(p.adt_gamma * static_cast<double>(iteration), p.adt_tau_max);
}

struct StrategyResult {
  LossResult loss;
  std::vector<std::size_t> kept;  // batch positions that contributed
};

/// Loss and gradients for one training iteration under a robust strategy.
/// rime and none both use plain cross-entropy on the batch they are given.
inline StrategyResult robust_strategy_loss(StrategyKind kind, const RobustParams& params, const RewardEnsemble& ens,
                                           const std::vector<const PreferenceTriple*>& batch,
                                           const std::vector<PreferenceLabel>& labels, std::int64_t iteration) {
  params.validate();
  StrategyResult out;
  out.kept.resize(batch.size());
  std::iota(out.kept.begin(), out.kept.end(), std::size_t{0});
  switch (kind) {
    case StrategyKind::rime:
    case StrategyKind::none:
      out.loss = ens.ce_loss(batch, labels);
      break;
    case StrategyKind::mae:
      out.loss = ens.preference_loss(batch, labels, mae_logit_loss);
      break;
    case StrategyKind::tce:
      out.loss = ens.preference_loss(batch, labels, make_tce_loss(params.tce_order));
      break;
    case StrategyKind::label_smoothing:
      out.loss = ens.preference_loss(batch, labels, make_label_smoothing_loss(params.ls_r));
      break;
    case StrategyKind::adt: {
      const double drop = adt_drop_rate(params, iteration);
      const auto n_drop = static_cast<std::size_t>(std::floor(drop * static_cast<double>(batch.size())));
      if (n_drop > 0) {
        // rank by ensemble-summed CE, keep the smallest-loss samples
        const Mat z = ens.logits(batch);
        std::vector<double> ce(batch.size(), 0.0);
        for (std::size_t i = 0; i < batch.size(); ++i)
          for (Eigen::Index m = 0; m < z.rows(); ++m)
            ce[i] += ce_logit_loss(z(m, static_cast<Eigen::Index>(i)), labels[i], nullptr);
        std::stable_sort(out.kept.begin(), out.kept.end(), [&](std::size_t a, std::size_t b) { return ce[a] < ce[b]; });
        out.kept.resize(batch.size() - n_drop);
        std::sort(out.kept.begin(), out.kept.end());
      }
      std::vector<const PreferenceTriple*> kb;
      std::vector<PreferenceLabel> kl;
      for (std::size_t i : out.kept) {
        kb.push_back(batch[i]);
        kl.push_back(labels[i]);
      }
      out.loss = ens.ce_loss(kb, kl);
      break;
    }
  }
  return out;
}

}  // namespace rime
