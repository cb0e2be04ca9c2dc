#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace rime;
using rime::testing::random_segment;

namespace {

DiscriminatorState state(double rho, int t, DiscriminatorParams p = {}) {
  DiscriminatorState s(p);
  s.rho = rho;
  s.t = t;
  return s;
}

double std_dev(const std::vector<double>& v) {
  double m = 0.0, ss = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

// Single linear member r(s) = tanh(s0); seg1 sits at zero so z = H tanh(s0 of seg0).
RewardEnsemble linear_probe() {
  RewardModelConfig c;
  c.ensemble_size = 1;
  c.hidden = {};
  RewardEnsemble ens(1, 1, c, 1);
  ens.member(0).params().setZero();
  ens.member(0).params()[0] = 1.0;
  return ens;
}

PreferenceTriple probe_pair(double z, PreferenceLabel y) {
  PreferenceTriple t;
  t.seg0.states = Mat::Constant(1, 2, std::atanh(z / 2.0));
  t.seg0.actions = Mat::Zero(1, 2);
  t.seg1.states = Mat::Zero(1, 2);
  t.seg1.actions = Mat::Zero(1, 2);
  t.label = y;
  return t;
}

}  // namespace

TEST(Schedule, BetaDecaysToFloor) {
  const std::vector<std::pair<int, double>> cases{{0, 3.0}, {30, 2.0}, {60, 1.0}, {90, 1.0}, {15, 2.5}};
  for (const auto& [t, beta] : cases) EXPECT_NEAR(beta_t(state(1.0, t)), beta, 1e-14) << "t=" << t;
  EXPECT_THROW(beta_t(state(1.0, -1)), std::invalid_argument);
}

TEST(Schedule, DefaultsAndAlphaRange) {
  const DiscriminatorParams p;
  EXPECT_NEAR(p.tau_upper, 3.0 * std::log(10.0), 1e-15);
  EXPECT_NEAR(p.decay, 1.0 / 30.0, 1e-15);
  for (double bad : {0.0, -0.1, 0.6, 1.0}) {
    DiscriminatorParams q;
    q.alpha = bad;
    EXPECT_THROW(q.validate(), std::invalid_argument) << bad;
  }
  DiscriminatorParams edge;
  edge.alpha = 0.5;
  EXPECT_NO_THROW(edge.validate());
}

TEST(LowerThreshold, WorkedValues) {
  EXPECT_NEAR(tau_lower(state(0.1, 90), 0.0), 2.352585, 1e-6);
  EXPECT_NEAR(tau_lower(state(1.0, 60), 0.2), 0.7, 1e-14);
  EXPECT_TRUE(std::isinf(tau_lower(state(kInfinity, 0), 0.5)));
  EXPECT_THROW(tau_lower(state(0.0, 0), 0.1), std::invalid_argument);
}

TEST(TheoremBound, ClosedFormValues) {
  EXPECT_NEAR(theorem1_bound(std::log(2.0)), std::log(2.0), 1e-14);
  EXPECT_NEAR(theorem1_bound(0.1), 2.35217, 1e-5);
  EXPECT_LT(theorem1_bound(50.0), 1e-20);
  for (double rho = 1e-4; rho <= 0.2; rho += 0.001)
    EXPECT_LE(std::abs(theorem1_bound(rho) - (-std::log(rho) + rho / 2.0)), 2.0 * rho * rho);
}

TEST(Filter, PartitionsTwoClusters) {
  std::vector<double> kl(100, 0.01);
  kl.insert(kl.end(), 30, 8.0);
  const FilterReport r = filter_by_kl(state(0.02, 60), kl);
  const double expected_tau = -std::log(0.02) + 0.5 * 0.02 + 1.0 * std_dev(kl);
  EXPECT_NEAR(r.tau_lower, expected_tau, 1e-12);
  EXPECT_EQ(r.trusted.size(), 100u);
  EXPECT_EQ(r.flipped.size(), 30u);
  EXPECT_TRUE(r.discarded.empty());
  EXPECT_EQ(r.flipped.front(), 100u);

  // early on the spread term dominates and everything is trusted
  const FilterReport early = filter_by_kl(state(0.02, 0), kl);
  EXPECT_EQ(early.trusted.size(), 130u);
}

TEST(Filter, AllNearZeroKlIsTrusted) {
  const FilterReport r = filter_by_kl(state(0.05, 10), std::vector<double>(40, 1e-6));
  EXPECT_NEAR(r.s_kl, 0.0, 1e-18);
  EXPECT_EQ(r.trusted.size(), 40u);
}

TEST(Filter, MiddleBandIsDiscarded) {
  const std::vector<double> kl{0.0, 0.0, 0.0, 5.0, 10.0};
  const FilterReport r = filter_by_kl(state(1.0, 90), kl);
  // tau_lower = 0.5 + std, tau_upper = 6.9
  ASSERT_LT(r.tau_lower, 5.0);
  EXPECT_EQ(r.trusted, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(r.discarded, (std::vector<std::size_t>{3}));
  EXPECT_EQ(r.flipped, (std::vector<std::size_t>{4}));
}

TEST(Filter, AblationSwitches) {
  const std::vector<double> kl{0.0, 0.0, 0.0, 5.0, 10.0};
  DiscriminatorParams no_lower;
  no_lower.use_lower = false;
  const FilterReport a = filter_by_kl(state(1.0, 90, no_lower), kl);
  EXPECT_EQ(a.trusted.size(), 4u);
  EXPECT_EQ(a.flipped.size(), 1u);

  DiscriminatorParams no_upper;
  no_upper.use_upper = false;
  const FilterReport b = filter_by_kl(state(1.0, 90, no_upper), kl);
  EXPECT_EQ(b.trusted.size(), 3u);
  EXPECT_TRUE(b.flipped.empty());
  EXPECT_EQ(b.discarded.size(), 2u);

  DiscriminatorParams neither;
  neither.use_lower = neither.use_upper = false;
  EXPECT_EQ(filter_by_kl(state(1.0, 90, neither), kl).trusted.size(), 5u);
}

TEST(Filter, InfiniteRhoTrustsEverything) {
  const FilterReport r = filter_by_kl(state(kInfinity, 0), {0.1, 50.0, 1e6});
  EXPECT_EQ(r.trusted.size(), 3u);
}

TEST(Rho, SingletonEqualsItsKl) {
  const RewardEnsemble ens = linear_probe();
  const double p0 = std::exp(-0.3);
  PreferenceDataset d{probe_pair(std::log(p0 / (1.0 - p0)), PreferenceLabel::left())};
  ASSERT_NEAR(kl_to_label(ens, d[0]).mean_prob_kl, 0.3, 1e-12);
  DiscriminatorState s;
  FilterReport r;
  r.trusted = {0};
  ASSERT_TRUE(update_rho(s, ens, d, r));
  EXPECT_NEAR(s.rho, 0.3, 1e-12);
}

TEST(Rho, UsesFlippedLabelsAndSkipsEmpty) {
  const RewardEnsemble ens = linear_probe();
  const double p0 = 0.7;
  PreferenceDataset d{probe_pair(std::log(p0 / (1.0 - p0)), PreferenceLabel::right())};
  DiscriminatorState s;
  FilterReport r;
  r.flipped = {0};
  update_rho(s, ens, d, r);
  EXPECT_NEAR(s.rho, -std::log(0.7), 1e-12);
  FilterReport none;
  none.discarded = {0};
  EXPECT_FALSE(update_rho(s, ens, d, none));
  EXPECT_NEAR(s.rho, -std::log(0.7), 1e-12);
}

TEST(Rho, ShrinksAsTheModelFitsCleanData) {
  std::mt19937_64 rng(4);
  PreferenceDataset d;
  for (int i = 0; i < 40; ++i) {
    Segment a = random_segment(rng, 1, 1, 3), b = random_segment(rng, 1, 1, 3);
    const double gap = a.states.sum() - b.states.sum();
    if (std::abs(gap) < 1.5) continue;
    d.push_back({a, b, gap > 0 ? PreferenceLabel::left() : PreferenceLabel::right(), 0, std::nullopt});
  }
  RewardModelConfig c;
  c.hidden = {16};
  c.lr = 1e-2;
  RewardEnsemble ens(1, 1, c, 4);
  FilterReport all;
  for (std::size_t i = 0; i < d.size(); ++i) all.trusted.push_back(i);
  DiscriminatorState s;
  update_rho(s, ens, d, all);
  const double start = s.rho;
  for (int i = 0; i < 1500; ++i) ens.apply(ens.ce_loss(d));
  update_rho(s, ens, d, all);
  EXPECT_LT(s.rho, 0.5 * start);
}

TEST(Filter, QualityOnLabeledCorruption) {
  PreferenceDataset d(4);
  for (auto& t : d) {
    t.label = PreferenceLabel::left();
    t.true_label = PreferenceLabel::left();
  }
  d[1].true_label = d[3].true_label = PreferenceLabel::right();
  FilterReport r;
  r.trusted = {0, 3};
  r.flipped = {1};
  r.discarded = {2};
  const FilterQuality q = evaluate_filter(r, d);
  EXPECT_EQ(q.corrupted_total, 2u);
  EXPECT_EQ(q.flip_precision, 1.0);
  EXPECT_EQ(q.flip_recall, 0.5);
  EXPECT_EQ(q.trusted_corruption, 0.5);
  FilterReport none;
  none.trusted = {0, 1, 2, 3};
  EXPECT_EQ(evaluate_filter(none, d).flip_precision, 1.0);
}

TEST(Filter, RejectsEmptyDataset) {
  const RewardEnsemble ens = linear_probe();
  EXPECT_THROW(filter(state(1.0, 0), ens, {}), std::invalid_argument);
}

TEST(Strategies, AdtDropSchedule) {
  RobustParams p;
  EXPECT_EQ(adt_drop_rate(p, 0), 0.0);
  EXPECT_NEAR(adt_drop_rate(p, 50), 0.15, 1e-15);
  EXPECT_NEAR(adt_drop_rate(p, 10000), 0.3, 1e-15);
}

TEST(Strategies, AdtKeepsSmallLossSamples) {
  const RewardEnsemble ens = linear_probe();
  PreferenceDataset d;
  for (double z : {1.5, 1.0, 0.5, -0.5, -1.0, -1.5, 0.2, 1.8, -1.9, 0.0}) d.push_back(probe_pair(z, PreferenceLabel::left()));
  const auto ptrs = RewardEnsemble::pointers(d);
  const auto labels = RewardEnsemble::labels_of(ptrs);
  RobustParams p;
  const StrategyResult first = robust_strategy_loss(StrategyKind::adt, p, ens, ptrs, labels, 0);
  EXPECT_EQ(first.kept.size(), 10u);
  const StrategyResult late = robust_strategy_loss(StrategyKind::adt, p, ens, ptrs, labels, 1000);
  // label is left, so the three most negative logits carry the largest loss
  EXPECT_EQ(late.kept, (std::vector<std::size_t>{0, 1, 2, 3, 6, 7, 9}));
}

TEST(Strategies, DispatchMatchesLossFunctions) {
  const RewardEnsemble ens = linear_probe();
  PreferenceDataset d{probe_pair(0.8, PreferenceLabel::left()), probe_pair(-0.3, PreferenceLabel::right())};
  const auto ptrs = RewardEnsemble::pointers(d);
  const auto labels = RewardEnsemble::labels_of(ptrs);
  RobustParams p;
  auto value = [&](StrategyKind k) { return robust_strategy_loss(k, p, ens, ptrs, labels, 0).loss.loss; };
  const double ce = 0.5 * (ce_logit_loss(0.8, labels[0], nullptr) + ce_logit_loss(-0.3, labels[1], nullptr));
  EXPECT_NEAR(value(StrategyKind::rime), ce, 1e-14);
  EXPECT_NEAR(value(StrategyKind::none), ce, 1e-14);
  EXPECT_NEAR(value(StrategyKind::mae), 0.5 * (2 * (1 - sigmoid(0.8)) + 2 * sigmoid(-0.3)), 1e-14);
  const double ls = 0.5 * (cross_entropy(sigmoid(0.8), {0.95, 0.05}) + cross_entropy(sigmoid(-0.3), {0.05, 0.95}));
  EXPECT_NEAR(value(StrategyKind::label_smoothing), ls, 1e-14);
  EXPECT_EQ(parse_strategy(to_string(StrategyKind::tce)), StrategyKind::tce);
  EXPECT_THROW(parse_strategy("coteaching"), std::invalid_argument);
}
