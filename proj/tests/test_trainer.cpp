#include <gtest/gtest.h>

#include <fstream>
#include <sstream>

#include "test_util.hpp"

using namespace rime;
using rime::testing::TempDir;

namespace {

KeyValues small_run() {
  return {{"env", "point_mass"},      {"seed", "3"},
          {"total_steps", "1200"},    {"pretrain_steps", "400"},
          {"random_steps", "100"},    {"segment_length", "10"},
          {"budget.total", "40"},     {"budget.per_session", "10"},
          {"budget.interval", "200"}, {"budget.candidates", "20"},
          {"teacher", "mistake"},     {"teacher.epsilon", "0.2"},
          {"reward.hidden", "8,8"},   {"reward.epochs", "5"},
          {"reward.batch", "16"},     {"sac.hidden", "16,16"},
          {"sac.batch", "32"},        {"metrics.every", "200"},
          {"metrics.eval_episodes", "2"}};
}

RunConfig config_with(std::initializer_list<std::pair<const std::string, std::string>> overrides) {
  KeyValues kv = small_run();
  for (const auto& [k, v] : overrides) kv[k] = v;
  return RunConfig::from_key_values(kv);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST(Config, NumberForms) {
  EXPECT_NEAR(parse_number("k", "3*ln(10)"), 3.0 * std::log(10.0), 1e-15);
  EXPECT_NEAR(parse_number("k", "ln(2)"), std::log(2.0), 1e-15);
  EXPECT_NEAR(parse_number("k", "1/30"), 1.0 / 30.0, 1e-15);
  EXPECT_EQ(parse_number("k", " 2.5e-3 "), 2.5e-3);
  EXPECT_THROW(parse_number("k", "fast"), std::invalid_argument);
  EXPECT_THROW(parse_number("k", "1.5x"), std::invalid_argument);
}

TEST(Config, FileFormatAndKeys) {
  std::istringstream in(
      "# comment line\n"
      "env = cart_push   # trailing comment\n"
      "\n"
      "rime.tau_upper = 3*ln(10)\n"
      "rime.decay = 1/30\n"
      "reward.hidden = 32, 16\n"
      "warm_start = off\n"
      "env.horizon = 40\n");
  const KeyValues kv = parse_key_values(in);
  EXPECT_EQ(kv.at("env"), "cart_push");
  const RunConfig c = RunConfig::from_key_values(kv);
  EXPECT_EQ(c.env, "cart_push");
  EXPECT_NEAR(c.discriminator.tau_upper, 3.0 * std::log(10.0), 1e-15);
  EXPECT_NEAR(c.discriminator.decay, 1.0 / 30.0, 1e-15);
  EXPECT_EQ(c.reward.hidden, (std::vector<int>{32, 16}));
  EXPECT_FALSE(c.warm_start);
  EXPECT_TRUE(c.resets_critics());
  EXPECT_EQ(c.teacher.episode_length, 40);
  std::istringstream bad("just words\n");
  EXPECT_THROW(parse_key_values(bad), std::invalid_argument);
}

TEST(Config, Validation) {
  EXPECT_THROW(RunConfig::from_key_values({{"rewrd.lr", "1"}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_key_values({{"rime.alpha", "0.7"}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_key_values({{"rime.alpha", "0"}}), std::invalid_argument);
  EXPECT_NO_THROW(RunConfig::from_key_values({{"rime.alpha", "0.5"}}));
  EXPECT_THROW(RunConfig::from_key_values({{"teacher.epsilon", "0.6"}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_key_values({{"pretrain_steps", "5000"}, {"total_steps", "100"}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_key_values({{"seed", "-1"}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_key_values({{"warm_start", "maybe"}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_key_values({{"rime.counter", "hourly"}}), std::invalid_argument);
  EXPECT_THROW(RunConfig::from_file("/nonexistent/run.conf"), std::runtime_error);
}

TEST(Config, ShippedConfigsParse) {
  std::size_t n = 0;
  for (const auto& e : std::filesystem::directory_iterator(RIME_CONFIG_DIR)) {
    if (e.path().extension() != ".conf") continue;
    EXPECT_NO_THROW(RunConfig::from_file(e.path().string())) << e.path();
    ++n;
  }
  EXPECT_GE(n, 4u);
}

TEST(Metrics, FixedFormatting) {
  EXPECT_EQ(format_number(0.1), "0.1");
  EXPECT_EQ(format_number(-43.25), "-43.25");
  EXPECT_EQ(format_number(1.0 / 3.0), "0.3333333333");
  EXPECT_EQ(format_number(kNaN), "nan");
  EXPECT_EQ(format_number(-kInfinity), "-inf");
}

TEST(Metrics, CsvAndJsonlRoundTrip) {
  MetricsRecord a;
  a.env_step = 200;
  a.phase = "pretrain";
  a.eval_return = -51.5;
  a.alpha = 0.1;
  MetricsRecord b = a;
  b.env_step = 400;
  b.phase = "online";
  b.sessions = 2;
  b.labels = 20;
  b.n_trusted = 17;
  b.n_flipped = 3;
  b.rho = 0.25;
  b.tau_lower = kInfinity;
  const std::string csv = metrics_csv({a, b});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "env_step,phase,eval_return,success_rate,sessions,labels,n_trusted,n_flipped,"
                                           "n_discarded,rho,tau_lower,flip_precision,flip_recall,trusted_corruption,"
                                           "reward_loss,critic_loss,actor_loss,alpha");
  TempDir dir;
  const std::string path = dir.str() + "/m.csv";
  write_text(path, csv);
  const auto back = read_metrics_csv(path);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[1].env_step, 400u);
  EXPECT_EQ(back[1].phase, "online");
  EXPECT_EQ(back[1].n_flipped, 3u);
  EXPECT_EQ(back[0].eval_return, -51.5);
  EXPECT_TRUE(std::isnan(back[0].rho));
  EXPECT_EQ(metrics_csv(back), csv);

  std::istringstream lines(metrics_jsonl({a, b}));
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.size(), metrics_columns().size());
    if (n == 1) {
      EXPECT_EQ(j["tau_lower"], "inf");
      EXPECT_EQ(j["labels"], 20);
    }
    ++n;
  }
  EXPECT_EQ(n, 2);
}

TEST(Metrics, SvgPlot) {
  PlotSeries s;
  s.name = "run";
  s.x = {0, 1, 2};
  s.y = {-3, -2, kNaN};
  const std::string svg = svg_plot({s}, "eval return");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("eval return"), std::string::npos);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(Ablation, MatrixNamesAndSettings) {
  const RunConfig base = config_with({});
  using T = AblationToggle;
  const auto v = ablation_matrix(base, {T::warm_start, T::tau_lower, T::tau_upper});
  ASSERT_EQ(v.size(), 8u);
  std::set<std::string> names;
  for (const auto& x : v) names.insert(x.name);
  EXPECT_EQ(names.size(), 8u);
  EXPECT_EQ(v[0].name, "ws0_lower0_upper0");
  EXPECT_FALSE(v[0].config.warm_start);
  EXPECT_TRUE(v[0].config.resets_critics());
  EXPECT_FALSE(v[0].config.discriminator.use_lower);
  EXPECT_EQ(v[7].name, "ws1_lower1_upper1");
  EXPECT_TRUE(v[7].config.discriminator.use_upper);
  const auto only_ws = ablation_matrix(base, {T::warm_start});
  ASSERT_EQ(only_ws.size(), 2u);
  EXPECT_TRUE(only_ws[0].config.discriminator.use_lower);
  EXPECT_THROW(ablation_matrix(base, {T::tau_lower, T::tau_lower}), std::invalid_argument);

  // both thresholds off trusts every sample whatever its KL
  DiscriminatorState s(v[1].config.discriminator);
  s.rho = 0.01;
  EXPECT_EQ(filter_by_kl(s, {0.0, 100.0}).trusted.size(), 2u);
}

TEST(Trainer, NoSessionsWithoutOnlinePhase) {
  const RunResult r = run(config_with({{"total_steps", "400"}}));
  EXPECT_TRUE(r.sessions.empty());
  EXPECT_EQ(r.labels_total, 0);
  ASSERT_EQ(r.metrics.size(), 2u);
  EXPECT_EQ(r.metrics.back().phase, "pretrain");
}

TEST(Trainer, LabelAccountingAndRelabelInvariant) {
  Trainer t(config_with({}));
  const RunResult r = t.run();
  // online phase of 800 steps with a session every 200: 4 sessions of 10
  ASSERT_EQ(r.sessions.size(), 4u);
  int sum = 0;
  for (const auto& s : r.sessions) {
    EXPECT_EQ(s.labels, 10);
    EXPECT_EQ(s.filter.trusted.size() + s.filter.flipped.size() + s.filter.discarded.size(),
              static_cast<std::size_t>(10 * (s.session + 1)));
    sum += s.labels;
  }
  EXPECT_EQ(sum, r.labels_total);
  EXPECT_EQ(r.labels_total, 40);
  EXPECT_EQ(t.dataset().size(), 40u);
  EXPECT_EQ(t.env_steps(), 1200u);

  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> pick(0, t.buffer().size() - 1);
  for (int k = 0; k < 10; ++k) {
    const Transition& tr = t.buffer().at(pick(rng));
    EXPECT_NEAR(tr.reward, t.ensemble().reward(tr.s, tr.a), 1e-12);
  }
}

TEST(Trainer, BudgetCapsSessions) {
  const RunResult r = run(config_with({{"budget.total", "25"}}));
  ASSERT_EQ(r.sessions.size(), 3u);
  EXPECT_EQ(r.sessions.back().labels, 5);
  EXPECT_EQ(r.labels_total, 25);
}

TEST(Trainer, OracleWithoutFilteringTrustsEverything) {
  const RunResult r = run(config_with({{"teacher", "oracle"}, {"strategy", "none"}}));
  for (const auto& s : r.sessions) {
    EXPECT_TRUE(s.filter.flipped.empty());
    EXPECT_TRUE(s.filter.discarded.empty());
    EXPECT_EQ(s.quality.corrupted_total, 0u);
  }
}

TEST(Trainer, FirstRimeSessionTrustsEverything) {
  const RunResult r = run(config_with({}));
  ASSERT_FALSE(r.sessions.empty());
  EXPECT_TRUE(std::isinf(r.sessions[0].filter.tau_lower));
  EXPECT_EQ(r.sessions[0].filter.trusted.size(), 10u);
  EXPECT_TRUE(std::isfinite(r.sessions[0].rho_after));
}

TEST(Trainer, SkipTeacherProceedsShort) {
  // every return on point-mass is negative, so a zero skip threshold skips everything
  const RunResult r = run(config_with({{"teacher", "skip"}, {"teacher.eps_adapt", "0"}}));
  for (const auto& s : r.sessions) {
    EXPECT_EQ(s.labels, 0);
    EXPECT_EQ(s.attempts, 100);
  }
  EXPECT_EQ(r.labels_total, 0);
}

TEST(Trainer, ByteIdenticalOutputsForSameSeed) {
  TempDir a, b, c;
  run(config_with({}), a.str());
  run(config_with({}), b.str());
  run(config_with({{"seed", "4"}}), c.str());
  for (const char* f : {"metrics.csv", "metrics.jsonl", "sessions.jsonl", "preferences.jsonl"}) {
    const std::string x = slurp(a.path() / f);
    EXPECT_FALSE(x.empty()) << f;
    EXPECT_EQ(x, slurp(b.path() / f)) << f;
  }
  EXPECT_NE(slurp(a.path() / "metrics.csv"), slurp(c.path() / "metrics.csv"));
}

TEST(Trainer, OutputsAndCheckpoint) {
  TempDir dir;
  Trainer t(config_with({}));
  t.run(dir.str());
  for (const char* f : {"metrics.csv", "metrics.jsonl", "sessions.jsonl", "preferences.jsonl", "checkpoint_final.json"})
    EXPECT_TRUE(std::filesystem::exists(dir.path() / f)) << f;
  const auto ck = nlohmann::json::parse(slurp(dir.path() / "checkpoint_final.json"));
  EXPECT_EQ(ck["env_step"], 1200);
  const SacAgent agent = SacAgent::from_json(ck["agent"]);
  EXPECT_EQ(agent.policy().params(), t.agent().policy().params());
  const RewardEnsemble ens = RewardEnsemble::from_json(ck["ensemble"]);
  EXPECT_EQ(ens.member(0).params(), t.ensemble().member(0).params());

  std::ifstream prefs(dir.path() / "preferences.jsonl");
  std::string line;
  std::size_t n = 0, corrupted = 0;
  while (std::getline(prefs, line)) {
    const PreferenceTriple tr = triple_from_json(nlohmann::json::parse(line));
    ASSERT_TRUE(tr.true_label.has_value());
    corrupted += !(tr.label == *tr.true_label);
    ++n;
  }
  EXPECT_EQ(n, 40u);
  EXPECT_LT(corrupted, n / 2);
}

TEST(Trainer, RejectsHumanTeacherWithoutService) {
  EXPECT_THROW(Trainer(config_with({{"teacher", "human"}})), std::invalid_argument);
}

TEST(Evaluation, ZeroPolicyOnPointMass) {
  SacConfig c;
  c.hidden = {8};
  SacAgent agent(4, 2, c, 1);
  agent.policy().params().setZero();
  const EvalResult a = evaluate_policy(agent, "point_mass", {}, 3, 9);
  const EvalResult b = evaluate_policy(agent, "point_mass", {}, 3, 9);
  EXPECT_EQ(a.mean_return, b.mean_return);
  EXPECT_LT(a.mean_return, 0.0);
}
