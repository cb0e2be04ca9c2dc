#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace rime;

namespace {

double rollout_return(ContinuousEnv& env, const std::function<Vec(const Vec&)>& policy) {
  Vec s = env.reset();
  double total = 0.0;
  for (;;) {
    const Transition tr = env.step(s, policy(s));
    total += tr.reward;
    s = tr.s_next;
    if (tr.done) return total;
  }
}

}  // namespace

TEST(PointMass, RewardAtGoalIsZero) {
  PointMassEnv env({}, 1);
  EXPECT_EQ(env.reward(Vec::Zero(4), Vec::Zero(2)), 0.0);
  Vec s(4);
  s << 3.0, 4.0, 0.0, 0.0;
  Vec a(2);
  a << 1.0, -1.0;
  EXPECT_DOUBLE_EQ(env.reward(s, a), -5.0 - 0.1 * 2.0);
}

TEST(PointMass, OffsetGoalFromOptions) {
  auto env = make_env("point_mass", {{"goal_x", 0.5}, {"goal_y", -0.5}}, 1);
  Vec s = Vec::Zero(4);
  s[0] = 0.5;
  s[1] = -0.5;
  EXPECT_EQ(env->reward(s, Vec::Zero(2)), 0.0);
  EXPECT_EQ(env->render_metadata()["goal"][0], 0.5);
}

TEST(PointMass, ZeroActionFromRestStaysPut) {
  PointMassEnv env({}, 3);
  const Vec s = env.reset();
  const Transition tr = env.step(s, Vec::Zero(2));
  EXPECT_EQ(tr.s_next, s);
}

TEST(PointMass, OneStepKinematics) {
  PointMassEnv env({}, 3);
  Vec s(4);
  s << 0.1, -0.2, 0.8, -0.4;
  Vec a(2);
  a << 0.5, 1.0;
  const Transition tr = env.step(s, a);
  const double dt = ContinuousEnv::dt;
  EXPECT_NEAR(tr.s_next[0], 0.1 + dt * 0.8, 1e-15);
  EXPECT_NEAR(tr.s_next[1], -0.2 + dt * -0.4, 1e-15);
  EXPECT_NEAR(tr.s_next[2], 0.8 + dt * (0.5 - 0.5 * 0.8), 1e-15);
  EXPECT_NEAR(tr.s_next[3], -0.4 + dt * (1.0 - 0.5 * -0.4), 1e-15);
}

TEST(PointMass, ActionsAreClipped) {
  PointMassEnv a({}, 5), b({}, 5);
  Vec s = Vec::Zero(4);
  Vec big(2), unit(2);
  big << 10.0, -7.0;
  unit << 1.0, -1.0;
  const Transition ta = a.step(s, big), tb = b.step(s, unit);
  EXPECT_EQ(ta.s_next, tb.s_next);
  EXPECT_EQ(ta.a, unit);
  EXPECT_EQ(ta.reward, tb.reward);
}

TEST(PointMass, WallsStopMotion) {
  PointMassEnv env({}, 1);
  Vec s(4);
  s << 1.99, 0.0, 5.0, 0.0;
  const Transition tr = env.step(s, Vec::Zero(2));
  EXPECT_EQ(tr.s_next[0], 2.0);
  EXPECT_EQ(tr.s_next[2], 0.0);
}

TEST(PointMass, SameSeedSameTrajectory) {
  PointMassConfig c;
  c.noise = 0.05;
  PointMassEnv a(c, 9), b(c, 9);
  Vec sa = a.reset(), sb = b.reset();
  ASSERT_EQ(sa, sb);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 50; ++t) {
    Vec act(2);
    act << u(rng), u(rng);
    const Transition ta = a.step(sa, act), tb = b.step(sb, act);
    ASSERT_EQ(ta.s_next, tb.s_next);
    sa = ta.s_next;
    sb = tb.s_next;
  }
}

TEST(PointMass, HorizonSetsDone) {
  PointMassConfig c;
  c.horizon = 7;
  PointMassEnv env(c, 1);
  Vec s = env.reset();
  for (int t = 0; t < 7; ++t) {
    const Transition tr = env.step(s, Vec::Zero(2));
    EXPECT_EQ(tr.step, t);
    EXPECT_EQ(tr.done, t == 6);
    EXPECT_FALSE(tr.terminal);
    s = tr.s_next;
  }
}

TEST(PointMass, RejectsBadInput) {
  PointMassEnv env({}, 1);
  EXPECT_THROW(env.step(Vec::Zero(3), Vec::Zero(2)), std::invalid_argument);
  EXPECT_THROW(env.step(Vec::Zero(4), Vec::Zero(1)), std::invalid_argument);
  Vec nan_action(2);
  nan_action << std::numeric_limits<double>::quiet_NaN(), 0.0;
  EXPECT_THROW(env.step(Vec::Zero(4), nan_action), std::invalid_argument);
  EXPECT_THROW(make_env("pendulum", {}, 1), std::invalid_argument);
}

TEST(PointMass, HandControllerBeatsRandom) {
  double better = 0, ctrl_sum = 0, rand_sum = 0;
  for (int seed = 0; seed < 20; ++seed) {
    PointMassEnv e1({}, seed), e2({}, seed);
    auto controller = [](const Vec& s) { return Vec((-2.0 * s.head<2>() - 2.0 * s.tail<2>()).cwiseMax(-1.0).cwiseMin(1.0)); };
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1, 1);
    auto random_policy = [&](const Vec&) {
      Vec a(2);
      a << u(rng), u(rng);
      return a;
    };
    const double rc = rollout_return(e1, controller), rr = rollout_return(e2, random_policy);
    better += rc > rr;
    ctrl_sum += rc;
    rand_sum += rr;
  }
  EXPECT_GT(ctrl_sum, rand_sum);
  EXPECT_GE(better, 18);
}

TEST(PointMass, MinRewardBoundsEveryStep) {
  PointMassEnv env({}, 2);
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(-1, 1);
  Vec s = env.reset();
  for (int t = 0; t < 100; ++t) {
    Vec a(2);
    a << u(rng), u(rng);
    const Transition tr = env.step(s, a);
    EXPECT_GE(tr.reward, env.min_reward());
    s = tr.s_next;
  }
}

TEST(CartPush, SuccessAndReward) {
  auto env = make_env("cart_push", {{"goal", 0.5}, {"horizon", 20}}, 1);
  EXPECT_EQ(env->state_dim(), 2);
  EXPECT_EQ(env->action_dim(), 1);
  Vec at_goal(2);
  at_goal << 0.55, 0.0;
  EXPECT_TRUE(*env->success(at_goal));
  EXPECT_NEAR(env->reward(at_goal, Vec::Zero(1)), -0.05, 1e-15);
  EXPECT_FALSE(*env->success(Vec::Zero(2)));
  EXPECT_EQ(env->horizon(), 20);
  EXPECT_EQ(env->reset(), Vec::Zero(2));
}

TEST(Transition, JsonRoundTrip) {
  Transition t;
  t.s = Vec::Random(4);
  t.a = Vec::Random(2);
  t.s_next = Vec::Random(4);
  t.reward = -1.25;
  t.done = true;
  t.episode = 3;
  t.step = 99;
  const Transition b = transition_from_json(to_json(t));
  EXPECT_EQ(b.s, t.s);
  EXPECT_EQ(b.a, t.a);
  EXPECT_EQ(b.s_next, t.s_next);
  EXPECT_EQ(b.reward, t.reward);
  EXPECT_EQ(b.done, t.done);
  EXPECT_EQ(b.episode, t.episode);
  EXPECT_EQ(b.step, t.step);
}

TEST(ReplayBuffer, RingOrderAfterWrap) {
  ReplayBuffer buf(3, 1, 1);
  for (int i = 0; i < 5; ++i) {
    Transition t;
    t.s = Vec::Constant(1, i);
    t.a = Vec::Zero(1);
    t.s_next = Vec::Zero(1);
    t.reward = i;
    buf.add(t);
  }
  ASSERT_EQ(buf.size(), 3u);
  EXPECT_EQ(buf.at(0).reward, 2.0);
  EXPECT_EQ(buf.at(2).reward, 4.0);
  EXPECT_THROW(buf.at(3), std::out_of_range);
}

TEST(ReplayBuffer, GatherAndTerminalMask) {
  ReplayBuffer buf(10, 2, 1);
  for (int i = 0; i < 4; ++i) {
    Transition t;
    t.s = Vec::Constant(2, i);
    t.a = Vec::Constant(1, -i);
    t.s_next = Vec::Constant(2, i + 1);
    t.reward = 10 * i;
    t.terminal = i == 2;
    buf.add(t);
  }
  const Minibatch b = buf.gather({2, 0});
  EXPECT_EQ(b.reward[0], 20.0);
  EXPECT_EQ(b.not_terminal[0], 0.0);
  EXPECT_EQ(b.not_terminal[1], 1.0);
  EXPECT_EQ(b.s(0, 1), 0.0);
  EXPECT_THROW(ReplayBuffer(0, 1, 1), std::invalid_argument);
  Transition bad;
  bad.s = Vec::Zero(3);
  bad.a = Vec::Zero(1);
  bad.s_next = Vec::Zero(3);
  EXPECT_THROW(buf.add(bad), std::invalid_argument);
  const ReplayBuffer back = ReplayBuffer::from_json(buf.to_json());
  EXPECT_EQ(back.size(), 4u);
  EXPECT_EQ(back.at(3).reward, 30.0);
}

TEST(TabularMdp, RandomMdpIsStochasticAndSeeded) {
  const TabularMdp a = random_mdp(4, 6, 3, 0.9), b = random_mdp(4, 6, 3, 0.9);
  EXPECT_EQ(a.transition, b.transition);
  EXPECT_EQ(a.reward, b.reward);
  for (Eigen::Index r = 0; r < a.transition.rows(); ++r) EXPECT_NEAR(a.transition.row(r).sum(), 1.0, 1e-12);
}

TEST(TabularMdp, SingleStateGeometricSeries) {
  const TabularMdp m = random_mdp(1, 1, 3, 0.95);
  const Mat q = policy_eval(m, random_policy(2, 1, 3), m.reward);
  // with one state the policy still mixes actions at the next step
  const double v = (m.reward.row(0).array() * random_policy(2, 1, 3).row(0).array()).sum() / (1 - 0.95);
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(q(0, a), m.reward(0, a) + 0.95 * v, 1e-10);

  TabularMdp one = random_mdp(1, 1, 1, 0.9);
  EXPECT_NEAR(policy_eval(one, Mat::Ones(1, 1), one.reward)(0, 0), one.reward(0, 0) / 0.1, 1e-10);
}

TEST(TabularMdp, ZeroAndConstantRewards) {
  const TabularMdp m = random_mdp(8, 5, 2, 0.9);
  const Mat pi = random_policy(9, 5, 2);
  EXPECT_LT(policy_eval(m, pi, Mat::Zero(5, 2)).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((policy_eval(m, pi, Mat::Constant(5, 2, 0.3)).array() - 3.0).abs().maxCoeff(), 1e-10);
}

TEST(TabularMdp, MatchesIterativeEvaluation) {
  const TabularMdp m = random_mdp(12, 5, 3, 0.9);
  const Mat pi = random_policy(13, 5, 3);
  Mat q = Mat::Zero(5, 3);
  for (int it = 0; it < 10000; ++it) {
    Vec v(5);
    for (int s = 0; s < 5; ++s) v[s] = (pi.row(s).array() * q.row(s).array()).sum();
    Mat next(5, 3);
    for (int s = 0; s < 5; ++s)
      for (int a = 0; a < 3; ++a) next(s, a) = m.reward(s, a) + m.gamma * m.transition.row(s * 3 + a).dot(v);
    q = next;
  }
  EXPECT_LT((policy_eval(m, pi, m.reward) - q).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(TabularMdp, RejectsBadShapes) {
  const TabularMdp m = random_mdp(1, 4, 2, 0.9);
  EXPECT_THROW(policy_eval(m, Mat::Constant(3, 2, 0.5), m.reward), std::invalid_argument);
  EXPECT_THROW(policy_eval(m, Mat::Constant(4, 2, 0.7), m.reward), std::invalid_argument);
  EXPECT_THROW(random_mdp(1, 0, 2, 0.9), std::invalid_argument);
  EXPECT_THROW(random_mdp(1, 4, 2, 1.0), std::invalid_argument);
}
