#include "hyperql/grad_fidelity.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "hyperql/rng.hpp"

using namespace hyperql;

namespace {

Eigen::VectorXd rand_evec(RngStream& rng, int n, double lo = -1, double hi = 1) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST(LmseFit, RecoversExactLinearTarget) {
  RngStream rng(1);
  Eigen::VectorXd v = rand_evec(rng, 3);
  const double c = 2.5;
  std::vector<Eigen::VectorXd> actions;
  std::vector<double> qs;
  for (int i = 0; i < 12; ++i) {
    Eigen::VectorXd a = rand_evec(rng, 3);
    actions.push_back(a);
    qs.push_back(c + v.dot(a));
  }
  Eigen::VectorXd g = lmse_fit(Eigen::VectorXd::Zero(3), actions, qs);
  EXPECT_LE((g - v).norm(), 1e-10);
}

TEST(LmseFit, SymmetricQuadraticCancels) {
  // q = -|a|^2 sampled at +/- pairs around 0: odd terms vanish.
  RngStream rng(2);
  std::vector<Eigen::VectorXd> actions;
  std::vector<double> qs;
  for (int i = 0; i < 6; ++i) {
    Eigen::VectorXd d = rand_evec(rng, 2);
    for (double sgn : {1.0, -1.0}) {
      Eigen::VectorXd a = sgn * d;
      actions.push_back(a);
      qs.push_back(-a.squaredNorm());
    }
  }
  Eigen::VectorXd g = lmse_fit(Eigen::VectorXd::Zero(2), actions, qs);
  EXPECT_LE(g.norm(), 1e-10);
}

TEST(LmseFit, TranslationInvariantInQ) {
  RngStream rng(3);
  std::vector<Eigen::VectorXd> actions;
  std::vector<double> qs, qs_shift;
  for (int i = 0; i < 9; ++i) {
    actions.push_back(rand_evec(rng, 2));
    const double q = rng.uniform(-5, 5);
    qs.push_back(q);
    qs_shift.push_back(q + 123.456);
  }
  Eigen::VectorXd a = lmse_fit(Eigen::VectorXd::Zero(2), actions, qs);
  Eigen::VectorXd b = lmse_fit(Eigen::VectorXd::Zero(2), actions, qs_shift);
  EXPECT_LE((a - b).norm(), 1e-10);
}

TEST(LmseFit, EquivariantUnderRotation) {
  RngStream rng(4);
  const double th = 0.7;
  Eigen::Matrix2d rot;
  rot << std::cos(th), -std::sin(th), std::sin(th), std::cos(th);

  std::vector<Eigen::VectorXd> actions, rotated;
  std::vector<double> qs;
  for (int i = 0; i < 10; ++i) {
    Eigen::VectorXd a = rand_evec(rng, 2);
    actions.push_back(a);
    rotated.push_back(rot * a);
    qs.push_back(rng.uniform(-2, 2));
  }
  Eigen::VectorXd g = lmse_fit(Eigen::VectorXd::Zero(2), actions, qs);
  Eigen::VectorXd gr = lmse_fit(Eigen::VectorXd::Zero(2), rotated, qs);
  EXPECT_LE((gr - rot * g).norm(), 1e-9);
}

TEST(LmseFit, DegenerateDesignWithoutRidgeRejected) {
  std::vector<Eigen::VectorXd> actions(5, Eigen::VectorXd::Ones(2));
  std::vector<double> qs(5, 1.0);
  EXPECT_THROW(lmse_fit(Eigen::VectorXd::Zero(2), actions, qs, 0.0), DegenerateDesign);
  // With the ridge fallback the fit degrades gracefully to zero.
  Eigen::VectorXd g = lmse_fit(Eigen::VectorXd::Zero(2), actions, qs, 1e-10);
  EXPECT_LE(g.norm(), 1e-9);
}

TEST(LmseFit, LqrRolloutsRecoverOracleGradientDirection) {
  LqrEnv env = LqrEnv::default_instance();
  RngStream rng(5);
  Eigen::MatrixXd k = sample_stable_gain(env, rng);
  LqrOracle oracle = LqrOracle::solve(env, k);

  CsProtocol proto;
  proto.sigma_delta = 0.05;
  proto.n_rollouts = 15;
  proto.rollout_horizon = 400;

  Eigen::VectorXd s = env.reset(rng);
  auto policy = [&](const Eigen::VectorXd& x) { return Eigen::VectorXd(k * x); };
  Eigen::VectorXd a_mu = policy(s);
  Eigen::VectorXd est = lmse_gradient_estimate(env, policy, s, a_mu, proto, env.gamma, 5, 0);
  auto cs = cosine_similarity(est, oracle.grad_a(s, a_mu));
  ASSERT_TRUE(cs.has_value());
  EXPECT_GE(*cs, 0.95);
}

TEST(Cosine, CardinalCases) {
  Eigen::VectorXd u(2);
  u << 1.0, 2.0;
  Eigen::VectorXd w(2);
  w << -2.0, 1.0;
  EXPECT_DOUBLE_EQ(*cosine_similarity(u, u), 1.0);
  EXPECT_DOUBLE_EQ(*cosine_similarity(u, Eigen::VectorXd(-u)), -1.0);
  EXPECT_NEAR(*cosine_similarity(u, w), 0.0, 1e-15);
}

TEST(Cosine, NearZeroVectorIsUndefined) {
  Eigen::VectorXd u(2), z(2);
  u << 1.0, 0.0;
  z << 1e-14, 0.0;
  EXPECT_FALSE(cosine_similarity(u, z).has_value());
  EXPECT_FALSE(cosine_similarity(z, u).has_value());
}

TEST(EvaluateCs, OracleGradientAgainstItselfIsNearOne) {
  LqrEnv env = LqrEnv::default_instance();
  RngStream rng(6);
  Eigen::MatrixXd k = sample_stable_gain(env, rng);
  LqrOracle oracle = LqrOracle::solve(env, k);

  CsProtocol proto;
  proto.sigma_delta = 0.05;
  proto.n_states = 8;

  std::vector<Eigen::VectorXd> states;
  for (int i = 0; i < proto.n_states; ++i) states.push_back(env.reset(rng));
  auto policy = [&](const Eigen::VectorXd& x) { return Eigen::VectorXd(k * x); };
  auto grad_fn = [&](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    return oracle.grad_a(s, a);
  };
  CsEvaluation ev = evaluate_cs(env, policy, grad_fn, states, proto, env.gamma, 6);
  EXPECT_EQ(ev.undefined_count, 0);
  EXPECT_GE(ev.mean_cs, 0.99);
}

TEST(EvaluateCs, RandomCriticHasLowMeanCs) {
  LqrEnv env = LqrEnv::default_instance();
  RngStream rng(7);
  Eigen::MatrixXd k = sample_stable_gain(env, rng);

  Critic critic = Critic::mlp_concat(4, 2, {16, 16});
  critic.init(71);

  CsProtocol proto;
  proto.sigma_delta = 0.05;
  proto.n_states = 15;

  std::vector<Eigen::VectorXd> states;
  for (int i = 0; i < proto.n_states; ++i) states.push_back(env.reset(rng));
  auto policy = [&](const Eigen::VectorXd& x) { return Eigen::VectorXd(k * x); };
  auto grad_fn = [&](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    return critic.action_grad_autodiff(s, a);
  };
  CsEvaluation ev = evaluate_cs(env, policy, grad_fn, states, proto, env.gamma, 7);
  EXPECT_LE(std::abs(ev.mean_cs), 0.3);
}

TEST(EvaluateCs, FractionsPartition) {
  LqrEnv env = LqrEnv::default_instance();
  RngStream rng(8);
  Eigen::MatrixXd k = sample_stable_gain(env, rng);
  Critic critic = Critic::mlp_concat(4, 2, {8});
  critic.init(81);

  CsProtocol proto;
  proto.sigma_delta = 0.1;
  proto.n_states = 10;

  std::vector<Eigen::VectorXd> states;
  for (int i = 0; i < proto.n_states; ++i) states.push_back(env.reset(rng));
  auto policy = [&](const Eigen::VectorXd& x) { return Eigen::VectorXd(k * x); };
  auto grad_fn = [&](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    return critic.action_grad_autodiff(s, a);
  };
  CsEvaluation ev = evaluate_cs(env, policy, grad_fn, states, proto, env.gamma, 8);
  const double n = static_cast<double>(proto.n_states);
  EXPECT_DOUBLE_EQ(ev.learnable_frac[0] + ev.nonpositive_count / n + ev.undefined_count / n, 1.0);
}

TEST(EvaluateCs, InvariantToPositiveCriticRescaling) {
  LqrEnv env = LqrEnv::default_instance();
  RngStream rng(9);
  Eigen::MatrixXd k = sample_stable_gain(env, rng);
  LqrOracle oracle = LqrOracle::solve(env, k);

  CsProtocol proto;
  proto.sigma_delta = 0.05;
  proto.n_states = 5;
  std::vector<Eigen::VectorXd> states;
  for (int i = 0; i < proto.n_states; ++i) states.push_back(env.reset(rng));
  auto policy = [&](const Eigen::VectorXd& x) { return Eigen::VectorXd(k * x); };
  auto grad = [&](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    return oracle.grad_a(s, a);
  };
  auto scaled = [&](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    return Eigen::VectorXd(41.5 * oracle.grad_a(s, a));
  };
  CsEvaluation a = evaluate_cs(env, policy, grad, states, proto, env.gamma, 9);
  CsEvaluation b = evaluate_cs(env, policy, scaled, states, proto, env.gamma, 9);
  ASSERT_EQ(a.states.size(), b.states.size());
  for (size_t i = 0; i < a.states.size(); ++i) {
    ASSERT_EQ(a.states[i].cs.has_value(), b.states[i].cs.has_value());
    if (a.states[i].cs) EXPECT_NEAR(*a.states[i].cs, *b.states[i].cs, 1e-12);
  }
}

TEST(LocalLinearity, LinearCriticIsExactlyLinear) {
  Critic c = Critic::linear(3, 2);
  c.init(91);
  CsProtocol proto;
  proto.sigma_delta = 0.3;
  auto cs = local_linearity_check(c, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2), proto, 10);
  ASSERT_TRUE(cs.has_value());
  EXPECT_NEAR(*cs, 1.0, 1e-9);
}

TEST(LocalLinearity, SaHyperIsLocallyLinearAtSmallScale) {
  Critic c = Critic::sa_hyper(3, 2, {8, 12, 16}, 32);
  c.init(93);
  RngStream rng(11);
  CsProtocol proto;
  proto.sigma_delta = 0.05;
  int ok = 0, total = 0;
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd s = rand_evec(rng, 3), a = rand_evec(rng, 2);
    auto cs = local_linearity_check(c, s, a, proto, 100 + static_cast<std::uint64_t>(trial));
    if (!cs) continue;
    ++total;
    if (*cs >= 0.9) ++ok;
  }
  ASSERT_GT(total, 0);
  EXPECT_GE(static_cast<double>(ok) / total, 0.9);
}

TEST(LocalLinearity, SaturatedTanhCriticRecordedNotAsserted) {
  // A saturating critic at a large perturbation scale: the cosine may drop
  // below the linearity bar. Record the value; only sanity-check the range.
  Mlp net("q", {5, 8, 1}, Act::kTanh);
  RngStream rng(12);
  init_mlp_default(net, rng);
  Critic c = Critic::mlp_concat(3, 2, {8});
  c.init(95);
  CsProtocol proto;
  proto.sigma_delta = 3.0;
  auto cs = local_linearity_check(c, Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2), proto, 13);
  if (cs) {
    EXPECT_GE(*cs, -1.0);
    EXPECT_LE(*cs, 1.0);
    ::testing::Test::RecordProperty("saturated_cs", std::to_string(*cs));
  }
}
