#include "hyperql/critic.hpp"

#include <gtest/gtest.h>

#include "hyperql/rng.hpp"
#include "test_util.hpp"

using namespace hyperql;

namespace {

Eigen::VectorXd rand_evec(RngStream& rng, int n, double lo = -1, double hi = 1) {
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = rng.uniform(lo, hi);
  return v;
}

Critic small_sa(int n_s = 3, int n_a = 2, int hidden = 5) {
  Critic c = Critic::sa_hyper(n_s, n_a, {6, 8, 10}, hidden);
  c.init(11);
  return c;
}

Critic small_as(int n_s = 3, int n_a = 2, int hidden = 5) {
  Critic c = Critic::as_hyper(n_s, n_a, {6, 8, 10}, hidden);
  c.init(13);
  return c;
}

}  // namespace

TEST(QValue, LinearHandCheck) {
  Critic c = Critic::linear(2, 2);
  auto& w = c.params().at(0).value;
  w = {0.5, -1.0, 2.0, 0.25};  // [w_s; w_a]
  Eigen::VectorXd s(2), a(2);
  s << 1.0, 3.0;
  a << -2.0, 4.0;
  // w_s . s + w_a . a
  EXPECT_DOUBLE_EQ(c.q_value(s, a), 0.5 - 3.0 - 4.0 + 1.0);
}

TEST(QValue, ZeroWeightsGiveZero) {
  RngStream rng(2);
  for (Critic c : {Critic::linear(3, 2), Critic::mlp_concat(3, 2, {8, 8}),
                   Critic::sa_hyper(3, 2, {6, 8, 10}, 5), Critic::as_hyper(3, 2, {6, 8, 10}, 5)}) {
    Eigen::VectorXd s = rand_evec(rng, 3), a = rand_evec(rng, 2);
    EXPECT_DOUBLE_EQ(c.q_value(s, a), 0.0) << critic_kind_name(c.kind());
  }
}

TEST(QValue, SaHyperEqualsPrimaryThenDynamicComposition) {
  Critic c = small_sa();
  RngStream rng(3);
  Eigen::VectorXd s = rand_evec(rng, 3), a = rand_evec(rng, 2);
  DynValues v = c.hyper().values(std::span<const double>(s.data(), 3));
  double composed = dynamic_forward(v, std::span<const double>(a.data(), 2))[0];
  EXPECT_NEAR(c.q_value(s, a), composed, 1e-12);
}

TEST(QValue, GraphAndAnalysisPathsAgree) {
  RngStream rng(4);
  std::vector<Critic> critics{Critic::linear(3, 2), Critic::mlp_concat(3, 2, {8, 8}),
                              small_sa(), small_as()};
  critics[0].init(21);
  critics[1].init(22);
  for (Critic& c : critics) {
    Eigen::VectorXd s = rand_evec(rng, 3), a = rand_evec(rng, 2);
    Graph g;
    Bound bp = bind(g, c.params(), false);
    Tensor q = c.q_batch(g, bp, g.leaf(1, 3, std::span<const double>(s.data(), 3)),
                         g.leaf(1, 2, std::span<const double>(a.data(), 2)));
    EXPECT_NEAR(q.scalar(), c.q_value(s, a), 1e-12) << critic_kind_name(c.kind());
  }
}

TEST(ActionGrad, LinearCriticIsTheActionWeightsEverywhere) {
  Critic c = Critic::linear(3, 2);
  c.init(31);
  const auto& w = c.params().at(0).value;
  RngStream rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::VectorXd s = rand_evec(rng, 3), a = rand_evec(rng, 2);
    Eigen::VectorXd grad = c.action_grad_autodiff(s, a);
    EXPECT_DOUBLE_EQ(grad[0], w[3]);
    EXPECT_DOUBLE_EQ(grad[1], w[4]);
  }
}

TEST(ActionGrad, SingleLayerSaHyperIsActionIndependent) {
  Critic c = Critic::sa_hyper_single_layer(3, 2);
  c.init(33);
  RngStream rng(6);
  Eigen::VectorXd s = rand_evec(rng, 3);
  Eigen::VectorXd grad0 = c.action_grad_autodiff(s, rand_evec(rng, 2));
  for (int trial = 0; trial < 5; ++trial) {
    Eigen::VectorXd grad = c.action_grad_autodiff(s, rand_evec(rng, 2));
    EXPECT_NEAR(grad[0], grad0[0], 1e-14);
    EXPECT_NEAR(grad[1], grad0[1], 1e-14);
  }
  // and it does vary with the state
  Eigen::VectorXd other = c.action_grad_autodiff(rand_evec(rng, 3), rand_evec(rng, 2));
  EXPECT_GT((other - grad0).norm(), 1e-8);
}

TEST(ActionGrad, MlpMatchesFiniteDifferences) {
  Critic c = Critic::mlp_concat(3, 2, {8, 8});
  c.init(41);
  RngStream rng(7);
  Eigen::VectorXd s = rand_evec(rng, 3), a = rand_evec(rng, 2);
  Eigen::VectorXd grad = c.action_grad_autodiff(s, a);

  auto f = [&](const std::vector<double>& av) {
    Eigen::VectorXd aa(2);
    aa << av[0], av[1];
    return c.q_value(s, aa);
  };
  auto fd = hyperql::testing::numeric_gradient(f, {a[0], a[1]});
  EXPECT_LE(hyperql::testing::rel_err(grad[0], fd[0]), 1e-6);
  EXPECT_LE(hyperql::testing::rel_err(grad[1], fd[1]), 1e-6);
}

TEST(ClosedForm, MatchesAutodiffForMlpConcat) {
  Critic c = Critic::mlp_concat(3, 2, {8, 6});
  c.init(43);
  RngStream rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd s = rand_evec(rng, 3), a = rand_evec(rng, 2);
    c.q_value(s, a);
    Eigen::VectorXd closed = c.action_grad_closed_form();
    Eigen::VectorXd auto_g = c.action_grad_autodiff(s, a);
    for (int i = 0; i < 2; ++i) {
      EXPECT_LE(hyperql::testing::rel_err(closed[i], auto_g[i], 1e-12), 1e-8);
    }
  }
}

TEST(ClosedForm, MatchesAutodiffForSaHyper) {
  Critic c = small_sa();
  RngStream rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd s = rand_evec(rng, 3), a = rand_evec(rng, 2);
    c.q_value(s, a);
    Eigen::VectorXd closed = c.action_grad_closed_form();
    Eigen::VectorXd auto_g = c.action_grad_autodiff(s, a);
    for (int i = 0; i < 2; ++i) {
      EXPECT_LE(hyperql::testing::rel_err(closed[i], auto_g[i], 1e-12), 1e-8);
    }
  }
}

TEST(ClosedForm, DeadReluRegionGivesZeroGradient) {
  Critic c = Critic::mlp_concat(2, 1, {4});
  // Force every hidden pre-activation negative via large negative biases.
  Param* b = c.params().find("q.b0");
  ASSERT_NE(b, nullptr);
  std::fill(b->value.begin(), b->value.end(), -100.0);
  Param* w = c.params().find("q.W0");
  RngStream rng(10);
  for (double& v : w->value) v = rng.uniform(-1, 1);
  Param* w1 = c.params().find("q.W1");
  for (double& v : w1->value) v = rng.uniform(-1, 1);

  Eigen::VectorXd s(2), a(1);
  s << 0.3, -0.4;
  a << 0.2;
  c.q_value(s, a);
  Eigen::VectorXd closed = c.action_grad_closed_form();
  EXPECT_DOUBLE_EQ(closed[0], 0.0);
}

TEST(ClosedForm, UnsupportedKindsRejected) {
  Critic lin = Critic::linear(2, 2);
  Eigen::VectorXd s(2), a(2);
  s.setZero();
  a.setZero();
  lin.q_value(s, a);
  EXPECT_THROW(lin.action_grad_closed_form(), ContractError);

  Critic as = small_as();
  as.q_value(Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(2));
  EXPECT_THROW(as.action_grad_closed_form(), ContractError);
}

TEST(ClosedForm, RequiresForwardFirst) {
  Critic c = small_sa();
  EXPECT_THROW(c.action_grad_closed_form(), ContractError);
}

TEST(Invariant, SaHyperGradientConstantWithinActivationPattern) {
  Critic c = small_sa(3, 2, 6);
  RngStream rng(12);
  Eigen::VectorXd s = rand_evec(rng, 3);

  // Two nearby actions sharing the same ReLU pattern must share a gradient.
  for (int trial = 0; trial < 20; ++trial) {
    Eigen::VectorXd a1 = rand_evec(rng, 2);
    Eigen::VectorXd a2 = a1 + 1e-9 * rand_evec(rng, 2);
    c.q_value(s, a1);
    Eigen::VectorXd g1 = c.action_grad_closed_form();
    c.q_value(s, a2);
    Eigen::VectorXd g2 = c.action_grad_closed_form();
    EXPECT_EQ(g1[0], g2[0]);
    EXPECT_EQ(g1[1], g2[1]);
  }
}

TEST(JacobianRank, BoundedByActionCount) {
  Critic c = small_as(4, 2, 8);
  RngStream rng(14);
  for (int trial = 0; trial < 5; ++trial) {
    EXPECT_LE(c.as_hyper_jacobian_rank(rand_evec(rng, 2)), 2);
  }
}

TEST(JacobianRank, RandomNetHasFullActionRank) {
  // n_w around a thousand generated weights, n_a = 2.
  Critic c = Critic::as_hyper(4, 2, {8, 12, 16}, 64);
  c.init(51);
  RngStream rng(15);
  EXPECT_EQ(c.as_hyper_jacobian_rank(rand_evec(rng, 2)), 2);
}

TEST(JacobianRank, ZeroPrimaryHasRankZero) {
  Critic c = small_as();
  for (auto& p : c.params()) std::fill(p.value.begin(), p.value.end(), 0.0);
  Eigen::VectorXd a(2);
  a << 0.4, -0.9;
  EXPECT_EQ(c.as_hyper_jacobian_rank(a), 0);
}

TEST(JacobianRank, WrongKindRejected) {
  Critic c = small_sa();
  EXPECT_THROW(c.as_hyper_jacobian_rank(Eigen::VectorXd::Zero(2)), ContractError);
}
