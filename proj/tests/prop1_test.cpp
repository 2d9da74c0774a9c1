#include "hyperql/prop1.hpp"

#include <gtest/gtest.h>

using namespace hyperql;

TEST(AvgGradient, ZeroFieldGivesZero) {
  BanditInstance inst = BanditInstance::random(4, 2, 32, 1);
  GradField zero = [](const Eigen::VectorXd&, const Eigen::VectorXd& a) {
    return Eigen::VectorXd(Eigen::VectorXd::Zero(a.size()));
  };
  Eigen::MatrixXd g = avg_policy_gradient_mc(inst, inst.perturbed_gain(1), zero, 1000, 1);
  EXPECT_DOUBLE_EQ(g.norm(), 0.0);
}

TEST(AvgGradient, VanishesAtTheOptimum) {
  BanditInstance inst = BanditInstance::random(4, 2, 32, 2);
  EXPECT_DOUBLE_EQ(avg_true_gradient(inst, inst.target).norm(), 0.0);
}

TEST(AvgGradient, MonteCarloMatchesClosedForm) {
  BanditInstance inst = BanditInstance::random(4, 2, 32, 3);
  Eigen::MatrixXd phi = inst.perturbed_gain(3);
  GradField truth = [&inst](const Eigen::VectorXd& s, const Eigen::VectorXd& a) {
    return inst.grad_a(s, a);
  };
  Eigen::MatrixXd mc = avg_policy_gradient_mc(inst, phi, truth, 1000000, 3);
  Eigen::MatrixXd closed = avg_true_gradient(inst, phi);
  EXPECT_LE((mc - closed).norm() / closed.norm(), 1e-2);
}

TEST(EtaBound, ClosesAsAlphaApproachesOne) {
  EtaBounds near_one = eta_bound(0.999, 1.0, 0.0, 1.0, 1.0);
  EXPECT_LE(near_one.derivation, 1e-3);
  EXPECT_LE(near_one.stated, 1e-3);
}

TEST(EtaBound, AlphaZeroDirectSubstitution) {
  const double kq = 0.7, sm = 2.0;  // K = kq * sm = 1.4
  EtaBounds b = eta_bound(0.0, kq, 0.0, 5.0, sm);
  EXPECT_DOUBLE_EQ(b.derivation, 2.0 / (1.4 * 1.4));
  EXPECT_DOUBLE_EQ(b.stated, 2.0 / 1.4);
}

TEST(EtaBound, HandArithmetic) {
  // K = 2, alpha = 0.5: derivation bound = 2*0.5 / (4 * 2.25) = 1/9.
  EtaBounds b = eta_bound(0.5, 2.0, 0.0, 1.0, 1.0);
  EXPECT_NEAR(b.derivation, 1.0 / 9.0, 1e-15);
}

TEST(EtaBound, StrictlyDecreasingInAlpha) {
  double prev = eta_bound(0.01, 1.5, 0.0, 1.0, 2.0).derivation;
  for (double a = 0.05; a < 1.0; a += 0.05) {
    const double cur = eta_bound(a, 1.5, 0.0, 1.0, 2.0).derivation;
    EXPECT_LT(cur, prev);
    prev = cur;
  }
}

TEST(EtaBound, AlphaOutOfRangeRejected) {
  EXPECT_THROW(eta_bound(1.0, 1, 0, 1, 1), std::invalid_argument);
  EXPECT_THROW(eta_bound(-0.1, 1, 0, 1, 1), std::invalid_argument);
}

TEST(CorruptGradient, AlphaZeroIsTheTrueField) {
  BanditInstance inst = BanditInstance::random(4, 2, 32, 4);
  Eigen::MatrixXd phi = inst.perturbed_gain(4);
  CorruptedGradient c = corrupt_gradient(inst, phi, 0.0);
  EXPECT_LE(c.d.norm(), 1e-12);
  EXPECT_LE((c.averaged - avg_true_gradient(inst, phi)).norm(), 1e-12);
}

TEST(CorruptGradient, RealizedAlphaIsExact) {
  BanditInstance inst = BanditInstance::random(4, 2, 32, 5);
  Eigen::MatrixXd phi = inst.perturbed_gain(5);
  for (double alpha : {0.1, 0.3, 0.7}) {
    for (double dir : {1.0, -1.0}) {
      CorruptedGradient c = corrupt_gradient(inst, phi, alpha, dir);
      EXPECT_NEAR(c.realized_alpha, alpha, 1e-10);
    }
  }
}

TEST(CorruptGradient, AntiparallelNearOneStillSatisfiesTheBound) {
  BanditInstance inst = BanditInstance::random(4, 2, 32, 6);
  Eigen::MatrixXd phi = inst.perturbed_gain(6);
  CorruptedGradient c = corrupt_gradient(inst, phi, 0.999, -1.0);
  const Eigen::MatrixXd g = avg_true_gradient(inst, phi);
  EXPECT_LE((c.averaged - g).norm(), 0.999 * g.norm() + 1e-9);
}

TEST(CorruptGradient, StationaryInstanceRejected) {
  BanditInstance inst = BanditInstance::random(4, 2, 32, 7);
  EXPECT_THROW(corrupt_gradient(inst, inst.target, 0.3), StationaryInstance);
}

TEST(VerifyStep, ExactAscentAtTinyEta) {
  BanditInstance inst = BanditInstance::random(4, 2, 32, 8);
  StepResult r = verify_step(inst, inst.perturbed_gain(8), 0.0, 1e-4);
  EXPECT_GT(r.advantage, 0.0);
}

TEST(VerifyStep, AdvantageNonNegativeAtDerivationBound) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    BanditInstance inst = BanditInstance::random(4, 2, 32, 100 + seed);
    Eigen::MatrixXd phi = inst.perturbed_gain(seed);
    for (double alpha : {0.25, 0.5}) {
      EtaBounds b = eta_bound(alpha, inst.kappa_q(), inst.kappa_mu(), inst.sigma_q(phi),
                              inst.sigma_mu());
      for (double dir : {1.0, -1.0}) {
        StepResult r = verify_step(inst, phi, alpha, b.derivation, dir);
        EXPECT_GE(r.advantage, -1e-9) << "seed " << seed << " alpha " << alpha << " dir " << dir;
      }
    }
  }
}

TEST(VerifyStep, OversizedStepCanLoseGround) {
  // eta = 10x the bound with adversarial corruption: record the first
  // counterexample; the bound is sufficient, not necessary, so only report.
  int negatives = 0;
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    BanditInstance inst = BanditInstance::random(4, 2, 32, 500 + seed);
    Eigen::MatrixXd phi = inst.perturbed_gain(seed);
    EtaBounds b = eta_bound(0.5, inst.kappa_q(), inst.kappa_mu(), inst.sigma_q(phi),
                            inst.sigma_mu());
    StepResult r = verify_step(inst, phi, 0.5, 10.0 * b.derivation, 1.0);
    if (r.advantage < 0.0) ++negatives;
  }
  ::testing::Test::RecordProperty("oversized_step_negatives", negatives);
  SUCCEED();
}

TEST(Advantage, ClosedFormMatchesMonteCarlo) {
  BanditInstance inst = BanditInstance::random(4, 2, 32, 9);
  Eigen::MatrixXd phi = inst.perturbed_gain(9);
  StepResult r = verify_step(inst, phi, 0.25, 1e-2);
  const double mc = empirical_advantage_mc(inst, phi, r.phi_next, 2000000, 9);
  EXPECT_NEAR(mc, r.advantage, 5e-2 * std::abs(r.advantage) + 1e-6);
}
