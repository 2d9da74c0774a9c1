#include <gtest/gtest.h>

#include "hyperql/trainers.hpp"
#include "test_util.hpp"

using namespace hyperql;

namespace {

TrainerConfig run_config(const std::string& algo, CriticKind kind, std::uint64_t seed) {
  TrainerConfig cfg = default_trainer_config(algo, kind);
  cfg.total_steps = 20000;
  cfg.seed = seed;
  return cfg;
}

double zero_policy_return(const LqrEnv& env, std::uint64_t seed, int rollouts) {
  LqrEnv quiet = env;
  quiet.noise_std = 0.0;
  double mean = 0.0;
  for (int k = 0; k < rollouts; ++k) {
    RngStream rng(seed, 0x9000000 + static_cast<std::uint64_t>(k));
    auto zero = [&](const Eigen::VectorXd&) {
      return Eigen::VectorXd(Eigen::VectorXd::Zero(quiet.action_dim()));
    };
    mean += discounted_return(rollout(quiet, zero, quiet.horizon, rng), quiet.gamma);
  }
  return mean / rollouts;
}

}  // namespace

TEST(TrainLong, SaHyperBeatsTheZeroPolicyAtTwentyThousandSteps) {
  LqrEnv env = LqrEnv::default_instance();
  TrainerConfig cfg = run_config("td3", CriticKind::kSaHyper, 1);
  OffPolicyTrainer tr(cfg, ModelSpec{}, CriticKind::kSaHyper, env);
  auto metrics = tr.run();
  ASSERT_EQ(metrics.size(), 4u);
  const double baseline = zero_policy_return(env, cfg.seed, cfg.eval_rollouts);
  EXPECT_GE(metrics.back().eval_return_mean, baseline);
}

TEST(TrainLong, SmallMlpUnderperformsStandardMlpOnMostSeeds) {
  LqrEnv env = LqrEnv::default_instance();
  int standard_wins = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    ModelSpec standard;
    standard.mlp_critic_hidden = {256, 256};
    ModelSpec small;
    small.mlp_critic_hidden = {256};

    OffPolicyTrainer big(run_config("td3", CriticKind::kMlpConcat, seed), standard,
                         CriticKind::kMlpConcat, env);
    OffPolicyTrainer tiny(run_config("td3", CriticKind::kMlpConcat, seed), small,
                          CriticKind::kMlpConcat, env);
    const double big_final = big.run().back().eval_return_mean;
    const double tiny_final = tiny.run().back().eval_return_mean;
    if (big_final > tiny_final) ++standard_wins;
  }
  EXPECT_GE(standard_wins, 3);
}
