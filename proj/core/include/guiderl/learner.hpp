#pragma once

#include <cstdint>
#include <memory>
#include <string>

#include "guiderl/guidance.hpp"
#include "guiderl/nets.hpp"
#include "guiderl/replay.hpp"

namespace guiderl {

struct LearnerConfig {
  double gamma = 0.99;
  int batch_size = 64;
  double actor_lr = 3e-4;
  double critic_lr = 3e-4;
  double polyak_rho = 0.005;

  // Exploration noise: linear decay from start to end over the first
  // `noise_decay_fraction` of total_steps.
  double noise_start = 0.5;
  double noise_end = 0.1;
  double noise_decay_fraction = 1.0 / 3.0;

  int64_t total_steps = 100000;
  bool stochastic = false;  // squashed-Gaussian actor (required by AWAG)

  NetConfig net;

  double exploration_noise(int64_t step) const;
  void validate() const;
};

struct UpdateStats {
  double td_loss = 0.0;
  double critic_total = 0.0;
  double base_loss = 0.0;
  double actor_total = 0.0;
  double mean_q1 = 0.0;
  double mean_q2 = 0.0;
  double awag_scale = 1.0;  // adaptive lambda of the base actor loss
  GuidanceDiagnostics guidance;
};

// Twin-critic off-policy actor-critic learner with optional mentor guidance
// terms on both the critic (value margin) and the actor (advantage-weighted
// log-likelihood).
class Learner {
 public:
  Learner(LearnerConfig cfg, GuidanceConfig gcfg, FeatureSpec spec, uint64_t seed);

  // Policy action for one observation. noise_scale = 0 is deterministic in
  // both actor modes.
  Action2D act(const Observation& obs, double noise_scale);

  // One-step bootstrap targets through the target critics (Eq-style clipped
  // double minimum); no gradients flow.
  Eigen::VectorXd td_target(const TransitionBatch& batch, int64_t step);

  UpdateStats update(const TransitionBatch& batch, int64_t step);
  void soft_update();

  TransitionBatch pack(const SampledBatch& batch) const;

  int64_t parameter_count();
  void save(const std::string& path);
  void load(const std::string& path);

  PolicyNet& policy() { return *policy_; }
  CriticNet& critic1() { return *critic1_; }
  CriticNet& critic2() { return *critic2_; }
  CriticNet& target1() { return *target1_; }
  CriticNet& target2() { return *target2_; }
  const LearnerConfig& config() const { return cfg_; }
  const GuidanceConfig& guidance_config() const { return gcfg_; }
  const FeatureSpec& feature_spec() const { return spec_; }
  Rng& rng() { return rng_; }

 private:
  nn::Mat policy_action(const Features& f, double noise_scale);

  LearnerConfig cfg_;
  GuidanceConfig gcfg_;
  FeatureSpec spec_;
  Rng rng_;

  std::unique_ptr<PolicyNet> policy_;
  std::unique_ptr<CriticNet> critic1_, critic2_, target1_, target2_;
  std::unique_ptr<nn::Adam> actor_opt_, critic_opt_;
};

}  // namespace guiderl
