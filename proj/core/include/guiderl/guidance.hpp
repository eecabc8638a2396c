#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "guiderl/nets.hpp"

namespace guiderl {

// Hyperparameters of the two mentor-guidance objectives and their schedules.
struct GuidanceConfig {
  bool vmr_enabled = false;
  bool awag_enabled = false;

  double margin_delta = 0.1;  // value margin, in Q units

  double vmr_start = 1.0;  // critic regularizer coefficient schedule
  double vmr_end = 0.0;
  double vmr_exponent = 2.0;  // kappa

  double awag_start = 1.0;  // actor guidance coefficient schedule
  double awag_end = 0.0;
  double awag_exponent = 3.0;  // faster early decay
  bool awag_decay_enabled = true;

  int64_t horizon_steps = 0;  // T; 0 means "set to total_steps/2 at run start"

  double alpha = 1.0;  // adaptive actor scale numerator
  double eps = 1e-6;   // adaptive actor scale floor

  double beta = 2.0;    // advantage temperature
  double w_max = 20.0;  // weight cap

  void validate() const;  // throws std::invalid_argument
};

// Per-update diagnostics surfaced to the training log.
struct GuidanceDiagnostics {
  double vmr_loss = 0.0;
  double awag_loss = 0.0;
  double mean_advantage = 0.0;
  double gate_fraction = 0.0;
  double mean_weight = 0.0;
  double lambda_vmr = 0.0;  // current lambda(step)
  double iota_awag = 0.0;   // current iota(step)
};

// Cosine-decayed coefficient: end + (start-end) * (1 + cos(pi * p^exponent))/2
// with p = min(step/T, 1). Throws if T <= 0 or exponent <= 0.
double cosine_coeff(int64_t step, double start, double end, int64_t horizon, double exponent);

// min(exp(A/beta), w_max); beta must be positive.
double awag_weight(double advantage, double beta, double w_max);

// Pure arithmetic used by the learner's gradient passes and by the tests.
double td_target_value(double reward, double done, double gamma, double min_target_q);
double td_loss_value(const Eigen::VectorXd& q1, const Eigen::VectorXd& q2,
                     const Eigen::VectorXd& y);
double vmr_loss_value(const Eigen::VectorXd& q1_vlm, const Eigen::VectorXd& q2_vlm,
                      const Eigen::VectorXd& q1_detached, const Eigen::VectorXd& q2_detached,
                      const Eigen::VectorXd& mask, double delta);
double critic_total_value(double td_loss, double vmr_loss, double lambda_step);
double actor_total_value(double base_loss, double awag_loss, double iota_step);

// Batched transition view used by the loss passes.
struct TransitionBatch {
  Features obs;
  Features next_obs;
  nn::Mat action;        // N x 2
  nn::Mat vlm_action;    // N x 2 (zeros where mask = 0)
  Eigen::VectorXd reward;
  Eigen::VectorXd done;  // 0/1
  Eigen::VectorXd mask;  // 0/1 mentor-feedback availability
  int size() const { return static_cast<int>(reward.size()); }
};

// L_VMR over the batch; accumulates critic gradients scaled by grad_coeff
// (pass 0 for a value-only evaluation). The replay-action values are supplied
// detached by the caller.
double vmr_loss(const TransitionBatch& batch, CriticNet& c1, CriticNet& c2,
                const Eigen::VectorXd& q1_detached, const Eigen::VectorXd& q2_detached,
                double delta, double grad_coeff);

// Advantage of the mentor action over the deterministic actor action under the
// clipped double critic; everything is detached.
struct AdvantageResult {
  Eigen::VectorXd advantage;
  Eigen::VectorXd gate;  // 1{A > 0}
};
AdvantageResult awag_advantage(const TransitionBatch& batch, PolicyNet& policy, CriticNet& c1,
                               CriticNet& c2);

// Weighted, gated, masked negative log-likelihood of the mentor action under
// the stochastic policy. coeff = mask .* gate .* weight (already detached).
// Accumulates head gradients through `policy` scaled by grad_coeff.
// Throws std::logic_error when the policy is deterministic.
double awag_loss(const TransitionBatch& batch, PolicyNet& policy, const Eigen::VectorXd& coeff,
                 double grad_coeff);

// Squashed-Gaussian log-likelihood of given actions (rows) with derivatives
// w.r.t. the Gaussian mean and log-std heads.
struct LogProbResult {
  Eigen::VectorXd logp;  // per sample
  nn::Mat d_mean;        // d logp / d mean
  nn::Mat d_log_std;     // d logp / d log_std
};
LogProbResult squashed_gaussian_logp(const nn::Mat& actions, const nn::Mat& mean,
                                     const nn::Mat& log_std);

}  // namespace guiderl
