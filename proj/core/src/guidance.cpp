#include "guiderl/guidance.hpp"

#include <cmath>
#include <stdexcept>

namespace guiderl {

void GuidanceConfig::validate() const {
  if (margin_delta <= 0) throw std::invalid_argument("guidance: margin_delta must be > 0");
  if (beta <= 0) throw std::invalid_argument("guidance: beta must be > 0");
  if (w_max < 1) throw std::invalid_argument("guidance: w_max must be >= 1");
  if (eps <= 0) throw std::invalid_argument("guidance: eps must be > 0");
  if (vmr_exponent <= 0 || awag_exponent <= 0) {
    throw std::invalid_argument("guidance: schedule exponents must be > 0");
  }
  if (vmr_start < vmr_end || vmr_end < 0 || awag_start < awag_end || awag_end < 0) {
    throw std::invalid_argument("guidance: schedules need start >= end >= 0");
  }
}

double cosine_coeff(int64_t step, double start, double end, int64_t horizon, double exponent) {
  if (horizon <= 0) throw std::invalid_argument("cosine_coeff: horizon must be positive");
  if (exponent <= 0) throw std::invalid_argument("cosine_coeff: exponent must be positive");
  if (step >= horizon) return end;
  double p = std::min(static_cast<double>(step) / static_cast<double>(horizon), 1.0);
  if (p < 0) p = 0;
  double shaped = std::pow(p, exponent);
  return end + (start - end) * (1.0 + std::cos(M_PI * shaped)) / 2.0;
}

double awag_weight(double advantage, double beta, double w_max) {
  if (beta <= 0) throw std::invalid_argument("awag_weight: beta must be positive");
  double a = advantage / beta;
  // exp can overflow for large advantages; the cap makes that irrelevant.
  if (a > 700.0) return w_max;
  return std::min(std::exp(a), w_max);
}

double td_target_value(double reward, double done, double gamma, double min_target_q) {
  return reward + (1.0 - done) * gamma * min_target_q;
}

double td_loss_value(const Eigen::VectorXd& q1, const Eigen::VectorXd& q2,
                     const Eigen::VectorXd& y) {
  const double n = static_cast<double>(y.size());
  double l1 = 0.5 * (q1 - y).squaredNorm() / n;
  double l2 = 0.5 * (q2 - y).squaredNorm() / n;
  return l1 + l2;
}

double vmr_loss_value(const Eigen::VectorXd& q1_vlm, const Eigen::VectorXd& q2_vlm,
                      const Eigen::VectorXd& q1_detached, const Eigen::VectorXd& q2_detached,
                      const Eigen::VectorXd& mask, double delta) {
  const double n = static_cast<double>(mask.size());
  double loss = 0.0;
  for (int i = 0; i < mask.size(); ++i) {
    double e1 = q1_vlm(i) - (q1_detached(i) + delta);
    double e2 = q2_vlm(i) - (q2_detached(i) + delta);
    loss += mask(i) * (e1 * e1 + e2 * e2);
  }
  return loss / n;
}

double critic_total_value(double td, double vmr, double lambda_step) {
  return td + lambda_step * vmr;
}

double actor_total_value(double base, double awag, double iota_step) {
  return base + iota_step * awag;
}

double vmr_loss(const TransitionBatch& batch, CriticNet& c1, CriticNet& c2,
                const Eigen::VectorXd& q1_detached, const Eigen::VectorXd& q2_detached,
                double delta, double grad_coeff) {
  const int n = batch.size();
  nn::Mat q1v = c1.forward(batch.obs, batch.vlm_action);
  nn::Mat q2v = c2.forward(batch.obs, batch.vlm_action);
  double loss = vmr_loss_value(q1v.col(0), q2v.col(0), q1_detached, q2_detached, batch.mask, delta);
  if (grad_coeff != 0.0) {
    nn::Mat d1(n, 1), d2(n, 1);
    for (int i = 0; i < n; ++i) {
      d1(i, 0) = grad_coeff * 2.0 * batch.mask(i) * (q1v(i, 0) - (q1_detached(i) + delta)) / n;
      d2(i, 0) = grad_coeff * 2.0 * batch.mask(i) * (q2v(i, 0) - (q2_detached(i) + delta)) / n;
    }
    c1.backward(d1);
    c2.backward(d2);
  }
  return loss;
}

AdvantageResult awag_advantage(const TransitionBatch& batch, PolicyNet& policy, CriticNet& c1,
                               CriticNet& c2) {
  const int n = batch.size();
  PolicyNet::Output out = policy.forward(batch.obs);
  nn::Mat a_pi = out.mean.array().tanh().matrix();  // deterministic actor output
  Eigen::VectorXd q_pi =
      c1.forward(batch.obs, a_pi).col(0).cwiseMin(c2.forward(batch.obs, a_pi).col(0));
  Eigen::VectorXd q_vlm = c1.forward(batch.obs, batch.vlm_action)
                              .col(0)
                              .cwiseMin(c2.forward(batch.obs, batch.vlm_action).col(0));
  AdvantageResult res;
  res.advantage = q_vlm - q_pi;
  res.gate.resize(n);
  for (int i = 0; i < n; ++i) res.gate(i) = res.advantage(i) > 0.0 ? 1.0 : 0.0;
  return res;
}

LogProbResult squashed_gaussian_logp(const nn::Mat& actions, const nn::Mat& mean,
                                     const nn::Mat& log_std) {
  const int n = static_cast<int>(actions.rows());
  const int d = static_cast<int>(actions.cols());
  LogProbResult res;
  res.logp.setZero(n);
  res.d_mean.setZero(n, d);
  res.d_log_std.setZero(n, d);
  constexpr double kHalfLog2Pi = 0.9189385332046727;  // 0.5*log(2*pi)
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < d; ++j) {
      double a = clamp(actions(i, j), -1.0 + 1e-6, 1.0 - 1e-6);
      double u = std::atanh(a);
      double s = std::exp(log_std(i, j));
      double z = (u - mean(i, j)) / s;
      // log N(u; mean, s) - log(1 - a^2)  [tanh change of variables]
      res.logp(i) += -0.5 * z * z - log_std(i, j) - kHalfLog2Pi - std::log(1.0 - a * a);
      res.d_mean(i, j) = z / s;
      res.d_log_std(i, j) = z * z - 1.0;
    }
  }
  return res;
}

double awag_loss(const TransitionBatch& batch, PolicyNet& policy, const Eigen::VectorXd& coeff,
                 double grad_coeff) {
  if (!policy.stochastic()) {
    throw std::logic_error(
        "awag_loss: log-likelihood is undefined for a deterministic policy; "
        "enable the stochastic actor mode");
  }
  const int n = batch.size();
  PolicyNet::Output out = policy.forward(batch.obs);
  LogProbResult lp = squashed_gaussian_logp(batch.vlm_action, out.mean, out.log_std);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) loss -= coeff(i) * lp.logp(i);
  loss /= n;
  if (grad_coeff != 0.0) {
    nn::Mat d_mean(n, 2), d_log_std(n, 2);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 2; ++j) {
        d_mean(i, j) = -grad_coeff * coeff(i) * lp.d_mean(i, j) / n;
        d_log_std(i, j) = -grad_coeff * coeff(i) * lp.d_log_std(i, j) / n;
      }
    }
    policy.backward(d_mean, d_log_std);
  }
  return loss;
}

}  // namespace guiderl
