#include "guiderl/learner.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace guiderl {

using nn::Mat;

double LearnerConfig::exploration_noise(int64_t step) const {
  int64_t horizon = static_cast<int64_t>(noise_decay_fraction * static_cast<double>(total_steps));
  if (horizon <= 0) return noise_end;
  if (step >= horizon) return noise_end;
  double p = static_cast<double>(step) / static_cast<double>(horizon);
  return noise_start + (noise_end - noise_start) * p;
}

void LearnerConfig::validate() const {
  if (gamma <= 0 || gamma >= 1) throw std::invalid_argument("learner: gamma must be in (0,1)");
  if (polyak_rho <= 0 || polyak_rho > 1) {
    throw std::invalid_argument("learner: polyak rho must be in (0,1]");
  }
  if (batch_size <= 0) throw std::invalid_argument("learner: batch_size must be positive");
  if (actor_lr <= 0 || critic_lr <= 0) {
    throw std::invalid_argument("learner: learning rates must be positive");
  }
}

Learner::Learner(LearnerConfig cfg, GuidanceConfig gcfg, FeatureSpec spec, uint64_t seed)
    : cfg_(std::move(cfg)), gcfg_(gcfg), spec_(spec), rng_(Rng::mix(seed, 0x6c6561726eULL)) {
  cfg_.validate();
  gcfg_.validate();
  if (gcfg_.awag_enabled && !cfg_.stochastic) {
    throw std::invalid_argument(
        "learner: AWAG needs the stochastic actor mode (log-likelihood of a "
        "deterministic policy is undefined)");
  }
  Rng init = rng_.fork(1);
  policy_ = std::make_unique<PolicyNet>(spec_, cfg_.net, cfg_.stochastic, init);
  critic1_ = std::make_unique<CriticNet>(spec_, cfg_.net, init, "q1");
  critic2_ = std::make_unique<CriticNet>(spec_, cfg_.net, init, "q2");
  target1_ = std::make_unique<CriticNet>(spec_, cfg_.net, init, "q1t");
  target2_ = std::make_unique<CriticNet>(spec_, cfg_.net, init, "q2t");
  nn::copy_params(target1_->params(), critic1_->params());
  nn::copy_params(target2_->params(), critic2_->params());
  actor_opt_ = std::make_unique<nn::Adam>(policy_->params(), cfg_.actor_lr);
  std::vector<nn::Param*> critic_params = critic1_->params();
  for (auto* p : critic2_->params()) critic_params.push_back(p);
  critic_opt_ = std::make_unique<nn::Adam>(critic_params, cfg_.critic_lr);
}

int64_t Learner::parameter_count() {
  int64_t n = nn::parameter_count(policy_->params());
  n += nn::parameter_count(critic1_->params());
  n += nn::parameter_count(critic2_->params());
  return n;
}

Mat Learner::policy_action(const Features& f, double noise_scale) {
  PolicyNet::Output out = policy_->forward(f);
  const int n = static_cast<int>(out.mean.rows());
  Mat a(n, 2);
  if (cfg_.stochastic && noise_scale > 0) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 2; ++j) {
        double z = out.mean(i, j) + std::exp(out.log_std(i, j)) * rng_.normal();
        a(i, j) = std::tanh(z);
      }
    }
  } else {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 2; ++j) {
        double v = std::tanh(out.mean(i, j));
        if (noise_scale > 0) v += noise_scale * rng_.normal();
        a(i, j) = clamp(v, -1.0, 1.0);
      }
    }
  }
  return a;
}

Action2D Learner::act(const Observation& obs, double noise_scale) {
  Features f = pack_features(obs, spec_);
  Mat a = policy_action(f, noise_scale);
  return Action2D{a(0, 0), a(0, 1)};
}

Eigen::VectorXd Learner::td_target(const TransitionBatch& batch, int64_t step) {
  Mat next_a = policy_action(batch.next_obs, cfg_.exploration_noise(step));
  Eigen::VectorXd tq1 = target1_->forward(batch.next_obs, next_a).col(0);
  Eigen::VectorXd tq2 = target2_->forward(batch.next_obs, next_a).col(0);
  Eigen::VectorXd y(batch.size());
  for (int i = 0; i < batch.size(); ++i) {
    y(i) = td_target_value(batch.reward(i), batch.done(i), cfg_.gamma, std::min(tq1(i), tq2(i)));
  }
  return y;
}

TransitionBatch Learner::pack(const SampledBatch& b) const {
  const int n = static_cast<int>(b.size());
  TransitionBatch t;
  t.obs = pack_features(b.obs, spec_);
  t.next_obs = pack_features(b.next_obs, spec_);
  t.action.resize(n, 2);
  t.vlm_action.resize(n, 2);
  t.reward.resize(n);
  t.done.resize(n);
  t.mask.resize(n);
  for (int i = 0; i < n; ++i) {
    t.action(i, 0) = b.action[i].longitudinal;
    t.action(i, 1) = b.action[i].steer;
    t.vlm_action(i, 0) = b.vlm_feedback[i].longitudinal;
    t.vlm_action(i, 1) = b.vlm_feedback[i].steer;
    t.reward(i) = b.reward[i];
    t.done(i) = b.done[i];
    t.mask(i) = b.mask[i];
  }
  return t;
}

UpdateStats Learner::update(const TransitionBatch& batch, int64_t step) {
  const int n = batch.size();
  const double dn = static_cast<double>(n);
  UpdateStats st;
  int64_t horizon = gcfg_.horizon_steps > 0 ? gcfg_.horizon_steps
                                            : std::max<int64_t>(1, cfg_.total_steps / 2);

  // ---- critic phase -------------------------------------------------------
  nn::zero_grads(critic1_->params());
  nn::zero_grads(critic2_->params());

  Eigen::VectorXd y = td_target(batch, step);  // detached bootstrap targets

  Eigen::VectorXd q1 = critic1_->forward(batch.obs, batch.action).col(0);
  Mat dq1 = (q1 - y) / dn;
  critic1_->backward(dq1);
  Eigen::VectorXd q2 = critic2_->forward(batch.obs, batch.action).col(0);
  Mat dq2 = (q2 - y) / dn;
  critic2_->backward(dq2);

  st.td_loss = td_loss_value(q1, q2, y);
  st.mean_q1 = q1.mean();
  st.mean_q2 = q2.mean();

  st.guidance.lambda_vmr =
      gcfg_.vmr_enabled ? cosine_coeff(step, gcfg_.vmr_start, gcfg_.vmr_end, horizon,
                                       gcfg_.vmr_exponent)
                        : 0.0;
  if (gcfg_.vmr_enabled && batch.mask.sum() > 0) {
    st.guidance.vmr_loss = vmr_loss(batch, *critic1_, *critic2_, q1, q2, gcfg_.margin_delta,
                                    st.guidance.lambda_vmr);
  }
  st.critic_total = critic_total_value(st.td_loss, st.guidance.vmr_loss, st.guidance.lambda_vmr);
  critic_opt_->step();

  // ---- actor phase ---------------------------------------------------------
  nn::zero_grads(policy_->params());

  // Adaptive base-loss scale from the first critic head on replay actions
  // (detached; evaluated before the critic step above).
  st.awag_scale = 1.0;
  if (gcfg_.awag_enabled) {
    double q_norm = q1.cwiseAbs().mean();
    st.awag_scale = gcfg_.alpha / (q_norm + gcfg_.eps);
  }

  PolicyNet::Output pout = policy_->forward(batch.obs);
  Mat z = pout.mean;  // pre-squash sample point
  Mat noise(n, 2);
  noise.setZero();
  if (cfg_.stochastic) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 2; ++j) {
        noise(i, j) = rng_.normal();
        z(i, j) += std::exp(pout.log_std(i, j)) * noise(i, j);
      }
    }
  }
  Mat a_hat = z.array().tanh().matrix();

  Eigen::VectorXd qa1 = critic1_->forward(batch.obs, a_hat).col(0);
  // Harvest dQ1/da before the second critic clobbers nothing (separate nets),
  // but before any further forward passes reuse critic1's cache.
  Mat dsel1(n, 1), dsel2(n, 1);
  dsel1.setZero();
  dsel2.setZero();
  Eigen::VectorXd qa2 = critic2_->forward(batch.obs, a_hat).col(0);
  double base_loss = 0.0;
  for (int i = 0; i < n; ++i) {
    double qmin = std::min(qa1(i), qa2(i));
    base_loss -= st.awag_scale * qmin;
    if (qa1(i) <= qa2(i)) {
      dsel1(i, 0) = -st.awag_scale / dn;
    } else {
      dsel2(i, 0) = -st.awag_scale / dn;
    }
  }
  base_loss /= dn;
  st.base_loss = base_loss;

  Mat da = critic1_->backward(dsel1, /*accumulate=*/false) +
           critic2_->backward(dsel2, /*accumulate=*/false);
  // Chain through the tanh squash back to the Gaussian heads.
  Mat dz = da.cwiseProduct((1.0 - a_hat.array().square()).matrix());
  Mat d_mean = dz;
  Mat d_log_std(n, 2);
  d_log_std.setZero();
  if (cfg_.stochastic) {
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 2; ++j) {
        d_log_std(i, j) = dz(i, j) * std::exp(pout.log_std(i, j)) * noise(i, j);
      }
    }
  }

  // AWAG guidance term.
  st.guidance.iota_awag = 0.0;
  if (gcfg_.awag_enabled) {
    st.guidance.iota_awag =
        gcfg_.awag_decay_enabled
            ? cosine_coeff(step, gcfg_.awag_start, gcfg_.awag_end, horizon, gcfg_.awag_exponent)
            : gcfg_.awag_start;
    if (batch.mask.sum() > 0) {
      AdvantageResult adv = awag_advantage(batch, *policy_, *critic1_, *critic2_);
      Eigen::VectorXd coeff(n);
      double wsum = 0.0, asum = 0.0, gsum = 0.0;
      for (int i = 0; i < n; ++i) {
        double w = awag_weight(adv.advantage(i), gcfg_.beta, gcfg_.w_max);
        coeff(i) = batch.mask(i) * adv.gate(i) * w;
        asum += batch.mask(i) * adv.advantage(i);
        gsum += batch.mask(i) * adv.gate(i);
        wsum += batch.mask(i) * adv.gate(i) * w;
      }
      double masked = batch.mask.sum();
      st.guidance.mean_advantage = asum / masked;
      st.guidance.gate_fraction = gsum / masked;
      st.guidance.mean_weight = gsum > 0 ? wsum / gsum : 0.0;
      // awag_loss runs its own policy forward; do it before the base-loss
      // backward so the final backward below sees the base-loss cache.
      st.guidance.awag_loss = awag_loss(batch, *policy_, coeff, 0.0);
      if (st.guidance.iota_awag != 0.0 && coeff.sum() > 0) {
        PolicyNet::Output gout = policy_->forward(batch.obs);
        LogProbResult lp = squashed_gaussian_logp(batch.vlm_action, gout.mean, gout.log_std);
        for (int i = 0; i < n; ++i) {
          for (int j = 0; j < 2; ++j) {
            d_mean(i, j) += -st.guidance.iota_awag * coeff(i) * lp.d_mean(i, j) / dn;
            d_log_std(i, j) += -st.guidance.iota_awag * coeff(i) * lp.d_log_std(i, j) / dn;
          }
        }
      }
    }
  }

  // One policy forward cache is live at this point (the most recent forward);
  // re-run the base forward so the backward consumes matching activations.
  policy_->forward(batch.obs);
  policy_->backward(d_mean, d_log_std);
  actor_opt_->step();
  st.actor_total = actor_total_value(st.base_loss, st.guidance.awag_loss, st.guidance.iota_awag);

  soft_update();
  return st;
}

void Learner::soft_update() {
  nn::polyak_update(target1_->params(), critic1_->params(), cfg_.polyak_rho);
  nn::polyak_update(target2_->params(), critic2_->params(), cfg_.polyak_rho);
}

// ---------------------------------------------------------------------------
// Checkpointing

namespace {
constexpr char kCkptMagic[8] = {'G', 'R', 'L', 'C', 'K', '0', '0', '1'};

void put_i32(std::ostream& out, int32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
int32_t get_i32(std::istream& in) {
  int32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
}  // namespace

void Learner::save(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kCkptMagic, sizeof(kCkptMagic));
  put_i32(out, spec_.grid_c);
  put_i32(out, spec_.grid_h);
  put_i32(out, spec_.grid_w);
  put_i32(out, spec_.state_dim);
  put_i32(out, cfg_.net.conv1_channels);
  put_i32(out, cfg_.net.conv2_channels);
  put_i32(out, cfg_.net.hidden);
  put_i32(out, cfg_.stochastic ? 1 : 0);
  nn::save_params(out, policy_->params());
  nn::save_params(out, critic1_->params());
  nn::save_params(out, critic2_->params());
  nn::save_params(out, target1_->params());
  nn::save_params(out, target2_->params());
  actor_opt_->save(out);
  critic_opt_->save(out);
  uint64_t rng_state = rng_.state();
  out.write(reinterpret_cast<const char*>(&rng_state), sizeof(rng_state));
}

void Learner::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCkptMagic, sizeof(kCkptMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad header in " + path);
  }
  FeatureSpec spec;
  spec.grid_c = get_i32(in);
  spec.grid_h = get_i32(in);
  spec.grid_w = get_i32(in);
  spec.state_dim = get_i32(in);
  int conv1 = get_i32(in), conv2 = get_i32(in), hidden = get_i32(in);
  bool stochastic = get_i32(in) != 0;
  if (!(spec == spec_) || conv1 != cfg_.net.conv1_channels || conv2 != cfg_.net.conv2_channels ||
      hidden != cfg_.net.hidden || stochastic != cfg_.stochastic) {
    throw std::runtime_error("checkpoint: architecture does not match the configuration");
  }
  nn::load_params(in, policy_->params());
  nn::load_params(in, critic1_->params());
  nn::load_params(in, critic2_->params());
  nn::load_params(in, target1_->params());
  nn::load_params(in, target2_->params());
  actor_opt_->load(in);
  critic_opt_->load(in);
  uint64_t rng_state = 0;
  in.read(reinterpret_cast<char*>(&rng_state), sizeof(rng_state));
  if (in) rng_.set_state(rng_state);
}

}  // namespace guiderl
