#include "guiderl/mentor.hpp"

#include <cmath>
#include <stdexcept>

#include "guiderl/rng.hpp"

namespace guiderl {

void MentorConfig::validate() const {
  if (failure_rate < 0 || failure_rate > 1) {
    throw std::invalid_argument("mentor: failure_rate must be in [0,1]");
  }
  if (latency_a < 0 || latency_b < 0) {
    throw std::invalid_argument("mentor: latency parameters must be nonnegative");
  }
}

Action3D expert_action(const Observation& obs, const ExpertParams& p) {
  const auto& sv = obs.state_vec;
  double v = sv[0] * p.v_max;
  double alpha = sv[5] * M_PI;  // lookahead pure-pursuit angle, left positive
  double d_lat = sv[3] * 2.0;   // meters, positive left of the route

  double lookahead = std::max(p.min_lookahead, p.lookahead_gain * v);
  // Pure pursuit: front-wheel angle toward the lookahead target; positive
  // steer turns right, so the sign flips.
  double delta = std::atan2(2.0 * p.wheelbase * std::sin(alpha), lookahead);
  double steer = clamp(-delta / p.max_steer_rad + p.k_lat * d_lat, -1.0, 1.0);

  double v_des = sv[6] * p.v_max;
  if (sv[8] > 0.5 || sv[9] > 0.5) v_des = 0.0;  // active rule zone ahead
  double lon = clamp(p.k_speed * (v_des - v), -1.0, 1.0);

  Action3D out;
  out.steer = steer;
  out.throttle = std::max(lon, 0.0);
  out.brake = std::max(-lon, 0.0);
  return out.clamped();
}

Action2D map_3d_to_2d(const Action3D& a) {
  Action3D c = a.clamped();
  Action2D out;
  out.longitudinal = c.brake > 0.05 ? -c.brake : c.throttle;
  out.steer = c.steer;
  return out.clamped();
}

// ---------------------------------------------------------------------------
// EmbeddingModel

namespace {
int lon_family_id(LongitudinalAction a) {
  switch (a) {
    case LongitudinalAction::kBrakingHard:
    case LongitudinalAction::kBraking:
      return 0;
    case LongitudinalAction::kAcceleratingFast:
    case LongitudinalAction::kAccelerating:
    case LongitudinalAction::kAcceleratingGently:
      return 1;
    case LongitudinalAction::kIdling:
      return 2;
  }
  return -1;
}

int lat_family_id(LateralAction a) {
  switch (a) {
    case LateralAction::kGoingStraight: return 0;
    case LateralAction::kTurningRightSharply:
    case LateralAction::kTurningRight:
      return 1;
    case LateralAction::kTurningLeftSharply:
    case LateralAction::kTurningLeft:
      return 2;
  }
  return -1;
}

Eigen::VectorXd gaussian_unit(int dim, uint64_t seed) {
  Rng rng(seed);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = rng.normal();
  double n = v.norm();
  return n > 1e-12 ? Eigen::VectorXd(v / n) : Eigen::VectorXd::Unit(dim, 0);
}
}  // namespace

EmbeddingModel::EmbeddingModel(int dim, uint64_t seed, double neighbor_mix)
    : dim_(dim), seed_(seed), neighbor_mix_(neighbor_mix) {
  if (dim_ < 2) throw std::invalid_argument("embedding dim must be >= 2");
  by_index_.resize(PromptLibrary::kTotalPrompts);
  for (int ci = 0; ci < kNumContexts; ++ci) {
    Context ctx = Context::from_index(ci);
    for (int ai = 0; ai < kNumSemanticActions; ++ai) {
      SemanticAction act = SemanticAction::from_index(ai);
      Eigen::VectorXd v = table_vector(ctx, act);
      by_index_[ci * kNumSemanticActions + ai] = v;
      by_prompt_.emplace(prompt_text(ctx, act), std::move(v));
    }
  }
}

Eigen::VectorXd EmbeddingModel::table_vector(const Context& ctx, const SemanticAction& act) const {
  // Family base shared by intensity variants; unique residual per action.
  uint64_t fam_key = Rng::mix(
      Rng::mix(seed_, static_cast<uint64_t>(ctx.index()) + 1),
      0x100 + static_cast<uint64_t>(lon_family_id(act.longitudinal)) * 16 +
          static_cast<uint64_t>(lat_family_id(act.lateral)));
  uint64_t uniq_key = Rng::mix(Rng::mix(seed_, static_cast<uint64_t>(ctx.index()) + 1),
                               0x10000 + static_cast<uint64_t>(act.index()));
  Eigen::VectorXd base = gaussian_unit(dim_, fam_key);
  Eigen::VectorXd uniq = gaussian_unit(dim_, uniq_key);
  Eigen::VectorXd v = neighbor_mix_ * base + (1.0 - neighbor_mix_) * uniq;
  double n = v.norm();
  return n > 1e-12 ? Eigen::VectorXd(v / n) : base;
}

Eigen::VectorXd EmbeddingModel::embed_text(const Context& ctx, const SemanticAction& act) const {
  return by_index_[ctx.index() * kNumSemanticActions + act.index()];
}

Eigen::VectorXd EmbeddingModel::embed_text(const std::string& prompt) const {
  auto it = by_prompt_.find(prompt);
  if (it == by_prompt_.end()) {
    throw std::invalid_argument("embed_text: unknown prompt: " + prompt);
  }
  return it->second;
}

Eigen::VectorXd EmbeddingModel::embed_image(const Context& ctx, const SemanticAction& true_label,
                                            double sigma_e, uint64_t noise_seed) const {
  Eigen::VectorXd v = embed_text(ctx, true_label);
  if (sigma_e > 0) {
    Rng rng(Rng::mix(noise_seed, 0x696d67ULL));
    for (int i = 0; i < dim_; ++i) v(i) += sigma_e * rng.normal();
    double n = v.norm();
    if (n > 1e-12) v /= n;
  }
  return v;
}

PromptLibrary::Embedder EmbeddingModel::embedder() const {
  return [this](const Context& ctx, const SemanticAction& act, const std::string&) {
    return embed_text(ctx, act);
  };
}

ScoringAssets build_scoring_assets(const ShapingConfig& cfg, uint64_t seed) {
  ScoringAssets assets;
  auto embedder = std::make_shared<EmbeddingModel>(cfg.embed_dim, Rng::mix(seed, 0x636c6970ULL));
  assets.library = std::make_shared<PromptLibrary>(PromptLibrary::build(embedder->embedder()));
  assets.neighbors = std::make_shared<NeighborSets>(NeighborSets::intensity_variants());
  assets.embedder = std::move(embedder);
  assets.shaping = cfg;
  return assets;
}

// ---------------------------------------------------------------------------
// MockMentor

MockMentor::MockMentor(const MentorConfig& cfg, const ExpertParams& expert, ScoringAssets assets)
    : cfg_(cfg), expert_(expert), assets_(std::move(assets)) {
  cfg_.validate();
  if (cfg_.provide_score && (!assets_.embedder || !assets_.library || !assets_.neighbors)) {
    throw std::invalid_argument("mentor: score mode needs the scoring assets");
  }
}

uint64_t MockMentor::request_key(const InferenceRequest& req) const {
  return Rng::mix(Rng::mix(cfg_.seed, static_cast<uint64_t>(req.env_id) + 1),
                  static_cast<uint64_t>(req.step_idx) + 1);
}

double MockMentor::latency_s(const InferenceRequest& req) {
  Rng rng(Rng::mix(request_key(req), 0x6c6174ULL));
  switch (cfg_.latency_dist) {
    case MentorConfig::LatencyDist::kConstant:
      return cfg_.latency_a;
    case MentorConfig::LatencyDist::kUniform:
      return rng.uniform(cfg_.latency_a, std::max(cfg_.latency_a, cfg_.latency_b));
    case MentorConfig::LatencyDist::kLognormal:
      return rng.lognormal(std::log(std::max(cfg_.latency_a, 1e-9)), cfg_.latency_b);
  }
  return cfg_.latency_a;
}

InferenceResult MockMentor::infer(const InferenceRequest& req) {
  ParsedPrompt prompt = parse_prompt(req.payload);
  uint64_t key = request_key(req);

  InferenceResult out;
  Rng fail_rng(Rng::mix(key, 0xfa11ULL));
  if (fail_rng.uniform() < cfg_.failure_rate) {
    return out;  // mask stays 0: unavailable feedback
  }
  out.mask = 1;

  Observation obs;
  obs.state_vec = prompt.state_vec;
  Action3D suggested = expert_action(obs, expert_);

  if (cfg_.provide_action && prompt.meta.want_action) {
    Action3D noisy = suggested;
    if (cfg_.noise_scale > 0) {
      Rng noise_rng(Rng::mix(key, 0x6e6f69ULL));
      noisy.throttle += cfg_.noise_scale * noise_rng.normal();
      noisy.steer += cfg_.noise_scale * noise_rng.normal();
      noisy.brake += cfg_.noise_scale * noise_rng.normal();
    }
    out.action = map_3d_to_2d(noisy);
  }

  if (cfg_.provide_score && prompt.meta.want_score) {
    // The scene's ground-truth label is what the scripted expert would do
    // here; the executed action competes against that evidence.
    SemanticAction truth = discretize_action3d(suggested);
    Eigen::VectorXd img =
        assets_.embedder->embed_image(prompt.meta.context, truth, assets_.shaping.sigma_e, key);
    auto probs = score(img, prompt.meta.context, *assets_.library, assets_.shaping.tau_clip);
    out.score = margin(probs, prompt.meta.executed, *assets_.neighbors);
  }
  return out;
}

}  // namespace guiderl
