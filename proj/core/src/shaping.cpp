#include "guiderl/shaping.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace guiderl {

const char* speed_bin_name(SpeedBin b) {
  switch (b) {
    case SpeedBin::kStopped: return "stopped";
    case SpeedBin::kSlow: return "slow";
    case SpeedBin::kModerate: return "moderate";
    case SpeedBin::kHigh: return "high";
  }
  return "unknown";
}

const char* speed_bin_phrase(SpeedBin b) {
  switch (b) {
    case SpeedBin::kStopped: return "The car is currently stopped";
    case SpeedBin::kSlow: return "The car is moving slowly";
    case SpeedBin::kModerate: return "The car is driving at a moderate speed";
    case SpeedBin::kHigh: return "The car is driving at a high speed";
  }
  return "unknown";
}

const char* longitudinal_name(LongitudinalAction a) {
  switch (a) {
    case LongitudinalAction::kBrakingHard: return "braking-hard";
    case LongitudinalAction::kBraking: return "braking";
    case LongitudinalAction::kAcceleratingFast: return "accelerating-fast";
    case LongitudinalAction::kAccelerating: return "accelerating";
    case LongitudinalAction::kAcceleratingGently: return "accelerating-gently";
    case LongitudinalAction::kIdling: return "idling";
  }
  return "unknown";
}

const char* longitudinal_phrase(LongitudinalAction a) {
  switch (a) {
    case LongitudinalAction::kBrakingHard: return "braking hard";
    case LongitudinalAction::kBraking: return "braking";
    case LongitudinalAction::kAcceleratingFast: return "accelerating fast";
    case LongitudinalAction::kAccelerating: return "accelerating";
    case LongitudinalAction::kAcceleratingGently: return "accelerating gently";
    case LongitudinalAction::kIdling: return "idling";
  }
  return "unknown";
}

const char* lateral_name(LateralAction a) {
  switch (a) {
    case LateralAction::kGoingStraight: return "going-straight";
    case LateralAction::kTurningRightSharply: return "turning-right-sharply";
    case LateralAction::kTurningRight: return "turning-right";
    case LateralAction::kTurningLeftSharply: return "turning-left-sharply";
    case LateralAction::kTurningLeft: return "turning-left";
  }
  return "unknown";
}

const char* lateral_phrase(LateralAction a) {
  switch (a) {
    case LateralAction::kGoingStraight: return "going straight";
    case LateralAction::kTurningRightSharply: return "turning right sharply";
    case LateralAction::kTurningRight: return "turning right";
    case LateralAction::kTurningLeftSharply: return "turning left sharply";
    case LateralAction::kTurningLeft: return "turning left";
  }
  return "unknown";
}

SemanticAction SemanticAction::from_index(int idx) {
  if (idx < 0 || idx >= kNumSemanticActions) {
    throw std::invalid_argument("semantic action index out of range");
  }
  return {static_cast<LongitudinalAction>(idx / kNumLateral),
          static_cast<LateralAction>(idx % kNumLateral)};
}

Context Context::from_index(int idx) {
  if (idx < 0 || idx >= kNumContexts) {
    throw std::invalid_argument("context index out of range");
  }
  return {static_cast<Command>(idx / kNumSpeedBins), static_cast<SpeedBin>(idx % kNumSpeedBins)};
}

SpeedBin discretize_speed(double v) {
  if (v < 0) throw std::invalid_argument("discretize_speed: negative speed");
  if (v < 0.1) return SpeedBin::kStopped;
  if (v < 2.0) return SpeedBin::kSlow;
  if (v < 4.5) return SpeedBin::kModerate;
  return SpeedBin::kHigh;
}

LongitudinalAction discretize_longitudinal(double throttle, double brake) {
  if (throttle < 0 || throttle > 1 || brake < 0 || brake > 1) {
    throw std::invalid_argument("discretize_longitudinal: inputs must be in [0,1]");
  }
  // Checked in table row order: brake rows take precedence.
  if (brake > 0.5) return LongitudinalAction::kBrakingHard;
  if (brake > 0.05) return LongitudinalAction::kBraking;
  if (throttle > 0.8) return LongitudinalAction::kAcceleratingFast;
  if (throttle > 0.3) return LongitudinalAction::kAccelerating;
  if (throttle > 0.05) return LongitudinalAction::kAcceleratingGently;
  return LongitudinalAction::kIdling;
}

LateralAction discretize_lateral(double steer) {
  if (steer < -1 || steer > 1) {
    throw std::invalid_argument("discretize_lateral: steer must be in [-1,1]");
  }
  if (steer > -0.05 && steer < 0.05) return LateralAction::kGoingStraight;
  if (steer > 0.3) return LateralAction::kTurningRightSharply;
  if (steer >= 0.05) return LateralAction::kTurningRight;
  if (steer < -0.3) return LateralAction::kTurningLeftSharply;
  return LateralAction::kTurningLeft;  // [-0.3, -0.05]
}

SemanticAction discretize_action2d(const Action2D& a) {
  Action2D c = a.clamped();
  double throttle = std::max(c.longitudinal, 0.0);
  double brake = std::max(-c.longitudinal, 0.0);
  return {discretize_longitudinal(throttle, brake), discretize_lateral(c.steer)};
}

SemanticAction discretize_action3d(const Action3D& a) {
  Action3D c = a.clamped();
  return {discretize_longitudinal(c.throttle, c.brake), discretize_lateral(c.steer)};
}

std::string prompt_text(const Context& ctx, const SemanticAction& act) {
  std::string out = speed_bin_phrase(ctx.speed_bin);
  out += ". The command is to ";
  out += command_phrase(ctx.command);
  out += ". The car is ";
  out += longitudinal_phrase(act.longitudinal);
  out += " and ";
  out += lateral_phrase(act.lateral);
  out += ".";
  return out;
}

// ---------------------------------------------------------------------------
// PromptLibrary

PromptLibrary PromptLibrary::build(const Embedder& embed) {
  PromptLibrary lib;
  lib.prompts_.resize(kTotalPrompts);
  lib.slices_.resize(kNumContexts);
  for (int ci = 0; ci < kNumContexts; ++ci) {
    Context ctx = Context::from_index(ci);
    Eigen::MatrixXd slice;
    for (int ai = 0; ai < kNumSemanticActions; ++ai) {
      SemanticAction act = SemanticAction::from_index(ai);
      std::string text = prompt_text(ctx, act);
      Eigen::VectorXd v = embed(ctx, act, text);
      if (ci == 0 && ai == 0) {
        lib.dim_ = static_cast<int>(v.size());
      }
      if (v.size() != lib.dim_) throw std::runtime_error("embedder returned mixed dimensions");
      if (slice.size() == 0) slice.resize(lib.dim_, kNumSemanticActions);
      slice.col(ai) = v;
      lib.prompts_[ci * kNumSemanticActions + ai] = std::move(text);
    }
    lib.slices_[ci] = std::move(slice);
  }
  return lib;
}

const std::string& PromptLibrary::prompt(const Context& ctx, const SemanticAction& act) const {
  return prompts_[ctx.index() * kNumSemanticActions + act.index()];
}

Eigen::VectorXd PromptLibrary::embedding(const Context& ctx, const SemanticAction& act) const {
  return slices_[ctx.index()].col(act.index());
}

const Eigen::MatrixXd& PromptLibrary::slice(const Context& ctx) const {
  return slices_[ctx.index()];
}

void PromptLibrary::dump(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write prompt dump: " + path);
  for (const auto& p : prompts_) out << p << "\n";
}

// ---------------------------------------------------------------------------
// NeighborSets

namespace {
int lon_family(LongitudinalAction a) {
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

int lat_family(LateralAction a) {
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
}  // namespace

NeighborSets NeighborSets::intensity_variants() {
  NeighborSets n;
  for (int ai = 0; ai < kNumSemanticActions; ++ai) {
    SemanticAction a = SemanticAction::from_index(ai);
    uint32_t mask = 0;
    for (int bi = 0; bi < kNumSemanticActions; ++bi) {
      SemanticAction b = SemanticAction::from_index(bi);
      bool same_lat_intensity =
          b.lateral == a.lateral && lon_family(b.longitudinal) == lon_family(a.longitudinal);
      bool same_lon_intensity =
          b.longitudinal == a.longitudinal && lat_family(b.lateral) == lat_family(a.lateral);
      if (ai == bi || same_lat_intensity || same_lon_intensity) mask |= 1u << bi;
    }
    n.masks_[ai] = mask;
  }
  return n;
}

int NeighborSets::count(const SemanticAction& a) const {
  return __builtin_popcount(masks_[a.index()]);
}

// ---------------------------------------------------------------------------
// Scoring

std::array<double, kNumSemanticActions> score(const Eigen::VectorXd& image_embedding,
                                              const Context& ctx, const PromptLibrary& lib,
                                              double tau) {
  if (tau <= 0) throw std::invalid_argument("score: temperature must be positive");
  if (image_embedding.size() != lib.dim()) {
    throw std::invalid_argument("score: embedding dimension mismatch");
  }
  const Eigen::MatrixXd& anchors = lib.slice(ctx);
  double img_norm = image_embedding.norm();
  std::array<double, kNumSemanticActions> logits{};
  double max_logit = -1e300;
  for (int i = 0; i < kNumSemanticActions; ++i) {
    double denom = img_norm * anchors.col(i).norm();
    double cosine = denom > 1e-12 ? image_embedding.dot(anchors.col(i)) / denom : 0.0;
    logits[i] = tau * cosine;
    max_logit = std::max(max_logit, logits[i]);
  }
  double sum = 0.0;
  std::array<double, kNumSemanticActions> probs{};
  for (int i = 0; i < kNumSemanticActions; ++i) {
    probs[i] = std::exp(logits[i] - max_logit);
    sum += probs[i];
  }
  for (auto& p : probs) p /= sum;
  return probs;
}

double margin(const std::array<double, kNumSemanticActions>& probs, const SemanticAction& executed,
              const NeighborSets& neighbors) {
  uint32_t nmask = neighbors.mask(executed);
  double best_neg = -1.0;
  for (int i = 0; i < kNumSemanticActions; ++i) {
    if ((nmask >> i) & 1u) continue;
    best_neg = std::max(best_neg, probs[i]);
  }
  if (best_neg < 0) {
    throw std::invalid_argument("margin: neighbor set covers all anchors, no negatives left");
  }
  return std::max(0.0, probs[executed.index()] - best_neg);
}

// ---------------------------------------------------------------------------
// RmsFilter

void RmsFilter::update(double x) {
  ++count_;
  double delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (x - mean_);
}

double RmsFilter::normalize(double x) const {
  if (count_ == 0) return 0.0;
  double z = (x - mean_) / stddev();
  return clamp(z, -1.0, 1.0);
}

ShapedReward normalize_and_shape(double r_raw, double r_env, RmsFilter& filter,
                                 double lambda_shape) {
  filter.update(r_raw);
  ShapedReward out;
  out.r_vlm = filter.normalize(r_raw);
  out.r_final = r_env + lambda_shape * out.r_vlm;
  return out;
}

}  // namespace guiderl
