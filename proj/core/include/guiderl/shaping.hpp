#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "guiderl/common.hpp"

namespace guiderl {

// Speed bins (thresholds 0.1 / 2.0 / 4.5 m/s).
enum class SpeedBin : int { kStopped = 0, kSlow = 1, kModerate = 2, kHigh = 3 };
inline constexpr int kNumSpeedBins = 4;
const char* speed_bin_name(SpeedBin b);
const char* speed_bin_phrase(SpeedBin b);

enum class LongitudinalAction : int {
  kBrakingHard = 0,
  kBraking = 1,
  kAcceleratingFast = 2,
  kAccelerating = 3,
  kAcceleratingGently = 4,
  kIdling = 5,
};
inline constexpr int kNumLongitudinal = 6;
const char* longitudinal_name(LongitudinalAction a);
const char* longitudinal_phrase(LongitudinalAction a);

enum class LateralAction : int {
  kGoingStraight = 0,
  kTurningRightSharply = 1,
  kTurningRight = 2,
  kTurningLeftSharply = 3,
  kTurningLeft = 4,
};
inline constexpr int kNumLateral = 5;
const char* lateral_name(LateralAction a);
const char* lateral_phrase(LateralAction a);

// One of the 6 x 5 = 30 semantic action anchors.
struct SemanticAction {
  LongitudinalAction longitudinal = LongitudinalAction::kIdling;
  LateralAction lateral = LateralAction::kGoingStraight;

  int index() const {
    return static_cast<int>(longitudinal) * kNumLateral + static_cast<int>(lateral);
  }
  static SemanticAction from_index(int idx);
  bool operator==(const SemanticAction&) const = default;
};
inline constexpr int kNumSemanticActions = kNumLongitudinal * kNumLateral;  // 30

// Conditioning context: (navigation command, speed bin) -> 24 distinct values.
struct Context {
  Command command = Command::kFollowLane;
  SpeedBin speed_bin = SpeedBin::kStopped;

  int index() const {
    return static_cast<int>(command) * kNumSpeedBins + static_cast<int>(speed_bin);
  }
  static Context from_index(int idx);
  bool operator==(const Context&) const = default;
};
inline constexpr int kNumContexts = kNumCommands * kNumSpeedBins;  // 24

// Discretizers. All throw std::invalid_argument outside their valid ranges.
SpeedBin discretize_speed(double v);
LongitudinalAction discretize_longitudinal(double throttle, double brake);
LateralAction discretize_lateral(double steer);
// Signed-longitudinal split: throttle = max(x,0), brake = max(-x,0).
SemanticAction discretize_action2d(const Action2D& a);
SemanticAction discretize_action3d(const Action3D& a);

// Context-conditioned caption for a (context, action) pair.
std::string prompt_text(const Context& ctx, const SemanticAction& act);

// The 6 x 4 x 6 x 5 = 720 prompt library with precomputed embeddings.
class PromptLibrary {
 public:
  static constexpr int kTotalPrompts = kNumContexts * kNumSemanticActions;  // 720

  using Embedder =
      std::function<Eigen::VectorXd(const Context&, const SemanticAction&, const std::string&)>;

  static PromptLibrary build(const Embedder& embed);

  const std::string& prompt(const Context& ctx, const SemanticAction& act) const;
  Eigen::VectorXd embedding(const Context& ctx, const SemanticAction& act) const;
  // 30 anchor embeddings for one context, ordered by SemanticAction::index().
  const Eigen::MatrixXd& slice(const Context& ctx) const;  // d x 30
  int size() const { return kTotalPrompts; }
  int dim() const { return dim_; }

  void dump(const std::string& path) const;  // one prompt per line, for inspection

 private:
  std::vector<std::string> prompts_;
  std::vector<Eigen::MatrixXd> slices_;  // per context, d x 30
  int dim_ = 0;
};

// Semantic neighbor sets N(a): intensity variants of the same maneuver plus
// the action itself; symmetric by construction.
class NeighborSets {
 public:
  static NeighborSets intensity_variants();  // default rule

  bool contains(const SemanticAction& a, const SemanticAction& b) const {
    return (masks_[a.index()] >> b.index()) & 1u;
  }
  uint32_t mask(const SemanticAction& a) const { return masks_[a.index()]; }
  int count(const SemanticAction& a) const;

 private:
  std::array<uint32_t, kNumSemanticActions> masks_{};
};

// Softmax over cosine similarities to the 30 anchors of a context (temperature
// tau multiplies the cosine logits).
std::array<double, kNumSemanticActions> score(const Eigen::VectorXd& image_embedding,
                                              const Context& ctx, const PromptLibrary& lib,
                                              double tau);

// Margin of the executed anchor over the best non-neighbor anchor, floored at
// zero. Throws if the neighbor set covers all 30 anchors.
double margin(const std::array<double, kNumSemanticActions>& probs, const SemanticAction& executed,
              const NeighborSets& neighbors);

// Streaming mean/std normalizer (Welford update).
class RmsFilter {
 public:
  explicit RmsFilter(double eps = 1e-4) : eps_(eps) {}

  void update(double x);
  double mean() const { return mean_; }
  double variance() const { return count_ > 0 ? m2_ / static_cast<double>(count_) : 0.0; }
  double stddev() const { return std::max(std::sqrt(variance()), eps_); }
  int64_t count() const { return count_; }
  double eps() const { return eps_; }

  // clip((x - mean)/std, -1, 1)
  double normalize(double x) const;

 private:
  double mean_ = 0.0;
  double m2_ = 0.0;
  int64_t count_ = 0;
  double eps_;
};

struct ShapedReward {
  double r_vlm = 0.0;
  double r_final = 0.0;
};

// Update the filter with r_raw, then normalize that same value and combine
// with the environment reward.
ShapedReward normalize_and_shape(double r_raw, double r_env, RmsFilter& filter,
                                 double lambda_shape);

struct ShapingConfig {
  bool enabled = false;
  double tau_clip = 100.0;   // contrastive temperature
  double lambda_shape = 0.1;
  double sigma_e = 0.1;      // mock image-embedding noise
  double eps_rms = 1e-4;
  int embed_dim = 64;
};

}  // namespace guiderl
