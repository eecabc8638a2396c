#pragma once

#include <Eigen/Core>
#include <memory>
#include <unordered_map>

#include "guiderl/batcher.hpp"
#include "guiderl/common.hpp"
#include "guiderl/shaping.hpp"

namespace guiderl {

struct MentorConfig {
  enum class LatencyDist { kConstant = 0, kUniform = 1, kLognormal = 2 };
  LatencyDist latency_dist = LatencyDist::kConstant;
  // constant: latency_a seconds; uniform: [latency_a, latency_b];
  // lognormal: median latency_a, log-space sigma latency_b.
  double latency_a = 0.005;
  double latency_b = 0.0;
  double failure_rate = 0.0;  // probability of mask = 0
  double noise_scale = 0.0;   // additive noise on expert action components
  uint64_t seed = 0;
  bool provide_action = true;
  bool provide_score = false;

  void validate() const;
};

// Scripted expert standing in for the action-suggesting mentor: pure-pursuit
// steering on the lookahead angle plus proportional speed control toward the
// obstacle-aware desired speed; brakes to a stop for active rule zones.
struct ExpertParams {
  double v_max = 6.0;
  double wheelbase = 2.5;
  double max_steer_rad = 0.6;
  double min_lookahead = 2.0;
  double lookahead_gain = 1.0;
  double k_speed = 1.0;  // longitudinal gain per m/s of speed error
  double k_lat = 0.1;    // lateral damping on the offset term
};

Action3D expert_action(const Observation& obs, const ExpertParams& params = {});

// 3D mentor action -> 2D control. Brake wins once it exceeds 0.05.
Action2D map_3d_to_2d(const Action3D& a);

// Deterministic stand-in for a contrastive text/image encoder. Text vectors
// are drawn once per prompt from a seeded sphere; intensity variants of the
// same maneuver share a common component so near-miss confusion matches the
// behaviour of a fine-tuned encoder. Image vectors are the ground-truth
// prompt vector plus Gaussian noise, renormalized.
class EmbeddingModel {
 public:
  EmbeddingModel(int dim, uint64_t seed, double neighbor_mix = 0.7);

  Eigen::VectorXd embed_text(const Context& ctx, const SemanticAction& act) const;
  // Lookup by exact prompt string; throws on unknown prompts.
  Eigen::VectorXd embed_text(const std::string& prompt) const;
  Eigen::VectorXd embed_image(const Context& ctx, const SemanticAction& true_label, double sigma_e,
                              uint64_t noise_seed) const;

  PromptLibrary::Embedder embedder() const;
  int dim() const { return dim_; }

 private:
  Eigen::VectorXd table_vector(const Context& ctx, const SemanticAction& act) const;

  int dim_;
  uint64_t seed_;
  double neighbor_mix_;
  std::unordered_map<std::string, Eigen::VectorXd> by_prompt_;
  std::vector<Eigen::VectorXd> by_index_;  // 720 entries
};

// Shared immutable assets of the scoring pipeline.
struct ScoringAssets {
  std::shared_ptr<const EmbeddingModel> embedder;
  std::shared_ptr<const PromptLibrary> library;
  std::shared_ptr<const NeighborSets> neighbors;
  ShapingConfig shaping;
};

ScoringAssets build_scoring_assets(const ShapingConfig& cfg, uint64_t seed);

// Mock foundation model served behind the batch-inference service: answers
// action requests with the scripted expert and score requests with the
// contrastive margin of the executed action.
class MockMentor : public BatchModel {
 public:
  MockMentor(const MentorConfig& cfg, const ExpertParams& expert, ScoringAssets assets);

  double latency_s(const InferenceRequest& req) override;
  InferenceResult infer(const InferenceRequest& req) override;

 private:
  uint64_t request_key(const InferenceRequest& req) const;

  MentorConfig cfg_;
  ExpertParams expert_;
  ScoringAssets assets_;
};

}  // namespace guiderl
