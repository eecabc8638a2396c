#pragma once

#include <memory>
#include <vector>

#include "guiderl/common.hpp"
#include "guiderl/nn.hpp"

namespace guiderl {

struct FeatureSpec {
  int grid_c = 0;
  int grid_h = 0;
  int grid_w = 0;
  int state_dim = kStateDim;

  bool use_grid() const { return grid_c > 0 && grid_h > 0 && grid_w > 0; }
  int grid_size() const { return grid_c * grid_h * grid_w; }
  bool operator==(const FeatureSpec&) const = default;
};

struct NetConfig {
  int conv1_channels = 8;
  int conv2_channels = 16;
  int hidden = 256;
  double log_std_min = -5.0;
  double log_std_max = 2.0;
  bool operator==(const NetConfig&) const = default;
};

// Batched observation features: one row per sample.
struct Features {
  nn::Mat grid;   // N x grid_size (empty when the spec has no grid)
  nn::Mat state;  // N x state_dim
  int rows() const { return static_cast<int>(state.rows()); }
};

Features pack_features(const std::vector<Observation>& obs, const FeatureSpec& spec);
Features pack_features(const Observation& obs, const FeatureSpec& spec);

// Small conv stem + two-hidden-layer trunk shared by actor and critics (each
// instance owns its parameters; nothing is shared across networks).
class PolicyNet {
 public:
  PolicyNet(const FeatureSpec& spec, const NetConfig& cfg, bool stochastic, Rng& rng);

  struct Output {
    nn::Mat mean;     // N x 2, pre-squash Gaussian mean
    nn::Mat log_std;  // N x 2, clamped to [log_std_min, log_std_max]
  };
  Output forward(const Features& f);
  // Head gradients flow back through the trunk (and conv stem).
  void backward(const nn::Mat& d_mean, const nn::Mat& d_log_std);

  std::vector<nn::Param*> params();
  bool stochastic() const { return stochastic_; }
  const FeatureSpec& feature_spec() const { return spec_; }

 private:
  nn::Mat assemble(const Features& f);

  FeatureSpec spec_;
  NetConfig cfg_;
  bool stochastic_;
  std::unique_ptr<nn::Conv2d> conv1_, conv2_;
  nn::Relu crelu1_, crelu2_;
  nn::Linear fc1_, fc2_, head_mean_, head_log_std_;
  nn::Relu relu1_, relu2_;
  nn::Mat raw_log_std_;  // pre-clamp cache for the backward mask
};

class CriticNet {
 public:
  CriticNet(const FeatureSpec& spec, const NetConfig& cfg, Rng& rng, const std::string& name);

  // q(o, a): N x 1.
  nn::Mat forward(const Features& f, const nn::Mat& action);
  // Returns dL/daction (N x 2). Parameter grads accumulate unless disabled.
  nn::Mat backward(const nn::Mat& dq, bool accumulate = true);

  std::vector<nn::Param*> params();

 private:
  nn::Mat assemble(const Features& f, const nn::Mat& action);

  FeatureSpec spec_;
  NetConfig cfg_;
  std::unique_ptr<nn::Conv2d> conv1_, conv2_;
  nn::Relu crelu1_, crelu2_;
  nn::Linear fc1_, fc2_, head_;
  nn::Relu relu1_, relu2_;
};

}  // namespace guiderl
