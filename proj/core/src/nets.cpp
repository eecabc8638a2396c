#include "guiderl/nets.hpp"

#include <memory>
#include <stdexcept>

namespace guiderl {

using nn::Mat;

Features pack_features(const std::vector<Observation>& obs, const FeatureSpec& spec) {
  const int n = static_cast<int>(obs.size());
  Features f;
  f.grid.resize(n, spec.use_grid() ? spec.grid_size() : 0);
  f.state.resize(n, spec.state_dim);
  for (int i = 0; i < n; ++i) {
    const Observation& o = obs[i];
    if (spec.use_grid()) {
      if (o.grid_size() != spec.grid_size()) {
        throw std::invalid_argument("observation grid does not match feature spec");
      }
      for (int j = 0; j < spec.grid_size(); ++j) f.grid(i, j) = o.grid[j];
    }
    for (int j = 0; j < spec.state_dim; ++j) f.state(i, j) = o.state_vec[j];
  }
  return f;
}

Features pack_features(const Observation& obs, const FeatureSpec& spec) {
  return pack_features(std::vector<Observation>{obs}, spec);
}

namespace {
// Conv stem output size for the fixed 5x5/s2 + 3x3/s2 stem.
int stem_out(const FeatureSpec& spec, const NetConfig& cfg, std::unique_ptr<nn::Conv2d>& c1,
             std::unique_ptr<nn::Conv2d>& c2, Rng& rng, const std::string& name) {
  if (!spec.use_grid()) return 0;
  c1 = std::make_unique<nn::Conv2d>(spec.grid_c, spec.grid_h, spec.grid_w, cfg.conv1_channels, 5,
                                    2, 2, rng, name + ".conv1");
  c2 = std::make_unique<nn::Conv2d>(cfg.conv1_channels, c1->out_h(), c1->out_w(),
                                    cfg.conv2_channels, 3, 2, 1, rng, name + ".conv2");
  return c2->out_size();
}
}  // namespace

// ---------------------------------------------------------------------------
// PolicyNet

PolicyNet::PolicyNet(const FeatureSpec& spec, const NetConfig& cfg, bool stochastic, Rng& rng)
    : spec_(spec),
      cfg_(cfg),
      stochastic_(stochastic),
      fc1_((stem_out(spec, cfg, conv1_, conv2_, rng, "pi") + spec.state_dim), cfg.hidden, rng,
           "pi.fc1"),
      fc2_(cfg.hidden, cfg.hidden, rng, "pi.fc2"),
      head_mean_(cfg.hidden, 2, rng, "pi.mean", 1e-3),
      head_log_std_(cfg.hidden, 2, rng, "pi.log_std", 1e-3) {}

Mat PolicyNet::assemble(const Features& f) {
  if (!spec_.use_grid()) return f.state;
  Mat g = crelu2_.forward(conv2_->forward(crelu1_.forward(conv1_->forward(f.grid))));
  Mat x(f.rows(), g.cols() + f.state.cols());
  x << g, f.state;
  return x;
}

PolicyNet::Output PolicyNet::forward(const Features& f) {
  Mat h = relu2_.forward(fc2_.forward(relu1_.forward(fc1_.forward(assemble(f)))));
  Output out;
  out.mean = head_mean_.forward(h);
  raw_log_std_ = head_log_std_.forward(h);
  out.log_std = raw_log_std_.cwiseMax(cfg_.log_std_min).cwiseMin(cfg_.log_std_max);
  return out;
}

void PolicyNet::backward(const Mat& d_mean, const Mat& d_log_std) {
  // Hard clamp on log_std: gradient passes only inside the interval.
  Mat d_raw = d_log_std;
  for (int i = 0; i < d_raw.rows(); ++i) {
    for (int j = 0; j < d_raw.cols(); ++j) {
      double raw = raw_log_std_(i, j);
      if (raw <= cfg_.log_std_min || raw >= cfg_.log_std_max) d_raw(i, j) = 0.0;
    }
  }
  Mat dh = head_mean_.backward(d_mean) + head_log_std_.backward(d_raw);
  Mat dx = fc1_.backward(relu1_.backward(fc2_.backward(relu2_.backward(dh))));
  if (spec_.use_grid()) {
    Mat dg = dx.leftCols(dx.cols() - spec_.state_dim);
    conv1_->backward(crelu1_.backward(conv2_->backward(crelu2_.backward(dg))));
  }
}

std::vector<nn::Param*> PolicyNet::params() {
  std::vector<nn::Param*> out;
  if (conv1_) {
    out.push_back(&conv1_->w);
    out.push_back(&conv1_->b);
    out.push_back(&conv2_->w);
    out.push_back(&conv2_->b);
  }
  out.push_back(&fc1_.w);
  out.push_back(&fc1_.b);
  out.push_back(&fc2_.w);
  out.push_back(&fc2_.b);
  out.push_back(&head_mean_.w);
  out.push_back(&head_mean_.b);
  out.push_back(&head_log_std_.w);
  out.push_back(&head_log_std_.b);
  return out;
}

// ---------------------------------------------------------------------------
// CriticNet

CriticNet::CriticNet(const FeatureSpec& spec, const NetConfig& cfg, Rng& rng,
                     const std::string& name)
    : spec_(spec),
      cfg_(cfg),
      fc1_((stem_out(spec, cfg, conv1_, conv2_, rng, name) + spec.state_dim + 2), cfg.hidden, rng,
           name + ".fc1"),
      fc2_(cfg.hidden, cfg.hidden, rng, name + ".fc2"),
      head_(cfg.hidden, 1, rng, name + ".head", 3e-3) {}

Mat CriticNet::assemble(const Features& f, const Mat& action) {
  if (!spec_.use_grid()) {
    Mat x(f.rows(), f.state.cols() + action.cols());
    x << f.state, action;
    return x;
  }
  Mat g = crelu2_.forward(conv2_->forward(crelu1_.forward(conv1_->forward(f.grid))));
  Mat x(f.rows(), g.cols() + f.state.cols() + action.cols());
  x << g, f.state, action;
  return x;
}

Mat CriticNet::forward(const Features& f, const Mat& action) {
  return head_.forward(relu2_.forward(fc2_.forward(relu1_.forward(fc1_.forward(assemble(f, action))))));
}

Mat CriticNet::backward(const Mat& dq, bool accumulate) {
  Mat dh = relu1_.backward(
      fc2_.backward(relu2_.backward(head_.backward(dq, accumulate)), accumulate));
  Mat dx = fc1_.backward(dh, accumulate);
  if (spec_.use_grid() && accumulate) {
    Mat dg = dx.leftCols(dx.cols() - spec_.state_dim - 2);
    conv1_->backward(crelu1_.backward(conv2_->backward(crelu2_.backward(dg), accumulate)),
                     accumulate);
  }
  return dx.rightCols(2);
}

std::vector<nn::Param*> CriticNet::params() {
  std::vector<nn::Param*> out;
  if (conv1_) {
    out.push_back(&conv1_->w);
    out.push_back(&conv1_->b);
    out.push_back(&conv2_->w);
    out.push_back(&conv2_->b);
  }
  out.push_back(&fc1_.w);
  out.push_back(&fc1_.b);
  out.push_back(&fc2_.w);
  out.push_back(&fc2_.b);
  out.push_back(&head_.w);
  out.push_back(&head_.b);
  return out;
}

}  // namespace guiderl
