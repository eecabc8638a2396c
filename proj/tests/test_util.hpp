#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "guiderl/nets.hpp"
#include "guiderl/rng.hpp"

namespace guiderl::testutil {

// Central finite differences over every entry of every parameter; returns the
// worst relative error against the analytic gradients already stored in the
// params' grad fields.
inline double fd_worst_rel_error(const std::vector<nn::Param*>& params,
                                 const std::function<double()>& loss_fn, double h = 1e-5) {
  double worst = 0.0;
  for (auto* p : params) {
    for (int i = 0; i < p->value.rows(); ++i) {
      for (int j = 0; j < p->value.cols(); ++j) {
        double old = p->value(i, j);
        p->value(i, j) = old + h;
        double lp = loss_fn();
        p->value(i, j) = old - h;
        double lm = loss_fn();
        p->value(i, j) = old;
        double fd = (lp - lm) / (2 * h);
        double an = p->grad(i, j);
        double scale = std::max({std::abs(fd), std::abs(an), 1e-6});
        worst = std::max(worst, std::abs(fd - an) / scale);
      }
    }
  }
  return worst;
}

inline double grad_norm(const std::vector<nn::Param*>& params) {
  double s = 0.0;
  for (auto* p : params) s += p->grad.squaredNorm();
  return std::sqrt(s);
}

// Tiny random observation batch for learner-level tests.
inline std::vector<Observation> random_observations(int n, const FeatureSpec& spec, Rng& rng) {
  std::vector<Observation> out(static_cast<size_t>(n));
  for (auto& o : out) {
    o.grid_c = spec.grid_c;
    o.grid_h = spec.grid_h;
    o.grid_w = spec.grid_w;
    o.grid.resize(static_cast<size_t>(o.grid_size()));
    for (auto& v : o.grid) v = static_cast<float>(rng.uniform());
    for (int i = 0; i < spec.state_dim && i < kStateDim; ++i) {
      o.state_vec[static_cast<size_t>(i)] = rng.uniform(-1, 1);
    }
  }
  return out;
}

}  // namespace guiderl::testutil
