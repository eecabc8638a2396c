#pragma once

#include <Eigen/Core>
#include <iosfwd>
#include <string>
#include <vector>

#include "guiderl/rng.hpp"

namespace guiderl::nn {

using Mat = Eigen::MatrixXd;

struct Param {
  std::string name;
  Mat value;
  Mat grad;

  Param() = default;
  Param(std::string n, int rows, int cols) : name(std::move(n)) {
    value.setZero(rows, cols);
    grad.setZero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
  int64_t count() const { return value.size(); }
};

int64_t parameter_count(const std::vector<Param*>& params);
void zero_grads(const std::vector<Param*>& params);

// target <- rho * online + (1 - rho) * target, elementwise per parameter.
void polyak_update(const std::vector<Param*>& target, const std::vector<Param*>& online,
                   double rho);
void copy_params(const std::vector<Param*>& dst, const std::vector<Param*>& src);

// Fully connected layer on row-batched inputs: y = x W^T + b.
class Linear {
 public:
  Linear(int in, int out, Rng& rng, std::string name, double init_scale = -1.0);

  // x: N x in -> N x out. Caches x for the next backward().
  Mat forward(const Mat& x);
  // dy: N x out -> dx: N x in. Accumulates parameter grads unless told not to.
  Mat backward(const Mat& dy, bool accumulate = true);

  Param w;  // out x in
  Param b;  // out x 1
  int in_dim() const { return static_cast<int>(w.value.cols()); }
  int out_dim() const { return static_cast<int>(w.value.rows()); }

 private:
  Mat cache_x_;
};

class Relu {
 public:
  Mat forward(const Mat& x);
  Mat backward(const Mat& dy);

 private:
  Mat cache_x_;
};

// 2D convolution over channel-major flattened feature maps (im2col + GEMM).
class Conv2d {
 public:
  Conv2d(int in_c, int in_h, int in_w, int out_c, int ksize, int stride, int pad, Rng& rng,
         std::string name);

  Mat forward(const Mat& x);  // x: N x (in_c*in_h*in_w) -> N x (out_c*out_h*out_w)
  Mat backward(const Mat& dy, bool accumulate = true);

  int out_h() const { return out_h_; }
  int out_w() const { return out_w_; }
  int out_size() const { return out_c_ * out_h_ * out_w_; }

  Param w;  // out_c x (in_c*k*k)
  Param b;  // out_c x 1

 private:
  Mat im2col(const Eigen::Ref<const Eigen::RowVectorXd>& sample) const;

  int in_c_, in_h_, in_w_, out_c_, k_, stride_, pad_;
  int out_h_, out_w_;
  std::vector<Mat> cache_cols_;
};

// Adam with per-parameter moment buffers.
class Adam {
 public:
  Adam(std::vector<Param*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void step();
  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void save(std::ostream& out) const;
  void load(std::istream& in);

 private:
  std::vector<Param*> params_;
  std::vector<Mat> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

// Binary (de)serialization of parameter blobs; little-endian doubles.
void save_params(std::ostream& out, const std::vector<Param*>& params);
void load_params(std::istream& in, const std::vector<Param*>& params);

}  // namespace guiderl::nn
