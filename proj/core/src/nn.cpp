#include "guiderl/nn.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace guiderl::nn {

int64_t parameter_count(const std::vector<Param*>& params) {
  int64_t n = 0;
  for (const auto* p : params) n += p->count();
  return n;
}

void zero_grads(const std::vector<Param*>& params) {
  for (auto* p : params) p->zero_grad();
}

void polyak_update(const std::vector<Param*>& target, const std::vector<Param*>& online,
                   double rho) {
  if (target.size() != online.size()) throw std::invalid_argument("polyak: size mismatch");
  for (size_t i = 0; i < target.size(); ++i) {
    target[i]->value = rho * online[i]->value + (1.0 - rho) * target[i]->value;
  }
}

void copy_params(const std::vector<Param*>& dst, const std::vector<Param*>& src) {
  if (dst.size() != src.size()) throw std::invalid_argument("copy_params: size mismatch");
  for (size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(int in, int out, Rng& rng, std::string name, double init_scale)
    : w(name + ".w", out, in), b(name + ".b", out, 1) {
  double limit = init_scale > 0 ? init_scale : std::sqrt(6.0 / in);
  for (int i = 0; i < out; ++i) {
    for (int j = 0; j < in; ++j) w.value(i, j) = rng.uniform(-limit, limit);
  }
  b.value.setZero();
}

Mat Linear::forward(const Mat& x) {
  cache_x_ = x;
  Mat y = x * w.value.transpose();
  y.rowwise() += b.value.col(0).transpose();
  return y;
}

Mat Linear::backward(const Mat& dy, bool accumulate) {
  if (accumulate) {
    w.grad.noalias() += dy.transpose() * cache_x_;
    b.grad.col(0).noalias() += dy.colwise().sum().transpose();
  }
  return dy * w.value;
}

// ---------------------------------------------------------------------------
// Relu

Mat Relu::forward(const Mat& x) {
  cache_x_ = x;
  return x.cwiseMax(0.0);
}

Mat Relu::backward(const Mat& dy) {
  return (cache_x_.array() > 0.0).select(dy, Mat::Zero(dy.rows(), dy.cols()));
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(int in_c, int in_h, int in_w, int out_c, int ksize, int stride, int pad, Rng& rng,
               std::string name)
    : w(name + ".w", out_c, in_c * ksize * ksize),
      b(name + ".b", out_c, 1),
      in_c_(in_c),
      in_h_(in_h),
      in_w_(in_w),
      out_c_(out_c),
      k_(ksize),
      stride_(stride),
      pad_(pad) {
  out_h_ = (in_h + 2 * pad - ksize) / stride + 1;
  out_w_ = (in_w + 2 * pad - ksize) / stride + 1;
  if (out_h_ <= 0 || out_w_ <= 0) throw std::invalid_argument("conv: empty output");
  double limit = std::sqrt(6.0 / (in_c * ksize * ksize));
  for (int i = 0; i < w.value.rows(); ++i) {
    for (int j = 0; j < w.value.cols(); ++j) w.value(i, j) = rng.uniform(-limit, limit);
  }
  b.value.setZero();
}

Mat Conv2d::im2col(const Eigen::Ref<const Eigen::RowVectorXd>& sample) const {
  Mat col(in_c_ * k_ * k_, out_h_ * out_w_);
  col.setZero();
  for (int c = 0; c < in_c_; ++c) {
    for (int ky = 0; ky < k_; ++ky) {
      for (int kx = 0; kx < k_; ++kx) {
        int row = (c * k_ + ky) * k_ + kx;
        for (int oy = 0; oy < out_h_; ++oy) {
          int iy = oy * stride_ + ky - pad_;
          if (iy < 0 || iy >= in_h_) continue;
          for (int ox = 0; ox < out_w_; ++ox) {
            int ix = ox * stride_ + kx - pad_;
            if (ix < 0 || ix >= in_w_) continue;
            col(row, oy * out_w_ + ox) = sample((c * in_h_ + iy) * in_w_ + ix);
          }
        }
      }
    }
  }
  return col;
}

Mat Conv2d::forward(const Mat& x) {
  const int n = static_cast<int>(x.rows());
  Mat y(n, out_size());
  cache_cols_.resize(n);
  for (int s = 0; s < n; ++s) {
    cache_cols_[s] = im2col(x.row(s));
    Mat out = w.value * cache_cols_[s];  // out_c x (oh*ow)
    out.colwise() += b.value.col(0);
    for (int c = 0; c < out_c_; ++c) {
      for (int p = 0; p < out_h_ * out_w_; ++p) y(s, c * out_h_ * out_w_ + p) = out(c, p);
    }
  }
  return y;
}

Mat Conv2d::backward(const Mat& dy, bool accumulate) {
  const int n = static_cast<int>(dy.rows());
  Mat dx(n, in_c_ * in_h_ * in_w_);
  dx.setZero();
  for (int s = 0; s < n; ++s) {
    Mat dout(out_c_, out_h_ * out_w_);
    for (int c = 0; c < out_c_; ++c) {
      for (int p = 0; p < out_h_ * out_w_; ++p) dout(c, p) = dy(s, c * out_h_ * out_w_ + p);
    }
    if (accumulate) {
      w.grad.noalias() += dout * cache_cols_[s].transpose();
      b.grad.col(0).noalias() += dout.rowwise().sum();
    }
    Mat dcol = w.value.transpose() * dout;  // (in_c*k*k) x (oh*ow)
    for (int c = 0; c < in_c_; ++c) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          int row = (c * k_ + ky) * k_ + kx;
          for (int oy = 0; oy < out_h_; ++oy) {
            int iy = oy * stride_ + ky - pad_;
            if (iy < 0 || iy >= in_h_) continue;
            for (int ox = 0; ox < out_w_; ++ox) {
              int ix = ox * stride_ + kx - pad_;
              if (ix < 0 || ix >= in_w_) continue;
              dx(s, (c * in_h_ + iy) * in_w_ + ix) += dcol(row, oy * out_w_ + ox);
            }
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Adam

Adam::Adam(std::vector<Param*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (auto* p : params_) {
    m_.emplace_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.emplace_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void Adam::step() {
  ++t_;
  double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    Param& p = *params_[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * p.grad;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * p.grad.cwiseProduct(p.grad);
    Mat mhat = m_[i] / bc1;
    Mat vhat = v_[i] / bc2;
    p.value.array() -= lr_ * mhat.array() / (vhat.array().sqrt() + eps_);
  }
}

// ---------------------------------------------------------------------------
// Serialization

namespace {
void write_u64(std::ostream& out, uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}
uint64_t read_u64(std::istream& in) {
  uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}
void write_mat(std::ostream& out, const Mat& m) {
  write_u64(out, static_cast<uint64_t>(m.rows()));
  write_u64(out, static_cast<uint64_t>(m.cols()));
  out.write(reinterpret_cast<const char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double) * m.size()));
}
void read_mat(std::istream& in, Mat& m) {
  uint64_t rows = read_u64(in), cols = read_u64(in);
  if (static_cast<int64_t>(rows) != m.rows() || static_cast<int64_t>(cols) != m.cols()) {
    throw std::runtime_error("parameter blob shape mismatch");
  }
  in.read(reinterpret_cast<char*>(m.data()),
          static_cast<std::streamsize>(sizeof(double) * m.size()));
  if (!in) throw std::runtime_error("truncated parameter blob");
}
}  // namespace

void save_params(std::ostream& out, const std::vector<Param*>& params) {
  write_u64(out, params.size());
  for (const auto* p : params) write_mat(out, p->value);
}

void load_params(std::istream& in, const std::vector<Param*>& params) {
  uint64_t n = read_u64(in);
  if (n != params.size()) throw std::runtime_error("parameter set size mismatch");
  for (auto* p : params) read_mat(in, p->value);
}

void Adam::save(std::ostream& out) const {
  write_u64(out, static_cast<uint64_t>(t_));
  for (size_t i = 0; i < params_.size(); ++i) {
    write_mat(out, m_[i]);
    write_mat(out, v_[i]);
  }
}

void Adam::load(std::istream& in) {
  t_ = static_cast<int64_t>(read_u64(in));
  for (size_t i = 0; i < params_.size(); ++i) {
    read_mat(in, m_[i]);
    read_mat(in, v_[i]);
  }
}

}  // namespace guiderl::nn
