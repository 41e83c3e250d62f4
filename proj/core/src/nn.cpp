#include "clad/nn.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace clad::nn {

namespace {

using MatrixRM = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

int conv_out_dim(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// (C, ih, iw) -> (C*k*k, oh*ow)
void im2col(const float* src, int c, int ih, int iw, int kernel, int stride, int pad,
            int oh, int ow, float* col) {
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        float* row = col + (static_cast<std::size_t>(ch) * kernel * kernel + ky * kernel + kx) *
                               (static_cast<std::size_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          int y = oy * stride - pad + ky;
          for (int ox = 0; ox < ow; ++ox) {
            int x = ox * stride - pad + kx;
            row[oy * ow + ox] = (y >= 0 && y < ih && x >= 0 && x < iw)
                                    ? src[(static_cast<std::size_t>(ch) * ih + y) * iw + x]
                                    : 0.0f;
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col.
void col2im(const float* col, int c, int ih, int iw, int kernel, int stride, int pad,
            int oh, int ow, float* dst) {
  for (int ch = 0; ch < c; ++ch) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const float* row = col + (static_cast<std::size_t>(ch) * kernel * kernel + ky * kernel + kx) *
                                     (static_cast<std::size_t>(oh) * ow);
        for (int oy = 0; oy < oh; ++oy) {
          int y = oy * stride - pad + ky;
          if (y < 0 || y >= ih) continue;
          for (int ox = 0; ox < ow; ++ox) {
            int x = ox * stride - pad + kx;
            if (x < 0 || x >= iw) continue;
            dst[(static_cast<std::size_t>(ch) * ih + y) * iw + x] += row[oy * ow + ox];
          }
        }
      }
    }
  }
}

std::vector<float> init_normal(std::size_t count, float stddev, std::mt19937_64& rng) {
  std::normal_distribution<float> dist(0.0f, stddev);
  std::vector<float> out(count);
  for (auto& v : out) v = dist(rng);
  return out;
}

}  // namespace

void Layer::zero_grad() {
  std::vector<ParamRef> params;
  collect_params(params);
  for (auto& p : params) std::fill(p.grad->begin(), p.grad->end(), 0.0f);
}

Conv2d::Conv2d(int in_channels, int out_channels, int kernel_, int stride_, int pad_,
               std::mt19937_64& rng)
    : in_c(in_channels), out_c(out_channels), kernel(kernel_), stride(stride_), pad(pad_) {
  weight = init_normal(static_cast<std::size_t>(out_c) * in_c * kernel * kernel, 0.02f, rng);
  bias.assign(out_c, 0.0f);
  weight_grad.assign(weight.size(), 0.0f);
  bias_grad.assign(bias.size(), 0.0f);
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.c != in_c) throw std::invalid_argument("Conv2d: channel mismatch");
  input_ = x;
  const int oh = conv_out_dim(x.h, kernel, stride, pad);
  const int ow = conv_out_dim(x.w, kernel, stride, pad);
  Tensor y(x.n, out_c, oh, ow);
  const int col_rows = in_c * kernel * kernel;
  std::vector<float> col(static_cast<std::size_t>(col_rows) * oh * ow);
  ConstMapRM wm(weight.data(), out_c, col_rows);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.sample(i), in_c, x.h, x.w, kernel, stride, pad, oh, ow, col.data());
    ConstMapRM cm(col.data(), col_rows, oh * ow);
    MapRM ym(y.sample(i), out_c, oh * ow);
    ym.noalias() = wm * cm;
    for (int ch = 0; ch < out_c; ++ch) ym.row(ch).array() += bias[ch];
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  const int oh = grad_out.h, ow = grad_out.w;
  const int col_rows = in_c * kernel * kernel;
  Tensor gx(x.n, x.c, x.h, x.w);
  std::vector<float> col(static_cast<std::size_t>(col_rows) * oh * ow);
  std::vector<float> gcol(col.size());
  ConstMapRM wm(weight.data(), out_c, col_rows);
  MapRM gwm(weight_grad.data(), out_c, col_rows);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.sample(i), in_c, x.h, x.w, kernel, stride, pad, oh, ow, col.data());
    ConstMapRM cm(col.data(), col_rows, oh * ow);
    ConstMapRM gym(grad_out.sample(i), out_c, oh * ow);
    gwm.noalias() += gym * cm.transpose();
    for (int ch = 0; ch < out_c; ++ch) bias_grad[ch] += gym.row(ch).sum();
    MapRM gcm(gcol.data(), col_rows, oh * ow);
    gcm.noalias() = wm.transpose() * gym;
    col2im(gcol.data(), in_c, x.h, x.w, kernel, stride, pad, oh, ow, gx.sample(i));
  }
  return gx;
}

void Conv2d::collect_params(std::vector<ParamRef>& out) {
  out.push_back({&weight, &weight_grad});
  out.push_back({&bias, &bias_grad});
}

ConvTranspose2d::ConvTranspose2d(int in_channels, int out_channels, int kernel_, int stride_,
                                 int pad_, std::mt19937_64& rng)
    : in_c(in_channels), out_c(out_channels), kernel(kernel_), stride(stride_), pad(pad_) {
  weight = init_normal(static_cast<std::size_t>(in_c) * out_c * kernel * kernel, 0.02f, rng);
  bias.assign(out_c, 0.0f);
  weight_grad.assign(weight.size(), 0.0f);
  bias_grad.assign(bias.size(), 0.0f);
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
  if (x.c != in_c) throw std::invalid_argument("ConvTranspose2d: channel mismatch");
  input_ = x;
  const int oh = (x.h - 1) * stride - 2 * pad + kernel;
  const int ow = (x.w - 1) * stride - 2 * pad + kernel;
  Tensor y(x.n, out_c, oh, ow);
  const int col_rows = out_c * kernel * kernel;
  std::vector<float> col(static_cast<std::size_t>(col_rows) * x.h * x.w);
  ConstMapRM wm(weight.data(), in_c, col_rows);
  for (int i = 0; i < x.n; ++i) {
    ConstMapRM xm(x.sample(i), in_c, x.h * x.w);
    MapRM cm(col.data(), col_rows, x.h * x.w);
    cm.noalias() = wm.transpose() * xm;
    col2im(col.data(), out_c, oh, ow, kernel, stride, pad, x.h, x.w, y.sample(i));
    MapRM ym(y.sample(i), out_c, oh * ow);
    for (int ch = 0; ch < out_c; ++ch) ym.row(ch).array() += bias[ch];
  }
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  const int col_rows = out_c * kernel * kernel;
  Tensor gx(x.n, x.c, x.h, x.w);
  std::vector<float> gcol(static_cast<std::size_t>(col_rows) * x.h * x.w);
  ConstMapRM wm(weight.data(), in_c, col_rows);
  MapRM gwm(weight_grad.data(), in_c, col_rows);
  for (int i = 0; i < x.n; ++i) {
    im2col(grad_out.sample(i), out_c, grad_out.h, grad_out.w, kernel, stride, pad, x.h, x.w,
           gcol.data());
    ConstMapRM gcm(gcol.data(), col_rows, x.h * x.w);
    ConstMapRM xm(x.sample(i), in_c, x.h * x.w);
    gwm.noalias() += xm * gcm.transpose();
    ConstMapRM gym(grad_out.sample(i), out_c, grad_out.h * grad_out.w);
    for (int ch = 0; ch < out_c; ++ch) bias_grad[ch] += gym.row(ch).sum();
    MapRM gxm(gx.sample(i), in_c, x.h * x.w);
    gxm.noalias() = wm * gcm;
  }
  return gx;
}

void ConvTranspose2d::collect_params(std::vector<ParamRef>& out) {
  out.push_back({&weight, &weight_grad});
  out.push_back({&bias, &bias_grad});
}

Linear::Linear(int in_features, int out_features, std::mt19937_64& rng)
    : in_f(in_features), out_f(out_features) {
  weight = init_normal(static_cast<std::size_t>(out_f) * in_f,
                       std::sqrt(1.0f / static_cast<float>(in_f)), rng);
  bias.assign(out_f, 0.0f);
  weight_grad.assign(weight.size(), 0.0f);
  bias_grad.assign(bias.size(), 0.0f);
}

Tensor Linear::forward(const Tensor& x) {
  if (static_cast<int>(x.sample_size()) != in_f)
    throw std::invalid_argument("Linear: feature size mismatch");
  input_ = x;
  Tensor y(x.n, out_f, 1, 1);
  ConstMapRM wm(weight.data(), out_f, in_f);
  ConstMapRM xm(x.data.data(), x.n, in_f);
  MapRM ym(y.data.data(), x.n, out_f);
  ym.noalias() = xm * wm.transpose();
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < out_f; ++j) y.data[static_cast<std::size_t>(i) * out_f + j] += bias[j];
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  const Tensor& x = input_;
  Tensor gx(x.n, x.c, x.h, x.w);
  ConstMapRM wm(weight.data(), out_f, in_f);
  ConstMapRM xm(x.data.data(), x.n, in_f);
  ConstMapRM gym(grad_out.data.data(), x.n, out_f);
  MapRM gwm(weight_grad.data(), out_f, in_f);
  gwm.noalias() += gym.transpose() * xm;
  for (int i = 0; i < x.n; ++i)
    for (int j = 0; j < out_f; ++j) bias_grad[j] += grad_out.data[static_cast<std::size_t>(i) * out_f + j];
  MapRM gxm(gx.data.data(), x.n, in_f);
  gxm.noalias() = gym * wm;
  return gx;
}

void Linear::collect_params(std::vector<ParamRef>& out) {
  out.push_back({&weight, &weight_grad});
  out.push_back({&bias, &bias_grad});
}

Tensor LeakyReLU::forward(const Tensor& x) {
  input_ = x;
  Tensor y = x;
  for (auto& v : y.data)
    if (v < 0.0f) v *= slope_;
  return y;
}

Tensor LeakyReLU::backward(const Tensor& grad_out) {
  Tensor gx = grad_out;
  for (std::size_t i = 0; i < gx.data.size(); ++i)
    if (input_.data[i] < 0.0f) gx.data[i] *= slope_;
  return gx;
}

Tensor Sigmoid::forward(const Tensor& x) {
  Tensor y = x;
  for (auto& v : y.data) v = 1.0f / (1.0f + std::exp(-v));
  output_ = y;
  return y;
}

Tensor Sigmoid::backward(const Tensor& grad_out) {
  Tensor gx = grad_out;
  for (std::size_t i = 0; i < gx.data.size(); ++i) {
    float s = output_.data[i];
    gx.data[i] *= s * (1.0f - s);
  }
  return gx;
}

Tensor Sequential::forward(const Tensor& x) {
  Tensor out = x;
  for (auto& layer : layers_) out = layer->forward(out);
  return out;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

void Sequential::collect_params(std::vector<ParamRef>& out) {
  for (auto& layer : layers_) layer->collect_params(out);
}

void Sequential::zero_grad() {
  for (auto& layer : layers_) layer->zero_grad();
}

void AdamOptimizer::step(const std::vector<ParamRef>& params) {
  if (m_.empty()) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].value->size(), 0.0f);
      v_[i].assign(params[i].value->size(), 0.0f);
    }
  }
  if (m_.size() != params.size()) throw std::logic_error("Adam: parameter set changed size");
  ++t_;
  const float bc1 = 1.0f - std::pow(beta1_, static_cast<float>(t_));
  const float bc2 = 1.0f - std::pow(beta2_, static_cast<float>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& value = *params[i].value;
    auto& grad = *params[i].grad;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0f - beta1_) * grad[j];
      v[j] = beta2_ * v[j] + (1.0f - beta2_) * grad[j] * grad[j];
      float mhat = m[j] / bc1;
      float vhat = v[j] / bc2;
      value[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

float mse_loss(const Tensor& pred, const Tensor& target, Tensor& grad) {
  if (!pred.same_shape(target)) throw std::invalid_argument("mse_loss: shape mismatch");
  grad = Tensor(pred.n, pred.c, pred.h, pred.w);
  const float scale = 1.0f / static_cast<float>(pred.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    float d = pred.data[i] - target.data[i];
    loss += static_cast<double>(d) * d;
    grad.data[i] = 2.0f * d * scale;
  }
  return static_cast<float>(loss * scale);
}

float l1_loss(const Tensor& pred, const Tensor& target, Tensor& grad) {
  if (!pred.same_shape(target)) throw std::invalid_argument("l1_loss: shape mismatch");
  grad = Tensor(pred.n, pred.c, pred.h, pred.w);
  const float scale = 1.0f / static_cast<float>(pred.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    float d = pred.data[i] - target.data[i];
    loss += std::fabs(d);
    grad.data[i] = (d > 0.0f ? 1.0f : (d < 0.0f ? -1.0f : 0.0f)) * scale;
  }
  return static_cast<float>(loss * scale);
}

float bce_with_logits_loss(const Tensor& logits, float target_value, Tensor& grad) {
  grad = Tensor(logits.n, logits.c, logits.h, logits.w);
  const float scale = 1.0f / static_cast<float>(logits.size());
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    float z = logits.data[i];
    float s = 1.0f / (1.0f + std::exp(-z));
    // numerically stable: max(z,0) - z*y + log(1+exp(-|z|))
    loss += std::max(z, 0.0f) - z * target_value + std::log1p(std::exp(-std::fabs(z)));
    grad.data[i] = (s - target_value) * scale;
  }
  return static_cast<float>(loss * scale);
}

}  // namespace clad::nn
