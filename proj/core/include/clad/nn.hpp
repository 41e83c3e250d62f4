#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

namespace clad::nn {

// Dense NCHW float tensor. Linear layers use h=w=1.
struct Tensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<float> data;

  Tensor() = default;
  Tensor(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, 0.0f) {}

  std::size_t size() const { return data.size(); }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  float* sample(int i) { return data.data() + i * sample_size(); }
  const float* sample(int i) const { return data.data() + i * sample_size(); }
  bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

struct ParamRef {
  std::vector<float>* value;
  std::vector<float>* grad;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual void collect_params(std::vector<ParamRef>& out) {}
  virtual void zero_grad();
};

class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<ParamRef>& out) override;

  std::vector<float> weight, bias, weight_grad, bias_grad;
  int in_c, out_c, kernel, stride, pad;

 private:
  Tensor input_;
};

// Stride-2 upsampling convolution; forward is the data-gradient of the
// matching strided Conv2d.
class ConvTranspose2d : public Layer {
 public:
  ConvTranspose2d(int in_channels, int out_channels, int kernel, int stride, int pad,
                  std::mt19937_64& rng);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<ParamRef>& out) override;

  std::vector<float> weight, bias, weight_grad, bias_grad;
  int in_c, out_c, kernel, stride, pad;

 private:
  Tensor input_;
};

class Linear : public Layer {
 public:
  Linear(int in_features, int out_features, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;
  void collect_params(std::vector<ParamRef>& out) override;

  std::vector<float> weight, bias, weight_grad, bias_grad;
  int in_f, out_f;

 private:
  Tensor input_;
};

class LeakyReLU : public Layer {
 public:
  explicit LeakyReLU(float slope = 0.2f) : slope_(slope) {}
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  float slope_;
  Tensor input_;
};

class Sigmoid : public Layer {
 public:
  Tensor forward(const Tensor& x) override;
  Tensor backward(const Tensor& grad_out) override;

 private:
  Tensor output_;
};

class Sequential {
 public:
  Sequential() = default;
  void add(std::unique_ptr<Layer> layer) { layers_.push_back(std::move(layer)); }
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& grad_out);
  void collect_params(std::vector<ParamRef>& out);
  void zero_grad();
  std::size_t layer_count() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

class AdamOptimizer {
 public:
  AdamOptimizer(float lr = 2e-4f, float beta1 = 0.5f, float beta2 = 0.999f, float eps = 1e-8f)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<ParamRef>& params);

  // Serialized alongside parameters so resumed training is bit-exact.
  std::int64_t step_count() const { return t_; }
  std::vector<std::vector<float>>& first_moments() { return m_; }
  std::vector<std::vector<float>>& second_moments() { return v_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  float learning_rate() const { return lr_; }

 private:
  float lr_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<float>> m_, v_;
};

// Loss helpers: return the mean loss and write d(loss)/d(pred) into grad.
float mse_loss(const Tensor& pred, const Tensor& target, Tensor& grad);
float l1_loss(const Tensor& pred, const Tensor& target, Tensor& grad);
float bce_with_logits_loss(const Tensor& logits, float target_value, Tensor& grad);

}  // namespace clad::nn
