#include <doctest.h>

#include <cmath>
#include <random>

#include "clad/nn.hpp"

using namespace clad::nn;

namespace {

Tensor random_tensor(int n, int c, int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  Tensor t(n, c, h, w);
  for (auto& v : t.data) v = dist(rng);
  return t;
}

// Direct nested-loop convolution, the oracle for the im2col path.
Tensor naive_conv(const Tensor& x, const std::vector<float>& weight,
                  const std::vector<float>& bias, int out_c, int k, int stride, int pad) {
  const int oh = (x.h + 2 * pad - k) / stride + 1;
  const int ow = (x.w + 2 * pad - k) / stride + 1;
  Tensor y(x.n, out_c, oh, ow);
  for (int n = 0; n < x.n; ++n)
    for (int oc = 0; oc < out_c; ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          double acc = bias[oc];
          for (int ic = 0; ic < x.c; ++ic)
            for (int ky = 0; ky < k; ++ky)
              for (int kx = 0; kx < k; ++kx) {
                int iy = oy * stride + ky - pad;
                int ix = ox * stride + kx - pad;
                if (iy < 0 || iy >= x.h || ix < 0 || ix >= x.w) continue;
                double wv = weight[((oc * x.c + ic) * k + ky) * k + kx];
                acc += wv * x.data[((n * x.c + ic) * x.h + iy) * x.w + ix];
              }
          y.data[((n * out_c + oc) * oh + oy) * ow + ox] = static_cast<float>(acc);
        }
  return y;
}

double half_sq_sum(const Tensor& t) {
  double s = 0;
  for (float v : t.data) s += 0.5 * v * v;
  return s;
}

// Finite-difference check of backward() and the weight gradients for a
// loss of 0.5 * sum(forward(x)^2).
template <typename LayerT>
void gradient_check(LayerT& layer, Tensor x, double tol) {
  layer.zero_grad();
  Tensor y = layer.forward(x);
  Tensor grad_in = layer.backward(y);  // dL/dy = y for this loss

  const double eps = 1e-3;
  std::mt19937_64 pick(123);
  for (int trial = 0; trial < 12; ++trial) {
    std::size_t i = pick() % x.data.size();
    Tensor xp = x, xm = x;
    xp.data[i] += eps;
    xm.data[i] -= eps;
    double num = (half_sq_sum(layer.forward(xp)) - half_sq_sum(layer.forward(xm))) / (2 * eps);
    CHECK(grad_in.data[i] == doctest::Approx(num).epsilon(tol).scale(1.0));
  }

  layer.forward(x);  // restore cached input
  for (int trial = 0; trial < 12; ++trial) {
    std::size_t i = pick() % layer.weight.size();
    float saved = layer.weight[i];
    layer.weight[i] = saved + static_cast<float>(eps);
    double plus = half_sq_sum(layer.forward(x));
    layer.weight[i] = saved - static_cast<float>(eps);
    double minus = half_sq_sum(layer.forward(x));
    layer.weight[i] = saved;
    CHECK(layer.weight_grad[i] ==
          doctest::Approx((plus - minus) / (2 * eps)).epsilon(tol).scale(1.0));
  }
}

}  // namespace

TEST_CASE("conv forward matches the naive oracle") {
  std::mt19937_64 rng(7);
  Conv2d conv(3, 5, 4, 2, 1, rng);
  Tensor x = random_tensor(2, 3, 8, 8, 11);
  Tensor y = conv.forward(x);
  Tensor ref = naive_conv(x, conv.weight, conv.bias, 5, 4, 2, 1);
  REQUIRE(y.same_shape(ref));
  for (std::size_t i = 0; i < y.data.size(); ++i)
    CHECK(y.data[i] == doctest::Approx(ref.data[i]).epsilon(1e-4));
}

TEST_CASE("conv gradients pass a finite-difference check") {
  std::mt19937_64 rng(8);
  Conv2d conv(2, 3, 4, 2, 1, rng);
  gradient_check(conv, random_tensor(1, 2, 6, 6, 21), 2e-2);
}

TEST_CASE("transposed conv doubles spatial size and passes gradient check") {
  std::mt19937_64 rng(9);
  ConvTranspose2d deconv(3, 2, 4, 2, 1, rng);
  Tensor x = random_tensor(1, 3, 4, 4, 31);
  Tensor y = deconv.forward(x);
  CHECK(y.c == 2);
  CHECK(y.h == 8);
  CHECK(y.w == 8);
  gradient_check(deconv, x, 2e-2);
}

TEST_CASE("conv and transposed conv are adjoint maps") {
  // <conv(x), y> == <x, convT(y)> when both share weights and zero bias.
  std::mt19937_64 rng(10);
  Conv2d conv(2, 3, 4, 2, 1, rng);
  std::fill(conv.bias.begin(), conv.bias.end(), 0.0f);
  ConvTranspose2d deconv(3, 2, 4, 2, 1, rng);
  REQUIRE(deconv.weight.size() == conv.weight.size());
  deconv.weight = conv.weight;
  std::fill(deconv.bias.begin(), deconv.bias.end(), 0.0f);

  Tensor x = random_tensor(1, 2, 8, 8, 41);
  Tensor y = random_tensor(1, 3, 4, 4, 42);
  Tensor cx = conv.forward(x);
  Tensor ty = deconv.forward(y);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < cx.data.size(); ++i) lhs += double(cx.data[i]) * y.data[i];
  for (std::size_t i = 0; i < x.data.size(); ++i) rhs += double(x.data[i]) * ty.data[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
}

TEST_CASE("linear layer gradient check") {
  std::mt19937_64 rng(12);
  Linear lin(6, 4, rng);
  gradient_check(lin, random_tensor(3, 6, 1, 1, 51), 1e-2);
}

TEST_CASE("activation forward/backward") {
  LeakyReLU lrelu(0.2f);
  Tensor x(1, 1, 1, 4);
  x.data = {-2.0f, -0.5f, 0.5f, 2.0f};
  Tensor y = lrelu.forward(x);
  CHECK(y.data[0] == doctest::Approx(-0.4f));
  CHECK(y.data[2] == doctest::Approx(0.5f));
  Tensor g(1, 1, 1, 4);
  g.data = {1, 1, 1, 1};
  Tensor gx = lrelu.backward(g);
  CHECK(gx.data[0] == doctest::Approx(0.2f));
  CHECK(gx.data[3] == doctest::Approx(1.0f));

  Sigmoid sig;
  Tensor sy = sig.forward(x);
  for (int i = 0; i < 4; ++i)
    CHECK(sy.data[i] == doctest::Approx(1.0 / (1.0 + std::exp(-x.data[i]))));
  Tensor sg = sig.backward(g);
  for (int i = 0; i < 4; ++i)
    CHECK(sg.data[i] == doctest::Approx(sy.data[i] * (1.0 - sy.data[i])));
}

TEST_CASE("losses match manual values and gradients") {
  Tensor pred(1, 1, 1, 2), target(1, 1, 1, 2), grad(1, 1, 1, 2);
  pred.data = {1.0f, 3.0f};
  target.data = {0.0f, 1.0f};

  CHECK(mse_loss(pred, target, grad) == doctest::Approx((1.0 + 4.0) / 2));
  CHECK(grad.data[0] == doctest::Approx(2.0 * 1.0 / 2));
  CHECK(grad.data[1] == doctest::Approx(2.0 * 2.0 / 2));

  CHECK(l1_loss(pred, target, grad) == doctest::Approx((1.0 + 2.0) / 2));
  CHECK(grad.data[0] == doctest::Approx(0.5));

  // BCE with logits against a constant target.
  float bce = bce_with_logits_loss(pred, 1.0f, grad);
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  double expect = (-std::log(sigmoid(1.0)) - std::log(sigmoid(3.0))) / 2;
  CHECK(bce == doctest::Approx(expect));
  CHECK(grad.data[0] == doctest::Approx((sigmoid(1.0) - 1.0) / 2));
}

TEST_CASE("adam matches a reference implementation") {
  std::vector<float> value{1.0f}, grad{0.0f};
  AdamOptimizer opt(0.1f, 0.5f, 0.999f, 1e-8f);
  std::vector<ParamRef> params{{&value, &grad}};

  // Independent scalar Adam.
  double m = 0, v = 0, ref = 1.0;
  for (int t = 1; t <= 5; ++t) {
    double g = ref * 2.0;  // gradient of x^2
    grad[0] = static_cast<float>(g);
    value[0] = static_cast<float>(ref);
    opt.step(params);

    m = 0.5 * m + 0.5 * g;
    v = 0.999 * v + 0.001 * g * g;
    double mh = m / (1 - std::pow(0.5, t));
    double vh = v / (1 - std::pow(0.999, t));
    ref -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
    CHECK(value[0] == doctest::Approx(ref).epsilon(1e-5));
  }
}
