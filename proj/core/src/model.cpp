#include "clad/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace clad {

using nn::Tensor;

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::CAE: return "cae";
    case ModelKind::VAE: return "vae";
    case ModelKind::SRGen: return "srgen";
    case ModelKind::InpaintGen: return "inpaintgen";
  }
  throw std::logic_error("unknown ModelKind");
}

ModelKind model_kind_from_string(const std::string& name) {
  if (name == "cae") return ModelKind::CAE;
  if (name == "vae") return ModelKind::VAE;
  if (name == "srgen" || name == "sr") return ModelKind::SRGen;
  if (name == "inpaintgen" || name == "inpaint") return ModelKind::InpaintGen;
  throw std::invalid_argument("unknown model kind: " + name);
}

namespace {

int ilog2(int v) {
  int r = 0;
  while ((1 << r) < v) ++r;
  if ((1 << r) != v) throw std::invalid_argument("size must be a power of two");
  return r;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (a.n != b.n || a.h != b.h || a.w != b.w)
    throw std::invalid_argument("concat: spatial/batch mismatch");
  Tensor out(a.n, a.c + b.c, a.h, a.w);
  const std::size_t plane = static_cast<std::size_t>(a.h) * a.w;
  for (int i = 0; i < a.n; ++i) {
    std::memcpy(out.sample(i), a.sample(i), a.sample_size() * sizeof(float));
    std::memcpy(out.sample(i) + a.c * plane, b.sample(i), b.sample_size() * sizeof(float));
  }
  return out;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& x, int first_c) {
  Tensor a(x.n, first_c, x.h, x.w), b(x.n, x.c - first_c, x.h, x.w);
  const std::size_t plane = static_cast<std::size_t>(x.h) * x.w;
  for (int i = 0; i < x.n; ++i) {
    std::memcpy(a.sample(i), x.sample(i), a.sample_size() * sizeof(float));
    std::memcpy(b.sample(i), x.sample(i) + first_c * plane, b.sample_size() * sizeof(float));
  }
  return {std::move(a), std::move(b)};
}

Tensor reshape(Tensor t, int c, int h, int w) {
  if (static_cast<std::size_t>(t.n) * c * h * w != t.size())
    throw std::logic_error("reshape: element count mismatch");
  t.c = c;
  t.h = h;
  t.w = w;
  return t;
}

Tensor add_tensors(const Tensor& a, const Tensor& b) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  return out;
}

}  // namespace

struct ReconstructorHandle::Impl {
  std::mt19937_64 rng;

  // CAE
  nn::Sequential cae_enc, cae_dec;

  // VAE
  nn::Sequential vae_enc;
  std::unique_ptr<nn::Linear> fc_mu, fc_logvar;
  nn::Sequential vae_fc_dec;  // Linear + LeakyReLU
  nn::Sequential vae_dec;
  int vae_enc_channels = 0;

  // Conditional generator (SR / inpainting) + patch discriminator
  std::vector<nn::Sequential> g_down;
  std::vector<nn::Sequential> g_up;  // g_up[0] consumes the bottleneck
  nn::Sequential g_final;
  nn::Sequential disc;
  std::vector<int> g_channels;

  nn::AdamOptimizer opt_main, opt_disc;
};

namespace {

using Impl = ReconstructorHandle::Impl;

void build_cae(Impl& impl, const ArchitectureConfig& cfg) {
  int stages = ilog2(cfg.working_size / 4);
  std::vector<int> ch(stages);
  for (int i = 0; i < stages; ++i)
    ch[i] = (i == stages - 1) ? cfg.cae_latent_channels : std::min(cfg.base_channels << i, 128);
  int in = 3;
  for (int i = 0; i < stages; ++i) {
    impl.cae_enc.add(std::make_unique<nn::Conv2d>(in, ch[i], 4, 2, 1, impl.rng));
    if (i != stages - 1) impl.cae_enc.add(std::make_unique<nn::LeakyReLU>());
    in = ch[i];
  }
  for (int i = stages - 1; i >= 0; --i) {
    int out = (i == 0) ? 3 : ch[i - 1];
    impl.cae_dec.add(std::make_unique<nn::ConvTranspose2d>(ch[i], out, 4, 2, 1, impl.rng));
    if (i != 0)
      impl.cae_dec.add(std::make_unique<nn::LeakyReLU>());
    else
      impl.cae_dec.add(std::make_unique<nn::Sigmoid>());
  }
}

void build_vae(Impl& impl, const ArchitectureConfig& cfg) {
  int stages = ilog2(cfg.working_size / 4);
  std::vector<int> ch(stages);
  for (int i = 0; i < stages; ++i) ch[i] = std::min(cfg.base_channels << i, 64);
  int in = 3;
  for (int i = 0; i < stages; ++i) {
    impl.vae_enc.add(std::make_unique<nn::Conv2d>(in, ch[i], 4, 2, 1, impl.rng));
    impl.vae_enc.add(std::make_unique<nn::LeakyReLU>());
    in = ch[i];
  }
  impl.vae_enc_channels = ch.back();
  int flat = ch.back() * 16;
  impl.fc_mu = std::make_unique<nn::Linear>(flat, cfg.vae_latent_dim, impl.rng);
  impl.fc_logvar = std::make_unique<nn::Linear>(flat, cfg.vae_latent_dim, impl.rng);
  impl.vae_fc_dec.add(std::make_unique<nn::Linear>(cfg.vae_latent_dim, flat, impl.rng));
  impl.vae_fc_dec.add(std::make_unique<nn::LeakyReLU>());
  for (int i = stages - 1; i >= 0; --i) {
    int out = (i == 0) ? 3 : ch[i - 1];
    impl.vae_dec.add(std::make_unique<nn::ConvTranspose2d>(ch[i], out, 4, 2, 1, impl.rng));
    if (i != 0)
      impl.vae_dec.add(std::make_unique<nn::LeakyReLU>());
    else
      impl.vae_dec.add(std::make_unique<nn::Sigmoid>());
  }
}

void build_generator(Impl& impl, const ArchitectureConfig& cfg) {
  int stages = ilog2(cfg.working_size / 8);
  if (stages < 2) throw std::invalid_argument("generator needs working_size >= 32");
  impl.g_channels.resize(stages);
  for (int i = 0; i < stages; ++i) impl.g_channels[i] = std::min(cfg.base_channels << i, 128);
  const auto& ch = impl.g_channels;

  int in = 3;
  for (int i = 0; i < stages; ++i) {
    nn::Sequential stage;
    stage.add(std::make_unique<nn::Conv2d>(in, ch[i], 4, 2, 1, impl.rng));
    stage.add(std::make_unique<nn::LeakyReLU>());
    impl.g_down.push_back(std::move(stage));
    in = ch[i];
  }
  // Decoder with skip concatenation: g_up[j] lifts level stages-1-j.
  for (int j = 0; j < stages - 1; ++j) {
    int level = stages - 1 - j;
    int in_c = (j == 0) ? ch[level] : 2 * ch[level];
    nn::Sequential stage;
    stage.add(std::make_unique<nn::ConvTranspose2d>(in_c, ch[level - 1], 4, 2, 1, impl.rng));
    stage.add(std::make_unique<nn::LeakyReLU>());
    impl.g_up.push_back(std::move(stage));
  }
  impl.g_final.add(std::make_unique<nn::ConvTranspose2d>(2 * ch[0], 3, 4, 2, 1, impl.rng));
  impl.g_final.add(std::make_unique<nn::Sigmoid>());

  int dc = cfg.base_channels;
  impl.disc.add(std::make_unique<nn::Conv2d>(6, dc, 4, 2, 1, impl.rng));
  impl.disc.add(std::make_unique<nn::LeakyReLU>());
  impl.disc.add(std::make_unique<nn::Conv2d>(dc, dc * 2, 4, 2, 1, impl.rng));
  impl.disc.add(std::make_unique<nn::LeakyReLU>());
  impl.disc.add(std::make_unique<nn::Conv2d>(dc * 2, 1, 4, 1, 1, impl.rng));
}

struct GenCache {
  std::vector<Tensor> skips;  // down-stage outputs
};

Tensor gen_forward(Impl& impl, const Tensor& x, GenCache& cache) {
  const int stages = static_cast<int>(impl.g_down.size());
  cache.skips.clear();
  Tensor cur = x;
  for (int i = 0; i < stages; ++i) {
    cur = impl.g_down[i].forward(cur);
    cache.skips.push_back(cur);
  }
  Tensor u = impl.g_up[0].forward(cache.skips[stages - 1]);
  for (int j = 1; j < stages - 1; ++j)
    u = impl.g_up[j].forward(concat_channels(u, cache.skips[stages - 1 - j]));
  return impl.g_final.forward(concat_channels(u, cache.skips[0]));
}

void gen_backward(Impl& impl, GenCache& cache, const Tensor& grad_out) {
  const int stages = static_cast<int>(impl.g_down.size());
  const auto& ch = impl.g_channels;
  std::vector<Tensor> skip_grads(stages);

  Tensor gcat = impl.g_final.backward(grad_out);
  auto [gu, gskip0] = split_channels(gcat, ch[0]);
  skip_grads[0] = std::move(gskip0);
  for (int j = stages - 2; j >= 1; --j) {
    Tensor gin = impl.g_up[j].backward(gu);
    int level = stages - 1 - j;
    auto [gu_prev, gskip] = split_channels(gin, ch[level]);
    skip_grads[level] = std::move(gskip);
    gu = std::move(gu_prev);
  }
  skip_grads[stages - 1] = impl.g_up[0].backward(gu);

  Tensor g = impl.g_down[stages - 1].backward(skip_grads[stages - 1]);
  for (int i = stages - 2; i >= 0; --i)
    g = impl.g_down[i].backward(add_tensors(g, skip_grads[i]));
}

std::vector<nn::ParamRef> generator_params(Impl& impl) {
  std::vector<nn::ParamRef> params;
  for (auto& stage : impl.g_down) stage.collect_params(params);
  for (auto& stage : impl.g_up) stage.collect_params(params);
  impl.g_final.collect_params(params);
  return params;
}

void zero_generator_grads(Impl& impl) {
  for (auto& stage : impl.g_down) stage.zero_grad();
  for (auto& stage : impl.g_up) stage.zero_grad();
  impl.g_final.zero_grad();
}

struct VaeForward {
  Tensor mu, logvar, recon, eps;
};

VaeForward vae_forward_train(Impl& impl, const ArchitectureConfig& cfg, const Tensor& x) {
  VaeForward out;
  Tensor h = impl.vae_enc.forward(x);
  Tensor hflat = reshape(h, impl.vae_enc_channels * 16, 1, 1);
  out.mu = impl.fc_mu->forward(hflat);
  out.logvar = impl.fc_logvar->forward(hflat);
  out.eps = Tensor(out.mu.n, out.mu.c, 1, 1);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  for (auto& v : out.eps.data) v = gauss(impl.rng);
  Tensor z = out.mu;
  for (std::size_t i = 0; i < z.size(); ++i)
    z.data[i] += std::exp(0.5f * out.logvar.data[i]) * out.eps.data[i];
  Tensor d = impl.vae_fc_dec.forward(z);
  d = reshape(std::move(d), impl.vae_enc_channels, 4, 4);
  out.recon = impl.vae_dec.forward(d);
  return out;
}

Tensor vae_decode_tensor(Impl& impl, const Tensor& z) {
  Tensor d = impl.vae_fc_dec.forward(z);
  d = reshape(std::move(d), impl.vae_enc_channels, 4, 4);
  return impl.vae_dec.forward(d);
}

}  // namespace

ReconstructorHandle::ReconstructorHandle() : kind_(ModelKind::CAE) {}

ReconstructorHandle::ReconstructorHandle(ModelKind kind, const ArchitectureConfig& config)
    : kind_(kind), config_(config), impl_(std::make_unique<Impl>()) {
  if (config.working_size < 16) throw std::invalid_argument("working_size must be >= 16");
  ilog2(config.working_size);
  impl_->rng.seed(config.seed);
  impl_->opt_main = nn::AdamOptimizer(config.learning_rate);
  impl_->opt_disc = nn::AdamOptimizer(config.learning_rate);
  switch (kind) {
    case ModelKind::CAE: build_cae(*impl_, config); break;
    case ModelKind::VAE: build_vae(*impl_, config); break;
    case ModelKind::SRGen:
    case ModelKind::InpaintGen: build_generator(*impl_, config); break;
  }
}

ReconstructorHandle::~ReconstructorHandle() = default;
ReconstructorHandle::ReconstructorHandle(ReconstructorHandle&&) noexcept = default;
ReconstructorHandle& ReconstructorHandle::operator=(ReconstructorHandle&&) noexcept = default;

std::optional<std::array<int, 3>> ReconstructorHandle::latent_shape() const {
  if (kind_ == ModelKind::CAE) return std::array<int, 3>{config_.cae_latent_channels, 4, 4};
  if (kind_ == ModelKind::VAE) return std::array<int, 3>{config_.vae_latent_dim, 1, 1};
  return std::nullopt;
}

std::size_t ReconstructorHandle::latent_elements() const {
  auto shape = latent_shape();
  if (!shape) return 0;
  return static_cast<std::size_t>((*shape)[0]) * (*shape)[1] * (*shape)[2];
}

std::vector<nn::ParamRef> ReconstructorHandle::parameters() {
  std::vector<nn::ParamRef> params;
  Impl& impl = *impl_;
  switch (kind_) {
    case ModelKind::CAE:
      impl.cae_enc.collect_params(params);
      impl.cae_dec.collect_params(params);
      break;
    case ModelKind::VAE:
      impl.vae_enc.collect_params(params);
      impl.fc_mu->collect_params(params);
      impl.fc_logvar->collect_params(params);
      impl.vae_fc_dec.collect_params(params);
      impl.vae_dec.collect_params(params);
      break;
    case ModelKind::SRGen:
    case ModelKind::InpaintGen: {
      auto gen = generator_params(impl);
      params.insert(params.end(), gen.begin(), gen.end());
      impl.disc.collect_params(params);
      break;
    }
  }
  return params;
}

std::size_t ReconstructorHandle::parameter_count() const {
  std::size_t count = 0;
  for (const auto& p : const_cast<ReconstructorHandle*>(this)->parameters()) count += p.value->size();
  return count;
}

std::vector<ImageTensor> ReconstructorHandle::reconstruct(const std::vector<ImageTensor>& images) {
  if (images.empty()) return {};
  Tensor x = images_to_tensor(images);
  Impl& impl = *impl_;
  Tensor y;
  switch (kind_) {
    case ModelKind::CAE:
      y = impl.cae_dec.forward(impl.cae_enc.forward(x));
      break;
    case ModelKind::VAE: {
      Tensor h = impl.vae_enc.forward(x);
      Tensor hflat = reshape(std::move(h), impl.vae_enc_channels * 16, 1, 1);
      Tensor mu = impl.fc_mu->forward(hflat);
      y = vae_decode_tensor(impl, mu);
      break;
    }
    case ModelKind::SRGen:
    case ModelKind::InpaintGen: {
      GenCache cache;
      y = gen_forward(impl, x, cache);
      break;
    }
  }
  return tensor_to_images(y);
}

ReconstructorHandle build_model(ModelKind kind, const ArchitectureConfig& config) {
  return ReconstructorHandle(kind, config);
}

std::vector<LatentCode> encode(ReconstructorHandle& model, const std::vector<ImageTensor>& images) {
  if (model.kind() != ModelKind::CAE && model.kind() != ModelKind::VAE)
    throw std::logic_error("encode: model kind has no encoder (" + to_string(model.kind()) + ")");
  if (images.empty()) return {};
  Tensor x = images_to_tensor(images);
  Impl& impl = model.impl();
  Tensor codes;
  if (model.kind() == ModelKind::CAE) {
    codes = impl.cae_enc.forward(x);
  } else {
    Tensor h = impl.vae_enc.forward(x);
    Tensor hflat = reshape(std::move(h), impl.vae_enc_channels * 16, 1, 1);
    codes = impl.fc_mu->forward(hflat);
  }
  std::vector<LatentCode> out(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) {
    out[i].producer_kind = model.kind();
    out[i].values.assign(codes.sample(static_cast<int>(i)),
                         codes.sample(static_cast<int>(i)) + codes.sample_size());
  }
  return out;
}

std::vector<ImageTensor> decode(ReconstructorHandle& model, const std::vector<LatentCode>& codes) {
  if (model.kind() != ModelKind::CAE && model.kind() != ModelKind::VAE)
    throw std::logic_error("decode: model kind has no decoder (" + to_string(model.kind()) + ")");
  if (codes.empty()) return {};
  const std::size_t elements = model.latent_elements();
  for (const auto& code : codes)
    if (code.values.size() != elements)
      throw std::invalid_argument("decode: latent size mismatch");
  Impl& impl = model.impl();
  Tensor y;
  if (model.kind() == ModelKind::CAE) {
    auto shape = *model.latent_shape();
    Tensor z(static_cast<int>(codes.size()), shape[0], shape[1], shape[2]);
    for (std::size_t i = 0; i < codes.size(); ++i)
      std::copy(codes[i].values.begin(), codes[i].values.end(), z.sample(static_cast<int>(i)));
    y = impl.cae_dec.forward(z);
  } else {
    Tensor z(static_cast<int>(codes.size()), model.config().vae_latent_dim, 1, 1);
    for (std::size_t i = 0; i < codes.size(); ++i)
      std::copy(codes[i].values.begin(), codes[i].values.end(), z.sample(static_cast<int>(i)));
    y = vae_decode_tensor(impl, z);
  }
  return tensor_to_images(y);
}

std::vector<ImageTensor> sample_generative(ReconstructorHandle& model, int n, std::uint64_t seed) {
  if (model.kind() != ModelKind::VAE)
    throw std::logic_error("sample_generative requires a VAE, got " + to_string(model.kind()));
  if (n <= 0) return {};
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  Tensor z(n, model.config().vae_latent_dim, 1, 1);
  for (auto& v : z.data) v = gauss(rng);
  return tensor_to_images(vae_decode_tensor(model.impl(), z));
}

LossRecord train_step(ReconstructorHandle& model, const std::vector<ImageTensor>& input_batch,
                      const std::vector<ImageTensor>& target_batch) {
  if (input_batch.size() != target_batch.size() || input_batch.empty())
    throw std::invalid_argument("train_step: batch size mismatch or empty batch");
  for (std::size_t i = 0; i < input_batch.size(); ++i)
    if (input_batch[i].height() != target_batch[i].height() ||
        input_batch[i].width() != target_batch[i].width())
      throw std::invalid_argument("train_step: input/target resolution mismatch");

  Impl& impl = model.impl();
  const ArchitectureConfig& cfg = model.config();
  Tensor x = images_to_tensor(input_batch);
  Tensor t = images_to_tensor(target_batch);
  LossRecord record;

  switch (model.kind()) {
    case ModelKind::CAE: {
      impl.cae_enc.zero_grad();
      impl.cae_dec.zero_grad();
      Tensor y = impl.cae_dec.forward(impl.cae_enc.forward(x));
      Tensor grad;
      record.reconstruction = nn::mse_loss(y, t, grad);
      record.total = record.reconstruction;
      impl.cae_enc.backward(impl.cae_dec.backward(grad));
      std::vector<nn::ParamRef> params;
      impl.cae_enc.collect_params(params);
      impl.cae_dec.collect_params(params);
      impl.opt_main.step(params);
      break;
    }
    case ModelKind::VAE: {
      impl.vae_enc.zero_grad();
      impl.fc_mu->zero_grad();
      impl.fc_logvar->zero_grad();
      impl.vae_fc_dec.zero_grad();
      impl.vae_dec.zero_grad();
      VaeForward fw = vae_forward_train(impl, cfg, x);
      Tensor grad;
      record.reconstruction = nn::mse_loss(fw.recon, t, grad);

      const std::size_t latent_total = fw.mu.size();
      double kl = 0.0;
      for (std::size_t i = 0; i < latent_total; ++i) {
        float mu = fw.mu.data[i], lv = fw.logvar.data[i];
        kl += -0.5 * (1.0 + lv - mu * mu - std::exp(lv));
      }
      record.kl = static_cast<float>(kl / static_cast<double>(latent_total));
      record.total = record.reconstruction + cfg.kl_weight * record.kl;

      Tensor gdec = impl.vae_dec.backward(grad);
      gdec = reshape(std::move(gdec), impl.vae_enc_channels * 16, 1, 1);
      Tensor gz = impl.vae_fc_dec.backward(gdec);

      const float kl_scale = cfg.kl_weight / static_cast<float>(latent_total);
      Tensor gmu = gz, glv(gz.n, gz.c, 1, 1);
      for (std::size_t i = 0; i < latent_total; ++i) {
        float lv = fw.logvar.data[i];
        gmu.data[i] += kl_scale * fw.mu.data[i];
        glv.data[i] = gz.data[i] * fw.eps.data[i] * 0.5f * std::exp(0.5f * lv) +
                      kl_scale * 0.5f * (std::exp(lv) - 1.0f);
      }
      Tensor gh = add_tensors(impl.fc_mu->backward(gmu), impl.fc_logvar->backward(glv));
      gh = reshape(std::move(gh), impl.vae_enc_channels, 4, 4);
      impl.vae_enc.backward(gh);

      std::vector<nn::ParamRef> params = model.parameters();
      impl.opt_main.step(params);
      break;
    }
    case ModelKind::SRGen:
    case ModelKind::InpaintGen: {
      // Discriminator step on (input, target) vs (input, G(input)).
      GenCache cache;
      Tensor fake = gen_forward(impl, x, cache);

      impl.disc.zero_grad();
      Tensor grad;
      Tensor real_logits = impl.disc.forward(concat_channels(x, t));
      float d_real = nn::bce_with_logits_loss(real_logits, 1.0f, grad);
      impl.disc.backward(grad);
      Tensor fake_logits = impl.disc.forward(concat_channels(x, fake));
      float d_fake = nn::bce_with_logits_loss(fake_logits, 0.0f, grad);
      impl.disc.backward(grad);
      record.discriminator = 0.5f * (d_real + d_fake);
      std::vector<nn::ParamRef> disc_params;
      impl.disc.collect_params(disc_params);
      impl.opt_disc.step(disc_params);

      // Generator step: adversarial + lambda * L1.
      zero_generator_grads(impl);
      Tensor y = gen_forward(impl, x, cache);
      Tensor gen_logits = impl.disc.forward(concat_channels(x, y));
      Tensor gadv;
      record.generator_adv = nn::bce_with_logits_loss(gen_logits, 1.0f, gadv);
      Tensor gcat = impl.disc.backward(gadv);
      Tensor gy = split_channels(gcat, 3).second;
      Tensor gl1;
      record.reconstruction = nn::l1_loss(y, t, gl1);
      for (std::size_t i = 0; i < gy.size(); ++i) gy.data[i] += cfg.l1_weight * gl1.data[i];
      gen_backward(impl, cache, gy);
      record.total = record.generator_adv + cfg.l1_weight * record.reconstruction;
      impl.opt_main.step(generator_params(impl));
      break;
    }
  }
  return record;
}

ModelSnapshot snapshot(const ReconstructorHandle& model, int task_index) {
  ModelSnapshot snap;
  snap.task_index = task_index;
  snap.model = std::shared_ptr<ReconstructorHandle>(model.clone().release());
  return snap;
}

std::vector<ImageTensor> reconstruct_with(const ModelSnapshot& snap,
                                          const std::vector<ImageTensor>& images) {
  if (!snap.model) throw std::logic_error("reconstruct_with: empty snapshot");
  return snap.model->reconstruct(images);
}

namespace {

constexpr char kMagic[9] = "CLADMDL1";

template <typename T>
void write_pod(std::ostream& out, const T& value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T value;
  in.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return value;
}

void write_floats(std::ostream& out, const std::vector<float>& v) {
  write_pod<std::uint64_t>(out, v.size());
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * 4));
}

std::vector<float> read_floats(std::istream& in) {
  auto count = read_pod<std::uint64_t>(in);
  std::vector<float> v(count);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * 4));
  if (!in) throw std::runtime_error("checkpoint truncated");
  return v;
}

void write_rng(std::ostream& out, const std::mt19937_64& rng) {
  std::ostringstream state;
  state << rng;
  std::string s = state.str();
  write_pod<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::mt19937_64 read_rng(std::istream& in) {
  auto size = read_pod<std::uint64_t>(in);
  std::string s(size, '\0');
  in.read(s.data(), static_cast<std::streamsize>(size));
  std::istringstream state(s);
  std::mt19937_64 rng;
  state >> rng;
  return rng;
}

void write_adam(std::ostream& out, nn::AdamOptimizer& opt) {
  write_pod<std::int64_t>(out, opt.step_count());
  write_pod<std::uint64_t>(out, opt.first_moments().size());
  for (auto& m : opt.first_moments()) write_floats(out, m);
  for (auto& v : opt.second_moments()) write_floats(out, v);
}

void read_adam(std::istream& in, nn::AdamOptimizer& opt) {
  opt.set_step_count(read_pod<std::int64_t>(in));
  auto count = read_pod<std::uint64_t>(in);
  opt.first_moments().resize(count);
  opt.second_moments().resize(count);
  for (auto& m : opt.first_moments()) m = read_floats(in);
  for (auto& v : opt.second_moments()) v = read_floats(in);
}

}  // namespace

void ReconstructorHandle::save(std::ostream& out) const {
  out.write(kMagic, 8);
  write_pod<std::int32_t>(out, static_cast<std::int32_t>(kind_));
  const ArchitectureConfig& c = config_;
  write_pod(out, c.working_size);
  write_pod(out, c.base_channels);
  write_pod(out, c.cae_latent_channels);
  write_pod(out, c.vae_latent_dim);
  write_pod(out, c.learning_rate);
  write_pod(out, c.batch_size);
  write_pod(out, c.epochs);
  write_pod(out, c.l1_weight);
  write_pod(out, c.kl_weight);
  write_pod(out, c.seed);
  write_rng(out, impl_->rng);
  auto params = const_cast<ReconstructorHandle*>(this)->parameters();
  write_pod<std::uint64_t>(out, params.size());
  for (const auto& p : params) write_floats(out, *p.value);
  write_adam(out, impl_->opt_main);
  write_adam(out, impl_->opt_disc);
}

ReconstructorHandle ReconstructorHandle::load(std::istream& in) {
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw std::runtime_error("bad model checkpoint header");
  auto kind = static_cast<ModelKind>(read_pod<std::int32_t>(in));
  ArchitectureConfig c;
  c.working_size = read_pod<int>(in);
  c.base_channels = read_pod<int>(in);
  c.cae_latent_channels = read_pod<int>(in);
  c.vae_latent_dim = read_pod<int>(in);
  c.learning_rate = read_pod<float>(in);
  c.batch_size = read_pod<int>(in);
  c.epochs = read_pod<int>(in);
  c.l1_weight = read_pod<float>(in);
  c.kl_weight = read_pod<float>(in);
  c.seed = read_pod<std::uint64_t>(in);
  ReconstructorHandle model(kind, c);
  model.impl_->rng = read_rng(in);
  auto params = model.parameters();
  auto count = read_pod<std::uint64_t>(in);
  if (count != params.size()) throw std::runtime_error("checkpoint parameter count mismatch");
  for (auto& p : params) {
    auto values = read_floats(in);
    if (values.size() != p.value->size())
      throw std::runtime_error("checkpoint parameter size mismatch");
    *p.value = std::move(values);
  }
  read_adam(in, model.impl_->opt_main);
  read_adam(in, model.impl_->opt_disc);
  return model;
}

std::unique_ptr<ReconstructorHandle> ReconstructorHandle::clone() const {
  std::stringstream buffer;
  save(buffer);
  return std::make_unique<ReconstructorHandle>(load(buffer));
}

void save_checkpoint(const ReconstructorHandle& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  model.save(out);
}

ReconstructorHandle load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  return ReconstructorHandle::load(in);
}

nn::Tensor images_to_tensor(const std::vector<ImageTensor>& images) {
  if (images.empty()) throw std::invalid_argument("images_to_tensor: empty batch");
  const int h = images[0].height(), w = images[0].width();
  Tensor t(static_cast<int>(images.size()), 3, h, w);
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].height() != h || images[i].width() != w)
      throw std::invalid_argument("images_to_tensor: mixed resolutions");
    const ImageTensor unit = images[i].to_unit();
    const auto& src = unit.reals();
    float* dst = t.sample(static_cast<int>(i));
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int c = 0; c < 3; ++c)
          dst[c * plane + y * w + x] = src[(static_cast<std::size_t>(y) * w + x) * 3 + c];
  }
  return t;
}

std::vector<ImageTensor> tensor_to_images(const nn::Tensor& t) {
  if (t.c != 3) throw std::invalid_argument("tensor_to_images: expected 3 channels");
  std::vector<ImageTensor> out;
  out.reserve(static_cast<std::size_t>(t.n));
  const std::size_t plane = static_cast<std::size_t>(t.h) * t.w;
  for (int i = 0; i < t.n; ++i) {
    std::vector<float> vals(plane * 3);
    const float* src = t.sample(i);
    for (int y = 0; y < t.h; ++y)
      for (int x = 0; x < t.w; ++x)
        for (int c = 0; c < 3; ++c)
          vals[(static_cast<std::size_t>(y) * t.w + x) * 3 + c] =
              std::clamp(src[c * plane + y * t.w + x], 0.0f, 1.0f);
    out.push_back(ImageTensor::from_unit(t.h, t.w, std::move(vals)));
  }
  return out;
}

}  // namespace clad
