#pragma once

#include <array>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "clad/image.hpp"
#include "clad/nn.hpp"

namespace clad {

enum class ModelKind { CAE, VAE, SRGen, InpaintGen };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& name);

struct ArchitectureConfig {
  int working_size = 256;
  int base_channels = 16;
  int cae_latent_channels = 512;  // latent (512, 4, 4)
  int vae_latent_dim = 256;
  float learning_rate = 2e-4f;
  int batch_size = 8;
  int epochs = 30;
  float l1_weight = 100.0f;  // conditional generator: adv + lambda * L1
  float kl_weight = 1.0f;
  std::uint64_t seed = 0;

  bool operator==(const ArchitectureConfig&) const = default;
};

// Activations stored for latent replay; 4 bytes per element.
struct LatentCode {
  ModelKind producer_kind = ModelKind::CAE;
  std::vector<float> values;

  std::size_t byte_size() const { return values.size() * sizeof(float); }
};

struct LossRecord {
  float total = 0.0f;
  float reconstruction = 0.0f;
  float kl = 0.0f;
  float generator_adv = 0.0f;
  float discriminator = 0.0f;
};

class ReconstructorHandle;

// Frozen copy of a model's parameters at a task boundary.
struct ModelSnapshot {
  int task_index = 0;
  std::shared_ptr<ReconstructorHandle> model;  // deep copy, never trained further
};

class ReconstructorHandle {
 public:
  ReconstructorHandle(ModelKind kind, const ArchitectureConfig& config);
  ~ReconstructorHandle();

  ReconstructorHandle(const ReconstructorHandle&) = delete;
  ReconstructorHandle& operator=(const ReconstructorHandle&) = delete;
  ReconstructorHandle(ReconstructorHandle&&) noexcept;
  ReconstructorHandle& operator=(ReconstructorHandle&&) noexcept;

  ModelKind kind() const { return kind_; }
  const ArchitectureConfig& config() const { return config_; }

  // CAE: {512,4,4}; VAE: {256,1,1}; generators: none.
  std::optional<std::array<int, 3>> latent_shape() const;
  std::size_t latent_elements() const;
  std::size_t parameter_count() const;
  std::vector<nn::ParamRef> parameters();

  // Deterministic reconstruction pass (VAE decodes the posterior mean).
  // For generator kinds this is a plain forward; the caller supplies the
  // degraded input (blurry upscale for SR, masked image for inpainting).
  std::vector<ImageTensor> reconstruct(const std::vector<ImageTensor>& images);

  void save(std::ostream& out) const;
  static ReconstructorHandle load(std::istream& in);
  std::unique_ptr<ReconstructorHandle> clone() const;

  struct Impl;
  Impl& impl() { return *impl_; }
  const Impl& impl() const { return *impl_; }

 private:
  ReconstructorHandle();
  ModelKind kind_;
  ArchitectureConfig config_;
  std::unique_ptr<Impl> impl_;
};

ReconstructorHandle build_model(ModelKind kind, const ArchitectureConfig& config);

// CAE/VAE only; VAE stores the posterior mean. Generator kinds throw.
std::vector<LatentCode> encode(ReconstructorHandle& model, const std::vector<ImageTensor>& images);
std::vector<ImageTensor> decode(ReconstructorHandle& model, const std::vector<LatentCode>& codes);

// VAE only: decode standard-normal draws from a dedicated seeded engine.
std::vector<ImageTensor> sample_generative(ReconstructorHandle& model, int n, std::uint64_t seed);

// One optimizer step. For generator kinds this is one discriminator step
// followed by one generator step on the same batch.
LossRecord train_step(ReconstructorHandle& model, const std::vector<ImageTensor>& input_batch,
                      const std::vector<ImageTensor>& target_batch);

ModelSnapshot snapshot(const ReconstructorHandle& model, int task_index);
std::vector<ImageTensor> reconstruct_with(const ModelSnapshot& snap,
                                          const std::vector<ImageTensor>& images);

// Checkpoint file I/O; parameters round-trip bit-exact.
void save_checkpoint(const ReconstructorHandle& model, const std::string& path);
ReconstructorHandle load_checkpoint(const std::string& path);

// Batch conversion between 8-bit/unit images and NCHW float tensors.
nn::Tensor images_to_tensor(const std::vector<ImageTensor>& images);
std::vector<ImageTensor> tensor_to_images(const nn::Tensor& t);

}  // namespace clad
