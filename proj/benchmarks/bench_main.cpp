#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "clad/image.hpp"
#include "clad/memory.hpp"
#include "clad/metrics.hpp"
#include "clad/model.hpp"

namespace {

clad::ImageTensor random_image(int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::uint8_t> vals(static_cast<std::size_t>(size) * size * 3);
  for (auto& v : vals) v = static_cast<std::uint8_t>(rng() % 256);
  return clad::ImageTensor::from_u8(size, size, std::move(vals));
}

void BM_ResizeSmooth(benchmark::State& state) {
  const int src = static_cast<int>(state.range(0));
  clad::ImageTensor img = random_image(src, 1);
  for (auto _ : state)
    benchmark::DoNotOptimize(clad::resize_image(img, src / 8, clad::ResizeMode::Smooth));
}
BENCHMARK(BM_ResizeSmooth)->Arg(64)->Arg(256);

void BM_FeatureExtraction(benchmark::State& state) {
  std::vector<clad::ImageTensor> images;
  for (int i = 0; i < 16; ++i) images.push_back(random_image(64, 10 + i));
  clad::PatchStatsExtractor extractor(4);
  for (auto _ : state)
    benchmark::DoNotOptimize(clad::extract_features(images, extractor));
}
BENCHMARK(BM_FeatureExtraction);

void BM_Fid(benchmark::State& state) {
  std::vector<clad::ImageTensor> a, b;
  for (int i = 0; i < 16; ++i) {
    a.push_back(random_image(64, 100 + i));
    b.push_back(random_image(64, 200 + i));
  }
  clad::PatchStatsExtractor extractor(4);
  clad::FeatureStats sa = clad::extract_features(a, extractor);
  clad::FeatureStats sb = clad::extract_features(b, extractor);
  for (auto _ : state) benchmark::DoNotOptimize(clad::fid(sa, sb));
}
BENCHMARK(BM_Fid);

void BM_TrainStep(benchmark::State& state) {
  clad::ArchitectureConfig arch;
  arch.working_size = 64;
  arch.base_channels = 8;
  arch.batch_size = 4;
  arch.seed = 3;
  clad::ReconstructorHandle model = clad::build_model(clad::ModelKind::CAE, arch);
  std::vector<clad::ImageTensor> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(random_image(64, 300 + i));
  for (auto _ : state) benchmark::DoNotOptimize(clad::train_step(model, batch, batch));
}
BENCHMARK(BM_TrainStep);

void BM_MemoryStoreRetrieve(benchmark::State& state) {
  clad::MemoryConfig config;
  config.kind = clad::MemoryKind::Scale;
  config.working_size = 64;
  clad::MemoryModule memory(config);
  std::vector<clad::ImageTensor> images;
  for (int i = 0; i < 8; ++i) images.push_back(random_image(64, 400 + i));
  int task = 1;
  for (auto _ : state) {
    memory.store(images, task++);
    benchmark::DoNotOptimize(memory.retrieve(8));
  }
}
BENCHMARK(BM_MemoryStoreRetrieve);

}  // namespace

BENCHMARK_MAIN();
