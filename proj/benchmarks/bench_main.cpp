#include <benchmark/benchmark.h>

#include "hakw/deploy.hpp"
#include "hakw/random.hpp"

using namespace hakw;

namespace {

AudioClip noise_clip(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> x(n);
  for (double& v : x) v = 0.1 * rng.normal();
  return AudioClip(std::move(x), kCanonicalRate);
}

ModelConfig default_model(Arch arch) {
  ModelConfig c;
  c.arch = arch;
  c.classes = 10;
  c.feature_kind = arch == Arch::Cnn ? FeatureKind::Spectrogram : FeatureKind::Mfcc;
  const auto [frames, coeffs] = std::pair{98, arch == Arch::Cnn ? 257 : 13};
  c.input_frames = frames;
  c.input_coeffs = coeffs;
  return c;
}

ModelArtifact artifact_for(Arch arch) {
  std::vector<std::string> labels;
  for (int i = 0; i < 10; ++i) labels.push_back("c" + std::to_string(i));
  return Network(default_model(arch), 1).to_artifact(FeatureConfig{}, labels);
}

Tensor random_batch(const ModelConfig& c, std::size_t n) {
  Rng rng(3);
  Tensor t({n, c.input_frames, c.input_coeffs});
  for (double& v : t.data) v = rng.normal();
  return t;
}

void BM_Mfcc(benchmark::State& state) {
  const AudioClip clip = noise_clip(kCanonicalRate, 1);
  const FeatureConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(mfcc(clip, cfg));
}
BENCHMARK(BM_Mfcc)->Unit(benchmark::kMicrosecond);

void BM_Spectrogram(benchmark::State& state) {
  const AudioClip clip = noise_clip(kCanonicalRate, 1);
  const FeatureConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(stft_power(clip, cfg));
}
BENCHMARK(BM_Spectrogram)->Unit(benchmark::kMicrosecond);

void BM_Forward(benchmark::State& state) {
  const Arch arch = state.range(0) == 0 ? Arch::Cnn : Arch::Lstm;
  const bool quantized = state.range(1) != 0;
  const ModelConfig cfg = default_model(arch);
  ModelArtifact a = artifact_for(arch);
  if (quantized) a = quantize_int8(a, random_batch(cfg, 16));
  const Classifier model(std::move(a));
  const Tensor x = random_batch(cfg, static_cast<std::size_t>(state.range(2)));
  for (auto _ : state) benchmark::DoNotOptimize(model.predict_proba(x));
  state.SetItemsProcessed(state.iterations() * state.range(2));
}
BENCHMARK(BM_Forward)
    ->ArgNames({"lstm", "int8", "batch"})
    ->ArgsProduct({{0, 1}, {0, 1}, {1, 32}})
    ->Unit(benchmark::kMillisecond);

// One hop of the streaming detector with the default model: features plus forward pass.
void BM_DetectorHop(benchmark::State& state) {
  auto model = std::make_shared<const Classifier>(artifact_for(Arch::Lstm));
  StreamDetector det(model, {}, kCanonicalRate);
  const AudioClip warm = noise_clip(kCanonicalRate, 2);
  det.feed(warm.samples());
  const AudioClip hop = noise_clip(kCanonicalRate / 4, 3);
  for (auto _ : state) benchmark::DoNotOptimize(det.feed(hop.samples()));
}
BENCHMARK(BM_DetectorHop)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const ModelConfig cfg = default_model(state.range(0) == 0 ? Arch::Cnn : Arch::Lstm);
  Network net(cfg, 1);
  const Tensor x = random_batch(cfg, 16);
  std::vector<int> labels(16);
  for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % cfg.classes);
  std::vector<Tensor> grads;
  Rng rng(4);
  for (auto _ : state) benchmark::DoNotOptimize(net.loss_and_gradients(x, labels, rng, grads));
}
BENCHMARK(BM_TrainStep)->ArgNames({"lstm"})->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
