#include <benchmark/benchmark.h>

#include <random>

#include "iclabel/crowdlabel.hpp"
#include "iclabel/features.hpp"
#include "iclabel/network.hpp"
#include "iclabel/synthetic.hpp"

using namespace iclabel;

namespace {

IcFeatures sample_features() {
  synth::RecordingParams p;
  p.n_channels = 32;
  p.n_components = 1;
  p.duration_s = 60.0;
  static const auto rec = synth::make_recording(p, 0);
  static const auto f = FeatureExtractor(rec)(0);
  return f;
}

void BM_Forward(benchmark::State& state) {
  const auto w = nn::initialize_weights(0);
  const auto x = sample_features();
  for (auto _ : state) benchmark::DoNotOptimize(nn::forward(w, x));
}
BENCHMARK(BM_Forward)->Unit(benchmark::kMillisecond);

void BM_Classify(benchmark::State& state) {
  const auto w = nn::initialize_weights(0);
  const auto x = sample_features();
  for (auto _ : state) benchmark::DoNotOptimize(nn::classify(w, x));
}
BENCHMARK(BM_Classify)->Unit(benchmark::kMillisecond);

void BM_Backward(benchmark::State& state) {
  const auto w = nn::initialize_weights(0);
  const auto x = sample_features();
  const std::vector<IcFeatures> batch(static_cast<std::size_t>(state.range(0)), x);
  const std::vector<LabelVector> targets(batch.size(), LabelVector::uniform());
  for (auto _ : state) {
    benchmark::DoNotOptimize(nn::backward(w, std::span<const IcFeatures>(batch),
                                          std::span<const LabelVector>(targets), nn::kBrainWeighted));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Backward)->Arg(8)->Arg(128)->Unit(benchmark::kMillisecond);

void BM_MedianWelch(benchmark::State& state) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(static_cast<std::size_t>(state.range(0)) * 256);
  for (auto& v : x) v = normal(rng);
  for (auto _ : state) benchmark::DoNotOptimize(median_welch_psd(x, 256.0));
}
BENCHMARK(BM_MedianWelch)->Arg(60)->Arg(600)->Unit(benchmark::kMillisecond);

void BM_Autocorrelation(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(60 * 256);
  for (auto& v : x) v = normal(rng);
  for (auto _ : state) benchmark::DoNotOptimize(autocorrelation(x, 256.0));
}
BENCHMARK(BM_Autocorrelation)->Unit(benchmark::kMicrosecond);

void BM_Topography(benchmark::State& state) {
  const auto positions = synth::spiral_montage(static_cast<std::size_t>(state.range(0)));
  std::vector<double> projection(positions.size());
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (auto& v : projection) v = normal(rng);
  for (auto _ : state) benchmark::DoNotOptimize(scalp_topography(projection, positions));
}
BENCHMARK(BM_Topography)->Arg(32)->Arg(128)->Unit(benchmark::kMicrosecond);

void BM_GibbsEpochs(benchmark::State& state) {
  crowd::VoteSet votes;
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> response(0, crowd::kNumResponses - 1);
  for (int c = 0; c < 200; ++c) {
    for (int l = 0; l < 5; ++l) {
      votes.push_back({"l" + std::to_string(l), "c" + std::to_string(c), response(rng), 1.0, false});
    }
  }
  const auto priors = crowd::assign_priors(votes, crowd::DatasetMode::training);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        crowd::cllda_fit(votes, priors, crowd::training_class_prior(), {20, 80, 0}));
  }
  state.SetItemsProcessed(state.iterations() * 100 * static_cast<std::int64_t>(votes.size()));
}
BENCHMARK(BM_GibbsEpochs)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
