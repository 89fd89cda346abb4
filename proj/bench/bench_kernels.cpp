#include <benchmark/benchmark.h>

#include <cmath>
#include <numbers>
#include <string>

#include "skb/knowledge_base.hpp"
#include "skb/random.hpp"
#include "skb/similarity.hpp"
#include "skb/spectro.hpp"

namespace {

skb::AudioClip chirp_clip(double seconds) {
  skb::AudioClip clip;
  clip.sample_rate_hz = 16000;
  const auto n = static_cast<std::size_t>(seconds * clip.sample_rate_hz);
  clip.samples.resize(n);
  double phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = 500.0 + 6000.0 * static_cast<double>(i) / static_cast<double>(n);
    phase += 2.0 * std::numbers::pi * f / clip.sample_rate_hz;
    clip.samples[i] = static_cast<float>(0.5 * std::sin(phase));
  }
  return clip;
}

skb::KnowledgeBase random_kb(int species, int per_species) {
  static const char* words[] = {"tonal", "whistle", "sweep", "pulse", "broadband", "burst", "khz",
                                "frequency", "rising", "falling", "harmonic", "click", "train",
                                "interval", "second", "low", "mid", "high", "narrow", "wide"};
  skb::Rng rng(7);
  skb::KnowledgeBase kb;
  std::vector<skb::PatternDescription> ps;
  for (int s = 0; s < species; ++s) {
    for (int j = 0; j < per_species; ++j) {
      skb::PatternDescription p;
      p.species = "species " + std::to_string(s);
      p.provenance = skb::Provenance::fixed_seed;
      for (int w = 0; w < 12; ++w) {
        p.text += std::string(words[rng.uniform_index(std::size(words))]) + " ";
      }
      p.text += std::to_string(rng.uniform_index(20)) + " kHz";
      ps.push_back(std::move(p));
    }
  }
  kb.add_patterns(std::move(ps));
  return kb;
}

void BM_StftParallel(benchmark::State& state) {
  const auto clip = chirp_clip(static_cast<double>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(skb::compute_spectrogram(clip));
}

void BM_StftSerial(benchmark::State& state) {
  const auto clip = chirp_clip(static_cast<double>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(skb::compute_spectrogram_serial(clip));
}

void BM_ScoresParallel(benchmark::State& state) {
  const auto kb = random_kb(static_cast<int>(state.range(0)), 10);
  const auto index = skb::build_index(kb);
  for (auto _ : state) {
    benchmark::DoNotOptimize(skb::species_scores(index, kb, "rising sweep 4 kHz pulse train"));
  }
}

void BM_ScoresSerial(benchmark::State& state) {
  const auto kb = random_kb(static_cast<int>(state.range(0)), 10);
  const auto index = skb::build_index(kb);
  for (auto _ : state) {
    benchmark::DoNotOptimize(skb::species_scores_serial(index, kb, "rising sweep 4 kHz pulse train"));
  }
}

}  // namespace

BENCHMARK(BM_StftParallel)->Arg(2)->Arg(30)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_StftSerial)->Arg(2)->Arg(30)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_ScoresParallel)->Arg(10)->Arg(100)->Unit(benchmark::kMicrosecond);
BENCHMARK(BM_ScoresSerial)->Arg(10)->Arg(100)->Unit(benchmark::kMicrosecond);

BENCHMARK_MAIN();
