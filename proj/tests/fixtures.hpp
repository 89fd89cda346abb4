#pragma once

#include <unistd.h>

#include <filesystem>
#include <map>
#include <string>
#include <tuple>

#include "skb/knowledge_base.hpp"
#include "skb/random.hpp"
#include "skb/synthetic.hpp"

namespace fixtures {

// KB that exercises every persisted field: all provenances, optional
// novelty/digest/decision, empty species, odd characters in text.
inline skb::KnowledgeBase random_kb(std::uint64_t seed) {
  using namespace skb;
  Rng rng(seed);
  KnowledgeBase kb(GateConfig{rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)});
  const int n_species = 1 + static_cast<int>(rng.uniform_index(6));
  static const char* words[] = {"pulse", "20 Hz", "sweep", "\"quoted\"", "kHz", "ünïcode",
                                "tab\there", "burst", "2-8", "regular"};
  for (int s = 0; s < n_species; ++s) {
    const std::string species = "Species " + std::to_string(s) + (rng.uniform01() < 0.2 ? " (sp.)" : "");
    kb.ensure_species(species);
    const int n = static_cast<int>(rng.uniform_index(5));
    for (int i = 0; i < n; ++i) {
      PatternDescription p;
      p.species = species;
      const int len = 1 + static_cast<int>(rng.uniform_index(8));
      for (int w = 0; w < len; ++w) p.text += (w ? " " : "") + std::string(words[rng.uniform_index(10)]);
      p.provenance = static_cast<Provenance>(rng.uniform_index(3));
      p.quality = rng.uniform01();
      p.created_iteration = static_cast<int>(rng.uniform_index(5));
      if (rng.uniform01() < 0.5) p.admission_novelty = rng.uniform01();
      if (rng.uniform01() < 0.5) p.source_digest = "sha256:" + std::to_string(rng.next());
      if (rng.uniform01() < 0.3) {
        p.decision = DecisionRecord{"expert" + std::to_string(rng.uniform_index(3)),
                                    static_cast<std::int64_t>(1600000000 + rng.uniform_index(1000000)),
                                    static_cast<GateOutcome>(rng.uniform_index(3)),
                                    rng.uniform01() < 0.5 ? "accept" : "edit"};
      }
      if (rng.uniform01() < 0.2) p.id = "custom-" + std::to_string(s) + "-" + std::to_string(i);
      kb.add_pattern(std::move(p));
    }
  }
  return kb;
}

// Deterministic, so generated once into a shared temp directory; a private
// build directory is renamed into place to keep concurrent test processes safe.
inline const skb::SyntheticDataset& synthetic(int n_species = 5, int clips = 10,
                                              std::uint64_t seed = 42) {
  static std::map<std::tuple<int, int, std::uint64_t>, skb::SyntheticDataset> cache;
  auto key = std::make_tuple(n_species, clips, seed);
  if (auto it = cache.find(key); it != cache.end()) return it->second;
  const std::string name = "skb_fixture_" + std::to_string(n_species) + "_" + std::to_string(clips) +
                           "_" + std::to_string(seed);
  const auto tmp = std::filesystem::temp_directory_path();
  const auto dir = tmp / name;
  skb::SyntheticConfig cfg;
  cfg.n_species = n_species;
  cfg.clips_per_species = clips;
  cfg.rng_seed = seed;
  if (!std::filesystem::exists(dir / "seed_kb.json")) {
    const auto staging = tmp / (name + ".build" + std::to_string(::getpid()));
    std::filesystem::remove_all(staging);
    skb::generate_synthetic_dataset(cfg, staging);
    std::error_code ec;
    std::filesystem::rename(staging, dir, ec);
    std::filesystem::remove_all(staging, ec);
  }
  skb::SyntheticDataset ds;
  ds.manifest_path = dir / "manifest.csv";
  ds.seed_kb_path = dir / "seed_kb.json";
  ds.signatures = skb::draw_signatures(n_species, seed);
  return cache.emplace(key, std::move(ds)).first->second;
}

}  // namespace fixtures
