#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace skb {

enum class SignatureKind { tonal, sweep, broadband };

std::string_view to_string(SignatureKind k);

/// Acoustic identity of one synthetic species.
struct SpeciesSignature {
  std::string species;
  SignatureKind kind = SignatureKind::tonal;
  double center_hz = 0.0;
  double span_hz = 0.0;     // sweep extent or broadband width; 0 for tonal
  double pulse_rate = 0.0;  // pulses per second, 0 = continuous
};

struct SyntheticConfig {
  int n_species = 5;  // at most 26
  int clips_per_species = 10;
  std::uint64_t rng_seed = 42;
  int sample_rate_hz = 16000;
  double clip_duration_s = 2.0;
};

struct SyntheticDataset {
  std::filesystem::path manifest_path;
  std::filesystem::path seed_kb_path;  // vague expert-style seed patterns
  std::vector<SpeciesSignature> signatures;
};

std::vector<SpeciesSignature> draw_signatures(int n_species, std::uint64_t rng_seed);

/// One clip of a species; `clip_seed` drives the per-clip jitter.
std::vector<float> synthesize_clip(const SpeciesSignature& sig, std::uint64_t clip_seed,
                                   int sample_rate_hz, double duration_s);

/// Seed-file JSON with two coarse, expert-style patterns per species.
std::string synthetic_seed_json(const std::vector<SpeciesSignature>& signatures);

/// Writes <out_dir>/audio/*.wav, manifest.csv and seed_kb.json.
SyntheticDataset generate_synthetic_dataset(const SyntheticConfig& cfg,
                                            const std::filesystem::path& out_dir);

}  // namespace skb
