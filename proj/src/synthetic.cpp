#include "skb/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>

#include <nlohmann/json.hpp>

#include "skb/dataset.hpp"
#include "skb/error.hpp"
#include "skb/io.hpp"
#include "skb/random.hpp"
#include "skb/spectro.hpp"

namespace skb {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr std::int64_t kEpochStart = 1577836800;  // 2020-01-01T00:00:00Z
constexpr std::int64_t kClipSpacingS = 600;
constexpr double kNoiseLevel = 0.003;

bool too_close(const SpeciesSignature& a, const SpeciesSignature& b) {
  if (a.kind != b.kind) return false;
  if (std::abs(a.pulse_rate - b.pulse_rate) >= 2.0) return false;
  return std::abs(a.center_hz - b.center_hz) < 600.0;
}

std::string range_word(double hz) {
  if (hz < 2500.0) return "low";
  if (hz < 4500.0) return "mid";
  return "high";
}

std::string shape_phrase(SignatureKind k) {
  switch (k) {
    case SignatureKind::tonal:
      return "Clear tonal whistle";
    case SignatureKind::sweep:
      return "Rising frequency-modulated sweep";
    case SignatureKind::broadband:
      return "Noisy broadband burst";
  }
  return "";
}

}  // namespace

std::string_view to_string(SignatureKind k) {
  switch (k) {
    case SignatureKind::tonal:
      return "tonal";
    case SignatureKind::sweep:
      return "sweep";
    case SignatureKind::broadband:
      return "broadband";
  }
  return "";
}

std::vector<SpeciesSignature> draw_signatures(int n_species, std::uint64_t rng_seed) {
  if (n_species < 1 || n_species > 26) throw ConfigError("synthetic species count must be in [1, 26]");
  Rng rng(derive_seed(rng_seed, {0x516E0ULL}));
  std::vector<SpeciesSignature> out;
  while (static_cast<int>(out.size()) < n_species) {
    SpeciesSignature s;
    s.species = std::string("Species ") + static_cast<char>('A' + out.size());
    s.kind = static_cast<SignatureKind>(rng.uniform_index(3));
    s.center_hz = std::round(rng.uniform(1000.0, 7000.0));
    if (s.kind == SignatureKind::sweep) s.span_hz = std::round(rng.uniform(1000.0, 3000.0));
    if (s.kind == SignatureKind::broadband) s.span_hz = std::round(rng.uniform(2000.0, 4000.0));
    const auto r = rng.uniform_index(10);  // 0 or 2..10
    s.pulse_rate = r == 0 ? 0.0 : static_cast<double>(r + 1);
    // Keep every band inside (200 Hz, 7800 Hz).
    const double half = s.span_hz / 2.0;
    s.center_hz = std::clamp(s.center_hz, 200.0 + half, 7800.0 - half);
    bool clash = false;
    for (const auto& o : out) clash = clash || too_close(o, s);
    if (!clash) out.push_back(s);
  }
  return out;
}

std::vector<float> synthesize_clip(const SpeciesSignature& sig, std::uint64_t clip_seed,
                                   int sample_rate_hz, double duration_s) {
  Rng rng(clip_seed);
  const auto n = static_cast<std::size_t>(std::lround(duration_s * sample_rate_hz));
  const double fs = sample_rate_hz;
  const double center = sig.center_hz * rng.uniform(0.95, 1.05);
  const double rate = sig.pulse_rate * rng.uniform(0.9, 1.1);
  const double amp = rng.uniform(0.3, 0.8);
  const double phase0 = rng.uniform(0.0, 1.0);

  std::vector<double> tone_freqs;
  std::vector<double> tone_phases;
  if (sig.kind == SignatureKind::broadband) {
    const int tones = 48;
    for (int i = 0; i < tones; ++i) {
      tone_freqs.push_back(center - sig.span_hz / 2.0 + sig.span_hz * (i + rng.uniform01()) / tones);
      tone_phases.push_back(rng.uniform(0.0, kTwoPi));
    }
  }

  std::vector<float> out(n);
  double chirp_phase = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    double env = 1.0;
    double cycle_pos = 0.0;  // position within the current pulse, [0, 1)
    if (rate > 0.0) {
      const double c = t * rate + phase0;
      const double frac = c - std::floor(c);
      env = frac < 0.5 ? std::sin(std::numbers::pi * frac / 0.5) : 0.0;
      cycle_pos = frac / 0.5;
    } else {
      cycle_pos = t / duration_s;
    }
    double v = 0.0;
    switch (sig.kind) {
      case SignatureKind::tonal:
        v = std::sin(kTwoPi * center * t);
        break;
      case SignatureKind::sweep: {
        const double f = center - sig.span_hz / 2.0 + sig.span_hz * std::min(cycle_pos, 1.0);
        chirp_phase += kTwoPi * f / fs;
        v = std::sin(chirp_phase);
        break;
      }
      case SignatureKind::broadband:
        for (std::size_t k = 0; k < tone_freqs.size(); ++k) {
          v += std::sin(kTwoPi * tone_freqs[k] * t + tone_phases[k]);
        }
        v /= std::sqrt(static_cast<double>(tone_freqs.size()) / 2.0);
        break;
    }
    const double noise = kNoiseLevel * rng.normal();
    out[i] = static_cast<float>(std::clamp(amp * env * v + noise, -1.0, 1.0));
  }
  return out;
}

std::string synthetic_seed_json(const std::vector<SpeciesSignature>& signatures) {
  nlohmann::json species = nlohmann::json::array();
  for (const auto& s : signatures) {
    nlohmann::json patterns = nlohmann::json::array();
    patterns.push_back(
        {{"text", shape_phrase(s.kind) + " in the " + range_word(s.center_hz) + " frequency range"}});
    if (s.pulse_rate > 0.0) {
      patterns.push_back({{"text", "Pulses repeating about " +
                                       std::to_string(static_cast<int>(s.pulse_rate)) +
                                       " times per second"}});
    } else {
      patterns.push_back({{"text", "Continuous emission without pulses"}});
    }
    species.push_back({{"name", s.species}, {"patterns", patterns}});
  }
  return nlohmann::json{{"schema_version", 1}, {"species", species}}.dump(2) + "\n";
}

SyntheticDataset generate_synthetic_dataset(const SyntheticConfig& cfg,
                                            const std::filesystem::path& out_dir) {
  if (cfg.clips_per_species < 1) throw ConfigError("clips per species must be >= 1");
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "audio", ec);
  if (ec) throw Error("cannot create " + (out_dir / "audio").string() + ": " + ec.message());

  SyntheticDataset ds;
  ds.signatures = draw_signatures(cfg.n_species, cfg.rng_seed);
  std::vector<DatasetEntry> entries;
  std::int64_t ts = kEpochStart;
  for (int c = 0; c < cfg.clips_per_species; ++c) {
    for (std::size_t s = 0; s < ds.signatures.size(); ++s) {
      const auto& sig = ds.signatures[s];
      char name[64];
      std::snprintf(name, sizeof name, "species_%c_%03d.wav", static_cast<char>('a' + s), c);
      const auto path = out_dir / "audio" / name;
      const auto clip_seed = derive_seed(cfg.rng_seed, {s, static_cast<std::uint64_t>(c)});
      write_wav(path, synthesize_clip(sig, clip_seed, cfg.sample_rate_hz, cfg.clip_duration_s),
                cfg.sample_rate_hz);
      entries.push_back(DatasetEntry{path, sig.species, ts});
      ts += kClipSpacingS;
    }
  }
  ds.manifest_path = out_dir / "manifest.csv";
  ds.seed_kb_path = out_dir / "seed_kb.json";
  write_manifest(ds.manifest_path, entries);
  atomic_write_file(ds.seed_kb_path, synthetic_seed_json(ds.signatures));
  return ds;
}

}  // namespace skb
