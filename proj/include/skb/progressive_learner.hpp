#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "skb/dataset.hpp"
#include "skb/error.hpp"
#include "skb/knowledge_base.hpp"
#include "skb/similarity.hpp"
#include "skb/spectro.hpp"
#include "skb/vlm_gateway.hpp"

namespace skb {

struct LearnConfig {
  int iterations = 3;           // T
  int samples_per_species = 3;  // K
  std::optional<std::size_t> species_sample_size;  // nullopt: every species
  std::uint64_t rng_seed = 42;
  std::optional<GateConfig> gate;  // overrides the KB's gate when set
  StftConfig stft;
  int image_width = 512;
  int image_height = 512;

  void validate() const;
};

/// One extraction attempt and what the gate made of it.
struct ProposalRecord {
  std::string species;
  std::string source_path;
  std::string source_digest;
  std::string text;  // empty when extraction failed
  std::optional<GateOutcome> verdict;
  double quality = 0.0;
  double novelty = 0.0;
  std::optional<std::string> pattern_id;
  std::optional<std::string> error;
};

struct SpeciesIterationStats {
  std::size_t proposed = 0;
  std::size_t accepted = 0;
  std::size_t rejected_quality = 0;
  std::size_t rejected_novelty = 0;
  std::size_t failed = 0;
};

struct IterationReport {
  int iteration = 0;
  std::size_t proposed = 0;  // = accepted + rejected_quality + rejected_novelty
  std::size_t accepted = 0;
  std::size_t rejected_quality = 0;
  std::size_t rejected_novelty = 0;
  std::size_t failed = 0;  // extraction errors, not counted as proposals
  std::size_t kb_size_after = 0;
  std::uint64_t kb_revision_after = 0;
  std::map<std::string, SpeciesIterationStats> per_species;
  std::vector<ProposalRecord> proposals;
};

std::string report_to_json(const std::vector<IterationReport>& reports);
std::string report_to_json(const IterationReport& report);

struct CachedSpectrogram {
  std::string audio_digest;
  SpectrogramImage image;
};

/// Rendered spectrograms keyed by (audio digest, STFT config, image size).
class SpectrogramCache {
 public:
  std::shared_ptr<const CachedSpectrogram> get(const std::filesystem::path& audio_path,
                                               const StftConfig& stft, int width, int height);
  std::string audio_digest(const std::filesystem::path& audio_path);
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  std::map<std::string, std::string> digest_by_path_;
  std::map<std::string, std::shared_ptr<const CachedSpectrogram>> images_;
};

/// Everything an iteration borrows besides the KB and the data.
struct LearnContext {
  LearnContext(Gateway& g, SpectrogramCache& c) : gateway(g), cache(c) {}

  Gateway& gateway;
  SpectrogramCache& cache;
  PromptTemplate prompt = PromptTemplate::default_extract();
  const GenericityLexicon* lexicon = nullptr;
  std::shared_ptr<const StopWords> stop_words = std::make_shared<StopWords>();
  std::optional<TfIdfIndex> index;  // refreshed at the end of each iteration
  std::function<void(std::size_t done, std::size_t total)> progress;
};

class IterationFailed : public Error {
 public:
  IterationFailed(const std::string& what, IterationReport partial)
      : Error(what), partial_(std::move(partial)) {}
  const IterationReport& partial() const { return partial_; }

 private:
  IterationReport partial_;
};

/// Samples K training clips per selected species, extracts a pattern from
/// each, gates them into `kb` in (species, sample) order, then refreshes
/// ctx.index once.
IterationReport run_iteration(KnowledgeBase& kb, const std::vector<DatasetEntry>& train,
                              const LearnConfig& cfg, int iteration, LearnContext& ctx);

struct LearnOutcome {
  KnowledgeBase kb;
  std::vector<IterationReport> reports;
  std::optional<TfIdfIndex> index;  // pinned to kb.revision() when kb is non-empty
  std::optional<std::string> failure;
};

/// Iterations 1..T; a failed iteration stops the run and is reported.
LearnOutcome run(KnowledgeBase kb, const std::vector<DatasetEntry>& train, const LearnConfig& cfg,
                 LearnContext& ctx);

}  // namespace skb
