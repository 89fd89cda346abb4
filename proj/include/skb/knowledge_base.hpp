#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "skb/pattern.hpp"

namespace skb {

class TfIdfIndex;

struct GateConfig {
  double quality_threshold = 0.4;
  double novelty_threshold = 0.3;

  void validate() const;
  bool operator==(const GateConfig&) const = default;
};

struct SpeciesEntry {
  std::string species;
  std::vector<PatternDescription> patterns;

  bool operator==(const SpeciesEntry&) const = default;
};

/// Species -> patterns, with a revision counter bumped on every mutation.
/// Entries are keyed by label in a sorted map, so iteration order never
/// depends on insertion order.
class KnowledgeBase {
 public:
  static constexpr int kSchemaVersion = 1;

  KnowledgeBase() = default;
  explicit KnowledgeBase(GateConfig gate) : gate_(gate) { gate_.validate(); }

  const std::map<std::string, SpeciesEntry>& entries() const { return entries_; }
  const SpeciesEntry* find(std::string_view species) const;
  const PatternDescription* find_pattern(std::string_view id) const;
  std::uint64_t revision() const { return revision_; }
  const GateConfig& gate() const { return gate_; }
  std::size_t total_patterns() const;
  std::vector<std::string> species_labels() const;

  void set_gate(GateConfig gate);

  /// Appends a pattern after validating species/id invariants. Assigns an id
  /// when the pattern has none. Bumps revision.
  const PatternDescription& add_pattern(PatternDescription p);

  /// Bulk insertion counted as one mutation.
  void add_patterns(std::vector<PatternDescription> patterns);

  /// Creates an empty entry if missing. Bumps revision when it creates one.
  void ensure_species(const std::string& species);

  bool remove_pattern(std::string_view id);

  /// Keeps only the listed species (n-way task restriction). One mutation.
  KnowledgeBase restricted_to(const std::vector<std::string>& species) const;

  std::string next_id();
  bool contains_id(std::string_view id) const;

  /// Used only when restoring persisted state.
  void restore_revision(std::uint64_t revision) { revision_ = revision; }

  bool operator==(const KnowledgeBase& o) const {
    return entries_ == o.entries_ && revision_ == o.revision_ && gate_ == o.gate_;
  }

 private:
  void insert_validated(PatternDescription p);

  std::map<std::string, SpeciesEntry> entries_;
  std::uint64_t revision_ = 0;
  GateConfig gate_;
  std::uint64_t id_counter_ = 0;
};

// Quality ------------------------------------------------------------------

/// Phrase list penalized by the specificity feature of quality().
class GenericityLexicon {
 public:
  GenericityLexicon();  // built-in defaults
  explicit GenericityLexicon(std::vector<std::string> phrases);
  static GenericityLexicon from_file(const std::filesystem::path& path);

  const std::vector<std::vector<std::string>>& phrases() const { return phrases_; }

 private:
  std::vector<std::vector<std::string>> phrases_;  // tokenized, longest first
};

const std::vector<std::string>& default_generic_phrases();

struct QualityBreakdown {
  double frequency = 0.0;    // 1 when a frequency quantity with units is present
  double temporal = 0.0;     // 1 numeric time quantity, 0.5 temporal vocabulary only
  double length = 0.0;       // 1 when length in [40, 500] chars
  double specificity = 0.0;  // 1 - generic hit ratio, 0 without any acoustic anchor
  double total = 0.0;
};

inline constexpr double kQualityWeightFrequency = 0.35;
inline constexpr double kQualityWeightTemporal = 0.25;
inline constexpr double kQualityWeightLength = 0.15;
inline constexpr double kQualityWeightSpecificity = 0.25;

QualityBreakdown quality_breakdown(std::string_view text, const GenericityLexicon& lexicon);
double quality(std::string_view text, const GenericityLexicon& lexicon);
double quality(std::string_view text);

// Novelty and admission ----------------------------------------------------

/// 1 - max cosine against the entry's patterns, vectorized with `index`.
/// An empty entry (or nullptr) yields 1.
double novelty(std::string_view text, const SpeciesEntry* entry, const TfIdfIndex& index);

struct Accepted {
  PatternDescription pattern;
};

struct Rejected {
  GateOutcome reason;  // low_quality or low_novelty
  double quality;
  double novelty;
};

using ProposalResult = std::variant<Accepted, Rejected>;

struct ProposalOptions {
  const TfIdfIndex* index = nullptr;  // built over kb when null
  const GenericityLexicon* lexicon = nullptr;
  std::optional<std::string> source_digest;
};

/// Admits the text iff quality > theta_q and novelty > theta_n (strict).
ProposalResult propose_pattern(KnowledgeBase& kb, const std::string& species,
                               const std::string& text, int iteration,
                               const ProposalOptions& opts = {});

/// Evaluates the gate without touching the knowledge base.
ProposalResult evaluate_gate(const KnowledgeBase& kb, const std::string& species,
                             const std::string& text, int iteration,
                             const ProposalOptions& opts = {});

// Seeds, persistence, stats -------------------------------------------------

KnowledgeBase init_fixed(const std::filesystem::path& seed_file,
                         const GenericityLexicon& lexicon = GenericityLexicon());
KnowledgeBase init_fixed_from_json(std::string_view json_text,
                                   const GenericityLexicon& lexicon = GenericityLexicon());

std::string to_json_string(const KnowledgeBase& kb);
KnowledgeBase from_json_string(std::string_view json_text);

/// Writes to a temporary sibling and renames it into place.
void save(const KnowledgeBase& kb, const std::filesystem::path& path);
KnowledgeBase load(const std::filesystem::path& path);

struct KbStats {
  std::size_t total_patterns = 0;
  std::map<std::string, std::size_t> per_species;
  std::map<Provenance, std::size_t> per_provenance;
};

KbStats stats(const KnowledgeBase& kb);

}  // namespace skb
