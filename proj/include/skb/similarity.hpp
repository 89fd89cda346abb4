#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "skb/knowledge_base.hpp"

namespace skb {

/// Stop-word set applied before n-gram formation.
class StopWords {
 public:
  StopWords();  // standard English + domain list
  explicit StopWords(std::set<std::string> words) : words_(std::move(words)) {}
  static StopWords from_files(const std::vector<std::filesystem::path>& paths);
  static StopWords none() { return StopWords(std::set<std::string>{}); }

  bool contains(std::string_view w) const { return words_.find(std::string(w)) != words_.end(); }
  const std::set<std::string>& words() const { return words_; }

 private:
  std::set<std::string> words_;
};

const std::vector<std::string>& default_english_stop_words();
const std::vector<std::string>& default_domain_stop_words();

/// Lowercased word sequence, before stop-word removal or n-gram expansion.
/// Tokens are alphanumeric runs; a '-' between two alphanumerics and a '.'
/// between two digits stay inside the token.
std::vector<std::string> split_words(std::string_view text);

struct NgramRange {
  int min_n = 1;
  int max_n = 3;
  bool operator==(const NgramRange&) const = default;
};

/// Emits all unigrams, then bigrams, then trigrams over the stop-filtered words.
std::vector<std::string> tokenize(std::string_view text, const StopWords& stop = StopWords(),
                                  NgramRange range = {});

/// Sparse non-negative vector sorted by column id.
struct TermVector {
  std::vector<std::pair<int, double>> entries;
  double norm = 0.0;

  bool empty() const { return entries.empty(); }
};

/// Zero when either norm is zero.
double cosine(const TermVector& a, const TermVector& b);

/// Pooled TF-IDF statistics over every KB pattern, pinned to one KB revision.
/// Caches each pattern's document vector and each species' diversity.
class TfIdfIndex {
 public:
  const std::unordered_map<std::string, int>& vocabulary() const { return vocabulary_; }
  const std::vector<std::string>& terms() const { return terms_; }
  const std::vector<double>& idf() const { return idf_; }
  double idf_of(std::string_view term) const;
  std::size_t doc_count() const { return doc_count_; }
  std::uint64_t kb_revision() const { return kb_revision_; }
  NgramRange ngram_range() const { return range_; }
  const StopWords& stop_words() const { return *stop_; }

  /// Document vectors for a species, in pattern order; nullptr if unknown.
  const std::vector<TermVector>* species_vectors(std::string_view species) const;
  double species_diversity(std::string_view species) const;

  TermVector vectorize(std::string_view text) const;

 private:
  friend TfIdfIndex build_index(const KnowledgeBase&, std::shared_ptr<const StopWords>, NgramRange);

  std::unordered_map<std::string, int> vocabulary_;
  std::vector<std::string> terms_;  // column id -> term, lexicographic
  std::vector<double> idf_;
  std::size_t doc_count_ = 0;
  std::uint64_t kb_revision_ = 0;
  NgramRange range_;
  std::shared_ptr<const StopWords> stop_;
  std::map<std::string, std::vector<TermVector>, std::less<>> doc_vectors_;
  std::map<std::string, double, std::less<>> diversity_;
};

/// Smoothed idf: ln((1 + N) / (1 + df)) + 1. Throws EmptyKnowledgeBaseError.
TfIdfIndex build_index(const KnowledgeBase& kb,
                       std::shared_ptr<const StopWords> stop = std::make_shared<StopWords>(),
                       NgramRange range = {});

inline TermVector vectorize(const TfIdfIndex& index, std::string_view text) {
  return index.vectorize(text);
}

/// Mean pairwise (1 - cosine); zero for fewer than two vectors.
double diversity(const std::vector<TermVector>& vectors);

inline constexpr double kWeightMax = 0.6;
inline constexpr double kWeightMean = 0.3;
inline constexpr double kWeightDiversity = 0.1;

struct SpeciesScore {
  std::string species;
  double max_sim = 0.0;
  double mean_sim = 0.0;
  double diversity = 0.0;
  double total = 0.0;
  std::size_t pattern_count = 0;
};

inline double aggregate_score(double max_sim, double mean_sim, double div) {
  return kWeightMax * max_sim + kWeightMean * mean_sim + kWeightDiversity * div;
}

/// One score per KB species in label order. OpenMP-parallel over species,
/// using the index's cached vectors.
std::vector<SpeciesScore> species_scores(const TfIdfIndex& index, const KnowledgeBase& kb,
                                         std::string_view query);

/// Serial reference: re-vectorizes every pattern and recomputes diversity.
std::vector<SpeciesScore> species_scores_serial(const TfIdfIndex& index, const KnowledgeBase& kb,
                                                std::string_view query);

struct ClassificationResult {
  std::string predicted;
  std::vector<SpeciesScore> ranked;  // total desc, then species asc
  std::string query_pattern;
  std::uint64_t kb_revision = 0;
};

/// Ranks scores by total descending, ties by label ascending.
void rank_scores(std::vector<SpeciesScore>& scores);

ClassificationResult classify(const TfIdfIndex& index, const KnowledgeBase& kb,
                              std::string_view query);

}  // namespace skb
