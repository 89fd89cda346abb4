#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "skb/dataset.hpp"
#include "skb/knowledge_base.hpp"
#include "skb/progressive_learner.hpp"
#include "skb/statistics.hpp"
#include "skb/vlm_gateway.hpp"

namespace skb {

enum class SystemKind { vanilla, fixed, progressive };

std::string_view to_string(SystemKind s);
SystemKind system_kind_from_string(std::string_view s);

struct ExperimentConfig {
  int n_way = 5;
  int samples_per_round = 3;  // K
  SystemKind system = SystemKind::progressive;
  int iterations = 3;  // T
  std::uint64_t rng_seed = 42;
  double split_fraction = 0.7;
  std::optional<GateConfig> gate;
  StftConfig stft;
  int image_width = 512;
  int image_height = 512;

  void validate() const;
};

struct LearningCurvePoint {
  int iteration = 0;
  std::size_t kb_size = 0;
  double running_accuracy = 0.0;  // test accuracy with the KB as of this iteration
};

struct ExperimentResult {
  ExperimentConfig config;
  std::vector<std::string> species;  // the n-way task, sorted; confusion axes
  double accuracy = 0.0;
  std::map<std::string, double> per_species_accuracy;
  std::size_t pattern_count_final = 0;
  std::vector<LearningCurvePoint> learning_curve;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::size_t test_items = 0;
  std::size_t backend_calls = 0;
  std::size_t backend_failures = 0;
  std::size_t unparsed_answers = 0;     // vanilla replies matching no label
  std::size_t leaked_digests = 0;       // audio digests present in both splits
  std::size_t learned_off_train = 0;    // learned patterns whose source is not a train clip
  bool partial = false;
  std::optional<std::string> failure;
  std::vector<IterationReport> learning_reports;
};

/// Shared, read-only inputs of an experiment.
struct ExperimentInputs {
  std::vector<DatasetEntry> entries;
  KnowledgeBase seed_kb;
  BackendConfig backend;
  std::shared_ptr<Transport> transport;  // http backends; nullptr = default
  std::shared_ptr<SpectrogramCache> cache = std::make_shared<SpectrogramCache>();
  std::shared_ptr<const StopWords> stop_words = std::make_shared<StopWords>();
  const GenericityLexicon* lexicon = nullptr;
  PromptTemplate extract_prompt = PromptTemplate::default_extract();
  PromptTemplate direct_prompt = PromptTemplate::default_direct_classify();
};

inline constexpr double kFailureBudget = 0.2;

/// Samples the n-way species, splits chronologically, runs the system and
/// classifies every test entry.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentInputs& inputs);

std::string result_to_json(const ExperimentResult& r);

struct GridSpec {
  std::vector<SystemKind> systems{SystemKind::vanilla, SystemKind::fixed, SystemKind::progressive};
  std::vector<int> n_ways{5, 10};
  std::vector<int> ks{1, 3};
  std::vector<std::uint64_t> seeds{41, 42, 43};
  ExperimentConfig base;  // iterations, split, gate, STFT
};

struct CellSummary {
  std::size_t runs = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for one run
  double mean_patterns = 0.0;
};

struct GridRow {
  int n_way = 0;
  int k = 0;
  std::map<SystemKind, CellSummary> cells;
  std::optional<double> improvement_rel_pct;  // (progressive - vanilla) / vanilla * 100
  std::optional<double> improvement_abs;      // progressive - vanilla
};

struct GridSummary {
  std::vector<GridRow> rows;
  std::vector<ExperimentResult> results;  // in grid order
  std::optional<double> pattern_accuracy_r;  // Pearson over progressive runs
  std::optional<HypothesisResult> hypothesis;  // vanilla vs progressive, paired
};

CellSummary summarize_runs(const std::vector<double>& accuracies,
                          const std::vector<std::size_t>& pattern_counts);

/// (augmented - vanilla) / vanilla * 100; nullopt when vanilla is 0.
std::optional<double> relative_improvement_pct(double vanilla, double augmented);

std::vector<ExperimentConfig> expand_grid(const GridSpec& spec);

/// Runs each config (cells in parallel) and reduces per (n_way, K).
GridSummary run_grid(const std::vector<ExperimentConfig>& configs, const ExperimentInputs& inputs);

std::string summary_csv(const GridSummary& g);
std::string summary_table(const GridSummary& g);
std::string summary_json(const GridSummary& g);

}  // namespace skb
