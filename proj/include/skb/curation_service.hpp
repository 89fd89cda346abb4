#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "skb/dataset.hpp"
#include "skb/error.hpp"
#include "skb/knowledge_base.hpp"
#include "skb/progressive_learner.hpp"
#include "skb/similarity.hpp"
#include "skb/vlm_gateway.hpp"

namespace httplib {
class Server;
}

namespace skb {

class NotFoundError : public Error {
 public:
  using Error::Error;
};

/// Item already decided, or a learning iteration already running.
class ConflictError : public Error {
 public:
  using Error::Error;
};

enum class QueueStatus { pending, accepted, rejected, edited };

std::string_view to_string(QueueStatus s);

struct QueueItem {
  std::string id;                // q000001, ...
  PatternDescription pattern;    // proposal as the gate saw it; id empty
  QueueStatus status = QueueStatus::pending;
  GateOutcome gate_verdict = GateOutcome::accepted;
  double novelty = 0.0;
  int iteration = 0;
  std::string source_path;
  std::optional<std::string> decided_by;
  std::optional<std::int64_t> decided_at;
  std::optional<std::string> committed_pattern_id;
};

struct ServiceConfig {
  std::filesystem::path kb_path;  // empty: keep the KB in memory only
  BackendConfig backend;
  LearnConfig learn;  // defaults for triggered iterations
  std::optional<std::filesystem::path> ui_dir;
  PromptTemplate extract_prompt = PromptTemplate::default_extract();
  PromptTemplate direct_prompt = PromptTemplate::default_direct_classify();
};

struct IterationRequest {
  std::optional<int> samples_per_species;
  std::optional<std::size_t> species_sample_size;
  std::optional<std::uint64_t> rng_seed;
  bool include_rejected = false;  // queue gate-rejected proposals too, for expert override
};

struct IterationOutcome {
  IterationReport report;
  std::vector<std::string> queued_ids;
};

/// Review-queue service over one KB file. All KB writes go through a single
/// writer; readers see whole snapshots (KB plus its index).
class CurationService {
 public:
  CurationService(ServiceConfig cfg, KnowledgeBase kb, std::vector<DatasetEntry> entries,
                  std::shared_ptr<Transport> transport = nullptr);
  ~CurationService();
  CurationService(const CurationService&) = delete;
  CurationService& operator=(const CurationService&) = delete;

  /// Loads the KB file (and manifest when given) and rebuilds the index.
  static std::unique_ptr<CurationService> open(ServiceConfig cfg,
                                               const std::optional<std::filesystem::path>& manifest,
                                               std::shared_ptr<Transport> transport = nullptr);

  struct Snapshot {
    KnowledgeBase kb;
    std::optional<TfIdfIndex> index;
  };
  std::shared_ptr<const Snapshot> snapshot() const;

  std::vector<QueueItem> queue(bool pending_only = true) const;
  std::optional<QueueItem> queue_item(std::string_view id) const;

  /// action: accept | reject | edit. Throws NotFoundError, ConflictError, ValidationError.
  QueueItem decide(const std::string& item_id, const std::string& action,
                   const std::optional<std::string>& edited_text, const std::string& decided_by);

  /// One review-mode iteration: runs on a scratch copy of the KB and queues
  /// the gate-accepted proposals. Throws ConflictError while another runs.
  IterationOutcome run_review_iteration(const IterationRequest& req);
  /// Starts run_review_iteration on a background thread; returns its iteration number.
  int start_review_iteration(const IterationRequest& req);
  nlohmann::json learn_status() const;
  void wait_for_learning();

  ClassificationResult classify_text(const std::string& text) const;
  ClassificationResult classify_audio(std::string_view wav_bytes) const;
  DirectClassification classify_audio_direct(std::string_view wav_bytes) const;

  std::optional<std::vector<std::uint8_t>> thumbnail_png(std::string_view item_id) const;

  nlohmann::json species_json() const;
  nlohmann::json species_kb_json(std::string_view species) const;
  nlohmann::json stats_json() const;
  static nlohmann::json queue_item_json(const QueueItem& item);
  static nlohmann::json classification_json(const ClassificationResult& r);

  httplib::Server& http();
  /// Binds host:port (port 0 picks a free port); returns the bound port.
  int bind(const std::string& host, int port);
  /// Blocks serving requests until stop().
  void listen();
  void stop();

  void set_logger(std::function<void(std::string_view)> logger) { logger_ = std::move(logger); }

 private:
  void install_routes();
  int claim_iteration();
  void release_iteration();
  IterationOutcome do_iteration(const IterationRequest& req, int iteration);
  void publish(KnowledgeBase kb);
  SpectrogramImage render(std::string_view wav_bytes) const;
  void log(std::string_view msg) const;

  ServiceConfig cfg_;
  std::vector<DatasetEntry> entries_;
  std::shared_ptr<const StopWords> stop_words_;
  GenericityLexicon lexicon_;
  std::unique_ptr<Gateway> gateway_;
  std::unique_ptr<SpectrogramCache> cache_;

  mutable std::mutex snapshot_mutex_;
  std::shared_ptr<const Snapshot> snapshot_;

  std::mutex write_mutex_;  // single writer for KB commits
  mutable std::mutex queue_mutex_;
  std::map<std::string, QueueItem> queue_;
  std::uint64_t queue_counter_ = 0;

  mutable std::mutex learn_mutex_;
  bool learning_ = false;
  int next_iteration_ = 1;
  std::string learn_state_ = "idle";
  std::size_t learn_done_ = 0;
  std::size_t learn_total_ = 0;
  int learn_iteration_ = 0;
  std::optional<nlohmann::json> last_outcome_;
  std::optional<std::string> learn_error_;
  std::thread worker_;

  std::unique_ptr<httplib::Server> server_;
  std::function<void(std::string_view)> logger_;
};

}  // namespace skb
