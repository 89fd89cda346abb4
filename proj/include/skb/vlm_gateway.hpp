#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "skb/pattern.hpp"
#include "skb/spectro.hpp"

namespace skb {

enum class PromptPurpose { extract, direct_classify };

struct PromptTemplate {
  std::string name;
  std::string body;
  PromptPurpose purpose = PromptPurpose::extract;

  /// direct_classify bodies must contain {species_list}.
  void validate() const;

  /// Substitutes {species_list}, {max_freq_khz} and {duration_s}.
  std::string render(const SpectrogramImage& image,
                     const std::vector<std::string>& species = {}) const;

  static PromptTemplate default_extract();
  static PromptTemplate default_direct_classify();
  static PromptTemplate from_file(const std::filesystem::path& path, PromptPurpose purpose);
};

enum class BackendKind { http_openai_compatible, mock };

struct BackendConfig {
  BackendKind kind = BackendKind::mock;
  std::string endpoint_url;  // e.g. http://127.0.0.1:8000/v1
  std::string model_name = "Qwen2.5-VL-7B-Instruct";
  double timeout_s = 60.0;
  int max_retries = 2;
  double retry_backoff_s = 0.5;  // doubled after each failed attempt
  int max_in_flight = 4;
  int max_tokens = 256;
  std::string api_key_env = "VLM_API_KEY";
  std::uint64_t mock_seed = 0;  // drives the mock's direct-classification guesses
  bool verbose = false;

  void validate() const;
};

BackendKind backend_kind_from_string(std::string_view s);

struct HttpResponse {
  int status = 0;
  std::string body;
};

using HeaderList = std::vector<std::pair<std::string, std::string>>;

/// Minimal POST transport. Implementations throw a retryable BackendError on
/// timeouts and connection failures, and return any HTTP status otherwise.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual HttpResponse post_json(const std::string& endpoint_url, const std::string& path,
                                 const std::string& body, const HeaderList& headers,
                                 double timeout_s) = 0;
};

std::shared_ptr<Transport> make_http_transport();

struct DirectClassification {
  std::string label;
  bool unparsed = false;
  std::string raw_reply;
};

/// Front door to the vision-language backend (remote or mock). Safe to share
/// across threads; remote calls are capped at max_in_flight.
class Gateway {
 public:
  explicit Gateway(BackendConfig cfg, std::shared_ptr<Transport> transport = nullptr);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  const BackendConfig& config() const { return cfg_; }

  /// Throws EmptyResponseError when the backend has nothing to say.
  PatternDescription extract_pattern(const SpectrogramImage& image, const PromptTemplate& tmpl);

  DirectClassification classify_direct(const SpectrogramImage& image,
                                        const std::vector<std::string>& candidates,
                                        const PromptTemplate& tmpl);

  void set_logger(std::function<void(std::string_view)> logger) { logger_ = std::move(logger); }

  /// Text of one chat completion with a single image part, with retries.
  std::string complete(const std::string& prompt, const SpectrogramImage& image);

 private:
  std::string build_request(const std::string& prompt, const SpectrogramImage& image) const;
  void log(std::string_view msg) const;

  struct Limiter;
  BackendConfig cfg_;
  std::shared_ptr<Transport> transport_;
  std::unique_ptr<Limiter> limiter_;
  std::function<void(std::string_view)> logger_;
};

/// Extracts message content from an OpenAI-style chat-completions body.
std::string parse_chat_completion(std::string_view body);

inline constexpr std::size_t kMaxPatternChars = 500;

/// Single paragraph, no control characters, surrounding quotes stripped,
/// at most 500 bytes (cut at a sentence boundary when possible).
std::string normalize_pattern_text(std::string_view raw);

/// Case-insensitive longest-substring match of a free-text reply to a label.
DirectClassification match_candidate(std::string_view reply,
                                     const std::vector<std::string>& candidates);

// Mock backend --------------------------------------------------------------

struct MatrixStatistics {
  bool silent = true;
  double band_lo_hz = 0.0;
  double band_hi_hz = 0.0;
  double median_instantaneous_width_hz = 0.0;
  int pulse_count = 0;
  double duration_s = 0.0;
  int pulse_rate = 0;  // rounded pulses per second
};

MatrixStatistics matrix_statistics(const SpectrogramMatrix& matrix);

/// "<Shape> patterns at <lo>-<hi> kHz with <rate> pulses per second".
std::string mock_describe(const SpectrogramMatrix& matrix);
std::string describe_statistics(const MatrixStatistics& stats);

}  // namespace skb
