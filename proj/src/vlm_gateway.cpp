// CPPHTTPLIB_OPENSSL_SUPPORT comes from the build so every TU sees one httplib.
#include "skb/vlm_gateway.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <nlohmann/json.hpp>
#include <semaphore>
#include <sstream>
#include <thread>

#include "skb/error.hpp"
#include "skb/io.hpp"
#include "skb/random.hpp"

namespace skb {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Prompts

void PromptTemplate::validate() const {
  if (trim(body).empty()) throw ConfigError("prompt template '" + name + "' has an empty body");
  if (purpose == PromptPurpose::direct_classify && body.find("{species_list}") == std::string::npos) {
    throw ConfigError("direct_classify prompt '" + name + "' lacks {species_list}");
  }
}

namespace {

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) {
    s.replace(pos, from.size(), to);
  }
}

std::string fixed1(double v) {
  std::ostringstream ss;
  ss.setf(std::ios::fixed);
  ss.precision(1);
  ss << v;
  return ss.str();
}

}  // namespace

std::string PromptTemplate::render(const SpectrogramImage& image,
                                   const std::vector<std::string>& species) const {
  std::string out = body;
  std::string list;
  for (std::size_t i = 0; i < species.size(); ++i) {
    if (i > 0) list += ", ";
    list += species[i];
  }
  replace_all(out, "{species_list}", list);
  replace_all(out, "{max_freq_khz}", fixed1(image.freq_span_hz / 1000.0));
  replace_all(out, "{duration_s}", fixed1(image.time_span_s));
  return out;
}

PromptTemplate PromptTemplate::default_extract() {
  return {"extract",
          "This image is a spectrogram of an underwater acoustic recording. Time runs left to "
          "right over {duration_s} seconds; frequency rises from 0 kHz at the bottom to "
          "{max_freq_khz} kHz at the top; brighter means louder. In at most 3 sentences, "
          "describe the dominant acoustic pattern: its frequency range with units, its temporal "
          "pattern, its repetition interval or pulse rate, and its shape (for example tonal "
          "whistle, frequency-modulated sweep, broadband pulse, click train, harmonic stack). "
          "Do not guess the species.",
          PromptPurpose::extract};
}

PromptTemplate PromptTemplate::default_direct_classify() {
  return {"direct_classify",
          "This image is a spectrogram of an underwater acoustic recording. Time runs left to "
          "right over {duration_s} seconds; frequency rises from 0 kHz at the bottom to "
          "{max_freq_khz} kHz at the top. Which one of these species produced it: "
          "{species_list}? Answer with the species name only.",
          PromptPurpose::direct_classify};
}

PromptTemplate PromptTemplate::from_file(const std::filesystem::path& path, PromptPurpose purpose) {
  PromptTemplate t{path.stem().string(), read_text_file(path), purpose};
  t.validate();
  return t;
}

void BackendConfig::validate() const {
  if (!(timeout_s > 0.0)) throw ConfigError("timeout_s must be positive");
  if (max_retries < 0) throw ConfigError("max_retries must be >= 0");
  if (max_in_flight < 1 || max_in_flight > 64) throw ConfigError("max_in_flight must be in [1, 64]");
  if (kind == BackendKind::http_openai_compatible && endpoint_url.empty()) {
    throw ConfigError("http backend requires endpoint_url");
  }
}

BackendKind backend_kind_from_string(std::string_view s) {
  if (s == "mock") return BackendKind::mock;
  if (s == "http" || s == "http_openai_compatible") return BackendKind::http_openai_compatible;
  throw ConfigError("unknown backend '" + std::string(s) + "' (expected mock or http)");
}

// ---------------------------------------------------------------------------
// Text normalization

std::string normalize_pattern_text(std::string_view raw) {
  std::string flat;
  flat.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    const auto c = static_cast<unsigned char>(raw[i]);
    if (c < 0x20 || c == 0x7F) {
      flat.push_back(' ');
    } else if (c == 0xC2 && i + 1 < raw.size() &&
               static_cast<unsigned char>(raw[i + 1]) >= 0x80 &&
               static_cast<unsigned char>(raw[i + 1]) <= 0x9F) {
      flat.push_back(' ');  // C1 control
      ++i;
    } else {
      flat.push_back(static_cast<char>(c));
    }
  }
  std::string out;
  out.reserve(flat.size());
  for (char c : flat) {
    if (c == ' ' && (out.empty() || out.back() == ' ')) continue;
    out.push_back(c);
  }
  std::string_view t = trim(out);
  for (;;) {
    if (t.size() >= 2 && ((t.front() == '"' && t.back() == '"') || (t.front() == '\'' && t.back() == '\''))) {
      t = trim(t.substr(1, t.size() - 2));
    } else if (t.size() >= 6 && t.substr(0, 3) == "\xE2\x80\x9C" && t.substr(t.size() - 3) == "\xE2\x80\x9D") {
      t = trim(t.substr(3, t.size() - 6));
    } else {
      break;
    }
  }
  std::string result(t);
  if (result.size() <= kMaxPatternChars) return result;

  const std::string_view head(result.data(), kMaxPatternChars);
  std::size_t cut = std::string_view::npos;
  for (std::size_t i = head.size(); i-- > 0;) {
    const char c = head[i];
    if ((c == '.' || c == '!' || c == '?') && (i + 1 == result.size() || result[i + 1] == ' ')) {
      cut = i + 1;
      break;
    }
  }
  if (cut == std::string_view::npos) {
    const auto sp = head.rfind(' ');
    cut = (sp != std::string_view::npos && sp > 0) ? sp : kMaxPatternChars;
  }
  // Never split a UTF-8 sequence.
  while (cut > 0 && cut < result.size() &&
         (static_cast<unsigned char>(result[cut]) & 0xC0) == 0x80) {
    --cut;
  }
  return std::string(trim(std::string_view(result).substr(0, cut)));
}

DirectClassification match_candidate(std::string_view reply,
                                     const std::vector<std::string>& candidates) {
  if (candidates.empty()) throw ValidationError("candidate list is empty");
  auto lower = [](std::string_view s) {
    std::string o(s);
    std::transform(o.begin(), o.end(), o.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return o;
  };
  const std::string r = lower(reply);
  std::vector<std::string> sorted = candidates;
  std::sort(sorted.begin(), sorted.end());
  const std::string* best = nullptr;
  auto is_word = [](char ch) { return std::isalnum(static_cast<unsigned char>(ch)) != 0; };
  auto mentions = [&](const std::string& needle) {
    for (auto pos = r.find(needle); pos != std::string::npos; pos = r.find(needle, pos + 1)) {
      const bool left = pos == 0 || !is_word(r[pos - 1]);
      const std::size_t end = pos + needle.size();
      const bool right = end == r.size() || !is_word(r[end]);
      if (left && right) return true;
    }
    return false;
  };
  for (const auto& c : sorted) {
    if (!mentions(lower(c))) continue;
    if (best == nullptr || c.size() > best->size()) best = &c;
  }
  DirectClassification out;
  out.raw_reply = std::string(reply);
  if (best != nullptr) {
    out.label = *best;
  } else {
    out.label = sorted.front();
    out.unparsed = true;
  }
  return out;
}

std::string parse_chat_completion(std::string_view body) {
  json doc;
  try {
    doc = json::parse(body);
  } catch (const json::parse_error& e) {
    throw BackendError(std::string("backend returned invalid JSON: ") + e.what(), false);
  }
  if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
    throw EmptyResponseError("backend response has no choices");
  }
  const auto& msg = doc["choices"][0].value("message", json::object());
  const auto& content = msg.contains("content") ? msg["content"] : json();
  if (content.is_string()) return content.get<std::string>();
  std::string out;
  if (content.is_array()) {
    for (const auto& part : content) {
      if (part.is_object() && part.value("type", "") == "text") {
        if (!out.empty()) out.push_back(' ');
        out += part.value("text", "");
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// HTTP transport

namespace {

class HttplibTransport final : public Transport {
 public:
  HttpResponse post_json(const std::string& endpoint_url, const std::string& path,
                         const std::string& body, const HeaderList& headers,
                         double timeout_s) override {
    // endpoint_url = scheme://host[:port][/base]
    const auto scheme_end = endpoint_url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint_url needs a scheme: " + endpoint_url);
    const auto path_start = endpoint_url.find('/', scheme_end + 3);
    const std::string origin = endpoint_url.substr(0, path_start);
    std::string base = path_start == std::string::npos ? "" : endpoint_url.substr(path_start);
    while (!base.empty() && base.back() == '/') base.pop_back();

    httplib::Client cli(origin);
    const auto secs = static_cast<time_t>(timeout_s);
    const auto usecs = static_cast<time_t>((timeout_s - static_cast<double>(secs)) * 1e6);
    cli.set_connection_timeout(secs, usecs);
    cli.set_read_timeout(secs, usecs);
    cli.set_write_timeout(secs, usecs);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = cli.Post(base + path, h, body, "application/json");
    if (!res) {
      throw BackendError("request to " + origin + " failed: " + httplib::to_string(res.error()), true);
    }
    return {res->status, res->body};
  }
};

}  // namespace

std::shared_ptr<Transport> make_http_transport() { return std::make_shared<HttplibTransport>(); }

// ---------------------------------------------------------------------------
// Gateway

struct Gateway::Limiter {
  explicit Limiter(int n) : slots(n) {}
  std::counting_semaphore<64> slots;
};

Gateway::Gateway(BackendConfig cfg, std::shared_ptr<Transport> transport)
    : cfg_(std::move(cfg)), transport_(std::move(transport)) {
  cfg_.validate();
  if (cfg_.kind == BackendKind::http_openai_compatible && !transport_) {
    transport_ = make_http_transport();
  }
  limiter_ = std::make_unique<Limiter>(cfg_.max_in_flight);
}

Gateway::~Gateway() = default;

void Gateway::log(std::string_view msg) const {
  if (cfg_.verbose && logger_) logger_(msg);
}

std::string Gateway::build_request(const std::string& prompt, const SpectrogramImage& image) const {
  const std::string png(image.png.begin(), image.png.end());
  json req = {
      {"model", cfg_.model_name},
      {"temperature", 0},
      {"max_tokens", cfg_.max_tokens},
      {"messages",
       json::array({{{"role", "user"},
                     {"content",
                      json::array({{{"type", "text"}, {"text", prompt}},
                                   {{"type", "image_url"},
                                    {"image_url",
                                     {{"url", "data:image/png;base64," +
                                                  httplib::detail::base64_encode(png)}}}}})}}})}};
  return req.dump();
}

std::string Gateway::complete(const std::string& prompt, const SpectrogramImage& image) {
  const std::string body = build_request(prompt, image);
  HeaderList headers;
  if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key != nullptr && *key != '\0') {
    headers.emplace_back("Authorization", std::string("Bearer ") + key);
  }
  if (cfg_.verbose) {
    std::string shown = body;
    if (auto pos = shown.find("base64,"); pos != std::string::npos) {
      const auto end = shown.find('"', pos);
      shown.replace(pos + 7, end - pos - 7, "<" + std::to_string(end - pos - 7) + " bytes>");
    }
    log("POST " + cfg_.endpoint_url + "/chat/completions" +
        (headers.empty() ? "" : " (Authorization: Bearer <redacted>)") + " " + shown);
  }

  std::optional<BackendError> last;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0 && cfg_.retry_backoff_s > 0.0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(
          cfg_.retry_backoff_s * std::pow(2.0, attempt - 1)));
    }
    HttpResponse res;
    limiter_->slots.acquire();
    try {
      res = transport_->post_json(cfg_.endpoint_url, "/chat/completions", body, headers,
                                  cfg_.timeout_s);
    } catch (const BackendError& e) {
      limiter_->slots.release();
      if (!e.retryable()) throw;
      last = e;
      log(std::string("attempt ") + std::to_string(attempt + 1) + " failed: " + e.what());
      continue;
    } catch (...) {
      limiter_->slots.release();
      throw;
    }
    limiter_->slots.release();
    if (cfg_.verbose) log("HTTP " + std::to_string(res.status) + " " + res.body);
    if (res.status >= 200 && res.status < 300) return parse_chat_completion(res.body);
    const bool retryable = res.status == 429 || res.status >= 500;
    BackendError err("backend returned HTTP " + std::to_string(res.status), retryable, res.status);
    if (!retryable) throw err;
    last = err;
  }
  throw BackendError(std::string(last ? last->what() : "backend failure") + " after " +
                         std::to_string(cfg_.max_retries + 1) + " attempts",
                     true, last ? last->http_status() : 0);
}

PatternDescription Gateway::extract_pattern(const SpectrogramImage& image, const PromptTemplate& tmpl) {
  if (tmpl.purpose != PromptPurpose::extract) throw ConfigError("extract_pattern needs an extract prompt");
  tmpl.validate();
  std::string reply;
  if (cfg_.kind == BackendKind::mock) {
    reply = mock_describe(image_to_matrix(image));
  } else {
    reply = complete(tmpl.render(image), image);
  }
  PatternDescription p;
  p.text = normalize_pattern_text(reply);
  if (p.text.empty()) throw EmptyResponseError("backend returned an empty description");
  p.provenance = Provenance::vlm_learned;
  p.quality = 0.0;
  return p;
}

DirectClassification Gateway::classify_direct(const SpectrogramImage& image,
                                              const std::vector<std::string>& candidates,
                                              const PromptTemplate& tmpl) {
  if (tmpl.purpose != PromptPurpose::direct_classify) {
    throw ConfigError("classify_direct needs a direct_classify prompt");
  }
  tmpl.validate();
  if (candidates.empty()) throw ValidationError("candidate list is empty");
  std::vector<std::string> sorted = candidates;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw ValidationError("candidate labels must be unique");
  }
  std::string reply;
  if (cfg_.kind == BackendKind::mock) {
    // Uniform guess keyed by image content, so answers do not depend on call order.
    const std::string& d = image.source_matrix_digest;
    const std::uint64_t key = d.size() >= 16 ? std::stoull(d.substr(0, 16), nullptr, 16) : 0;
    Rng rng(derive_seed(cfg_.mock_seed, {key}));
    reply = "This is likely a " + sorted[rng.uniform_index(sorted.size())] + ".";
  } else {
    reply = complete(tmpl.render(image, sorted), image);
  }
  if (trim(reply).empty()) throw EmptyResponseError("backend returned an empty answer");
  return match_candidate(reply, sorted);
}

}  // namespace skb
