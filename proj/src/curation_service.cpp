#include "skb/curation_service.hpp"

#include <httplib.h>

#include <algorithm>
#include <chrono>
#include <cstdio>

#include "skb/io.hpp"
#include "skb/spectro.hpp"

namespace skb {

using json = nlohmann::json;

namespace {

const char* const kEmptyKbMessage = "knowledge base is empty; seed or learn first";

std::int64_t now_seconds() {
  return std::chrono::duration_cast<std::chrono::seconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

json pattern_json(const PatternDescription& p) {
  json j = {{"id", p.id},
            {"species", p.species},
            {"text", p.text},
            {"provenance", std::string(to_string(p.provenance))},
            {"quality", p.quality},
            {"created_iteration", p.created_iteration}};
  j["admission_novelty"] = p.admission_novelty ? json(*p.admission_novelty) : json(nullptr);
  j["source_digest"] = p.source_digest ? json(*p.source_digest) : json(nullptr);
  if (p.decision) {
    j["decision"] = {{"decided_by", p.decision->decided_by},
                     {"decided_at", p.decision->decided_at},
                     {"gate_verdict", std::string(to_string(p.decision->gate_verdict))},
                     {"action", p.decision->action}};
  } else {
    j["decision"] = nullptr;
  }
  return j;
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
  send_json(res, status, json{{"error", message}});
}

/// Maps library errors onto HTTP statuses.
template <class Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, e.what());
    } catch (const EmptyKnowledgeBaseError&) {
      send_error(res, 422, kEmptyKbMessage);
    } catch (const BackendError& e) {
      send_error(res, 502, e.what());
    } catch (const EmptyResponseError& e) {
      send_error(res, 502, e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, std::string("malformed JSON: ") + e.what());
    } catch (const Error& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

bool truthy(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return false;
  const auto v = req.get_param_value(key);
  return v.empty() || v == "1" || v == "true" || v == "yes";
}

IterationRequest parse_iteration_request(const httplib::Request& req) {
  IterationRequest r;
  if (!trim(req.body).empty()) {
    const json j = json::parse(req.body);
    if (!j.is_object()) throw ValidationError("iteration request must be a JSON object");
    if (j.contains("k")) r.samples_per_species = j.at("k").get<int>();
    if (j.contains("species_sample_size")) r.species_sample_size = j.at("species_sample_size").get<std::size_t>();
    if (j.contains("seed")) r.rng_seed = j.at("seed").get<std::uint64_t>();
    r.include_rejected = j.value("include_rejected", false);
  }
  if (truthy(req, "include_rejected")) r.include_rejected = true;
  return r;
}

}  // namespace

std::string_view to_string(QueueStatus s) {
  switch (s) {
    case QueueStatus::pending:
      return "pending";
    case QueueStatus::accepted:
      return "accepted";
    case QueueStatus::rejected:
      return "rejected";
    case QueueStatus::edited:
      return "edited";
  }
  return "";
}

CurationService::CurationService(ServiceConfig cfg, KnowledgeBase kb,
                                 std::vector<DatasetEntry> entries,
                                 std::shared_ptr<Transport> transport)
    : cfg_(std::move(cfg)),
      entries_(std::move(entries)),
      stop_words_(std::make_shared<StopWords>()),
      gateway_(std::make_unique<Gateway>(cfg_.backend, std::move(transport))),
      cache_(std::make_unique<SpectrogramCache>()),
      server_(std::make_unique<httplib::Server>()) {
  cfg_.learn.validate();
  int max_iteration = 0;
  for (const auto& [name, entry] : kb.entries()) {
    for (const auto& p : entry.patterns) max_iteration = std::max(max_iteration, p.created_iteration);
  }
  next_iteration_ = max_iteration + 1;
  publish(std::move(kb));
  install_routes();
}

CurationService::~CurationService() {
  stop();
  if (worker_.joinable()) worker_.join();
}

std::unique_ptr<CurationService> CurationService::open(
    ServiceConfig cfg, const std::optional<std::filesystem::path>& manifest,
    std::shared_ptr<Transport> transport) {
  KnowledgeBase kb = load(cfg.kb_path);
  std::vector<DatasetEntry> entries;
  if (manifest) entries = load_manifest(*manifest);
  return std::make_unique<CurationService>(std::move(cfg), std::move(kb), std::move(entries),
                                           std::move(transport));
}

void CurationService::log(std::string_view msg) const {
  if (logger_) logger_(msg);
}

void CurationService::publish(KnowledgeBase kb) {
  auto snap = std::make_shared<Snapshot>();
  if (kb.total_patterns() > 0) snap->index = build_index(kb, stop_words_);
  snap->kb = std::move(kb);
  std::lock_guard lock(snapshot_mutex_);
  snapshot_ = std::move(snap);
}

std::shared_ptr<const CurationService::Snapshot> CurationService::snapshot() const {
  std::lock_guard lock(snapshot_mutex_);
  return snapshot_;
}

std::vector<QueueItem> CurationService::queue(bool pending_only) const {
  std::lock_guard lock(queue_mutex_);
  std::vector<QueueItem> out;
  for (const auto& [id, item] : queue_) {
    if (!pending_only || item.status == QueueStatus::pending) out.push_back(item);
  }
  return out;
}

std::optional<QueueItem> CurationService::queue_item(std::string_view id) const {
  std::lock_guard lock(queue_mutex_);
  const auto it = queue_.find(std::string(id));
  if (it == queue_.end()) return std::nullopt;
  return it->second;
}

QueueItem CurationService::decide(const std::string& item_id, const std::string& action,
                                  const std::optional<std::string>& edited_text,
                                  const std::string& decided_by) {
  if (action != "accept" && action != "reject" && action != "edit") {
    throw ValidationError("action must be accept, reject or edit");
  }
  std::string new_text;
  if (action == "edit") {
    new_text = edited_text ? std::string(trim(*edited_text)) : std::string();
    if (new_text.empty()) throw ValidationError("edit requires non-empty edited_text");
  }
  const std::string who = trim(decided_by).empty() ? std::string("expert") : std::string(trim(decided_by));

  std::lock_guard writer(write_mutex_);
  QueueItem item;
  {
    std::lock_guard lock(queue_mutex_);
    const auto it = queue_.find(item_id);
    if (it == queue_.end()) throw NotFoundError("no queue item '" + item_id + "'");
    if (it->second.status != QueueStatus::pending) {
      throw ConflictError("item " + item_id + " is already " + std::string(to_string(it->second.status)));
    }
    item = it->second;
  }
  const std::int64_t when = now_seconds();
  item.decided_by = who;
  item.decided_at = when;

  if (action == "reject") {
    item.status = QueueStatus::rejected;
  } else {
    KnowledgeBase kb = snapshot()->kb;
    PatternDescription p = item.pattern;
    p.id.clear();
    p.decision = DecisionRecord{who, when, item.gate_verdict, action};
    if (action == "edit") {
      p.text = new_text;
      p.provenance = Provenance::expert_edited;
      p.quality = quality(p.text, lexicon_);
    }
    const std::string committed = kb.add_pattern(std::move(p)).id;
    if (!cfg_.kb_path.empty()) save(kb, cfg_.kb_path);
    publish(std::move(kb));
    item.status = action == "edit" ? QueueStatus::edited : QueueStatus::accepted;
    item.committed_pattern_id = committed;
    log("committed " + committed + " from " + item_id);
  }
  std::lock_guard lock(queue_mutex_);
  queue_[item_id] = item;
  return item;
}

int CurationService::claim_iteration() {
  std::lock_guard lock(learn_mutex_);
  if (learning_) throw ConflictError("a learning iteration is already running");
  if (entries_.empty()) throw ValidationError("no manifest loaded; nothing to learn from");
  learning_ = true;
  learn_state_ = "running";
  learn_done_ = 0;
  learn_total_ = 0;
  learn_error_.reset();
  learn_iteration_ = next_iteration_++;
  return learn_iteration_;
}

void CurationService::release_iteration() {
  std::lock_guard lock(learn_mutex_);
  learning_ = false;
}

IterationOutcome CurationService::do_iteration(const IterationRequest& req, int iteration) {
  const auto snap = snapshot();
  KnowledgeBase scratch = snap->kb;
  LearnConfig lc = cfg_.learn;
  lc.iterations = 1;
  if (req.samples_per_species) lc.samples_per_species = *req.samples_per_species;
  if (req.species_sample_size) lc.species_sample_size = *req.species_sample_size;
  if (req.rng_seed) lc.rng_seed = *req.rng_seed;
  lc.validate();

  LearnContext ctx(*gateway_, *cache_);
  ctx.prompt = cfg_.extract_prompt;
  ctx.lexicon = &lexicon_;
  ctx.stop_words = stop_words_;
  ctx.index = snap->index;
  ctx.progress = [this](std::size_t done, std::size_t total) {
    std::lock_guard lock(learn_mutex_);
    learn_done_ = done;
    learn_total_ = total;
  };

  IterationOutcome out;
  out.report = run_iteration(scratch, entries_, lc, iteration, ctx);

  std::lock_guard lock(queue_mutex_);
  for (const auto& rec : out.report.proposals) {
    if (rec.error || !rec.verdict) continue;
    PatternDescription p;
    if (*rec.verdict == GateOutcome::accepted) {
      p = *scratch.find_pattern(*rec.pattern_id);
      p.id.clear();
    } else if (req.include_rejected) {
      p.text = rec.text;
      p.species = rec.species;
      p.provenance = Provenance::vlm_learned;
      p.quality = rec.quality;
      p.created_iteration = iteration;
      p.admission_novelty = rec.novelty;
      p.source_digest = rec.source_digest;
    } else {
      continue;
    }
    const bool duplicate = std::any_of(queue_.begin(), queue_.end(), [&](const auto& kv) {
      return kv.second.status == QueueStatus::pending && kv.second.pattern.species == p.species &&
             kv.second.pattern.text == p.text;
    });
    if (duplicate) continue;
    char id[32];
    std::snprintf(id, sizeof id, "q%06llu", static_cast<unsigned long long>(++queue_counter_));
    QueueItem item;
    item.id = id;
    item.pattern = std::move(p);
    item.gate_verdict = *rec.verdict;
    item.novelty = rec.novelty;
    item.iteration = iteration;
    item.source_path = rec.source_path;
    queue_.emplace(item.id, item);
    out.queued_ids.push_back(item.id);
  }
  return out;
}

namespace {

json outcome_json(const IterationOutcome& o) {
  json j = json::parse(report_to_json(o.report));
  j["queued_ids"] = o.queued_ids;
  return j;
}

}  // namespace

IterationOutcome CurationService::run_review_iteration(const IterationRequest& req) {
  const int iteration = claim_iteration();
  try {
    IterationOutcome out = do_iteration(req, iteration);
    std::lock_guard lock(learn_mutex_);
    learn_state_ = "done";
    last_outcome_ = outcome_json(out);
    learning_ = false;
    return out;
  } catch (const std::exception& e) {
    std::lock_guard lock(learn_mutex_);
    learn_state_ = "failed";
    learn_error_ = e.what();
    learning_ = false;
    throw;
  }
}

int CurationService::start_review_iteration(const IterationRequest& req) {
  const int iteration = claim_iteration();
  if (worker_.joinable()) worker_.join();
  worker_ = std::thread([this, req, iteration] {
    try {
      IterationOutcome out = do_iteration(req, iteration);
      std::lock_guard lock(learn_mutex_);
      learn_state_ = "done";
      last_outcome_ = outcome_json(out);
    } catch (const std::exception& e) {
      std::lock_guard lock(learn_mutex_);
      learn_state_ = "failed";
      learn_error_ = e.what();
    }
    release_iteration();
  });
  return iteration;
}

void CurationService::wait_for_learning() {
  if (worker_.joinable()) worker_.join();
}

json CurationService::learn_status() const {
  std::lock_guard lock(learn_mutex_);
  json j = {{"state", learn_state_},
            {"running", learning_},
            {"iteration", learn_iteration_},
            {"done", learn_done_},
            {"total", learn_total_}};
  j["last_report"] = last_outcome_ ? *last_outcome_ : json(nullptr);
  j["error"] = learn_error_ ? json(*learn_error_) : json(nullptr);
  return j;
}

SpectrogramImage CurationService::render(std::string_view wav_bytes) const {
  const auto* data = reinterpret_cast<const std::uint8_t*>(wav_bytes.data());
  const AudioClip clip = decode_wav({data, wav_bytes.size()}, "upload");
  return render_spectrogram(compute_spectrogram(clip, cfg_.learn.stft), cfg_.learn.image_width,
                            cfg_.learn.image_height);
}

ClassificationResult CurationService::classify_text(const std::string& text) const {
  if (trim(text).empty()) throw ValidationError("query text is empty");
  const auto snap = snapshot();
  if (!snap->index) throw EmptyKnowledgeBaseError();
  return classify(*snap->index, snap->kb, text);
}

ClassificationResult CurationService::classify_audio(std::string_view wav_bytes) const {
  const auto snap = snapshot();
  if (!snap->index) throw EmptyKnowledgeBaseError();
  const std::string text = gateway_->extract_pattern(render(wav_bytes), cfg_.extract_prompt).text;
  return classify(*snap->index, snap->kb, text);
}

DirectClassification CurationService::classify_audio_direct(std::string_view wav_bytes) const {
  const auto labels = snapshot()->kb.species_labels();
  if (labels.empty()) throw EmptyKnowledgeBaseError();
  return gateway_->classify_direct(render(wav_bytes), labels, cfg_.direct_prompt);
}

std::optional<std::vector<std::uint8_t>> CurationService::thumbnail_png(std::string_view item_id) const {
  const auto item = queue_item(item_id);
  if (!item || item->source_path.empty()) return std::nullopt;
  const auto cached = cache_->get(item->source_path, cfg_.learn.stft, cfg_.learn.image_width,
                                  cfg_.learn.image_height);
  return cached->image.png;
}

json CurationService::species_json() const {
  const auto snap = snapshot();
  json arr = json::array();
  for (const auto& [name, entry] : snap->kb.entries()) {
    arr.push_back({{"name", name}, {"pattern_count", entry.patterns.size()}});
  }
  return arr;
}

json CurationService::species_kb_json(std::string_view species) const {
  const auto snap = snapshot();
  const SpeciesEntry* entry = snap->kb.find(species);
  if (entry == nullptr) throw NotFoundError("unknown species '" + std::string(species) + "'");
  json patterns = json::array();
  for (const auto& p : entry->patterns) patterns.push_back(pattern_json(p));
  json j = {{"species", entry->species}, {"revision", snap->kb.revision()}, {"patterns", patterns}};
  j["diversity"] = snap->index ? json(snap->index->species_diversity(species)) : json(0.0);
  return j;
}

json CurationService::stats_json() const {
  const auto snap = snapshot();
  const KbStats s = stats(snap->kb);
  json prov = json::object();
  for (const auto& [p, n] : s.per_provenance) prov[std::string(to_string(p))] = n;
  json q = {{"pending", 0}, {"accepted", 0}, {"rejected", 0}, {"edited", 0}};
  {
    std::lock_guard lock(queue_mutex_);
    for (const auto& [id, item] : queue_) {
      auto& slot = q[std::string(to_string(item.status))];
      slot = slot.get<int>() + 1;
    }
  }
  return {{"revision", snap->kb.revision()},
          {"total_patterns", s.total_patterns},
          {"per_species", s.per_species},
          {"per_provenance", prov},
          {"gate",
           {{"quality_threshold", snap->kb.gate().quality_threshold},
            {"novelty_threshold", snap->kb.gate().novelty_threshold}}},
          {"queue", q}};
}

json CurationService::queue_item_json(const QueueItem& item) {
  json j = {{"id", item.id},
            {"species", item.pattern.species},
            {"text", item.pattern.text},
            {"quality", item.pattern.quality},
            {"novelty", item.novelty},
            {"gate_verdict", std::string(to_string(item.gate_verdict))},
            {"status", std::string(to_string(item.status))},
            {"iteration", item.iteration},
            {"source_digest", item.pattern.source_digest.value_or("")},
            {"spectrogram_thumbnail_url", "/api/queue/" + item.id + "/spectrogram.png"}};
  j["decided_by"] = item.decided_by ? json(*item.decided_by) : json(nullptr);
  j["decided_at"] = item.decided_at ? json(*item.decided_at) : json(nullptr);
  j["committed_pattern_id"] = item.committed_pattern_id ? json(*item.committed_pattern_id) : json(nullptr);
  return j;
}

json CurationService::classification_json(const ClassificationResult& r) {
  json ranked = json::array();
  for (const auto& s : r.ranked) {
    ranked.push_back({{"species", s.species},
                      {"total", s.total},
                      {"max_sim", s.max_sim},
                      {"mean_sim", s.mean_sim},
                      {"diversity", s.diversity},
                      {"pattern_count", s.pattern_count},
                      {"components",
                       {{"max", kWeightMax * s.max_sim},
                        {"mean", kWeightMean * s.mean_sim},
                        {"diversity", kWeightDiversity * s.diversity}}}});
  }
  return {{"predicted", r.predicted},
          {"query_pattern", r.query_pattern},
          {"kb_revision", r.kb_revision},
          {"ranked", ranked}};
}

void CurationService::install_routes() {
  auto& s = *server_;
  s.Get("/api/species", guarded([this](const httplib::Request&, httplib::Response& res) {
          send_json(res, 200, species_json());
        }));
  s.Get(R"(/api/kb/(.+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
          send_json(res, 200, species_kb_json(req.matches[1].str()));
        }));
  s.Get("/api/queue", guarded([this](const httplib::Request& req, httplib::Response& res) {
          const bool all = req.has_param("status") && req.get_param_value("status") == "all";
          json arr = json::array();
          for (const auto& item : queue(!all)) arr.push_back(queue_item_json(item));
          send_json(res, 200, arr);
        }));
  s.Get(R"(/api/queue/([^/]+)/spectrogram\.png)",
        guarded([this](const httplib::Request& req, httplib::Response& res) {
          const auto png = thumbnail_png(req.matches[1].str());
          if (!png) throw NotFoundError("no spectrogram for '" + req.matches[1].str() + "'");
          res.set_content(std::string(png->begin(), png->end()), "image/png");
        }));
  s.Post(R"(/api/patterns/([^/]+)/decision)",
         guarded([this](const httplib::Request& req, httplib::Response& res) {
           const json body = json::parse(req.body);
           if (!body.is_object() || !body.contains("action")) throw ValidationError("missing action");
           std::optional<std::string> edited;
           if (body.contains("edited_text") && !body["edited_text"].is_null()) {
             edited = body["edited_text"].get<std::string>();
           }
           const auto item = decide(req.matches[1].str(), body["action"].get<std::string>(), edited,
                                    body.value("decided_by", std::string("expert")));
           json j = queue_item_json(item);
           j["kb_revision"] = snapshot()->kb.revision();
           send_json(res, 200, j);
         }));
  s.Post("/api/classify", guarded([this](const httplib::Request& req, httplib::Response& res) {
           const bool vanilla = req.has_param("mode") && req.get_param_value("mode") == "vanilla";
           std::optional<std::string> audio;
           if (req.is_multipart_form_data()) {
             if (!req.has_file("audio")) throw ValidationError("multipart upload needs an 'audio' part");
             audio = req.get_file_value("audio").content;
           } else {
             const auto type = req.get_header_value("Content-Type");
             if (type.rfind("audio/", 0) == 0 || type == "application/octet-stream") {
               audio = req.body;
             } else {
               const json body = json::parse(req.body);
               if (!body.is_object() || !body.contains("text")) {
                 throw ValidationError("expected {\"text\": ...} or WAV audio");
               }
               send_json(res, 200, classification_json(classify_text(body["text"].get<std::string>())));
               return;
             }
           }
           if (vanilla) {
             const auto d = classify_audio_direct(*audio);
             send_json(res, 200,
                       json{{"predicted", d.label},
                            {"unparsed", d.unparsed},
                            {"raw_reply", d.raw_reply},
                            {"kb_revision", snapshot()->kb.revision()}});
             return;
           }
           send_json(res, 200, classification_json(classify_audio(*audio)));
         }));
  s.Post("/api/learn/iteration", guarded([this](const httplib::Request& req, httplib::Response& res) {
           const IterationRequest ir = parse_iteration_request(req);
           if (truthy(req, "wait")) {
             send_json(res, 200, outcome_json(run_review_iteration(ir)));
             return;
           }
           const int iteration = start_review_iteration(ir);
           send_json(res, 202, json{{"status", "started"}, {"iteration", iteration}});
         }));
  s.Get("/api/learn/status", guarded([this](const httplib::Request&, httplib::Response& res) {
          send_json(res, 200, learn_status());
        }));
  s.Get("/api/stats", guarded([this](const httplib::Request&, httplib::Response& res) {
          send_json(res, 200, stats_json());
        }));
  if (cfg_.ui_dir) {
    if (!s.set_mount_point("/", cfg_.ui_dir->string())) {
      throw ConfigError("cannot serve UI from " + cfg_.ui_dir->string());
    }
  }
  s.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
    log(req.method + " " + req.path + " -> " + std::to_string(res.status));
  });
}

httplib::Server& CurationService::http() { return *server_; }

int CurationService::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = server_->bind_to_any_port(host);
    if (p < 0) throw ConfigError("cannot bind " + host);
    return p;
  }
  if (!server_->bind_to_port(host, port)) {
    throw ConfigError("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void CurationService::listen() { server_->listen_after_bind(); }

void CurationService::stop() {
  if (server_) server_->stop();
}

}  // namespace skb
