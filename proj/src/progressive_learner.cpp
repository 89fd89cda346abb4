#include "skb/progressive_learner.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iterator>

#include <nlohmann/json.hpp>

#include "skb/digest.hpp"
#include "skb/error.hpp"
#include "skb/parallel.hpp"
#include "skb/random.hpp"

namespace skb {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kSpeciesStream = 0x5BEC1E5ULL;
constexpr std::uint64_t kSampleStream = 0x5A3B1EULL;

std::string read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioError(AudioError::Kind::unreadable, "cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string cache_key(const std::string& digest, const StftConfig& c, int w, int h) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "|%d|%d|%d|%.17g|%.17g|%dx%d", c.window_len, c.hop_len,
                static_cast<int>(c.window_kind), c.log_floor_db, c.max_duration_s, w, h);
  return digest + buf;
}

json proposal_json(const ProposalRecord& p) {
  json j = {{"species", p.species},
            {"source_path", p.source_path},
            {"source_digest", p.source_digest},
            {"text", p.text},
            {"quality", p.quality},
            {"novelty", p.novelty}};
  j["verdict"] = p.verdict ? json(std::string(to_string(*p.verdict))) : json(nullptr);
  j["pattern_id"] = p.pattern_id ? json(*p.pattern_id) : json(nullptr);
  if (p.error) j["error"] = *p.error;
  return j;
}

json report_json(const IterationReport& r) {
  json per = json::object();
  for (const auto& [sp, s] : r.per_species) {
    per[sp] = {{"proposed", s.proposed},
               {"accepted", s.accepted},
               {"rejected_quality", s.rejected_quality},
               {"rejected_novelty", s.rejected_novelty},
               {"failed", s.failed}};
  }
  json props = json::array();
  for (const auto& p : r.proposals) props.push_back(proposal_json(p));
  return {{"iteration", r.iteration},
          {"proposed", r.proposed},
          {"accepted", r.accepted},
          {"rejected_quality", r.rejected_quality},
          {"rejected_novelty", r.rejected_novelty},
          {"failed", r.failed},
          {"kb_size_after", r.kb_size_after},
          {"kb_revision_after", r.kb_revision_after},
          {"per_species", per},
          {"proposals", props}};
}

}  // namespace

void LearnConfig::validate() const {
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (samples_per_species < 1) throw ConfigError("samples per species must be >= 1");
  if (species_sample_size && *species_sample_size == 0) {
    throw ConfigError("species sample size must be >= 1");
  }
  if (image_width < 1 || image_height < 1) throw ConfigError("image size must be positive");
  if (gate) gate->validate();
  stft.validate();
}

std::string report_to_json(const std::vector<IterationReport>& reports) {
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(report_json(r));
  return json{{"iterations", arr}}.dump(2);
}

std::string report_to_json(const IterationReport& report) { return report_json(report).dump(2); }

std::string SpectrogramCache::audio_digest(const std::filesystem::path& audio_path) {
  const std::string key = audio_path.string();
  {
    std::lock_guard lock(mutex_);
    if (auto it = digest_by_path_.find(key); it != digest_by_path_.end()) return it->second;
  }
  std::string digest = sha256_hex(read_bytes(audio_path));
  std::lock_guard lock(mutex_);
  digest_by_path_.emplace(key, digest);
  return digest;
}

std::shared_ptr<const CachedSpectrogram> SpectrogramCache::get(
    const std::filesystem::path& audio_path, const StftConfig& stft, int width, int height) {
  const std::string bytes = read_bytes(audio_path);
  const std::string digest = sha256_hex(bytes);
  const std::string key = cache_key(digest, stft, width, height);
  {
    std::lock_guard lock(mutex_);
    digest_by_path_[audio_path.string()] = digest;
    if (auto it = images_.find(key); it != images_.end()) return it->second;
  }
  const auto* data = reinterpret_cast<const std::uint8_t*>(bytes.data());
  const AudioClip clip = decode_wav({data, bytes.size()}, audio_path.string());
  auto entry = std::make_shared<CachedSpectrogram>();
  entry->audio_digest = digest;
  entry->image = render_spectrogram(compute_spectrogram(clip, stft), width, height);
  std::lock_guard lock(mutex_);
  return images_.emplace(key, std::move(entry)).first->second;
}

std::size_t SpectrogramCache::size() const {
  std::lock_guard lock(mutex_);
  return images_.size();
}

IterationReport run_iteration(KnowledgeBase& kb, const std::vector<DatasetEntry>& train,
                              const LearnConfig& cfg, int iteration, LearnContext& ctx) {
  cfg.validate();
  IterationReport report;
  report.iteration = iteration;

  std::map<std::string, std::vector<const DatasetEntry*>> pool;
  for (const auto& e : train) pool[e.species].push_back(&e);
  for (auto& [sp, v] : pool) {
    std::sort(v.begin(), v.end(), [](const DatasetEntry* a, const DatasetEntry* b) {
      if (a->recorded_at != b->recorded_at) return a->recorded_at < b->recorded_at;
      return a->audio_path < b->audio_path;
    });
  }

  std::vector<std::string> labels;
  for (const auto& [sp, v] : pool) labels.push_back(sp);
  if (cfg.species_sample_size && *cfg.species_sample_size < labels.size()) {
    Rng rng(derive_seed(cfg.rng_seed, {static_cast<std::uint64_t>(iteration), kSpeciesStream}));
    std::vector<std::string> chosen;
    for (auto i : rng.sample_without_replacement(labels.size(), *cfg.species_sample_size)) {
      chosen.push_back(labels[i]);
    }
    std::sort(chosen.begin(), chosen.end());
    labels = std::move(chosen);
  }

  struct Task {
    const DatasetEntry* entry;
    std::string text;
    std::string digest;
    std::optional<std::string> error;
  };
  std::vector<Task> tasks;
  for (const auto& sp : labels) {
    const auto& items = pool[sp];
    const std::size_t k = std::min(items.size(), static_cast<std::size_t>(cfg.samples_per_species));
    Rng rng(derive_seed(cfg.rng_seed,
                        {static_cast<std::uint64_t>(iteration), kSampleStream, fnv1a64(sp)}));
    for (auto i : rng.sample_without_replacement(items.size(), k)) {
      tasks.push_back(Task{items[i], {}, {}, std::nullopt});
    }
  }

  const int threads = ctx.gateway.config().kind == BackendKind::mock
                          ? 0
                          : std::max(1, ctx.gateway.config().max_in_flight);
  std::atomic<std::size_t> done{0};
  auto extract_one = [&](Task& t) {
    try {
      auto cached = ctx.cache.get(t.entry->audio_path, cfg.stft, cfg.image_width, cfg.image_height);
      t.digest = cached->audio_digest;
      t.text = ctx.gateway.extract_pattern(cached->image, ctx.prompt).text;
    } catch (const std::exception& ex) {
      t.error = ex.what();
    }
    const std::size_t d = ++done;
    if (ctx.progress) ctx.progress(d, tasks.size());
  };
  parallel_for(tasks.size(), threads, [&](std::size_t i) { extract_one(tasks[i]); });

  if (ctx.index && ctx.index->kb_revision() != kb.revision()) ctx.index.reset();
  if (!ctx.index && kb.total_patterns() > 0) ctx.index = build_index(kb, ctx.stop_words);

  ProposalOptions opts;
  opts.lexicon = ctx.lexicon;
  opts.index = ctx.index ? &*ctx.index : nullptr;
  for (const auto& sp : labels) report.per_species[sp];
  for (auto& t : tasks) {
    ProposalRecord rec;
    rec.species = t.entry->species;
    rec.source_path = t.entry->audio_path.string();
    rec.source_digest = t.digest;
    auto& s = report.per_species[rec.species];
    if (t.error) {
      rec.error = t.error;
      ++s.failed;
      ++report.failed;
      report.proposals.push_back(std::move(rec));
      continue;
    }
    rec.text = t.text;
    opts.source_digest = t.digest;
    const auto result = propose_pattern(kb, rec.species, t.text, iteration, opts);
    ++s.proposed;
    ++report.proposed;
    if (const auto* acc = std::get_if<Accepted>(&result)) {
      rec.verdict = GateOutcome::accepted;
      rec.quality = acc->pattern.quality;
      rec.novelty = acc->pattern.admission_novelty.value_or(1.0);
      rec.pattern_id = acc->pattern.id;
      ++s.accepted;
      ++report.accepted;
    } else {
      const auto& rej = std::get<Rejected>(result);
      rec.verdict = rej.reason;
      rec.quality = rej.quality;
      rec.novelty = rej.novelty;
      if (rej.reason == GateOutcome::low_quality) {
        ++s.rejected_quality;
        ++report.rejected_quality;
      } else {
        ++s.rejected_novelty;
        ++report.rejected_novelty;
      }
    }
    report.proposals.push_back(std::move(rec));
  }

  if (report.accepted > 0 || !ctx.index || ctx.index->kb_revision() != kb.revision()) {
    if (kb.total_patterns() > 0) {
      ctx.index = build_index(kb, ctx.stop_words);
    } else {
      ctx.index.reset();
    }
  }
  report.kb_size_after = kb.total_patterns();
  report.kb_revision_after = kb.revision();

  if (!tasks.empty() && report.failed == tasks.size()) {
    throw IterationFailed("iteration " + std::to_string(iteration) + ": all " +
                              std::to_string(tasks.size()) + " extractions failed (" +
                              tasks.front().error.value_or("") + ")",
                          std::move(report));
  }
  return report;
}

LearnOutcome run(KnowledgeBase kb, const std::vector<DatasetEntry>& train, const LearnConfig& cfg,
                 LearnContext& ctx) {
  cfg.validate();
  if (cfg.gate && !(*cfg.gate == kb.gate())) kb.set_gate(*cfg.gate);
  LearnOutcome out;
  for (int t = 1; t <= cfg.iterations; ++t) {
    try {
      out.reports.push_back(run_iteration(kb, train, cfg, t, ctx));
    } catch (const IterationFailed& ex) {
      out.reports.push_back(ex.partial());
      out.failure = ex.what();
      break;
    }
  }
  if (kb.total_patterns() > 0 && (!ctx.index || ctx.index->kb_revision() != kb.revision())) {
    ctx.index = build_index(kb, ctx.stop_words);
  }
  out.index = ctx.index;
  out.kb = std::move(kb);
  return out;
}

}  // namespace skb
