#include "skb/knowledge_base.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <nlohmann/json.hpp>
#include <regex>
#include <set>

#include "skb/error.hpp"
#include "skb/io.hpp"
#include "skb/similarity.hpp"

namespace skb {

using nlohmann::json;

std::string_view to_string(Provenance p) {
  switch (p) {
    case Provenance::fixed_seed: return "fixed_seed";
    case Provenance::vlm_learned: return "vlm_learned";
    case Provenance::expert_edited: return "expert_edited";
  }
  return "unknown";
}

Provenance provenance_from_string(std::string_view s) {
  if (s == "fixed_seed") return Provenance::fixed_seed;
  if (s == "vlm_learned") return Provenance::vlm_learned;
  if (s == "expert_edited") return Provenance::expert_edited;
  throw ValidationError("unknown provenance '" + std::string(s) + "'");
}

std::string_view to_string(GateOutcome g) {
  switch (g) {
    case GateOutcome::accepted: return "accepted";
    case GateOutcome::low_quality: return "low_quality";
    case GateOutcome::low_novelty: return "low_novelty";
  }
  return "unknown";
}

GateOutcome gate_outcome_from_string(std::string_view s) {
  if (s == "accepted") return GateOutcome::accepted;
  if (s == "low_quality") return GateOutcome::low_quality;
  if (s == "low_novelty") return GateOutcome::low_novelty;
  throw ValidationError("unknown gate verdict '" + std::string(s) + "'");
}

void GateConfig::validate() const {
  auto unit = [](double v) { return std::isfinite(v) && v >= 0.0 && v <= 1.0; };
  if (!unit(quality_threshold) || !unit(novelty_threshold)) {
    throw ConfigError("gate thresholds must lie in [0, 1]");
  }
}

// ---------------------------------------------------------------------------
// KnowledgeBase

const SpeciesEntry* KnowledgeBase::find(std::string_view species) const {
  auto it = entries_.find(std::string(species));
  return it == entries_.end() ? nullptr : &it->second;
}

const PatternDescription* KnowledgeBase::find_pattern(std::string_view id) const {
  for (const auto& [_, entry] : entries_) {
    for (const auto& p : entry.patterns) {
      if (p.id == id) return &p;
    }
  }
  return nullptr;
}

bool KnowledgeBase::contains_id(std::string_view id) const { return find_pattern(id) != nullptr; }

std::size_t KnowledgeBase::total_patterns() const {
  std::size_t n = 0;
  for (const auto& [_, e] : entries_) n += e.patterns.size();
  return n;
}

std::vector<std::string> KnowledgeBase::species_labels() const {
  std::vector<std::string> out;
  for (const auto& [s, _] : entries_) out.push_back(s);
  return out;
}

void KnowledgeBase::set_gate(GateConfig gate) {
  gate.validate();
  gate_ = gate;
  ++revision_;
}

namespace {

std::optional<std::uint64_t> id_serial(std::string_view id) {
  if (id.size() < 2 || id.front() != 'p') return std::nullopt;
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(id.data() + 1, id.data() + id.size(), v);
  if (ec != std::errc() || ptr != id.data() + id.size()) return std::nullopt;
  return v;
}

}  // namespace

std::string KnowledgeBase::next_id() {
  std::string id;
  do {
    char buf[32];
    std::snprintf(buf, sizeof buf, "p%06llu", static_cast<unsigned long long>(++id_counter_));
    id = buf;
  } while (contains_id(id));
  return id;
}

void KnowledgeBase::insert_validated(PatternDescription p) {
  p.text = std::string(trim(p.text));
  if (p.text.empty()) throw ValidationError("pattern text is empty");
  if (trim(p.species).empty()) throw ValidationError("pattern has no species");
  if (!(p.quality >= 0.0 && p.quality <= 1.0)) throw ValidationError("quality outside [0, 1]");
  if (p.created_iteration < 0) throw ValidationError("created_iteration must be >= 0");
  if (p.id.empty()) {
    p.id = next_id();
  } else if (contains_id(p.id)) {
    throw ValidationError("duplicate pattern id '" + p.id + "'");
  }
  if (auto serial = id_serial(p.id)) id_counter_ = std::max(id_counter_, *serial);
  auto& entry = entries_[p.species];
  entry.species = p.species;
  entry.patterns.push_back(std::move(p));
}

const PatternDescription& KnowledgeBase::add_pattern(PatternDescription p) {
  const std::string species = p.species;
  insert_validated(std::move(p));
  ++revision_;
  return entries_.at(species).patterns.back();
}

void KnowledgeBase::add_patterns(std::vector<PatternDescription> patterns) {
  for (auto& p : patterns) insert_validated(std::move(p));
  ++revision_;
}

void KnowledgeBase::ensure_species(const std::string& species) {
  if (trim(species).empty()) throw ValidationError("species label is empty");
  if (entries_.find(species) != entries_.end()) return;
  entries_[species].species = species;
  ++revision_;
}

bool KnowledgeBase::remove_pattern(std::string_view id) {
  for (auto& [_, entry] : entries_) {
    auto it = std::find_if(entry.patterns.begin(), entry.patterns.end(),
                           [&](const PatternDescription& p) { return p.id == id; });
    if (it != entry.patterns.end()) {
      entry.patterns.erase(it);
      ++revision_;
      return true;
    }
  }
  return false;
}

KnowledgeBase KnowledgeBase::restricted_to(const std::vector<std::string>& species) const {
  KnowledgeBase out = *this;
  const std::set<std::string> keep(species.begin(), species.end());
  for (auto it = out.entries_.begin(); it != out.entries_.end();) {
    it = keep.count(it->first) ? std::next(it) : out.entries_.erase(it);
  }
  for (const auto& s : keep) {
    if (trim(s).empty()) throw ValidationError("species label is empty");
    out.entries_[s].species = s;
  }
  ++out.revision_;
  return out;
}

// ---------------------------------------------------------------------------
// Quality

const std::vector<std::string>& default_generic_phrases() {
  static const std::vector<std::string> phrases = {
      "rhythmic calling behavior", "rhythmic calling", "rhythmic calls", "calling behavior",
      "vocal behavior", "vocal activity", "animal sounds", "various sounds", "various calls",
      "typical calls", "typical sounds", "social calls", "communication calls",
      "interesting pattern", "some activity", "calls", "calling", "sounds", "vocalizations",
      "communication", "behavior", "activity", "typical", "various"};
  return phrases;
}

GenericityLexicon::GenericityLexicon() : GenericityLexicon(default_generic_phrases()) {}

GenericityLexicon::GenericityLexicon(std::vector<std::string> phrases) {
  for (const auto& ph : phrases) {
    auto words = split_words(ph);
    if (!words.empty()) phrases_.push_back(std::move(words));
  }
  std::stable_sort(phrases_.begin(), phrases_.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
}

GenericityLexicon GenericityLexicon::from_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read genericity lexicon " + path.string());
  std::vector<std::string> phrases;
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto t = trim(line);
    if (!t.empty()) phrases.emplace_back(t);
  }
  return GenericityLexicon(std::move(phrases));
}

namespace {

const std::regex& frequency_re() {
  static const std::regex re(
      R"(\b\d+(\.\d+)?(\s*(-|to)\s*\d+(\.\d+)?)?\s*(khz|hz|kilohertz|hertz)\b)",
      std::regex::icase | std::regex::optimize);
  return re;
}

const std::regex& time_quantity_re() {
  static const std::regex re(
      R"(\b\d+(\.\d+)?(\s*(-|to)\s*\d+(\.\d+)?)?\s*-?\s*(ms|msec|milliseconds?|s|sec|secs|seconds?|min|minutes?)\b)",
      std::regex::icase | std::regex::optimize);
  return re;
}

const std::regex& rate_re() {
  static const std::regex re(R"(\b\d+(\.\d+)?\s+[a-z-]+\s+(per|a|each)\s+(second|sec|minute|min)\b)",
                             std::regex::icase | std::regex::optimize);
  return re;
}

const std::set<std::string>& temporal_vocabulary() {
  static const std::set<std::string> words = {
      "interval", "intervals", "temporal", "repetition", "repetitions", "repetitive",
      "repeated", "repeating", "periodic", "periodicity", "duration", "spacing", "cadence",
      "regularly", "inter-pulse", "inter-click"};
  return words;
}

// Words that anchor a description in observable acoustic structure.
const std::set<std::string>& descriptor_vocabulary() {
  static const std::set<std::string> words = {
      "whistle", "whistles", "click", "clicks", "pulse", "pulses", "pulsed", "burst", "bursts",
      "sweep", "sweeps", "sweeping", "upsweep", "downsweep", "chirp", "chirps", "moan", "moans",
      "tonal", "harmonic", "harmonics", "broadband", "narrowband", "frequency", "low-frequency",
      "high-frequency", "mid-frequency", "modulated", "frequency-modulated", "contour",
      "contours", "trill", "trills", "buzz", "song", "melodic", "phrase", "phrases", "creak",
      "grunt", "grunts", "knock", "knocks", "vertical", "horizontal", "upward", "downward",
      "rising", "falling", "band", "overtones", "train", "trains", "doublet", "sidebands"};
  return words;
}

}  // namespace

QualityBreakdown quality_breakdown(std::string_view raw, const GenericityLexicon& lexicon) {
  const std::string text(trim(raw));
  QualityBreakdown b;
  b.frequency = std::regex_search(text, frequency_re()) ? 1.0 : 0.0;

  const StopWords english(std::set<std::string>(default_english_stop_words().begin(),
                                                default_english_stop_words().end()));
  std::vector<std::string> content;
  for (auto& w : split_words(text)) {
    if (!english.contains(w)) content.push_back(std::move(w));
  }

  if (std::regex_search(text, time_quantity_re()) || std::regex_search(text, rate_re())) {
    b.temporal = 1.0;
  } else if (std::any_of(content.begin(), content.end(),
                         [](const std::string& w) { return temporal_vocabulary().count(w) > 0; })) {
    b.temporal = 0.5;
  }

  b.length = (text.size() >= 40 && text.size() <= 500) ? 1.0 : 0.0;

  if (!content.empty()) {
    std::vector<bool> covered(content.size(), false);
    for (std::size_t i = 0; i < content.size();) {
      std::size_t matched = 0;
      for (const auto& phrase : lexicon.phrases()) {
        if (i + phrase.size() > content.size()) continue;
        if (std::equal(phrase.begin(), phrase.end(), content.begin() + static_cast<std::ptrdiff_t>(i))) {
          matched = phrase.size();
          break;
        }
      }
      if (matched > 0) {
        std::fill_n(covered.begin() + static_cast<std::ptrdiff_t>(i), matched, true);
        i += matched;
      } else {
        ++i;
      }
    }
    const auto hits = static_cast<double>(std::count(covered.begin(), covered.end(), true));
    bool anchored = false;
    for (std::size_t i = 0; i < content.size() && !anchored; ++i) {
      if (covered[i]) continue;
      const auto& w = content[i];
      anchored = std::any_of(w.begin(), w.end(), [](char c) { return c >= '0' && c <= '9'; }) ||
                 descriptor_vocabulary().count(w) > 0;
    }
    b.specificity = anchored ? 1.0 - hits / static_cast<double>(content.size()) : 0.0;
  }

  b.total = kQualityWeightFrequency * b.frequency + kQualityWeightTemporal * b.temporal +
            kQualityWeightLength * b.length + kQualityWeightSpecificity * b.specificity;
  b.total = std::clamp(b.total, 0.0, 1.0);
  return b;
}

double quality(std::string_view text, const GenericityLexicon& lexicon) {
  return quality_breakdown(text, lexicon).total;
}

double quality(std::string_view text) {
  static const GenericityLexicon lexicon;
  return quality(text, lexicon);
}

// ---------------------------------------------------------------------------
// Novelty and admission

namespace {

std::string normalized(std::string_view text) {
  std::string out;
  for (const auto& w : split_words(text)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace

double novelty(std::string_view text, const SpeciesEntry* entry, const TfIdfIndex& index) {
  if (entry == nullptr || entry->patterns.empty()) return 1.0;
  const std::string norm = normalized(text);
  const TermVector q = index.vectorize(text);
  double best = 0.0;
  for (const auto& p : entry->patterns) {
    // Exact restatements are never novel, even when a stale index cannot see their terms.
    if (normalized(p.text) == norm) return 0.0;
    best = std::max(best, cosine(q, index.vectorize(p.text)));
  }
  return std::clamp(1.0 - best, 0.0, 1.0);
}

ProposalResult evaluate_gate(const KnowledgeBase& kb, const std::string& species,
                             const std::string& raw_text, int iteration,
                             const ProposalOptions& opts) {
  static const GenericityLexicon default_lexicon;
  const GenericityLexicon& lexicon = opts.lexicon != nullptr ? *opts.lexicon : default_lexicon;
  const std::string text(trim(raw_text));
  const double q = text.empty() ? 0.0 : quality(text, lexicon);

  const SpeciesEntry* entry = kb.find(species);
  double n = 1.0;
  if (entry != nullptr && !entry->patterns.empty()) {
    if (opts.index != nullptr) {
      n = novelty(text, entry, *opts.index);
    } else {
      const TfIdfIndex fresh = build_index(kb);
      n = novelty(text, entry, fresh);
    }
  }

  const GateConfig& gate = kb.gate();
  if (!(q > gate.quality_threshold)) return Rejected{GateOutcome::low_quality, q, n};
  if (!(n > gate.novelty_threshold)) return Rejected{GateOutcome::low_novelty, q, n};

  PatternDescription p;
  p.text = text;
  p.species = species;
  p.provenance = Provenance::vlm_learned;
  p.quality = q;
  p.admission_novelty = n;
  p.created_iteration = iteration;
  p.source_digest = opts.source_digest;
  return Accepted{std::move(p)};
}

ProposalResult propose_pattern(KnowledgeBase& kb, const std::string& species,
                               const std::string& text, int iteration,
                               const ProposalOptions& opts) {
  auto result = evaluate_gate(kb, species, text, iteration, opts);
  if (auto* acc = std::get_if<Accepted>(&result)) {
    acc->pattern = kb.add_pattern(std::move(acc->pattern));
  }
  return result;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

json pattern_to_json(const PatternDescription& p) {
  json j = {{"id", p.id},
            {"text", p.text},
            {"provenance", std::string(to_string(p.provenance))},
            {"quality", p.quality},
            {"created_iteration", p.created_iteration}};
  j["admission_novelty"] = p.admission_novelty ? json(*p.admission_novelty) : json(nullptr);
  if (p.source_digest) j["source_digest"] = *p.source_digest;
  if (p.decision) {
    j["decision"] = {{"decided_by", p.decision->decided_by},
                     {"decided_at", p.decision->decided_at},
                     {"gate_verdict", std::string(to_string(p.decision->gate_verdict))},
                     {"action", p.decision->action}};
  }
  return j;
}

PatternDescription pattern_from_json(const json& j, const std::string& species, bool seed) {
  PatternDescription p;
  p.species = species;
  if (!j.contains("text") || !j["text"].is_string()) {
    throw ValidationError("pattern of '" + species + "' has no text");
  }
  p.text = j["text"].get<std::string>();
  if (j.contains("id") && !j["id"].is_null()) p.id = j["id"].get<std::string>();
  if (seed) {
    p.provenance = Provenance::fixed_seed;
    p.created_iteration = 0;
    return p;
  }
  p.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  p.quality = j.at("quality").get<double>();
  p.created_iteration = j.at("created_iteration").get<int>();
  if (j.contains("admission_novelty") && !j["admission_novelty"].is_null()) {
    p.admission_novelty = j["admission_novelty"].get<double>();
  }
  if (j.contains("source_digest") && !j["source_digest"].is_null()) {
    p.source_digest = j["source_digest"].get<std::string>();
  }
  if (j.contains("decision") && !j["decision"].is_null()) {
    const auto& d = j["decision"];
    p.decision = DecisionRecord{d.at("decided_by").get<std::string>(),
                                d.at("decided_at").get<std::int64_t>(),
                                gate_outcome_from_string(d.at("gate_verdict").get<std::string>()),
                                d.value("action", std::string("accept"))};
  }
  return p;
}

json parse_document(std::string_view text) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("knowledge base JSON parse error: ") + e.what());
  }
}

void check_version(const json& doc) {
  if (!doc.is_object()) throw ValidationError("knowledge base document must be an object");
  if (doc.contains("schema_version")) {
    const auto& v = doc["schema_version"];
    if (!v.is_number_integer() || v.get<int>() != KnowledgeBase::kSchemaVersion) {
      throw SchemaVersionError("unsupported schema_version " + v.dump() + " (expected " +
                               std::to_string(KnowledgeBase::kSchemaVersion) + ")");
    }
  }
}

GateConfig gate_from_json(const json& doc) {
  GateConfig g;
  if (doc.contains("gate")) {
    g.quality_threshold = doc["gate"].value("quality_threshold", g.quality_threshold);
    g.novelty_threshold = doc["gate"].value("novelty_threshold", g.novelty_threshold);
  }
  g.validate();
  return g;
}

}  // namespace

std::string to_json_string(const KnowledgeBase& kb) {
  json species = json::array();
  for (const auto& [name, entry] : kb.entries()) {
    json patterns = json::array();
    for (const auto& p : entry.patterns) patterns.push_back(pattern_to_json(p));
    species.push_back({{"name", name}, {"patterns", std::move(patterns)}});
  }
  json doc = {{"schema_version", KnowledgeBase::kSchemaVersion},
              {"revision", kb.revision()},
              {"gate",
               {{"quality_threshold", kb.gate().quality_threshold},
                {"novelty_threshold", kb.gate().novelty_threshold}}},
              {"species", std::move(species)}};
  return doc.dump(2) + "\n";
}

KnowledgeBase from_json_string(std::string_view text) {
  const json doc = parse_document(text);
  check_version(doc);
  if (!doc.contains("schema_version")) throw SchemaVersionError("missing schema_version");
  try {
    KnowledgeBase kb(gate_from_json(doc));
    std::vector<PatternDescription> patterns;
    for (const auto& s : doc.at("species")) {
      const auto name = s.at("name").get<std::string>();
      kb.ensure_species(name);
      for (const auto& pj : s.value("patterns", json::array())) {
        auto p = pattern_from_json(pj, name, false);
        if (p.id.empty()) throw ValidationError("stored pattern without id");
        patterns.push_back(std::move(p));
      }
    }
    kb.add_patterns(std::move(patterns));
    kb.restore_revision(doc.value("revision", std::uint64_t{1}));
    return kb;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed knowledge base: ") + e.what());
  }
}

KnowledgeBase init_fixed_from_json(std::string_view text, const GenericityLexicon& lexicon) {
  const auto trimmed = trim(text);
  KnowledgeBase kb;
  if (trimmed.empty()) {
    kb.add_patterns({});
    return kb;
  }
  const json doc = parse_document(trimmed);
  check_version(doc);
  try {
    kb = KnowledgeBase(gate_from_json(doc));
    std::vector<PatternDescription> patterns;
    for (const auto& s : doc.value("species", json::array())) {
      const auto name = s.at("name").get<std::string>();
      for (const auto& pj : s.value("patterns", json::array())) {
        auto p = pattern_from_json(pj, name, true);
        p.quality = quality(p.text, lexicon);
        patterns.push_back(std::move(p));
      }
    }
    kb.add_patterns(std::move(patterns));
    return kb;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed seed file: ") + e.what());
  }
}

KnowledgeBase init_fixed(const std::filesystem::path& seed_file, const GenericityLexicon& lexicon) {
  return init_fixed_from_json(read_text_file(seed_file), lexicon);
}

void save(const KnowledgeBase& kb, const std::filesystem::path& path) {
  atomic_write_file(path, to_json_string(kb));
}

KnowledgeBase load(const std::filesystem::path& path) {
  return from_json_string(read_text_file(path));
}

KbStats stats(const KnowledgeBase& kb) {
  KbStats s;
  for (auto p : {Provenance::fixed_seed, Provenance::vlm_learned, Provenance::expert_edited}) {
    s.per_provenance[p] = 0;
  }
  for (const auto& [name, entry] : kb.entries()) {
    s.per_species[name] = entry.patterns.size();
    s.total_patterns += entry.patterns.size();
    for (const auto& p : entry.patterns) ++s.per_provenance[p.provenance];
  }
  return s;
}

}  // namespace skb
