#include "skb/similarity.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "skb/error.hpp"

namespace skb {

const std::vector<std::string>& default_english_stop_words() {
  // Standard English list; "s" is omitted because it doubles as the seconds unit.
  static const std::vector<std::string> words = {
      "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "your", "yours",
      "yourself", "yourselves", "he", "him", "his", "himself", "she", "her", "hers", "herself",
      "it", "its", "itself", "they", "them", "their", "theirs", "themselves", "what", "which",
      "who", "whom", "this", "that", "these", "those", "am", "is", "are", "was", "were", "be",
      "been", "being", "have", "has", "had", "having", "do", "does", "did", "doing", "a", "an",
      "the", "and", "but", "if", "or", "because", "as", "until", "while", "of", "at", "by",
      "for", "with", "about", "against", "between", "into", "through", "during", "before",
      "after", "above", "below", "to", "from", "up", "down", "in", "out", "on", "off", "over",
      "under", "again", "further", "then", "once", "here", "there", "when", "where", "why",
      "how", "all", "any", "both", "each", "few", "more", "most", "other", "some", "such", "no",
      "nor", "not", "only", "own", "same", "so", "than", "too", "very", "t", "can", "will",
      "just", "don", "should", "now", "d", "ll", "m", "o", "re", "ve", "y", "ain", "aren",
      "couldn", "didn", "doesn", "hadn", "hasn", "haven", "isn", "ma", "mightn", "mustn",
      "needn", "shan", "shouldn", "wasn", "weren", "won", "wouldn"};
  return words;
}

const std::vector<std::string>& default_domain_stop_words() {
  static const std::vector<std::string> words = {"sound", "call", "vocalization", "audio",
                                                 "spectrogram"};
  return words;
}

StopWords::StopWords() {
  words_.insert(default_english_stop_words().begin(), default_english_stop_words().end());
  words_.insert(default_domain_stop_words().begin(), default_domain_stop_words().end());
}

StopWords StopWords::from_files(const std::vector<std::filesystem::path>& paths) {
  std::set<std::string> words;
  for (const auto& path : paths) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read stop-word file " + path.string());
    std::string line;
    while (std::getline(in, line)) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      for (auto& w : split_words(line)) words.insert(std::move(w));
    }
  }
  return StopWords(std::move(words));
}

std::vector<std::string> split_words(std::string_view text) {
  auto alnum = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; };
  auto digit = [](char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; };
  std::vector<std::string> out;
  std::string cur;
  const std::size_t n = text.size();
  for (std::size_t i = 0; i < n; ++i) {
    const char c = text[i];
    if (alnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      continue;
    }
    const bool has_next = i + 1 < n;
    if (!cur.empty() && has_next) {
      if (c == '-' && alnum(text[i + 1])) {
        cur.push_back('-');
        continue;
      }
      if (c == '.' && digit(cur.back()) && digit(text[i + 1])) {
        cur.push_back('.');
        continue;
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

std::vector<std::string> tokenize(std::string_view text, const StopWords& stop, NgramRange range) {
  std::vector<std::string> words;
  for (auto& w : split_words(text)) {
    if (!stop.contains(w)) words.push_back(std::move(w));
  }
  std::vector<std::string> out;
  for (int n = std::max(1, range.min_n); n <= range.max_n; ++n) {
    const auto un = static_cast<std::size_t>(n);
    for (std::size_t i = 0; i + un <= words.size(); ++i) {
      std::string gram = words[i];
      for (std::size_t j = 1; j < un; ++j) {
        gram.push_back(' ');
        gram += words[i + j];
      }
      out.push_back(std::move(gram));
    }
  }
  return out;
}

double cosine(const TermVector& a, const TermVector& b) {
  if (a.norm == 0.0 || b.norm == 0.0) return 0.0;
  double dot = 0.0;
  auto ia = a.entries.begin();
  auto ib = b.entries.begin();
  while (ia != a.entries.end() && ib != b.entries.end()) {
    if (ia->first < ib->first) {
      ++ia;
    } else if (ib->first < ia->first) {
      ++ib;
    } else {
      dot += ia->second * ib->second;
      ++ia;
      ++ib;
    }
  }
  return std::clamp(dot / (a.norm * b.norm), 0.0, 1.0);
}

double diversity(const std::vector<TermVector>& vectors) {
  const std::size_t m = vectors.size();
  if (m < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = i + 1; j < m; ++j) sum += 1.0 - cosine(vectors[i], vectors[j]);
  }
  return sum / static_cast<double>(m * (m - 1) / 2);
}

double TfIdfIndex::idf_of(std::string_view term) const {
  auto it = vocabulary_.find(std::string(term));
  return it == vocabulary_.end() ? 0.0 : idf_[static_cast<std::size_t>(it->second)];
}

TermVector TfIdfIndex::vectorize(std::string_view text) const {
  std::map<int, double> counts;
  for (const auto& term : tokenize(text, *stop_, range_)) {
    auto it = vocabulary_.find(term);
    if (it != vocabulary_.end()) counts[it->second] += 1.0;
  }
  TermVector v;
  v.entries.reserve(counts.size());
  double sq = 0.0;
  for (const auto& [col, count] : counts) {
    const double w = count * idf_[static_cast<std::size_t>(col)];
    v.entries.emplace_back(col, w);
    sq += w * w;
  }
  v.norm = std::sqrt(sq);
  return v;
}

const std::vector<TermVector>* TfIdfIndex::species_vectors(std::string_view species) const {
  auto it = doc_vectors_.find(species);
  return it == doc_vectors_.end() ? nullptr : &it->second;
}

double TfIdfIndex::species_diversity(std::string_view species) const {
  auto it = diversity_.find(species);
  return it == diversity_.end() ? 0.0 : it->second;
}

TfIdfIndex build_index(const KnowledgeBase& kb, std::shared_ptr<const StopWords> stop,
                       NgramRange range) {
  if (kb.total_patterns() == 0) throw EmptyKnowledgeBaseError();
  if (!stop) stop = std::make_shared<StopWords>();
  TfIdfIndex index;
  index.stop_ = stop;
  index.range_ = range;
  index.kb_revision_ = kb.revision();

  std::map<std::string, std::size_t> df;
  for (const auto& [species, entry] : kb.entries()) {
    for (const auto& p : entry.patterns) {
      auto terms = tokenize(p.text, *stop, range);
      std::sort(terms.begin(), terms.end());
      terms.erase(std::unique(terms.begin(), terms.end()), terms.end());
      for (auto& t : terms) ++df[t];
      ++index.doc_count_;
    }
  }
  // Column ids follow lexicographic term order so vectors do not depend on
  // the order documents were added.
  const double n = static_cast<double>(index.doc_count_);
  for (const auto& [term, count] : df) {
    index.vocabulary_.emplace(term, static_cast<int>(index.terms_.size()));
    index.terms_.push_back(term);
    index.idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
  }

  std::vector<const SpeciesEntry*> entries;
  for (const auto& [species, entry] : kb.entries()) {
    entries.push_back(&entry);
    index.doc_vectors_[species];
    index.diversity_[species] = 0.0;
  }
  std::vector<std::vector<TermVector>> vecs(entries.size());
  std::vector<double> div(entries.size(), 0.0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t s = 0; s < entries.size(); ++s) {
    auto& out = vecs[s];
    out.reserve(entries[s]->patterns.size());
    for (const auto& p : entries[s]->patterns) out.push_back(index.vectorize(p.text));
    div[s] = diversity(out);
  }
  for (std::size_t s = 0; s < entries.size(); ++s) {
    index.doc_vectors_[entries[s]->species] = std::move(vecs[s]);
    index.diversity_[entries[s]->species] = div[s];
  }
  return index;
}

namespace {

void check_pinned(const TfIdfIndex& index, const KnowledgeBase& kb) {
  if (kb.total_patterns() == 0) throw EmptyKnowledgeBaseError();
  if (index.kb_revision() != kb.revision()) {
    throw ValidationError("similarity index revision " + std::to_string(index.kb_revision()) +
                          " does not match knowledge base revision " +
                          std::to_string(kb.revision()));
  }
}

SpeciesScore score_one(const std::string& species, const std::vector<TermVector>& vecs,
                       double div, const TermVector& q) {
  SpeciesScore s;
  s.species = species;
  s.pattern_count = vecs.size();
  if (vecs.empty()) return s;
  double sum = 0.0;
  for (const auto& v : vecs) {
    const double sim = cosine(q, v);
    s.max_sim = std::max(s.max_sim, sim);
    sum += sim;
  }
  s.mean_sim = std::min(sum / static_cast<double>(vecs.size()), s.max_sim);
  s.diversity = div;
  s.total = aggregate_score(s.max_sim, s.mean_sim, s.diversity);
  return s;
}

}  // namespace

std::vector<SpeciesScore> species_scores(const TfIdfIndex& index, const KnowledgeBase& kb,
                                         std::string_view query) {
  check_pinned(index, kb);
  const TermVector q = index.vectorize(query);
  std::vector<const SpeciesEntry*> entries;
  for (const auto& [species, entry] : kb.entries()) entries.push_back(&entry);
  std::vector<SpeciesScore> out(entries.size());
  static const std::vector<TermVector> kNone;
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto* vecs = index.species_vectors(entries[i]->species);
    out[i] = score_one(entries[i]->species, vecs != nullptr ? *vecs : kNone,
                       index.species_diversity(entries[i]->species), q);
  }
  return out;
}

std::vector<SpeciesScore> species_scores_serial(const TfIdfIndex& index, const KnowledgeBase& kb,
                                                std::string_view query) {
  check_pinned(index, kb);
  const TermVector q = index.vectorize(query);
  std::vector<SpeciesScore> out;
  for (const auto& [species, entry] : kb.entries()) {
    std::vector<TermVector> vecs;
    for (const auto& p : entry.patterns) vecs.push_back(index.vectorize(p.text));
    out.push_back(score_one(species, vecs, diversity(vecs), q));
  }
  return out;
}

void rank_scores(std::vector<SpeciesScore>& scores) {
  std::stable_sort(scores.begin(), scores.end(), [](const SpeciesScore& a, const SpeciesScore& b) {
    if (a.total != b.total) return a.total > b.total;
    return a.species < b.species;
  });
}

ClassificationResult classify(const TfIdfIndex& index, const KnowledgeBase& kb,
                              std::string_view query) {
  ClassificationResult r;
  r.ranked = species_scores(index, kb, query);
  rank_scores(r.ranked);
  r.predicted = r.ranked.front().species;
  r.query_pattern = std::string(query);
  r.kb_revision = kb.revision();
  return r;
}

}  // namespace skb
