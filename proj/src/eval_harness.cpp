#include "skb/eval_harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "skb/error.hpp"
#include "skb/parallel.hpp"
#include "skb/random.hpp"
#include "skb/similarity.hpp"

namespace skb {

using json = nlohmann::json;

namespace {

constexpr std::uint64_t kTaskStream = 0x7A5CULL;
constexpr std::uint64_t kMockStream = 0x40C6ULL;

struct TestItem {
  const DatasetEntry* entry = nullptr;
  std::string query;  // extracted pattern (fixed / progressive)
  std::optional<std::string> direct_label;  // vanilla answer
  bool unparsed = false;
  bool failed = false;
};

int label_index(const std::vector<std::string>& labels, const std::string& s) {
  const auto it = std::lower_bound(labels.begin(), labels.end(), s);
  return it != labels.end() && *it == s ? static_cast<int>(it - labels.begin()) : -1;
}

std::vector<std::vector<std::size_t>> empty_confusion(std::size_t n) {
  return std::vector<std::vector<std::size_t>>(n, std::vector<std::size_t>(n, 0));
}

double accuracy_of(const std::vector<std::vector<std::size_t>>& c) {
  std::size_t total = 0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < c.size(); ++j) total += c[i][j];
    hit += c[i][i];
  }
  return total > 0 ? static_cast<double>(hit) / static_cast<double>(total) : 0.0;
}

/// Classifies every extracted test query against kb (direct answers for vanilla).
std::vector<std::vector<std::size_t>> confusion_for(const std::vector<TestItem>& items,
                                                    const std::vector<std::string>& labels,
                                                    const KnowledgeBase* kb,
                                                    const TfIdfIndex* index) {
  auto c = empty_confusion(labels.size());
  for (const auto& it : items) {
    if (it.failed) continue;
    std::string predicted;
    if (it.direct_label) {
      predicted = *it.direct_label;
    } else {
      predicted = classify(*index, *kb, it.query).predicted;
    }
    const int t = label_index(labels, it.entry->species);
    const int p = label_index(labels, predicted);
    if (t >= 0 && p >= 0) ++c[static_cast<std::size_t>(t)][static_cast<std::size_t>(p)];
  }
  return c;
}

std::string fmt(double v, int prec = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v, int prec = 4) { return v ? fmt(*v, prec) : ""; }

json config_json(const ExperimentConfig& c) {
  json j = {{"n_way", c.n_way},
            {"samples_per_round", c.samples_per_round},
            {"system", std::string(to_string(c.system))},
            {"iterations", c.iterations},
            {"rng_seed", c.rng_seed},
            {"split_fraction", c.split_fraction},
            {"stft", {{"window_len", c.stft.window_len}, {"hop_len", c.stft.hop_len}}}};
  if (c.gate) {
    j["gate"] = {{"quality_threshold", c.gate->quality_threshold},
                 {"novelty_threshold", c.gate->novelty_threshold}};
  }
  return j;
}

}  // namespace

std::string_view to_string(SystemKind s) {
  switch (s) {
    case SystemKind::vanilla:
      return "vanilla";
    case SystemKind::fixed:
      return "fixed";
    case SystemKind::progressive:
      return "progressive";
  }
  return "";
}

SystemKind system_kind_from_string(std::string_view s) {
  if (s == "vanilla") return SystemKind::vanilla;
  if (s == "fixed") return SystemKind::fixed;
  if (s == "progressive") return SystemKind::progressive;
  throw ConfigError("unknown system '" + std::string(s) + "'");
}

void ExperimentConfig::validate() const {
  if (n_way < 2) throw ConfigError("n_way must be >= 2");
  if (samples_per_round < 1) throw ConfigError("samples per round must be >= 1");
  if (iterations < 0) throw ConfigError("iterations must be >= 0");
  if (!(split_fraction > 0.0 && split_fraction < 1.0)) {
    throw ConfigError("split fraction must be in (0, 1)");
  }
  if (gate) gate->validate();
  stft.validate();
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentInputs& in) {
  cfg.validate();
  ExperimentResult res;
  res.config = cfg;

  const auto all_species = species_of(in.entries);
  if (static_cast<std::size_t>(cfg.n_way) > all_species.size()) {
    throw ConfigError("n_way " + std::to_string(cfg.n_way) + " exceeds the " +
                      std::to_string(all_species.size()) + " species in the manifest");
  }
  if (static_cast<std::size_t>(cfg.n_way) == all_species.size()) {
    res.species = all_species;
  } else {
    Rng rng(derive_seed(cfg.rng_seed, {kTaskStream}));
    for (auto i : rng.sample_without_replacement(all_species.size(), static_cast<std::size_t>(cfg.n_way))) {
      res.species.push_back(all_species[i]);
    }
    std::sort(res.species.begin(), res.species.end());
  }

  std::vector<DatasetEntry> task;
  for (const auto& e : in.entries) {
    if (std::binary_search(res.species.begin(), res.species.end(), e.species)) task.push_back(e);
  }
  const DataSplit split = split_time_based(std::move(task), cfg.split_fraction);
  if (split.test.empty()) throw ValidationError("empty test split");

  std::set<std::string> train_digests;
  for (const auto& e : split.train) train_digests.insert(in.cache->audio_digest(e.audio_path));
  for (const auto& e : split.test) {
    if (train_digests.count(in.cache->audio_digest(e.audio_path)) > 0) ++res.leaked_digests;
  }

  BackendConfig bcfg = in.backend;
  bcfg.mock_seed = derive_seed(in.backend.mock_seed, {kMockStream, cfg.rng_seed});
  Gateway gateway(bcfg, in.transport);
  const int threads = bcfg.kind == BackendKind::mock ? 0 : std::max(1, bcfg.max_in_flight);

  // Test-side backend work is independent of the KB, so it happens once.
  std::vector<TestItem> items(split.test.size());
  for (std::size_t i = 0; i < items.size(); ++i) items[i].entry = &split.test[i];
  const bool direct = cfg.system == SystemKind::vanilla;
  parallel_for(items.size(), threads, [&](std::size_t i) {
    TestItem& it = items[i];
    try {
      auto img = in.cache->get(it.entry->audio_path, cfg.stft, cfg.image_width, cfg.image_height);
      if (direct) {
        auto d = gateway.classify_direct(img->image, res.species, in.direct_prompt);
        it.direct_label = d.label;
        it.unparsed = d.unparsed;
      } else {
        it.query = gateway.extract_pattern(img->image, in.extract_prompt).text;
      }
    } catch (const std::exception&) {
      it.failed = true;
    }
  });
  res.test_items = items.size();
  res.backend_calls = items.size();
  for (const auto& it : items) {
    res.backend_failures += it.failed ? 1 : 0;
    res.unparsed_answers += it.unparsed ? 1 : 0;
  }
  auto over_budget = [&] {
    return static_cast<double>(res.backend_failures) >
           kFailureBudget * static_cast<double>(res.backend_calls);
  };
  auto mark_over_budget = [&] {
    res.partial = true;
    res.failure = "backend failures " + std::to_string(res.backend_failures) + "/" +
                  std::to_string(res.backend_calls) + " exceed the failure budget";
  };

  KnowledgeBase kb;
  if (!direct) {
    kb = in.seed_kb.restricted_to(res.species);
    if (cfg.gate) kb.set_gate(*cfg.gate);
  }
  std::optional<TfIdfIndex> index;
  auto record_point = [&](int iteration) {
    if (!direct && kb.total_patterns() > 0 && (!index || index->kb_revision() != kb.revision())) {
      index = build_index(kb, in.stop_words);
    }
    std::vector<std::vector<std::size_t>> c;
    if (direct || kb.total_patterns() > 0) {
      c = confusion_for(items, res.species, &kb, index ? &*index : nullptr);
    } else {
      c = empty_confusion(res.species.size());
    }
    res.learning_curve.push_back({iteration, kb.total_patterns(), accuracy_of(c)});
    res.confusion = std::move(c);
  };

  if (over_budget()) {
    mark_over_budget();
  } else if (direct) {
    record_point(0);
  } else if (cfg.system == SystemKind::fixed) {
    for (int t = 0; t <= cfg.iterations; ++t) record_point(t);
  } else {
    record_point(0);
    LearnConfig lc;
    lc.iterations = cfg.iterations;
    lc.samples_per_species = cfg.samples_per_round;
    lc.rng_seed = cfg.rng_seed;
    lc.stft = cfg.stft;
    lc.image_width = cfg.image_width;
    lc.image_height = cfg.image_height;
    LearnContext ctx(gateway, *in.cache);
    ctx.prompt = in.extract_prompt;
    ctx.lexicon = in.lexicon;
    ctx.stop_words = in.stop_words;
    ctx.index = index;
    for (int t = 1; t <= cfg.iterations; ++t) {
      IterationReport rep;
      bool failed = false;
      try {
        rep = run_iteration(kb, split.train, lc, t, ctx);
      } catch (const IterationFailed& ex) {
        rep = ex.partial();
        res.failure = ex.what();
        failed = true;
      }
      res.backend_calls += rep.proposals.size();
      res.backend_failures += rep.failed;
      res.learning_reports.push_back(std::move(rep));
      index = ctx.index;
      record_point(t);
      if (failed || over_budget()) {
        if (!res.failure) mark_over_budget();
        res.partial = true;
        break;
      }
    }
  }

  if (res.confusion.empty()) res.confusion = empty_confusion(res.species.size());
  res.accuracy = accuracy_of(res.confusion);
  for (std::size_t i = 0; i < res.species.size(); ++i) {
    std::size_t row = 0;
    for (auto v : res.confusion[i]) row += v;
    res.per_species_accuracy[res.species[i]] =
        row > 0 ? static_cast<double>(res.confusion[i][i]) / static_cast<double>(row) : 0.0;
  }
  res.pattern_count_final = kb.total_patterns();
  for (const auto& [name, entry] : kb.entries()) {
    for (const auto& p : entry.patterns) {
      if (p.provenance != Provenance::vlm_learned) continue;
      if (!p.source_digest || train_digests.count(*p.source_digest) == 0) ++res.learned_off_train;
    }
  }
  return res;
}

std::string result_to_json(const ExperimentResult& r) {
  json curve = json::array();
  for (const auto& p : r.learning_curve) {
    curve.push_back({{"iteration", p.iteration}, {"kb_size", p.kb_size}, {"running_accuracy", p.running_accuracy}});
  }
  json j = {{"config", config_json(r.config)},
            {"species", r.species},
            {"accuracy", r.accuracy},
            {"per_species_accuracy", r.per_species_accuracy},
            {"pattern_count_final", r.pattern_count_final},
            {"learning_curve", curve},
            {"confusion", r.confusion},
            {"test_items", r.test_items},
            {"backend_calls", r.backend_calls},
            {"backend_failures", r.backend_failures},
            {"unparsed_answers", r.unparsed_answers},
            {"leaked_digests", r.leaked_digests},
            {"learned_off_train", r.learned_off_train},
            {"partial", r.partial}};
  j["failure"] = r.failure ? json(*r.failure) : json(nullptr);
  return j.dump(2);
}

std::vector<ExperimentConfig> expand_grid(const GridSpec& spec) {
  if (spec.systems.empty() || spec.n_ways.empty() || spec.ks.empty() || spec.seeds.empty()) {
    throw ConfigError("grid needs at least one system, n_way, k and seed");
  }
  std::vector<ExperimentConfig> out;
  for (int n : spec.n_ways) {
    for (int k : spec.ks) {
      for (auto sys : spec.systems) {
        for (auto seed : spec.seeds) {
          ExperimentConfig c = spec.base;
          c.n_way = n;
          c.samples_per_round = k;
          c.system = sys;
          c.rng_seed = seed;
          out.push_back(c);
        }
      }
    }
  }
  return out;
}

CellSummary summarize_runs(const std::vector<double>& accuracies,
                          const std::vector<std::size_t>& pattern_counts) {
  CellSummary s;
  s.runs = accuracies.size();
  if (accuracies.empty()) return s;
  double sum = 0.0;
  double patterns = 0.0;
  for (std::size_t i = 0; i < accuracies.size(); ++i) {
    sum += accuracies[i];
    if (i < pattern_counts.size()) patterns += static_cast<double>(pattern_counts[i]);
  }
  const double n = static_cast<double>(accuracies.size());
  s.mean = sum / n;
  s.mean_patterns = patterns / n;
  if (accuracies.size() > 1) {
    double ss = 0.0;
    for (double a : accuracies) ss += (a - s.mean) * (a - s.mean);
    s.std = std::sqrt(ss / (n - 1.0));
  }
  return s;
}

std::optional<double> relative_improvement_pct(double vanilla, double augmented) {
  if (!(vanilla > 0.0)) return std::nullopt;
  return 100.0 * (augmented - vanilla) / vanilla;
}

GridSummary run_grid(const std::vector<ExperimentConfig>& configs, const ExperimentInputs& in) {
  if (configs.empty()) throw ConfigError("grid has no configurations");
  const auto n_species = species_of(in.entries).size();
  for (const auto& c : configs) {
    c.validate();
    if (static_cast<std::size_t>(c.n_way) > n_species) {
      throw ConfigError("n_way " + std::to_string(c.n_way) + " exceeds the " +
                        std::to_string(n_species) + " species in the manifest");
    }
  }

  GridSummary g;
  g.results.resize(configs.size());
  std::vector<std::string> errors(configs.size());
  parallel_for(configs.size(), 0, [&](std::size_t i) {
    try {
      g.results[i] = run_experiment(configs[i], in);
    } catch (const std::exception& ex) {
      errors[i] = ex.what();
    }
  });
  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (!errors[i].empty()) {
      g.results[i].config = configs[i];
      g.results[i].partial = true;
      g.results[i].failure = errors[i];
    }
  }

  std::map<std::pair<int, int>, std::map<SystemKind, std::vector<const ExperimentResult*>>> cells;
  for (const auto& r : g.results) {
    cells[{r.config.n_way, r.config.samples_per_round}][r.config.system].push_back(&r);
  }
  for (const auto& [key, systems] : cells) {
    GridRow row;
    row.n_way = key.first;
    row.k = key.second;
    for (const auto& [sys, runs] : systems) {
      std::vector<double> accs;
      std::vector<std::size_t> patterns;
      for (const auto* r : runs) {
        accs.push_back(r->accuracy);
        patterns.push_back(r->pattern_count_final);
      }
      row.cells[sys] = summarize_runs(accs, patterns);
    }
    const auto v = row.cells.find(SystemKind::vanilla);
    const auto p = row.cells.find(SystemKind::progressive);
    if (v != row.cells.end() && p != row.cells.end()) {
      row.improvement_abs = p->second.mean - v->second.mean;
      row.improvement_rel_pct = relative_improvement_pct(v->second.mean, p->second.mean);
    }
    g.rows.push_back(std::move(row));
  }

  std::vector<double> counts;
  std::vector<double> accs;
  std::map<std::tuple<int, int, std::uint64_t>, double> vanilla_by_run;
  for (const auto& r : g.results) {
    if (r.config.system == SystemKind::vanilla) {
      vanilla_by_run[{r.config.n_way, r.config.samples_per_round, r.config.rng_seed}] = r.accuracy;
    }
  }
  std::vector<double> pv;
  std::vector<double> pp;
  for (const auto& r : g.results) {
    if (r.config.system != SystemKind::progressive) continue;
    counts.push_back(static_cast<double>(r.pattern_count_final));
    accs.push_back(r.accuracy);
    const auto it = vanilla_by_run.find({r.config.n_way, r.config.samples_per_round, r.config.rng_seed});
    if (it != vanilla_by_run.end()) {
      pv.push_back(it->second);
      pp.push_back(r.accuracy);
    }
  }
  g.pattern_accuracy_r = correlation(counts, accs);
  if (pv.size() >= 5) g.hypothesis = hypothesis_test(pv, pp);
  return g;
}

std::string summary_csv(const GridSummary& g) {
  std::ostringstream os;
  os << "n_way,k,vanilla_runs,vanilla_mean,vanilla_std,fixed_runs,fixed_mean,fixed_std,"
        "progressive_runs,progressive_mean,progressive_std,fixed_patterns,progressive_patterns,"
        "improvement_rel_pct,improvement_abs\n";
  for (const auto& row : g.rows) {
    os << row.n_way << ',' << row.k;
    for (auto sys : {SystemKind::vanilla, SystemKind::fixed, SystemKind::progressive}) {
      const auto it = row.cells.find(sys);
      if (it == row.cells.end()) {
        os << ",,,";
      } else {
        os << ',' << it->second.runs << ',' << fmt(it->second.mean) << ',' << fmt(it->second.std);
      }
    }
    for (auto sys : {SystemKind::fixed, SystemKind::progressive}) {
      const auto it = row.cells.find(sys);
      os << ',' << (it == row.cells.end() ? "" : fmt(it->second.mean_patterns, 2));
    }
    os << ',' << fmt_opt(row.improvement_rel_pct, 2) << ',' << fmt_opt(row.improvement_abs) << '\n';
  }
  return os.str();
}

std::string summary_table(const GridSummary& g) {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"n-way", "K", "vanilla", "fixed", "progressive", "patterns", "improvement"});
  for (const auto& row : g.rows) {
    std::vector<std::string> line{std::to_string(row.n_way), std::to_string(row.k)};
    for (auto sys : {SystemKind::vanilla, SystemKind::fixed, SystemKind::progressive}) {
      const auto it = row.cells.find(sys);
      line.push_back(it == row.cells.end()
                         ? "-"
                         : fmt(100.0 * it->second.mean, 1) + " +/- " + fmt(100.0 * it->second.std, 1));
    }
    const auto p = row.cells.find(SystemKind::progressive);
    line.push_back(p == row.cells.end() ? "-" : fmt(p->second.mean_patterns, 1));
    std::string imp = "-";
    if (row.improvement_abs) {
      imp = (row.improvement_rel_pct ? fmt(*row.improvement_rel_pct, 1) + "% / " : std::string("n/a / ")) +
            fmt(100.0 * *row.improvement_abs, 1) + " pts";
    }
    line.push_back(imp);
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> widths(cells.front().size(), 0);
  for (const auto& line : cells) {
    for (std::size_t i = 0; i < line.size(); ++i) widths[i] = std::max(widths[i], line[i].size());
  }
  std::ostringstream os;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t i = 0; i < cells[r].size(); ++i) {
      if (i > 0) os << "  ";
      const auto& s = cells[r][i];
      if (i < 2) {
        os << std::string(widths[i] - s.size(), ' ') << s;
      } else {
        os << s << std::string(widths[i] - s.size(), ' ');
      }
    }
    os << '\n';
    if (r == 0) {
      std::size_t total = 0;
      for (auto w : widths) total += w;
      os << std::string(total + 2 * (widths.size() - 1), '-') << '\n';
    }
  }
  os << "pattern count vs accuracy r: "
     << (g.pattern_accuracy_r ? fmt(*g.pattern_accuracy_r, 3) : std::string("undefined")) << '\n';
  if (g.hypothesis) {
    os << "progressive > vanilla: mean diff " << fmt(g.hypothesis->mean_diff) << ", p = "
       << fmt(g.hypothesis->p_value, 5) << (g.hypothesis->reject_h0 ? " (reject H0)" : " (keep H0)")
       << '\n';
  }
  return os.str();
}

std::string summary_json(const GridSummary& g) {
  json rows = json::array();
  for (const auto& row : g.rows) {
    json cells = json::object();
    for (const auto& [sys, c] : row.cells) {
      cells[std::string(to_string(sys))] = {
          {"runs", c.runs}, {"mean", c.mean}, {"std", c.std}, {"mean_patterns", c.mean_patterns}};
    }
    json jr = {{"n_way", row.n_way}, {"k", row.k}, {"systems", cells}};
    jr["improvement_rel_pct"] = row.improvement_rel_pct ? json(*row.improvement_rel_pct) : json(nullptr);
    jr["improvement_abs"] = row.improvement_abs ? json(*row.improvement_abs) : json(nullptr);
    rows.push_back(jr);
  }
  json j = {{"rows", rows}};
  j["pattern_accuracy_r"] = g.pattern_accuracy_r ? json(*g.pattern_accuracy_r) : json(nullptr);
  if (g.hypothesis) {
    j["hypothesis"] = {{"mean_diff", g.hypothesis->mean_diff},
                       {"p_value", g.hypothesis->p_value},
                       {"reject_h0", g.hypothesis->reject_h0},
                       {"exact", g.hypothesis->exact}};
  } else {
    j["hypothesis"] = nullptr;
  }
  json partial = json::array();
  for (const auto& r : g.results) {
    if (r.partial) {
      partial.push_back({{"config", config_json(r.config)}, {"failure", r.failure.value_or("")}});
    }
  }
  j["partial_runs"] = partial;
  return j.dump(2);
}

}  // namespace skb
