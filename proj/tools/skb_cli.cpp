#include <CLI11.hpp>

#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "skb/curation_service.hpp"
#include "skb/dataset.hpp"
#include "skb/eval_harness.hpp"
#include "skb/io.hpp"
#include "skb/knowledge_base.hpp"
#include "skb/progressive_learner.hpp"
#include "skb/similarity.hpp"
#include "skb/spectro.hpp"
#include "skb/synthetic.hpp"
#include "skb/vlm_gateway.hpp"

namespace {

struct BackendFlags {
  std::string kind = "mock";
  std::string endpoint;
  std::string model = "Qwen2.5-VL-7B-Instruct";
  double timeout_s = 60.0;
  int retries = 2;
  int max_in_flight = 4;
  bool verbose = false;

  void add_to(CLI::App* app) {
    app->add_option("--backend", kind, "mock or http")->check(CLI::IsMember({"mock", "http"}));
    app->add_option("--endpoint", endpoint, "OpenAI-compatible base URL, e.g. http://127.0.0.1:8000/v1");
    app->add_option("--model", model, "Model name sent to the endpoint");
    app->add_option("--timeout", timeout_s, "Per-request timeout in seconds");
    app->add_option("--retries", retries, "Retries after a failed request");
    app->add_option("--max-in-flight", max_in_flight, "Concurrent backend requests");
    app->add_flag("--verbose", verbose, "Log backend requests (API key redacted)");
  }

  skb::BackendConfig config() const {
    skb::BackendConfig c;
    c.kind = skb::backend_kind_from_string(kind);
    c.endpoint_url = endpoint;
    c.model_name = model;
    c.timeout_s = timeout_s;
    c.max_retries = retries;
    c.max_in_flight = max_in_flight;
    c.verbose = verbose;
    c.validate();
    return c;
  }
};

void log_stderr(std::string_view msg) { std::cerr << msg << '\n'; }

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto t = skb::trim(item);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

template <class T>
std::vector<T> parse_numbers(const std::string& s) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) {
    std::size_t pos = 0;
    const auto v = std::stoull(item, &pos);
    if (pos != item.size()) throw skb::ConfigError("not a number: '" + item + "'");
    out.push_back(static_cast<T>(v));
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-augmented bioacoustic classification toolkit"};
  app.require_subcommand(1);
  int exit_code = 0;

  // spectro render ----------------------------------------------------------
  auto* spectro = app.add_subcommand("spectro", "Spectrogram utilities");
  spectro->require_subcommand(1);
  auto* render = spectro->add_subcommand("render", "Render a WAV file to a grayscale PNG");
  std::string render_in;
  std::string render_out;
  skb::StftConfig stft;
  int width = 512;
  int height = 512;
  render->add_option("input", render_in, "16-bit PCM WAV")->required()->check(CLI::ExistingFile);
  render->add_option("--out", render_out, "PNG output path")->required();
  render->add_option("--window", stft.window_len, "STFT window length (power of two)");
  render->add_option("--hop", stft.hop_len, "STFT hop length");
  render->add_option("--width", width, "Image width");
  render->add_option("--height", height, "Image height");
  render->callback([&] {
    const auto clip = skb::load_audio(render_in);
    const auto image = skb::render_spectrogram(skb::compute_spectrogram(clip, stft), width, height);
    std::ofstream out(render_out, std::ios::binary);
    if (!out) throw skb::Error("cannot write " + render_out);
    out.write(reinterpret_cast<const char*>(image.png.data()), static_cast<std::streamsize>(image.png.size()));
    std::cout << render_out << ": " << image.width << "x" << image.height << ", "
              << image.freq_span_hz << " Hz x " << image.time_span_s << " s\n";
  });

  // kb ----------------------------------------------------------------------
  auto* kbcmd = app.add_subcommand("kb", "Knowledge base files");
  kbcmd->require_subcommand(1);
  auto* kb_init = kbcmd->add_subcommand("init", "Build a KB from a seed pattern file");
  std::string seed_path;
  std::string kb_out;
  kb_init->add_option("--seed", seed_path, "Seed file (schema_version 1)")->required()->check(CLI::ExistingFile);
  kb_init->add_option("--out", kb_out, "KB output path")->required();
  kb_init->callback([&] {
    const auto kb = skb::init_fixed(seed_path);
    skb::save(kb, kb_out);
    std::cout << kb_out << ": " << kb.total_patterns() << " patterns, " << kb.entries().size()
              << " species\n";
  });
  auto* kb_stats = kbcmd->add_subcommand("stats", "Pattern counts per species and provenance");
  std::string stats_path;
  kb_stats->add_option("kb", stats_path, "KB file")->required()->check(CLI::ExistingFile);
  kb_stats->callback([&] {
    const auto kb = skb::load(stats_path);
    const auto s = skb::stats(kb);
    std::cout << "revision " << kb.revision() << ", " << s.total_patterns << " patterns\n";
    for (const auto& [sp, n] : s.per_species) std::cout << "  " << sp << ": " << n << '\n';
    for (const auto& [p, n] : s.per_provenance) std::cout << "  [" << skb::to_string(p) << "] " << n << '\n';
  });

  // classify ----------------------------------------------------------------
  auto* classify = app.add_subcommand("classify", "Rank species for a pattern description");
  std::vector<std::string> query_args;
  std::string classify_kb;
  std::size_t top = 5;
  bool explain = false;
  classify->add_option("query", query_args, "Pattern file, or the text itself after --")->required();
  classify->add_option("--kb", classify_kb, "KB file")->required()->check(CLI::ExistingFile);
  classify->add_option("--top", top, "Species to list");
  classify->add_flag("--explain", explain, "Show max/mean/diversity per species");
  classify->callback([&] {
    std::string text;
    if (query_args.size() == 1 && std::filesystem::is_regular_file(query_args[0])) {
      text = skb::read_text_file(query_args[0]);
    } else {
      for (const auto& a : query_args) text += (text.empty() ? "" : " ") + a;
    }
    const auto kb = skb::load(classify_kb);
    const auto index = skb::build_index(kb);
    const auto r = skb::classify(index, kb, text);
    std::cout << r.predicted << '\n';
    for (std::size_t i = 0; i < r.ranked.size() && i < top; ++i) {
      const auto& s = r.ranked[i];
      char line[256];
      if (explain) {
        std::snprintf(line, sizeof line, "%2zu. %-32s %.4f  (max %.4f, mean %.4f, diversity %.4f, n=%zu)",
                      i + 1, s.species.c_str(), s.total, s.max_sim, s.mean_sim, s.diversity,
                      s.pattern_count);
      } else {
        std::snprintf(line, sizeof line, "%2zu. %-32s %.4f", i + 1, s.species.c_str(), s.total);
      }
      std::cout << line << '\n';
    }
  });

  // learn -------------------------------------------------------------------
  auto* learn = app.add_subcommand("learn", "Grow a KB from training audio (autonomous)");
  std::string learn_kb;
  std::string learn_manifest;
  std::string learn_out;
  std::string learn_report;
  skb::LearnConfig lc;
  std::size_t species_sample = 0;
  BackendFlags learn_backend;
  double theta_q = -1.0;
  double theta_n = -1.0;
  learn->add_option("--kb", learn_kb, "Starting KB file")->required()->check(CLI::ExistingFile);
  learn->add_option("--manifest", learn_manifest, "Training manifest CSV")->required()->check(CLI::ExistingFile);
  learn->add_option("--iterations", lc.iterations, "Learning iterations T");
  learn->add_option("--k", lc.samples_per_species, "Clips per species per iteration");
  learn->add_option("--seed", lc.rng_seed, "RNG seed");
  learn->add_option("--species-sample", species_sample, "Species per iteration (0 = all)");
  learn->add_option("--quality-threshold", theta_q, "Override the KB's quality threshold");
  learn->add_option("--novelty-threshold", theta_n, "Override the KB's novelty threshold");
  learn->add_option("--out", learn_out, "Output KB path")->required();
  learn->add_option("--report", learn_report, "Iteration report JSON path");
  learn_backend.add_to(learn);
  learn->callback([&] {
    auto kb = skb::load(learn_kb);
    const auto entries = skb::load_manifest(learn_manifest);
    if (species_sample > 0) lc.species_sample_size = species_sample;
    if (theta_q >= 0.0 || theta_n >= 0.0) {
      skb::GateConfig g = kb.gate();
      if (theta_q >= 0.0) g.quality_threshold = theta_q;
      if (theta_n >= 0.0) g.novelty_threshold = theta_n;
      lc.gate = g;
    }
    skb::Gateway gateway(learn_backend.config());
    gateway.set_logger(log_stderr);
    skb::SpectrogramCache cache;
    skb::LearnContext ctx(gateway, cache);
    auto outcome = skb::run(std::move(kb), entries, lc, ctx);
    skb::save(outcome.kb, learn_out);
    if (!learn_report.empty()) skb::atomic_write_file(learn_report, skb::report_to_json(outcome.reports));
    for (const auto& r : outcome.reports) {
      std::cout << "iteration " << r.iteration << ": proposed " << r.proposed << ", accepted "
                << r.accepted << ", low quality " << r.rejected_quality << ", low novelty "
                << r.rejected_novelty << ", failed " << r.failed << ", kb size " << r.kb_size_after
                << '\n';
    }
    if (outcome.failure) {
      std::cerr << "learning stopped: " << *outcome.failure << '\n';
      exit_code = 3;
    }
  });

  // eval grid ---------------------------------------------------------------
  auto* eval = app.add_subcommand("eval", "Experiments");
  eval->require_subcommand(1);
  auto* grid = eval->add_subcommand("grid", "Run the system x n-way x K x seed grid");
  std::string grid_manifest;
  std::string grid_seed_kb;
  std::string systems = "vanilla,fixed,progressive";
  std::string nways = "5,10";
  std::string ks = "1,3";
  std::string seeds = "41,42,43";
  std::string out_dir;
  int grid_iterations = 3;
  BackendFlags grid_backend;
  grid->add_option("--manifest", grid_manifest, "Dataset manifest CSV")->required()->check(CLI::ExistingFile);
  grid->add_option("--kb-seed", grid_seed_kb, "Seed pattern file for fixed/progressive");
  grid->add_option("--systems", systems, "Comma-separated systems");
  grid->add_option("--nway", nways, "Comma-separated n-way sizes");
  grid->add_option("--k", ks, "Comma-separated samples per round");
  grid->add_option("--seeds", seeds, "Comma-separated seeds");
  grid->add_option("--iterations", grid_iterations, "Learning iterations T");
  grid->add_option("--out-dir", out_dir, "Write summary.csv, summary.txt, summary.json and per-run JSON");
  grid_backend.add_to(grid);
  grid->callback([&] {
    skb::ExperimentInputs in;
    in.entries = skb::load_manifest(grid_manifest);
    if (!grid_seed_kb.empty()) in.seed_kb = skb::init_fixed(grid_seed_kb);
    in.backend = grid_backend.config();
    skb::GridSpec spec;
    spec.systems.clear();
    for (const auto& s : split_list(systems)) spec.systems.push_back(skb::system_kind_from_string(s));
    spec.n_ways = parse_numbers<int>(nways);
    spec.ks = parse_numbers<int>(ks);
    spec.seeds = parse_numbers<std::uint64_t>(seeds);
    spec.base.iterations = grid_iterations;
    const auto g = skb::run_grid(skb::expand_grid(spec), in);
    const auto table = skb::summary_table(g);
    std::cout << table;
    if (!out_dir.empty()) {
      std::filesystem::create_directories(std::filesystem::path(out_dir) / "runs");
      skb::atomic_write_file(std::filesystem::path(out_dir) / "summary.csv", skb::summary_csv(g));
      skb::atomic_write_file(std::filesystem::path(out_dir) / "summary.txt", table);
      skb::atomic_write_file(std::filesystem::path(out_dir) / "summary.json", skb::summary_json(g));
      for (const auto& r : g.results) {
        char name[128];
        std::snprintf(name, sizeof name, "%s_n%d_k%d_s%llu.json", std::string(skb::to_string(r.config.system)).c_str(),
                      r.config.n_way, r.config.samples_per_round,
                      static_cast<unsigned long long>(r.config.rng_seed));
        skb::atomic_write_file(std::filesystem::path(out_dir) / "runs" / name, skb::result_to_json(r));
      }
    } else {
      std::cout << skb::summary_csv(g);
    }
    for (const auto& r : g.results) {
      if (r.partial) exit_code = 3;
    }
  });

  // synth -------------------------------------------------------------------
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  skb::SyntheticConfig sc;
  std::string synth_out;
  synth->add_option("--out-dir", synth_out, "Output directory")->required();
  synth->add_option("--species", sc.n_species, "Number of species (<= 26)");
  synth->add_option("--clips", sc.clips_per_species, "Clips per species");
  synth->add_option("--seed", sc.rng_seed, "RNG seed");
  synth->callback([&] {
    const auto ds = skb::generate_synthetic_dataset(sc, synth_out);
    std::cout << ds.manifest_path.string() << '\n' << ds.seed_kb_path.string() << '\n';
    for (const auto& s : ds.signatures) {
      std::cout << "  " << s.species << ": " << skb::to_string(s.kind) << " at " << s.center_hz
                << " Hz, span " << s.span_hz << " Hz, " << s.pulse_rate << " pulses/s\n";
    }
  });

  // serve -------------------------------------------------------------------
  auto* serve = app.add_subcommand("serve", "Run the curation HTTP service");
  std::string serve_kb;
  std::string serve_manifest;
  std::string bind = "127.0.0.1:8080";
  std::string ui_dir;
  BackendFlags serve_backend;
  skb::LearnConfig serve_learn;
  serve->add_option("--kb", serve_kb, "KB file (rewritten after each commit)")->required()->check(CLI::ExistingFile);
  serve->add_option("--manifest", serve_manifest, "Training manifest CSV")->check(CLI::ExistingFile);
  serve->add_option("--bind", bind, "host:port");
  serve->add_option("--ui-dir", ui_dir, "Static files served at /")->check(CLI::ExistingDirectory);
  serve->add_option("--k", serve_learn.samples_per_species, "Default clips per species per iteration");
  serve->add_option("--seed", serve_learn.rng_seed, "Default RNG seed");
  serve_backend.add_to(serve);
  serve->callback([&] {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw skb::ConfigError("--bind must be host:port");
    skb::ServiceConfig cfg;
    cfg.kb_path = serve_kb;
    cfg.backend = serve_backend.config();
    cfg.learn = serve_learn;
    if (!ui_dir.empty()) cfg.ui_dir = ui_dir;
    std::optional<std::filesystem::path> manifest;
    if (!serve_manifest.empty()) manifest = serve_manifest;
    auto service = skb::CurationService::open(cfg, manifest);
    service->set_logger(log_stderr);
    const int port = service->bind(bind.substr(0, colon), std::stoi(bind.substr(colon + 1)));
    std::cerr << "serving on " << bind.substr(0, colon) << ":" << port << '\n';
    service->listen();
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return exit_code;
}
