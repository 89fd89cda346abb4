#include <gtest/gtest.h>

#include <atomic>
#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "skb/dataset.hpp"
#include "skb/error.hpp"
#include "skb/progressive_learner.hpp"

using namespace skb;

namespace {

class ConstantTransport : public Transport {
 public:
  ConstantTransport(int status, std::string text) : status_(status), text_(std::move(text)) {}
  HttpResponse post_json(const std::string&, const std::string&, const std::string&,
                         const HeaderList&, double) override {
    ++calls;
    return {status_, nlohmann::json{{"choices", {{{"message", {{"content", text_}}}}}}}.dump()};
  }
  std::atomic<int> calls{0};

 private:
  int status_;
  std::string text_;
};

BackendConfig http_backend() {
  BackendConfig c;
  c.kind = BackendKind::http_openai_compatible;
  c.endpoint_url = "http://vlm.invalid/v1";
  c.max_retries = 0;
  c.retry_backoff_s = 0.0;
  c.api_key_env = "SKB_TEST_UNSET_KEY";
  return c;
}

struct Setup {
  std::vector<DatasetEntry> train;
  KnowledgeBase seed;
};

Setup syn5() {
  const auto& ds = fixtures::synthetic();
  Setup s;
  s.train = split_time_based(load_manifest(ds.manifest_path)).train;
  s.seed = init_fixed(ds.seed_kb_path);
  return s;
}

LearnOutcome learn(const Setup& s, const LearnConfig& cfg) {
  Gateway g{BackendConfig{}};
  SpectrogramCache cache;
  LearnContext ctx(g, cache);
  return run(s.seed, s.train, cfg, ctx);
}

}  // namespace

TEST(Learner, ZeroIterationsLeaveKbAlone) {
  const auto s = syn5();
  LearnConfig cfg;
  cfg.iterations = 0;
  const auto out = learn(s, cfg);
  EXPECT_TRUE(out.reports.empty());
  EXPECT_EQ(out.kb, s.seed);
  EXPECT_FALSE(out.failure);
}

TEST(Learner, SampleCountClampsToPool) {
  const auto s = syn5();
  LearnConfig cfg;
  cfg.iterations = 1;
  cfg.samples_per_species = 100;
  const auto out = learn(s, cfg);
  ASSERT_EQ(out.reports.size(), 1u);
  std::map<std::string, std::size_t> pool;
  for (const auto& e : s.train) ++pool[e.species];
  for (const auto& [sp, st] : out.reports[0].per_species) {
    EXPECT_EQ(st.proposed + st.failed, pool.at(sp)) << sp;
  }
}

TEST(Learner, ReportsAreByteIdenticalAcrossRuns) {
  const auto s = syn5();
  LearnConfig cfg;
  cfg.iterations = 2;
  cfg.samples_per_species = 3;
  const auto a = learn(s, cfg);
  const auto b = learn(s, cfg);
  EXPECT_EQ(report_to_json(a.reports), report_to_json(b.reports));
  EXPECT_EQ(to_json_string(a.kb), to_json_string(b.kb));
  cfg.rng_seed = 7;
  const auto c = learn(s, cfg);
  EXPECT_NE(report_to_json(a.reports), report_to_json(c.reports));
}

TEST(Learner, GateHoldsForEveryLearnedPattern) {
  const auto s = syn5();
  LearnConfig cfg;
  cfg.iterations = 3;
  const auto out = learn(s, cfg);
  const auto& gate = out.kb.gate();
  std::size_t learned = 0;
  for (const auto& [sp, entry] : out.kb.entries()) {
    for (const auto& p : entry.patterns) {
      if (p.provenance != Provenance::vlm_learned) continue;
      ++learned;
      EXPECT_GT(p.quality, gate.quality_threshold);
      ASSERT_TRUE(p.admission_novelty);
      EXPECT_GT(*p.admission_novelty, gate.novelty_threshold);
      EXPECT_TRUE(p.source_digest);
      EXPECT_GE(p.created_iteration, 1);
    }
  }
  EXPECT_GT(learned, 0u);
  for (const auto& r : out.reports) {
    EXPECT_EQ(r.proposed, r.accepted + r.rejected_quality + r.rejected_novelty);
  }
  ASSERT_TRUE(out.index);
  EXPECT_EQ(out.index->kb_revision(), out.kb.revision());
}

TEST(Learner, GrowsInFirstIteration) {
  const auto s = syn5();
  LearnConfig cfg;
  cfg.iterations = 2;
  const auto out = learn(s, cfg);
  ASSERT_EQ(out.reports.size(), 2u);
  EXPECT_GT(out.reports[0].kb_size_after, s.seed.total_patterns());
  EXPECT_GE(out.reports[1].kb_size_after, out.reports[0].kb_size_after);
  for (const auto& [sp, st] : out.reports[0].per_species) EXPECT_GE(st.accepted, 1u) << sp;
}

TEST(Learner, SameTextEverywhereAdmitsOnePerSpecies) {
  const auto s = syn5();
  auto t = std::make_shared<ConstantTransport>(200, "Tonal whistle at 3 kHz with 5 pulses per second");
  Gateway g(http_backend(), t);
  SpectrogramCache cache;
  LearnContext ctx(g, cache);
  LearnConfig cfg;
  cfg.iterations = 1;
  cfg.samples_per_species = 3;
  KnowledgeBase empty;
  const auto out = run(empty, s.train, cfg, ctx);
  ASSERT_EQ(out.reports.size(), 1u);
  const auto& r = out.reports[0];
  EXPECT_EQ(r.per_species.size(), 5u);
  for (const auto& [sp, st] : r.per_species) {
    EXPECT_EQ(st.accepted, 1u);
    EXPECT_EQ(st.rejected_novelty, 2u);
  }
  EXPECT_EQ(t->calls.load(), 15);
}

TEST(Learner, AllFailuresFailTheIteration) {
  const auto s = syn5();
  auto t = std::make_shared<ConstantTransport>(400, "");
  Gateway g(http_backend(), t);
  SpectrogramCache cache;
  LearnContext ctx(g, cache);
  LearnConfig cfg;
  cfg.iterations = 1;
  KnowledgeBase kb = s.seed;
  try {
    run_iteration(kb, s.train, cfg, 1, ctx);
    FAIL();
  } catch (const IterationFailed& e) {
    EXPECT_EQ(e.partial().failed, 15u);
    EXPECT_EQ(e.partial().proposed, 0u);
  }
  EXPECT_EQ(kb, s.seed);
  cfg.iterations = 3;
  const auto out = run(s.seed, s.train, cfg, ctx);
  EXPECT_TRUE(out.failure);
  EXPECT_EQ(out.reports.size(), 1u);
}

TEST(Learner, SpeciesSubsetAndCache) {
  const auto s = syn5();
  Gateway g{BackendConfig{}};
  SpectrogramCache cache;
  LearnContext ctx(g, cache);
  std::size_t progress_calls = 0;
  ctx.progress = [&](std::size_t, std::size_t) { ++progress_calls; };
  LearnConfig cfg;
  cfg.iterations = 3;
  cfg.samples_per_species = 2;
  cfg.species_sample_size = 2;
  const auto out = run(s.seed, s.train, cfg, ctx);
  for (const auto& r : out.reports) EXPECT_EQ(r.per_species.size(), 2u);
  EXPECT_EQ(progress_calls, 12u);
  EXPECT_LE(cache.size(), s.train.size());
  EXPECT_LT(cache.size(), 12u + 1u);
}

TEST(Learner, ConfigValidation) {
  LearnConfig cfg;
  cfg.samples_per_species = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = LearnConfig{};
  cfg.species_sample_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = LearnConfig{};
  cfg.iterations = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}
