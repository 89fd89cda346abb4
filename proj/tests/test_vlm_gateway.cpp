#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <deque>
#include <mutex>
#include <nlohmann/json.hpp>
#include <thread>

#include "skb/error.hpp"
#include "skb/spectro.hpp"
#include "skb/vlm_gateway.hpp"

using namespace skb;

namespace {

std::string completion(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"role", "assistant"}, {"content", content}}}}}}}
      .dump();
}

// Replays a fixed script of responses; a status of -1 throws a retryable transport error.
class ScriptedTransport : public Transport {
 public:
  explicit ScriptedTransport(std::deque<HttpResponse> script) : script_(std::move(script)) {}

  HttpResponse post_json(const std::string&, const std::string& path, const std::string& body,
                         const HeaderList&, double) override {
    const int now = ++in_flight_;
    int seen = peak_.load();
    while (now > seen && !peak_.compare_exchange_weak(seen, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms));
    --in_flight_;
    std::lock_guard lock(mu_);
    ++calls;
    last_path = path;
    last_body = body;
    if (script_.empty()) return {200, completion("Tonal whistle at 3 kHz")};
    auto r = script_.front();
    script_.pop_front();
    if (r.status == -1) throw BackendError("connection refused", true);
    return r;
  }

  int peak() const { return peak_.load(); }

  int calls = 0;
  int delay_ms = 0;
  std::string last_path;
  std::string last_body;

 private:
  std::mutex mu_;
  std::deque<HttpResponse> script_;
  std::atomic<int> in_flight_{0};
  std::atomic<int> peak_{0};
};

BackendConfig http_cfg(int retries = 2) {
  BackendConfig c;
  c.kind = BackendKind::http_openai_compatible;
  c.endpoint_url = "http://vlm.invalid/v1";
  c.max_retries = retries;
  c.retry_backoff_s = 0.0;
  c.api_key_env = "SKB_TEST_UNSET_KEY";
  return c;
}

SpectrogramImage small_image() {
  SpectrogramMatrix m(8, 8, 1000.0, 0.25, 16000, -80.0, -80.0);
  m.at(3, 3) = 0.0;
  return render_spectrogram(m, 16, 16);
}

}  // namespace

TEST(Gateway, RetriesThrottlingAndServerErrors) {
  auto t = std::make_shared<ScriptedTransport>(
      std::deque<HttpResponse>{{429, ""}, {503, ""}, {200, completion("Clicks at 40 kHz")}});
  Gateway g(http_cfg(2), t);
  EXPECT_EQ(g.complete("p", small_image()), "Clicks at 40 kHz");
  EXPECT_EQ(t->calls, 3);
  EXPECT_EQ(t->last_path, "/chat/completions");
}

TEST(Gateway, GivesUpAfterRetries) {
  auto t = std::make_shared<ScriptedTransport>(
      std::deque<HttpResponse>{{-1, ""}, {500, ""}, {502, ""}, {200, completion("late")}});
  Gateway g(http_cfg(2), t);
  try {
    g.complete("p", small_image());
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_TRUE(e.retryable());
    EXPECT_EQ(e.http_status(), 502);
  }
  EXPECT_EQ(t->calls, 3);
}

TEST(Gateway, ClientErrorsAreFatal) {
  auto t = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{{400, "bad"}});
  Gateway g(http_cfg(3), t);
  try {
    g.complete("p", small_image());
    FAIL();
  } catch (const BackendError& e) {
    EXPECT_FALSE(e.retryable());
    EXPECT_EQ(e.http_status(), 400);
  }
  EXPECT_EQ(t->calls, 1);
}

TEST(Gateway, RequestCarriesPromptAndImage) {
  auto t = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{});
  Gateway g(http_cfg(), t);
  const auto img = small_image();
  g.extract_pattern(img, PromptTemplate::default_extract());
  const auto req = nlohmann::json::parse(t->last_body);
  EXPECT_EQ(req["model"], "Qwen2.5-VL-7B-Instruct");
  EXPECT_EQ(req["temperature"], 0);
  const auto& content = req["messages"][0]["content"];
  ASSERT_EQ(content.size(), 2u);
  EXPECT_NE(content[0]["text"].get<std::string>().find("over 2.0 seconds"), std::string::npos);
  EXPECT_NE(content[0]["text"].get<std::string>().find("8.0 kHz at the top"), std::string::npos);
  EXPECT_EQ(content[1]["image_url"]["url"].get<std::string>().rfind("data:image/png;base64,", 0), 0u);
}

TEST(Gateway, WhitespaceReplyIsEmptyResponse) {
  auto t = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{{200, completion("  \n\t ")}});
  Gateway g(http_cfg(), t);
  EXPECT_THROW(g.extract_pattern(small_image(), PromptTemplate::default_extract()), EmptyResponseError);
  auto t2 = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{{200, completion(" ")}});
  Gateway g2(http_cfg(), t2);
  EXPECT_THROW(g2.classify_direct(small_image(), {"A", "B"}, PromptTemplate::default_direct_classify()),
               EmptyResponseError);
}

TEST(Gateway, CapsRequestsInFlight) {
  auto t = std::make_shared<ScriptedTransport>(std::deque<HttpResponse>{});
  t->delay_ms = 20;
  auto cfg = http_cfg();
  cfg.max_in_flight = 2;
  Gateway g(cfg, t);
  const auto img = small_image();
  std::vector<std::thread> threads;
  for (int i = 0; i < 6; ++i) threads.emplace_back([&] { g.complete("p", img); });
  for (auto& th : threads) th.join();
  EXPECT_EQ(t->calls, 6);
  EXPECT_LE(t->peak(), 2);
}

TEST(Gateway, ConfigValidation) {
  BackendConfig c = http_cfg();
  c.endpoint_url.clear();
  EXPECT_THROW(Gateway g(c), ConfigError);
  c = http_cfg();
  c.max_in_flight = 0;
  EXPECT_THROW(Gateway g(c), ConfigError);
  EXPECT_THROW(backend_kind_from_string("grpc"), ConfigError);
  EXPECT_EQ(backend_kind_from_string("http"), BackendKind::http_openai_compatible);
}

TEST(Gateway, DirectClassifyValidatesCandidates) {
  Gateway g(BackendConfig{});
  const auto img = small_image();
  const auto tmpl = PromptTemplate::default_direct_classify();
  EXPECT_THROW(g.classify_direct(img, {}, tmpl), ValidationError);
  EXPECT_THROW(g.classify_direct(img, {"A", "A"}, tmpl), ValidationError);
  EXPECT_EQ(g.classify_direct(img, {"X"}, tmpl).label, "X");
  EXPECT_THROW(g.classify_direct(img, {"A"}, PromptTemplate::default_extract()), ConfigError);
}

TEST(Gateway, MockDirectGuessIsContentKeyed) {
  BackendConfig c;
  c.mock_seed = 7;
  Gateway g(c);
  const auto img = small_image();
  const std::vector<std::string> cands = {"A", "B", "C", "D", "E"};
  const auto a = g.classify_direct(img, cands, PromptTemplate::default_direct_classify());
  const auto b = g.classify_direct(img, cands, PromptTemplate::default_direct_classify());
  EXPECT_EQ(a.label, b.label);
  EXPECT_FALSE(a.unparsed);
}

TEST(Parsing, ChatCompletionShapes) {
  EXPECT_EQ(parse_chat_completion(completion("hello")), "hello");
  EXPECT_EQ(parse_chat_completion(
                R"({"choices":[{"message":{"content":[{"type":"text","text":"a"},{"type":"image_url"},{"type":"text","text":"b"}]}}]})"),
            "a b");
  EXPECT_THROW(parse_chat_completion(R"({"choices":[]})"), EmptyResponseError);
  EXPECT_THROW(parse_chat_completion("<html>"), BackendError);
}

TEST(Parsing, NormalizesReplies) {
  const std::string humpback =
      "Complex melodic sequences sweeping 20 Hz to 4 kHz with repetitive phrase structures";
  EXPECT_EQ(normalize_pattern_text("  \"" + humpback + "\"\n"), humpback);
  EXPECT_EQ(normalize_pattern_text("line one\n\nline\ttwo"), "line one line two");
  EXPECT_EQ(normalize_pattern_text("\xE2\x80\x9C" "quoted" "\xE2\x80\x9D"), "quoted");

  std::string longer;
  while (longer.size() < 600) longer += "Pulses at 20 Hz repeat. ";
  const auto cut = normalize_pattern_text(longer);
  EXPECT_LE(cut.size(), kMaxPatternChars);
  EXPECT_EQ(cut.back(), '.');

  const std::string words(700, 'x');
  EXPECT_EQ(normalize_pattern_text(words).size(), kMaxPatternChars);
}

TEST(Parsing, MatchCandidate) {
  const auto fin = match_candidate("This is likely a Fin Whale.", {"Humpback Whale", "Fin Whale"});
  EXPECT_EQ(fin.label, "Fin Whale");
  EXPECT_FALSE(fin.unparsed);
  const auto none = match_candidate("cannot determine", {"B", "A"});
  EXPECT_EQ(none.label, "A");
  EXPECT_TRUE(none.unparsed);
  EXPECT_EQ(match_candidate("anything", {"X"}).label, "X");
  EXPECT_EQ(match_candidate("a killer whale", {"Whale", "Killer Whale"}).label, "Killer Whale");
}

TEST(Prompts, TemplatesValidateAndRender) {
  PromptTemplate bad{"d", "Pick one.", PromptPurpose::direct_classify};
  EXPECT_THROW(bad.validate(), ConfigError);
  PromptTemplate empty{"e", "  ", PromptPurpose::extract};
  EXPECT_THROW(empty.validate(), ConfigError);
  const auto text = PromptTemplate::default_direct_classify().render(small_image(), {"A", "B"});
  EXPECT_NE(text.find("A, B?"), std::string::npos);

  const auto shipped = PromptTemplate::from_file(SKB_SOURCE_DIR "/data/prompts/extract.txt",
                                                 PromptPurpose::extract);
  EXPECT_EQ(shipped.body, PromptTemplate::default_extract().body);
  const auto direct = PromptTemplate::from_file(SKB_SOURCE_DIR "/data/prompts/direct_classify.txt",
                                                PromptPurpose::direct_classify);
  EXPECT_EQ(direct.body, PromptTemplate::default_direct_classify().body);
}
