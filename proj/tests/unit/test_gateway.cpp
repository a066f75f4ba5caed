#include <atomic>
#include <mutex>
#include <set>
#include <thread>

#include <gtest/gtest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include "modalign/gateway.hpp"
#include "modalign/mock_llm.hpp"
#include "modalign/prompt_protocol.hpp"
#include "modalign/util/sha256.hpp"
#include "modalign/util/strings.hpp"
#include "support.hpp"

using namespace modalign;
using modalign::testing::TempDir;

namespace {

ChatRequest simple(std::string text, std::string backend = "b") {
  ChatRequest r;
  r.backend_id = std::move(backend);
  r.model = "m";
  r.messages = {{ChatRole::user, std::move(text), std::nullopt}};
  return r;
}

/// Echoes the last user turn, counting calls and tracking peak concurrency.
class CountingProvider : public Provider {
 public:
  explicit CountingProvider(std::chrono::milliseconds delay = {}) : delay_(delay) {}

  ProviderReply invoke(const ChatRequest& request) override {
    const int now = ++active_;
    int peak = peak_.load();
    while (now > peak && !peak_.compare_exchange_weak(peak, now)) {
    }
    if (delay_.count()) std::this_thread::sleep_for(delay_);
    {
      std::lock_guard lock(mutex_);
      ++per_digest_[cache_key(request)];
    }
    ++calls_;
    --active_;
    return {"echo:" + request.messages.back().content, FinishReason::stop, std::nullopt};
  }

  int calls() const { return calls_; }
  int peak() const { return peak_; }
  int max_per_digest() const {
    std::lock_guard lock(mutex_);
    int m = 0;
    for (const auto& [_, n] : per_digest_) m = std::max(m, n);
    return m;
  }

 private:
  std::chrono::milliseconds delay_;
  std::atomic<int> calls_{0}, active_{0}, peak_{0};
  mutable std::mutex mutex_;
  std::map<std::string, int> per_digest_;
};

/// Fails with a transport error `failures` times, then answers.
class FlakyProvider : public Provider {
 public:
  explicit FlakyProvider(int failures) : failures_(failures) {}
  ProviderReply invoke(const ChatRequest&) override {
    if (calls_++ < failures_) throw TransportError("connection reset");
    return {"ok", FinishReason::stop, std::nullopt};
  }
  int calls_ = 0;

 private:
  int failures_;
};

class RejectingProvider : public Provider {
 public:
  ProviderReply invoke(const ChatRequest&) override { throw ProviderError(400, "{\"error\":\"bad request\"}"); }
};

BackendOptions mock_options(std::size_t concurrency = 4) {
  BackendOptions o;
  o.mode = RunMode::mock;
  o.concurrency = concurrency;
  return o;
}

}  // namespace

TEST(Sha256, MatchesReferenceDigests) {
  // Reference values from Python's hashlib.
  EXPECT_EQ(util::sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  EXPECT_EQ(util::sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(util::sha256_hex("The quick brown fox jumps over the lazy dog"),
            "d7a8fbb307d7809469ca9abcb0082e4f8d5651e46d3cdb762d02d0bf37c9e592");
  EXPECT_EQ(util::sha256_hex("caf\xc3\xa9 \xe2\x98\x83"),
            "ce335642bab85530c756f72c1afb3bfc2067dd39b92e2368e4475c8dbeacc48e");
  EXPECT_EQ(util::base64_encode(std::string("\x89PNG\r\n\x1a\x00" "ab", 10)), "iVBORw0KGgBhYg==");
}

TEST(CacheKey, CanonicalFormMatchesSortedCompactJson) {
  ChatRequest r;
  r.backend_id = "llm";
  r.model = "gpt-x";
  r.temperature = 0.8;
  r.max_tokens = 300;
  r.messages = {{ChatRole::system, "Be brief.", std::nullopt}, {ChatRole::user, "Hi \"there\"\n", "img/a.png"}};
  // Expected text and digest from json.dumps(sort_keys=True, separators=(",", ":")) and hashlib.
  EXPECT_EQ(canonical_serialization(r),
            R"({"backend_id":"llm","max_tokens":300,"messages":[{"content":"Be brief.","role":"system"},)"
            R"({"content":"Hi \"there\"\n","image":"img/a.png","role":"user"}],"model":"gpt-x","temperature":0.8})");
  EXPECT_EQ(cache_key(r), "0c865c3544e520b6884a358bd1d09e810c3e8862762ce2c80b4cf285a6ee950a");
}

TEST(CacheKey, IgnoresSeedHintButSeesEveryOtherField) {
  const ChatRequest base = simple("hello");
  ChatRequest seeded = base;
  seeded.seed_hint = 42;
  EXPECT_EQ(cache_key(base), cache_key(seeded));
  std::vector<ChatRequest> variants(6, base);
  variants[0].backend_id = "c";
  variants[1].model = "m2";
  variants[2].temperature = 0.5;
  variants[3].max_tokens = 17;
  variants[4].messages[0].role = ChatRole::system;
  variants[5].messages[0].image = "x.png";
  std::set<std::string> keys{cache_key(base)};
  for (const auto& v : variants) keys.insert(cache_key(v));
  EXPECT_EQ(keys.size(), 7u);
}

TEST(Request, ValidationRejectsMalformedRequests) {
  ChatRequest r = simple("x");
  EXPECT_NO_THROW(r.validate());
  r.messages.clear();
  EXPECT_THROW(r.validate(), ContractError);
  r = simple("");
  EXPECT_THROW(r.validate(), ContractError);
  r = simple("x", "");
  EXPECT_THROW(r.validate(), ContractError);
  r = simple("x");
  r.max_tokens = 0;
  EXPECT_THROW(r.validate(), ContractError);
}

TEST(Gateway, MemoizesAndReportsCacheHits) {
  Gateway g;
  auto p = std::make_shared<CountingProvider>();
  g.register_backend("b", p, mock_options());
  const auto first = g.complete(simple("q"));
  const auto second = g.complete(simple("q"));
  EXPECT_EQ(first.text, "echo:q");
  EXPECT_EQ(second.text, first.text);
  EXPECT_FALSE(first.provenance.cache_hit);
  EXPECT_TRUE(second.provenance.cache_hit);
  EXPECT_EQ(first.provenance.request_digest, cache_key(simple("q")));
  EXPECT_EQ(p->calls(), 1);
  EXPECT_EQ(g.stats("b").requests, 2u);
  EXPECT_THROW(g.complete(simple("q", "nope")), UnknownBackend);
}

TEST(Gateway, ConcurrentMissesShareOneCallAndRespectTheBound) {
  Gateway g;
  auto p = std::make_shared<CountingProvider>(std::chrono::milliseconds(2));
  g.register_backend("b", p, mock_options(3));
  std::vector<std::thread> threads;
  for (int t = 0; t < 16; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < 40; ++i) g.complete(simple("q" + std::to_string((i + t) % 20)));
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_EQ(p->calls(), 20);
  EXPECT_EQ(p->max_per_digest(), 1);
  EXPECT_LE(p->peak(), 3);
}

TEST(Gateway, DiskCacheSurvivesRestartAndReplayIsStrict) {
  TempDir dir;
  {
    Gateway g;
    BackendOptions o = mock_options();
    o.cache_dir = dir.path();
    o.record = true;
    g.register_backend("b", std::make_shared<CountingProvider>(), o);
    g.complete(simple("stored"));
  }
  Gateway g;
  BackendOptions o;
  o.mode = RunMode::replay;
  o.cache_dir = dir.path();
  g.register_backend("b", nullptr, o);
  const auto c = g.complete(simple("stored"));
  EXPECT_EQ(c.text, "echo:stored");
  EXPECT_TRUE(c.provenance.cache_hit);
  try {
    g.complete(simple("absent"));
    FAIL() << "expected a replay miss";
  } catch (const ReplayMiss& e) {
    EXPECT_EQ(e.digest(), cache_key(simple("absent")));
    EXPECT_NE(std::string(e.what()).find(e.digest()), std::string::npos);
  }
}

TEST(Gateway, RetriesTransportErrorsWithBackoff) {
  Gateway g;
  std::vector<long> delays;
  g.set_sleeper([&](std::chrono::milliseconds d) { delays.push_back(d.count()); });
  auto flaky = std::make_shared<FlakyProvider>(2);
  g.register_backend("b", flaky, mock_options());
  EXPECT_EQ(g.complete(simple("x")).text, "ok");
  EXPECT_EQ(flaky->calls_, 3);
  EXPECT_EQ(delays, (std::vector<long>{1000, 2000}));
  EXPECT_EQ(g.stats("b").retries, 2u);

  auto dead = std::make_shared<FlakyProvider>(100);
  g.register_backend("dead", dead, mock_options());
  EXPECT_THROW(g.complete(simple("x", "dead")), ProviderUnreachable);
  EXPECT_EQ(dead->calls_, 3);
}

TEST(Gateway, ProviderErrorsAreNotRetriedAndNotCached) {
  Gateway g;
  g.set_sleeper([](std::chrono::milliseconds) { FAIL() << "must not retry"; });
  g.register_backend("b", std::make_shared<RejectingProvider>(), mock_options());
  try {
    g.complete(simple("x"));
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.status(), 400);
    EXPECT_NE(e.body().find("bad request"), std::string::npos);
  }
  EXPECT_THROW(g.complete(simple("x")), ProviderError);
  EXPECT_EQ(g.stats("b").provider_invocations, 2u);
}

TEST(Gateway, RegistrationChecks) {
  Gateway g;
  EXPECT_THROW(g.register_backend("r", nullptr, BackendOptions{RunMode::replay}), ConfigError);
  EXPECT_THROW(g.register_backend("m", nullptr, mock_options()), ConfigError);
  EXPECT_THROW(g.register_backend("z", std::make_shared<CountingProvider>(), mock_options(0)), ConfigError);
  g.register_backend("ok", std::make_shared<CountingProvider>(), mock_options());
  EXPECT_THROW(g.register_backend("ok", std::make_shared<CountingProvider>(), mock_options()), ConfigError);
}

// ---------------------------------------------------------------------------
// Rule-based mock

namespace {

ChatRequest stage_request(LlmStage stage, const std::string& input, const std::string& task = "") {
  std::string user = stage_marker(stage) + "\n";
  if (!task.empty()) user += std::string(kTaskOpen) + "\n" + task + "\n" + std::string(kTaskClose) + "\n";
  user += std::string(kInputOpen) + "\n" + input + "\n" + std::string(kInputClose);
  ChatRequest r = simple(user);
  r.messages.insert(r.messages.begin(), {ChatRole::system, "sys", std::nullopt});
  return r;
}

}  // namespace

TEST(MockLlm, TranslatesCaptionPhrasesThroughKnowledge) {
  const MockKnowledge k({{"crimson fur", "Color", "Red"}, {"tiny frame", "Size", "Small"}});
  EXPECT_EQ(mock_rules::translate("The image shows crimson fur, tiny frame and a red ball.", {}, k),
            "The Color is Red. The Size is Small. The Detail is a red ball.");
  EXPECT_EQ(mock_rules::translate("Weight: 4 kg; colour is grey", {}, {}), "The Weight is 4 kg. The Colour is grey.");
  EXPECT_EQ(mock_rules::translate("crimson fur and crimson fur", {}, k), "The Color is Red.");
}

TEST(MockLlm, SummaryDropsCoveredSentences) {
  EXPECT_EQ(mock_rules::summarize("The dog is calm. The dog is calm! A red collar."), "The dog is calm. A red collar.");
}

TEST(MockLlm, AugmentNamesTaskKeywordsFound) {
  EXPECT_EQ(mock_rules::augment("nothing relevant", "Predict the adoption speed."), mock_rules::kNeutralRationale);
  EXPECT_NE(mock_rules::augment("fast adoption expected", "Predict the adoption speed.").find("adoption"),
            std::string::npos);
}

TEST(MockLlm, DispatchesOnMarkerAndRejectsOthers) {
  const MockKnowledge k({{"crimson fur", "Color", "Red"}});
  EXPECT_EQ(mock_rulebased(stage_request(LlmStage::translate, "crimson fur"), k).text, "The Color is Red.");
  EXPECT_EQ(mock_rulebased(stage_request(LlmStage::summarize, "Red collar. Red collar.")).text, "Red collar.");
  EXPECT_THROW(mock_rulebased(simple(std::string(kCaptionMarker) + "\nDescribe.")), UnknownStageMarker);
  EXPECT_THROW(mock_rulebased(simple("plain")), UnknownStageMarker);
  // Deterministic: identical requests give identical bytes.
  const auto r = stage_request(LlmStage::augment, "fast", "Predict speed");
  EXPECT_EQ(mock_rulebased(r).text, mock_rulebased(r).text);
}

TEST(MockLlm, KnowledgeLoadsFromJson) {
  TempDir dir;
  util::write_file((dir / "k.json").string(), R"([{"phrase": "jade coat", "key": "Color", "value": "Green"}])");
  const auto k = MockKnowledge::load(dir / "k.json");
  ASSERT_EQ(k.entries().size(), 1u);
  EXPECT_EQ(k.entries()[0].value, "Green");
  util::write_file((dir / "bad.json").string(), R"({"phrase": 1})");
  EXPECT_THROW(MockKnowledge::load(dir / "bad.json"), Error);
}

// ---------------------------------------------------------------------------
// HTTP provider against a local server

TEST(HttpProvider, SpeaksChatCompletionsJson) {
  TempDir dir;
  util::write_file((dir / "pic.jpg").string(), "JPEGDATA");
  httplib::Server server;
  std::mutex mutex;
  nlohmann::json seen_body;
  std::string seen_auth;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    {
      std::lock_guard lock(mutex);
      seen_body = nlohmann::json::parse(req.body);
      seen_auth = req.get_header_value("Authorization");
    }
    if (hits++ == 0) {
      res.status = 503;
      res.set_content("busy", "text/plain");
      return;
    }
    res.set_content(R"({"choices":[{"message":{"content":"hello back"},"finish_reason":"stop"}],)"
                    R"("usage":{"prompt_tokens":5,"completion_tokens":2}})",
                    "application/json");
  });
  server.Post("/bad", [](const httplib::Request&, httplib::Response& res) {
    res.status = 401;
    res.set_content(R"({"error":{"message":"no key"}})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("MODALIGN_TEST_TOKEN", "sekrit", 1);
  HttpProviderOptions o;
  o.base_url = "http://127.0.0.1:" + std::to_string(port);
  o.auth_env = "MODALIGN_TEST_TOKEN";
  o.timeout = std::chrono::seconds(5);
  o.image_root = dir.path();

  Gateway g;
  g.set_sleeper([](std::chrono::milliseconds) {});
  BackendOptions bo;
  bo.mode = RunMode::live;
  g.register_backend("http", std::make_shared<HttpProvider>(o), bo);
  ChatRequest r = simple("look", "http");
  r.messages[0].image = "pic.jpg";
  r.seed_hint = 9;
  const auto c = g.complete(r);
  EXPECT_EQ(c.text, "hello back");
  ASSERT_TRUE(c.usage);
  EXPECT_EQ(c.usage->completion_tokens, 2);
  EXPECT_EQ(g.stats("http").retries, 1u);
  {
    std::lock_guard lock(mutex);
    EXPECT_EQ(seen_auth, "Bearer sekrit");
    EXPECT_EQ(seen_body["model"], "m");
    EXPECT_EQ(seen_body["seed"], 9);
    EXPECT_EQ(seen_body["messages"][0]["content"][1]["image_url"]["url"],
              "data:image/jpeg;base64," + util::base64_encode("JPEGDATA"));
  }

  o.path = "/bad";
  HttpProvider bad(o);
  try {
    bad.invoke(simple("x"));
    FAIL();
  } catch (const ProviderError& e) {
    EXPECT_EQ(e.status(), 401);
    EXPECT_NE(e.body().find("no key"), std::string::npos);
  }

  server.stop();
  worker.join();

  HttpProvider gone(o);
  EXPECT_THROW(gone.invoke(simple("x")), TransportError);
}

TEST(HttpProvider, ParsesResponses) {
  EXPECT_EQ(HttpProvider::parse_response(R"({"choices":[{"message":{"content":"x"},"finish_reason":"length"}]})")
                .finish_reason,
            FinishReason::length);
  EXPECT_THROW(HttpProvider::parse_response("not json"), ProviderError);
  EXPECT_THROW(HttpProvider::parse_response(R"({"choices":[]})"), ProviderError);
  const auto body = nlohmann::json::parse(HttpProvider::request_body(simple("hi")));
  EXPECT_EQ(body["messages"][0]["content"], "hi");
  EXPECT_FALSE(body.contains("seed"));
}
