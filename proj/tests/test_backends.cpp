#include <atomic>
#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include <floop/backends.hpp>

namespace {

using namespace floop;

std::vector<ChatMessage> ocr_messages(const std::string& ocr) {
    return {{"system", "You analyze memes.", ""}, {"user", "OCR: " + ocr, ""}};
}

TEST(MockEmbedding, UnitNormAndDimension) {
    MockEmbeddingBackend be(32, 7);
    EXPECT_EQ(be.dim(), 32u);
    for (const char* text : {"", "a", "hello world", "OCR: some meme"}) {
        auto v = be.embed(text);
        ASSERT_EQ(v.dim(), 32u);
        EXPECT_NEAR(v.norm(), 1.0, 1e-9) << text;
    }
}

TEST(MockEmbedding, DeterministicAndSensitive) {
    MockEmbeddingBackend be(16, 7);
    EXPECT_EQ(be.embed("same text").values, be.embed("same text").values);
    EXPECT_NE(be.embed("text a").values, be.embed("text b").values);

    MockEmbeddingBackend other_seed(16, 8);
    EXPECT_NE(be.embed("same text").values, other_seed.embed("same text").values);
}

TEST(MockEmbedding, DistinctTextsAreNotNearDuplicates) {
    MockEmbeddingBackend be(32, 7);
    std::vector<EmbeddingVector> vs;
    for (int i = 0; i < 50; ++i) vs.push_back(be.embed("sample text " + std::to_string(i)));
    for (std::size_t i = 0; i < vs.size(); ++i)
        for (std::size_t j = i + 1; j < vs.size(); ++j)
            EXPECT_LT(std::fabs(cosine_sim(vs[i], vs[j])), 0.9) << i << "," << j;
}

TEST(MockChat, KeywordHitFormatsScore) {
    MockChatBackend be;
    std::string out = be.generate(ocr_messages("totally ironic caption"), 64);
    EXPECT_EQ(out, "SCORE: 0.80\nRATIONALE: detected cues: ironic.");
}

TEST(MockChat, DefaultScoreWhenNoKeyword) {
    MockChatBackend be;
    std::string out = be.generate(ocr_messages("plain news headline"), 64);
    EXPECT_EQ(out, "SCORE: 0.50\nRATIONALE: no salient humor cues detected.");
}

TEST(MockChat, FirstTableEntryWins) {
    MockPolicy p;
    p.keywords = {{"alpha", 0.9}, {"beta", 0.1}};
    MockChatBackend be(p);
    EXPECT_EQ(be.generate(ocr_messages("beta then alpha"), 64).substr(0, 11),
              "SCORE: 0.90");

    MockPolicy q;
    q.keywords = {{"beta", 0.1}, {"alpha", 0.9}};
    MockChatBackend be2(q);
    EXPECT_EQ(be2.generate(ocr_messages("beta then alpha"), 64).substr(0, 11),
              "SCORE: 0.10");
}

TEST(MockChat, KeywordMatchIsCaseInsensitive) {
    MockChatBackend be;
    EXPECT_EQ(be.generate(ocr_messages("VERY IRONIC INDEED"), 64).substr(0, 11),
              "SCORE: 0.80");
}

TEST(MockChat, ConservativeDirectiveLowersScore) {
    MockChatBackend be;
    auto msgs = ocr_messages("totally ironic caption");
    msgs[0].content += "\nGuidance:\n- " + be.policy().u_low_marker;
    EXPECT_EQ(be.generate(msgs, 64).substr(0, 11), "SCORE: 0.60");

    auto neutral = ocr_messages("plain");
    neutral[0].content += "\n- " + be.policy().u_low_marker;
    EXPECT_EQ(be.generate(neutral, 64).substr(0, 11), "SCORE: 0.30");
}

TEST(MockChat, ConservativeClampsAtZero) {
    MockPolicy p;
    p.default_score = 0.1;
    MockChatBackend be(p);
    auto msgs = ocr_messages("plain");
    msgs[0].content += "\n- " + p.u_low_marker;
    EXPECT_EQ(be.generate(msgs, 64).substr(0, 11), "SCORE: 0.00");
}

TEST(MockChat, ImageUnavailableSuffixIsNotMatched) {
    MockPolicy p;
    p.keywords = {{"unavailable", 0.9}};
    MockChatBackend be(p);
    std::vector<ChatMessage> msgs{
        {"system", "sys", ""}, {"user", "OCR: plain text\n[image unavailable]", ""}};
    EXPECT_EQ(be.generate(msgs, 64).substr(0, 11), "SCORE: 0.50");
}

TEST(MockChat, OcrPrefixIsStrippedBeforeMatching) {
    MockPolicy p;
    p.keywords = {{"ocr", 0.9}};
    MockChatBackend be(p);
    EXPECT_EQ(be.generate(ocr_messages("nothing here"), 64).substr(0, 11),
              "SCORE: 0.50");
}

TEST(MockChat, LastUserMessageWins) {
    MockChatBackend be;
    std::vector<ChatMessage> msgs{{"user", "OCR: ironic one", ""},
                                  {"assistant", "SCORE: 0.80", ""},
                                  {"user", "OCR: plain follow-up", ""}};
    EXPECT_EQ(be.generate(msgs, 64).substr(0, 11), "SCORE: 0.50");
}

TEST(Fingerprint, StableUnderWhitespaceReflow) {
    std::vector<ChatMessage> a{{"user", "hello   world", ""}};
    std::vector<ChatMessage> b{{"user", "hello\nworld", ""}};
    std::vector<ChatMessage> c{{"user", "  hello world  ", ""}};
    EXPECT_EQ(fingerprint_messages(a), fingerprint_messages(b));
    EXPECT_EQ(fingerprint_messages(a), fingerprint_messages(c));
}

TEST(Fingerprint, SensitiveToRoleContentImage) {
    std::vector<ChatMessage> base{{"user", "hello", ""}};
    std::vector<ChatMessage> role{{"system", "hello", ""}};
    std::vector<ChatMessage> text{{"user", "goodbye", ""}};
    std::vector<ChatMessage> image{{"user", "hello", "img://1"}};
    auto fp = fingerprint_messages(base);
    EXPECT_NE(fp, fingerprint_messages(role));
    EXPECT_NE(fp, fingerprint_messages(text));
    EXPECT_NE(fp, fingerprint_messages(image));
    EXPECT_EQ(fp.size(), 16u);
    EXPECT_EQ(fp.find_first_not_of("0123456789abcdef"), std::string::npos);
}

TEST(Scripted, ReplaysAndConsumesOnce) {
    auto msgs = ocr_messages("ironic");
    ScriptedBackend be({{fingerprint_messages(msgs), "SCORE: 0.80\nRATIONALE: canned."}});
    EXPECT_EQ(be.generate(msgs, 64), "SCORE: 0.80\nRATIONALE: canned.");
    EXPECT_EQ(be.remaining(), 0u);
    EXPECT_THROW(be.generate(msgs, 64), BackendError);
}

TEST(Scripted, DuplicateFingerprintsConsumeInOrder) {
    auto msgs = ocr_messages("x");
    auto fp = fingerprint_messages(msgs);
    ScriptedBackend be({{fp, "first"}, {fp, "second"}});
    EXPECT_EQ(be.generate(msgs, 64), "first");
    EXPECT_EQ(be.generate(msgs, 64), "second");
}

TEST(Scripted, NonStrictReturnsEmpty) {
    ScriptedBackend be({}, /*strict=*/false);
    EXPECT_EQ(be.generate(ocr_messages("anything"), 64), "");
}

TEST(Scripted, StrictErrorNamesFingerprint) {
    ScriptedBackend be({});
    auto msgs = ocr_messages("anything");
    try {
        be.generate(msgs, 64);
        FAIL() << "expected BackendError";
    } catch (const BackendError& e) {
        EXPECT_NE(std::string(e.what()).find(fingerprint_messages(msgs)),
                  std::string::npos);
    }
}

TEST(Recording, CapturedScriptReplaysIdentically) {
    MockChatBackend mock;
    RecordingBackend rec(mock);
    auto m1 = ocr_messages("totally ironic caption");
    auto m2 = ocr_messages("plain news headline");
    std::string r1 = rec.generate(m1, 64);
    std::string r2 = rec.generate(m2, 64);
    EXPECT_FALSE(rec.supports_images());

    ScriptedBackend replay(rec.script());
    EXPECT_EQ(replay.generate(m2, 64), r2);
    EXPECT_EQ(replay.generate(m1, 64), r1);
}

TEST(SplitBaseUrl, Variants) {
    auto a = detail::split_base_url("http://localhost:8000/v1");
    EXPECT_EQ(a.host, "http://localhost:8000");
    EXPECT_EQ(a.path, "/v1");

    auto b = detail::split_base_url("http://localhost:8000");
    EXPECT_EQ(b.host, "http://localhost:8000");
    EXPECT_EQ(b.path, "");

    auto c = detail::split_base_url("http://example.com/v1/");
    EXPECT_EQ(c.path, "/v1");
}

TEST(TransientStatus, Classification) {
    EXPECT_TRUE(detail::transient_status(429));
    EXPECT_TRUE(detail::transient_status(500));
    EXPECT_TRUE(detail::transient_status(503));
    EXPECT_FALSE(detail::transient_status(400));
    EXPECT_FALSE(detail::transient_status(404));
    EXPECT_FALSE(detail::transient_status(200));
}

// ---------------------------------------------------------------------------
// Loopback server tests
// ---------------------------------------------------------------------------

struct TestServer {
    httplib::Server svr;
    int port = -1;
    std::thread th;

    template <typename Setup>
    explicit TestServer(Setup setup) {
        setup(svr);
        port = svr.bind_to_any_port("127.0.0.1");
        if (port <= 0) return;
        th = std::thread([this] { svr.listen_after_bind(); });
        svr.wait_until_ready();
    }
    ~TestServer() {
        svr.stop();
        if (th.joinable()) th.join();
    }
    std::string base_url() const {
        return "http://127.0.0.1:" + std::to_string(port) + "/v1";
    }
};

#define REQUIRE_SERVER(ts) \
    if ((ts).port <= 0) GTEST_SKIP() << "cannot bind loopback listener"

HttpEndpointConfig endpoint(const TestServer& ts, int retries = 0) {
    HttpEndpointConfig cfg;
    cfg.base_url = ts.base_url();
    cfg.model = "test-model";
    cfg.timeout_s = 5.0;
    cfg.retries = retries;
    cfg.backoff_s = 0.0;
    return cfg;
}

TEST(HttpChat, PostsWireShapeAndParsesContent) {
    nlohmann::json seen;
    TestServer ts([&](httplib::Server& s) {
        s.Post("/v1/chat/completions",
               [&](const httplib::Request& req, httplib::Response& res) {
                   seen = nlohmann::json::parse(req.body);
                   res.set_content(
                       nlohmann::json{
                           {"choices",
                            {{{"message",
                               {{"content", "SCORE: 0.70\nRATIONALE: via http."}}}}}}}
                           .dump(),
                       "application/json");
               });
    });
    REQUIRE_SERVER(ts);

    HttpChatBackend be(endpoint(ts));
    std::string out = be.generate(ocr_messages("hello"), 77);
    EXPECT_EQ(out, "SCORE: 0.70\nRATIONALE: via http.");
    EXPECT_EQ(seen["model"], "test-model");
    EXPECT_EQ(seen["max_tokens"], 77);
    EXPECT_EQ(seen["temperature"], 0.0);
    ASSERT_EQ(seen["messages"].size(), 2u);
    EXPECT_EQ(seen["messages"][1]["role"], "user");
    EXPECT_EQ(seen["messages"][1]["content"], "OCR: hello");
}

TEST(HttpChat, ImageMessagesBecomeContentParts) {
    nlohmann::json seen;
    TestServer ts([&](httplib::Server& s) {
        s.Post("/v1/chat/completions",
               [&](const httplib::Request& req, httplib::Response& res) {
                   seen = nlohmann::json::parse(req.body);
                   res.set_content(
                       nlohmann::json{
                           {"choices", {{{"message", {{"content", "ok"}}}}}}}
                           .dump(),
                       "application/json");
               });
    });
    REQUIRE_SERVER(ts);

    HttpChatBackend be(endpoint(ts));
    std::vector<ChatMessage> msgs{{"user", "OCR: pic", "http://img/1.png"}};
    be.generate(msgs, 16);
    auto content = seen["messages"][0]["content"];
    ASSERT_TRUE(content.is_array());
    ASSERT_EQ(content.size(), 2u);
    EXPECT_EQ(content[0]["type"], "text");
    EXPECT_EQ(content[0]["text"], "OCR: pic");
    EXPECT_EQ(content[1]["type"], "image_url");
    EXPECT_EQ(content[1]["image_url"]["url"], "http://img/1.png");
}

TEST(HttpChat, RetriesTransientStatusThenSucceeds) {
    std::atomic<int> calls{0};
    TestServer ts([&](httplib::Server& s) {
        s.Post("/v1/chat/completions",
               [&](const httplib::Request&, httplib::Response& res) {
                   if (++calls <= 2) {
                       res.status = 429;
                       return;
                   }
                   res.set_content(
                       nlohmann::json{
                           {"choices", {{{"message", {{"content", "late"}}}}}}}
                           .dump(),
                       "application/json");
               });
    });
    REQUIRE_SERVER(ts);

    HttpChatBackend be(endpoint(ts, /*retries=*/3));
    EXPECT_EQ(be.generate(ocr_messages("x"), 16), "late");
    EXPECT_EQ(calls.load(), 3);
}

TEST(HttpChat, ExhaustedRetriesSurfaceStatus) {
    std::atomic<int> calls{0};
    TestServer ts([&](httplib::Server& s) {
        s.Post("/v1/chat/completions",
               [&](const httplib::Request&, httplib::Response& res) {
                   ++calls;
                   res.status = 503;
                   res.set_content("overloaded", "text/plain");
               });
    });
    REQUIRE_SERVER(ts);

    HttpChatBackend be(endpoint(ts, /*retries=*/1));
    try {
        be.generate(ocr_messages("x"), 16);
        FAIL() << "expected BackendError";
    } catch (const BackendError& e) {
        EXPECT_EQ(e.status(), 503);
        EXPECT_NE(std::string(e.what()).find("503"), std::string::npos);
    }
    EXPECT_EQ(calls.load(), 2);  // initial attempt + 1 retry
}

TEST(HttpChat, ClientErrorIsNotRetried) {
    std::atomic<int> calls{0};
    TestServer ts([&](httplib::Server& s) {
        s.Post("/v1/chat/completions",
               [&](const httplib::Request&, httplib::Response& res) {
                   ++calls;
                   res.status = 400;
                   res.set_content("bad request", "text/plain");
               });
    });
    REQUIRE_SERVER(ts);

    HttpChatBackend be(endpoint(ts, /*retries=*/5));
    try {
        be.generate(ocr_messages("x"), 16);
        FAIL() << "expected BackendError";
    } catch (const BackendError& e) {
        EXPECT_EQ(e.status(), 400);
    }
    EXPECT_EQ(calls.load(), 1);
}

TEST(HttpChat, UnparseableSuccessBodyIsNotRetried) {
    std::atomic<int> calls{0};
    TestServer ts([&](httplib::Server& s) {
        s.Post("/v1/chat/completions",
               [&](const httplib::Request&, httplib::Response& res) {
                   ++calls;
                   res.set_content("this is not json", "text/plain");
               });
    });
    REQUIRE_SERVER(ts);

    HttpChatBackend be(endpoint(ts, /*retries=*/5));
    try {
        be.generate(ocr_messages("x"), 16);
        FAIL() << "expected BackendError";
    } catch (const BackendError& e) {
        EXPECT_NE(std::string(e.what()).find("unparseable"), std::string::npos);
    }
    EXPECT_EQ(calls.load(), 1);
}

TEST(HttpChat, MissingChoicesIsBackendError) {
    TestServer ts([&](httplib::Server& s) {
        s.Post("/v1/chat/completions",
               [&](const httplib::Request&, httplib::Response& res) {
                   res.set_content(R"({"unexpected":true})", "application/json");
               });
    });
    REQUIRE_SERVER(ts);
    HttpChatBackend be(endpoint(ts));
    EXPECT_THROW(be.generate(ocr_messages("x"), 16), BackendError);
}

TEST(HttpChat, BearerTokenFromEnvironment) {
    std::string auth_seen;
    TestServer ts([&](httplib::Server& s) {
        s.Post("/v1/chat/completions",
               [&](const httplib::Request& req, httplib::Response& res) {
                   auth_seen = req.get_header_value("Authorization");
                   res.set_content(
                       nlohmann::json{
                           {"choices", {{{"message", {{"content", "ok"}}}}}}}
                           .dump(),
                       "application/json");
               });
    });
    REQUIRE_SERVER(ts);

    ::setenv("FLOOP_TEST_TOKEN", "sekrit", 1);
    auto cfg = endpoint(ts);
    cfg.env_token_name = "FLOOP_TEST_TOKEN";
    HttpChatBackend be(cfg);
    be.generate(ocr_messages("x"), 16);
    ::unsetenv("FLOOP_TEST_TOKEN");
    EXPECT_EQ(auth_seen, "Bearer sekrit");
}

TEST(HttpChat, ReadTimeoutRaisesTimeoutError) {
    TestServer ts([&](httplib::Server& s) {
        s.Post("/v1/chat/completions",
               [&](const httplib::Request&, httplib::Response& res) {
                   std::this_thread::sleep_for(std::chrono::milliseconds(600));
                   res.set_content("{}", "application/json");
               });
    });
    REQUIRE_SERVER(ts);

    auto cfg = endpoint(ts);
    cfg.timeout_s = 0.1;
    HttpChatBackend be(cfg);
    EXPECT_THROW(be.generate(ocr_messages("x"), 16), TimeoutError);
}

TEST(HttpEmbedding, ParsesVectorAndChecksDim) {
    TestServer ts([&](httplib::Server& s) {
        s.Post("/v1/embeddings", [&](const httplib::Request& req, httplib::Response& res) {
            auto body = nlohmann::json::parse(req.body);
            EXPECT_EQ(body["input"], "some text");
            res.set_content(
                nlohmann::json{{"data", {{{"embedding", {0.1, 0.2, 0.3}}}}}}.dump(),
                "application/json");
        });
    });
    REQUIRE_SERVER(ts);

    HttpEmbeddingBackend ok(endpoint(ts), 3);
    auto v = ok.embed("some text");
    EXPECT_EQ(v.values, (std::vector<double>{0.1, 0.2, 0.3}));
    EXPECT_EQ(ok.dim(), 3u);

    HttpEmbeddingBackend wrong(endpoint(ts), 8);
    EXPECT_THROW(wrong.embed("some text"), EmbeddingError);
}

TEST(HttpEmbedding, TransportFailureBecomesEmbeddingError) {
    HttpEndpointConfig cfg;
    cfg.base_url = "http://127.0.0.1:1/v1";  // nothing listens here
    cfg.retries = 0;
    cfg.timeout_s = 2.0;
    HttpEmbeddingBackend be(cfg, 4);
    EXPECT_THROW(be.embed("x"), EmbeddingError);
}

}  // namespace
