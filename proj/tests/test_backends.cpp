#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <thread>

#include <httplib.h>

#include "refinery/engine.hpp"
#include "refinery/http_backend.hpp"
#include "refinery/recording.hpp"
#include "refinery/simenv.hpp"

using namespace refinery;

namespace {

// Local mock endpoint; each test configures handlers then queries through
// the adapters under test.
struct MockServer {
    httplib::Server server;
    int port = 0;
    std::thread thread;

    void start() {
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~MockServer() {
        server.stop();
        if (thread.joinable()) thread.join();
    }

    std::string base_url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

EndpointConfig quick_endpoint(const std::string& base_url) {
    EndpointConfig cfg;
    cfg.base_url = base_url;
    cfg.model = "test-model";
    cfg.timeout_s = 5.0;
    cfg.max_retries = 3;
    cfg.backoff_initial_ms = 1.0;
    cfg.backoff_multiplier = 1.5;
    return cfg;
}

std::string chat_body(const std::string& text) {
    return nlohmann::json{{"choices", {{{"message", {{"content", text}}}}}}}.dump();
}

}  // namespace

TEST_CASE("base64 round-trips binary data") {
    std::string data;
    for (int i = 0; i < 256; ++i) data.push_back(static_cast<char>(i));
    CHECK(base64_decode(base64_encode(data)) == data);
    CHECK(base64_encode("a") == "YQ==");
    CHECK(base64_encode("ab") == "YWI=");
    CHECK(base64_encode("abc") == "YWJj");
    CHECK_THROWS_AS(base64_decode("not~valid!"), ProtocolError);
}

TEST_CASE("chat call succeeds and parses the completion") {
    MockServer mock;
    std::atomic<int> hits{0};
    mock.server.Post("/v1/chat/completions", [&](const httplib::Request& req,
                                                 httplib::Response& res) {
        hits++;
        nlohmann::json body = nlohmann::json::parse(req.body);
        REQUIRE(body["model"] == "test-model");
        REQUIRE(body["messages"].is_array());
        res.set_content(chat_body("Action: CONTINUE\nPrompt: brighten the hills"),
                        "application/json");
    });
    mock.start();

    std::string reply = http_chat_call(quick_endpoint(mock.base_url()), "system text",
                                       "user text", {ImageRef{"", "image/png", "PNG"}});
    CHECK(reply == "Action: CONTINUE\nPrompt: brighten the hills");
    CHECK(hits == 1);
}

TEST_CASE("two transient 503s then success within max_retries") {
    MockServer mock;
    std::atomic<int> hits{0};
    mock.server.Post("/v1/chat/completions", [&](const httplib::Request&,
                                                 httplib::Response& res) {
        if (++hits <= 2) {
            res.status = 503;
            res.set_content("overloaded", "text/plain");
        } else {
            res.set_content(chat_body("ok"), "application/json");
        }
    });
    mock.start();

    std::string reply = http_chat_call(quick_endpoint(mock.base_url()), "", "hello", {});
    CHECK(reply == "ok");
    CHECK(hits == 3);  // success on the third attempt
}

TEST_CASE("non-retryable 401 rejects immediately") {
    MockServer mock;
    std::atomic<int> hits{0};
    mock.server.Post("/v1/chat/completions", [&](const httplib::Request&,
                                                 httplib::Response& res) {
        hits++;
        res.status = 401;
        res.set_content("bad token", "text/plain");
    });
    mock.start();

    CHECK_THROWS_AS(http_chat_call(quick_endpoint(mock.base_url()), "", "hello", {}),
                    BackendRejected);
    CHECK(hits == 1);
}

TEST_CASE("persistent failure exhausts retries") {
    MockServer mock;
    std::atomic<int> hits{0};
    mock.server.Post("/v1/chat/completions", [&](const httplib::Request&,
                                                 httplib::Response& res) {
        hits++;
        res.status = 503;
    });
    mock.start();

    EndpointConfig cfg = quick_endpoint(mock.base_url());
    cfg.max_retries = 2;
    CHECK_THROWS_AS(http_chat_call(cfg, "", "hello", {}), BackendUnavailable);
    CHECK(hits == 3);  // initial + 2 retries
}

TEST_CASE("auth token is read from the named env var") {
    MockServer mock;
    std::string seen_auth;
    mock.server.Post("/v1/chat/completions", [&](const httplib::Request& req,
                                                 httplib::Response& res) {
        seen_auth = req.get_header_value("Authorization");
        res.set_content(chat_body("ok"), "application/json");
    });
    mock.start();

    setenv("REFINERY_TEST_TOKEN", "sekrit", 1);
    EndpointConfig cfg = quick_endpoint(mock.base_url());
    cfg.auth_env = "REFINERY_TEST_TOKEN";
    http_chat_call(cfg, "", "hello", {});
    CHECK(seen_auth == "Bearer sekrit");
    unsetenv("REFINERY_TEST_TOKEN");
}

TEST_CASE("rate limiter delays the call over the per-minute cap") {
    using namespace std::chrono;
    steady_clock::time_point fake_now{};
    std::vector<milliseconds> sleeps;
    RateLimiter limiter(
        10, [&] { return fake_now; },
        [&](milliseconds d) {
            sleeps.push_back(d);
            fake_now += d;  // sleeping advances the fake clock
        });

    for (int i = 0; i < 10; ++i) limiter.acquire();
    CHECK(sleeps.empty());  // within the cap: no delay
    limiter.acquire();      // 11th call in the same minute
    REQUIRE_FALSE(sleeps.empty());
    CHECK(fake_now >= steady_clock::time_point{} + minutes(1));
}

TEST_CASE("image generation decodes base64 and fetches URLs") {
    MockServer mock;
    std::string last_key;
    std::atomic<int> image_hits{0};
    mock.server.Post("/v1/images", [&](const httplib::Request& req, httplib::Response& res) {
        image_hits++;
        last_key = req.get_header_value("Idempotency-Key");
        nlohmann::json body = nlohmann::json::parse(req.body);
        if (body["prompt"] == "use-url") {
            res.set_content(
                nlohmann::json{{"data", {{{"url", "http://127.0.0.1:" +
                                                      std::to_string(mock.port) +
                                                      "/img/cat.png"}}}}}
                    .dump(),
                "application/json");
        } else if (body["prompt"] == "no-fields") {
            res.set_content(nlohmann::json{{"data", {{{"size", "512"}}}}}.dump(),
                            "application/json");
        } else {
            res.set_content(nlohmann::json{{"data",
                                            {{{"b64", base64_encode("PNGBYTES")},
                                              {"media_type", "image/png"}}}}}
                                .dump(),
                            "application/json");
        }
    });
    mock.server.Get("/img/cat.png", [&](const httplib::Request&, httplib::Response& res) {
        res.set_content("URLBYTES", "image/png");
    });
    mock.start();
    EndpointConfig cfg = quick_endpoint(mock.base_url());

    ImageRef b64 = http_generate(cfg, "a corgi", nullptr, 7);
    CHECK(b64.bytes == "PNGBYTES");
    CHECK(b64.media_type == "image/png");
    CHECK_FALSE(last_key.empty());

    ImageRef url = http_generate(cfg, "use-url", nullptr, 7);
    CHECK(url.bytes == "URLBYTES");

    CHECK_THROWS_AS(http_generate(cfg, "no-fields", nullptr, 7), ProtocolError);

    // Local validation fires before any network call.
    const int before = image_hits.load();
    CHECK_THROWS_AS(http_generate(cfg, "", nullptr, 7), BackendRejected);
    CHECK(image_hits.load() == before);
}

TEST_CASE("retried edits reuse the same idempotency key") {
    MockServer mock;
    std::vector<std::string> keys;
    std::atomic<int> hits{0};
    mock.server.Post("/v1/images", [&](const httplib::Request& req, httplib::Response& res) {
        keys.push_back(req.get_header_value("Idempotency-Key"));
        if (++hits == 1) {
            res.status = 503;
        } else {
            res.set_content(
                nlohmann::json{{"data", {{{"b64", base64_encode("EDITED")}}}}}.dump(),
                "application/json");
        }
    });
    mock.start();

    ImageRef base{"", "image/png", "BASE"};
    ImageRef out = http_edit(quick_endpoint(mock.base_url()), base, "make it blue", nullptr, 3);
    CHECK(out.bytes == "EDITED");
    REQUIRE(keys.size() == 2);
    CHECK(keys[0] == keys[1]);
    CHECK_FALSE(keys[0].empty());
}

TEST_CASE("oversize image payloads are rejected locally") {
    ImageRef huge;
    huge.media_type = "image/png";
    huge.bytes.assign(kMaxImagePayloadBytes + 1, 'x');
    EndpointConfig cfg = quick_endpoint("http://127.0.0.1:9");  // never reached
    CHECK_THROWS_AS(http_edit(cfg, huge, "shrink", nullptr, 1), BackendRejected);
}

TEST_CASE("record then replay reproduces the run exactly") {
    namespace fs = std::filesystem;
    fs::path dir = fs::temp_directory_path() / "refinery_transcript_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const fs::path transcript = dir / "transcript.jsonl";

    SimParams params;
    params.k = 5;
    params.q = 0.4;  // keep the run from solving early
    params.p0 = 0.5;
    params.seed = 404;
    TaskPrompt task = make_sim_task(params);
    EngineConfig cfg;
    cfg.budget = validate_budget(16, 8, 2);
    cfg.seed = 11;
    cfg.workers = 1;

    std::pair<int, int> recorded_selection;
    std::size_t recorded_units = 0;
    {
        auto writer = std::make_shared<TranscriptWriter>(transcript);
        BackendSet recording = make_recording_backends(make_sim_backends(params), writer);
        RunJournal journal("rec");
        auto result = run_refinement(task, cfg, recording, journal);
        recorded_selection = {result.best_stream, static_cast<int>(result.best_index)};
        recorded_units = journal.unit_event_count();
    }

    auto store = TranscriptStore::load(transcript);
    // Generate/edit transcript entries match the units the run consumed.
    CHECK(store->count_kind("generate") + store->count_kind("edit") == recorded_units);

    {
        BackendSet replay = make_replay_backends(store);
        RunJournal journal("rep");
        auto result = run_refinement(task, cfg, replay, journal);
        CHECK(std::pair<int, int>{result.best_stream, static_cast<int>(result.best_index)} ==
              recorded_selection);
    }

    // Unseen request (different seed -> different keys): ReplayMiss.
    {
        BackendSet replay = make_replay_backends(store);
        EngineConfig other = cfg;
        other.seed = 999;
        RunJournal journal("miss");
        CHECK_THROWS_AS(run_refinement(task, other, replay, journal), RunFailed);
    }
    fs::remove_all(dir);
}

TEST_CASE("a B=4 run without early stops records exactly 4 generate/edit entries") {
    namespace fs = std::filesystem;
    fs::path file = fs::temp_directory_path() / "refinery_b4_transcript.jsonl";
    fs::remove(file);

    SimParams params;
    params.k = 5;
    params.p0 = 0.5;  // solving within two rounds is practically impossible
    params.q = 0.4;
    params.seed = 1717;
    EngineConfig cfg;
    cfg.budget = validate_budget(4, 2, 2);
    cfg.seed = 2;
    cfg.workers = 1;

    auto writer = std::make_shared<TranscriptWriter>(file);
    RunJournal journal("rec");
    run_refinement(make_sim_task(params), cfg,
                   make_recording_backends(make_sim_backends(params), writer), journal);
    REQUIRE(journal.count_kind(EventKind::Stopped) == 0);

    auto store = TranscriptStore::load(file);
    CHECK(store->count_kind("generate") + store->count_kind("edit") == 4);
    fs::remove(file);
}

TEST_CASE("replay store misses on unknown keys") {
    namespace fs = std::filesystem;
    fs::path file = fs::temp_directory_path() / "refinery_empty_transcript.jsonl";
    {
        TranscriptWriter writer(file);
        writer.record("generate", "{\"op\":\"generate\"}", nlohmann::json{{"b64", ""}});
    }
    auto store = TranscriptStore::load(file);
    CHECK_THROWS_AS(store->take("generate", "{\"op\":\"other\"}"), ReplayMiss);
    CHECK_NOTHROW(store->take("generate", "{\"op\":\"generate\"}"));
    fs::remove(file);
}
