#include "featsteer/judge.hpp"

#include <atomic>
#include <mutex>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "test_util.hpp"

using namespace featsteer;
using nlohmann::json;

namespace {

// Loopback endpoint standing in for the scoring API.
class StubServer {
  public:
    httplib::Server server;

    void start() {
        port_ = server.bind_to_any_port("127.0.0.1");
        REQUIRE(port_ > 0);
        thread_ = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    std::string url(const std::string& path) const {
        return "http://127.0.0.1:" + std::to_string(port_) + path;
    }

    ~StubServer() {
        server.stop();
        if (thread_.joinable()) thread_.join();
    }

  private:
    int port_ = 0;
    std::thread thread_;
};

std::string chat_body(const std::string& content) {
    json j;
    j["choices"] = json::array({{{"message", {{"content", content}}}}});
    return j.dump();
}

RemoteJudgeConfig remote_cfg(const std::string& url) {
    RemoteJudgeConfig cfg;
    cfg.url = url;
    cfg.model = "judge-model";
    cfg.timeout_seconds = 5;
    return cfg;
}

}  // namespace

TEST_CASE("rendered prompts carry the request verbatim") {
    JudgeRequest req;
    req.prompt = "tell me about meadows";
    req.response = "meadows are quiet fields";
    const std::string rendered = render_judge_prompt(req);
    CHECK(rendered.find(req.prompt) != std::string::npos);
    CHECK(rendered.find(req.response) != std::string::npos);
    CHECK(rendered.find("{{PROMPT}}") == std::string::npos);
    CHECK(rendered.find("{{RESPONSE}}") == std::string::npos);
}

TEST_CASE("slot markers inside the response stay literal") {
    JudgeRequest req;
    req.prompt = "p";
    req.response = "echo {{PROMPT}} and {{RESPONSE}} markers";
    const std::string rendered = render_judge_prompt(req);
    CHECK(rendered.find(req.response) != std::string::npos);
}

TEST_CASE("template ids are validated") {
    JudgeRequest req;
    req.template_id = "does-not-exist";
    CHECK_THROWS_AS(render_judge_prompt(req), JudgeError);
    req.template_id = "../qi-2024";
    CHECK_THROWS_AS(render_judge_prompt(req), JudgeError);
}

TEST_CASE("score parsing follows the marker-first contract") {
    CHECK(parse_score("#thescore: 4") == 4);
    CHECK(parse_score("reasoning...\n#thescore: 1\n") == 1);
    CHECK(parse_score("#thescore: 2\nrevised\n#thescore: 3") == 3);
    CHECK(parse_score("I rate this 5 out of 5.") == 5);
    CHECK(parse_score("a 4 b") == 4);
    CHECK(parse_score("blah 10 blah 3") == 3);
    CHECK_THROWS_AS(parse_score("no judgment possible"), JudgeError);
    CHECK_THROWS_AS(parse_score("#thescore: 7"), JudgeError);
    CHECK_THROWS_AS(parse_score("#thescore: none"), JudgeError);
    CHECK_THROWS_AS(parse_score("t4"), JudgeError);
    CHECK_THROWS_AS(parse_score(""), JudgeError);
}

TEST_CASE("mock judge counts lexicon words") {
    MockJudge judge({"t2", "t5", "t9"});

    JudgeRequest req;
    req.prompt = "irrelevant";
    req.response = "t1 t3 t4";
    CHECK(judge.score(req).value == 1);

    req.response = "t2 plus t5 words";
    const HarmScore two_hits = judge.score(req);
    CHECK(two_hits.value == 3);
    CHECK(two_hits.judge_id == "mock");
    CHECK(parse_score(two_hits.raw_judge_text) == 3);

    req.response = "t2 t2 t5 t9 t2 t5";
    CHECK(judge.score(req).value == 5);

    req.response = "t20 t50";  // substrings are not word hits
    CHECK(judge.score(req).value == 1);

    req.response = "";
    CHECK_THROWS_AS(judge.score(req), JudgeError);

    req.response = "t2";
    CHECK(judge.score(req).value == judge.score(req).value);
}

TEST_CASE("lexicon files skip comments and trim whitespace") {
    testutil::TempDir tmp("lexicon");
    testutil::write_file(tmp / "lex.txt", "# header\n  alpha  \n\nbeta\r\n# tail\n");
    const std::vector<std::string> words = load_lexicon(tmp / "lex.txt");
    CHECK(words == std::vector<std::string>{"alpha", "beta"});
    CHECK_THROWS_AS(load_lexicon(tmp / "missing.txt"), IoError);
}

TEST_CASE("make_judge dispatches by kind") {
    CHECK(make_judge("mock", {"w"}, {})->id() == "mock");
    CHECK_THROWS_AS(make_judge("bogus", {}, {}), std::invalid_argument);
    CHECK_THROWS_AS(make_judge("remote", {}, {}), std::invalid_argument);

    RemoteJudgeConfig cfg = remote_cfg("http://127.0.0.1:1/v1");
    CHECK(make_judge("remote", {}, cfg)->id() == "remote:judge-model");
}

TEST_CASE("remote judge posts the rendered prompt and parses the verdict") {
    StubServer stub;
    std::atomic<int> requests{0};
    std::mutex mu;
    json seen_body;
    std::string seen_auth;
    stub.server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        ++requests;
        std::lock_guard<std::mutex> lock(mu);
        seen_body = json::parse(req.body);
        seen_auth = req.get_header_value("Authorization");
        res.set_content(chat_body("verdict follows\n#thescore: 2"), "application/json");
    });
    stub.start();

    RemoteJudgeConfig cfg = remote_cfg(stub.url("/v1/chat/completions"));
    cfg.auth_token = "sekret";
    cfg.temperature = 0.25;
    RemoteJudge judge(cfg);

    JudgeRequest req;
    req.prompt = "about the meadow";
    req.response = "a gentle answer";
    const HarmScore score = judge.score(req);
    CHECK(score.value == 2);
    CHECK(score.judge_id == "remote:judge-model");
    CHECK(score.raw_judge_text.find("#thescore: 2") != std::string::npos);
    CHECK(requests.load() == 1);

    std::lock_guard<std::mutex> lock(mu);
    CHECK(seen_body["model"] == "judge-model");
    CHECK(seen_body["temperature"] == doctest::Approx(0.25));
    REQUIRE(seen_body["messages"].size() == 1);
    CHECK(seen_body["messages"][0]["role"] == "user");
    const std::string content = seen_body["messages"][0]["content"].get<std::string>();
    CHECK(content.find(req.prompt) != std::string::npos);
    CHECK(content.find(req.response) != std::string::npos);
    CHECK(seen_auth == "Bearer sekret");
}

TEST_CASE("remote judge understands the fallback wire shapes") {
    StubServer stub;
    std::atomic<int> mode{0};
    stub.server.Post("/score", [&](const httplib::Request&, httplib::Response& res) {
        json j;
        switch (mode.load()) {
            case 0: j["choices"] = json::array({{{"text", "#thescore: 4"}}}); break;
            case 1: j["content"] = "3"; break;
            default: j["completion"] = "#thescore: 5"; break;
        }
        res.set_content(j.dump(), "application/json");
    });
    stub.start();

    RemoteJudge judge(remote_cfg(stub.url("/score")));
    JudgeRequest req;
    req.prompt = "p";
    req.response = "r";
    CHECK(judge.score(req).value == 4);
    mode = 1;
    CHECK(judge.score(req).value == 3);
    mode = 2;
    CHECK(judge.score(req).value == 5);
}

TEST_CASE("malformed verdicts are not retried") {
    StubServer stub;
    std::atomic<int> requests{0};
    stub.server.Post("/score", [&](const httplib::Request&, httplib::Response& res) {
        ++requests;
        res.set_content(chat_body("#thescore: 9"), "application/json");
    });
    stub.start();

    RemoteJudge judge(remote_cfg(stub.url("/score")));
    JudgeRequest req;
    req.prompt = "p";
    req.response = "r";
    CHECK_THROWS_AS(judge.score(req), JudgeError);
    CHECK(requests.load() == 1);
}

TEST_CASE("server errors are retried until the attempt budget runs out") {
    StubServer stub;
    std::atomic<int> requests{0};
    stub.server.Post("/score", [&](const httplib::Request&, httplib::Response& res) {
        const int n = ++requests;
        if (n < 2) {
            res.status = 500;
            res.set_content("overloaded", "text/plain");
        } else {
            res.set_content(chat_body("#thescore: 1"), "application/json");
        }
    });
    stub.start();

    RemoteJudge judge(remote_cfg(stub.url("/score")));
    JudgeRequest req;
    req.prompt = "p";
    req.response = "r";
    CHECK(judge.score(req).value == 1);
    CHECK(requests.load() == 2);
}

TEST_CASE("an unreachable endpoint fails after the configured attempts") {
    RemoteJudgeConfig cfg = remote_cfg("http://127.0.0.1:1/score");
    cfg.attempts = 3;
    cfg.timeout_seconds = 1;
    RemoteJudge judge(cfg);
    JudgeRequest req;
    req.prompt = "p";
    req.response = "r";
    try {
        judge.score(req);
        FAIL("expected JudgeError");
    } catch (const JudgeError& e) {
        CHECK(std::string(e.what()).find("after 3 attempts") != std::string::npos);
    }
}
