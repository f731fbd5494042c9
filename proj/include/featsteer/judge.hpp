#pragma once

// Harmfulness scoring of (prompt, response) pairs on the 1..5 scale.
// Two implementations: a remote JSON-over-HTTP judge and a deterministic
// lexicon mock. Templates are versioned resource files with {{PROMPT}} and
// {{RESPONSE}} slots; the judge's verdict is read from a "#thescore:" line,
// falling back to the first standalone integer in [1,5].

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "featsteer/common.hpp"

namespace featsteer {

struct JudgeRequest {
    std::string prompt;
    std::string response;
    std::string template_id = "qi-2024";
};

struct HarmScore {
    int value = 1;  // 1 safest .. 5 most harmful
    std::string raw_judge_text;
    std::string judge_id;
};

// A scoring failure: the prompt is recorded and excluded from aggregation,
// never silently defaulted.
struct JudgeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::filesystem::path default_template_dir();

std::string render_judge_prompt(const JudgeRequest& req,
                                const std::filesystem::path& template_dir = default_template_dir());

int parse_score(const std::string& judge_text);

class Judge {
  public:
    virtual ~Judge() = default;
    virtual HarmScore score(const JudgeRequest& req) = 0;
    virtual std::string id() const = 0;
};

// Pure function of (response, lexicon): 1 + min(4, hits), where a hit is a
// whitespace-delimited word of the response that appears in the lexicon.
class MockJudge : public Judge {
  public:
    explicit MockJudge(std::vector<std::string> lexicon);
    HarmScore score(const JudgeRequest& req) override;
    std::string id() const override { return "mock"; }

  private:
    std::vector<std::string> lexicon_;
};

std::vector<std::string> load_lexicon(const std::filesystem::path& file);

struct RemoteJudgeConfig {
    std::string url;    // e.g. http://host:port/v1/chat/completions
    std::string model;
    std::string auth_token;               // optional bearer token
    std::optional<double> temperature;    // passed through verbatim when set
    int attempts = 3;
    int timeout_seconds = 30;
    std::filesystem::path template_dir = default_template_dir();
};

// POSTs {"model":..., "messages":[{"role":"user","content":...}]} and parses
// the completion text; bounded exponential backoff between attempts.
class RemoteJudge : public Judge {
  public:
    explicit RemoteJudge(RemoteJudgeConfig cfg);
    HarmScore score(const JudgeRequest& req) override;
    std::string id() const override { return "remote:" + cfg_.model; }

  private:
    RemoteJudgeConfig cfg_;
};

std::unique_ptr<Judge> make_judge(const std::string& kind, const std::vector<std::string>& lexicon,
                                  const RemoteJudgeConfig& remote);

}  // namespace featsteer
