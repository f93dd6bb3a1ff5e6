#pragma once

// Automatic construction of contrastive prompt-pair datasets for a trait.
//
// A text-generation backend is driven through three templated prompts: one for
// words describing the trait, one for behaviors, and one per pair that turns a
// behavior into a yes/no question. The question becomes a positive text ending
// in "? Yes" and a negative text ending in "? No".

#include "steer/hub.hpp"
#include "steer/model.hpp"
#include "steer/steering.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace steer::aca {

struct SeedContext {
    std::string trait;
    std::vector<std::string> seed_words;
    std::vector<std::string> seed_behaviors;
};

enum class Polarity { positive, negative };

struct GeneratedQuestion {
    std::string text;
    Polarity polarity = Polarity::positive;

    // "Yes" for positive questions, "No" for negative ones.
    std::string expected_answer() const { return polarity == Polarity::positive ? "Yes" : "No"; }
    std::string answered() const { return text + " " + expected_answer(); }
};

class LlmBackend {
public:
    virtual ~LlmBackend() = default;
    // Must be safe to call from several threads at once.
    virtual std::string generate(const std::string& prompt, int max_tokens, double temperature) = 0;
};

/// Canned responses for tests and offline runs.
///
/// JSON: {"rules": [{"match": "substring", "responses": ["first", "second"]}],
///        "default": "fallback"}. The first rule whose `match` occurs in the
/// prompt answers. Repeating the exact same prompt walks through `responses`
/// and then keeps returning the last one. A prompt no rule matches gets
/// `default`, or a BackendError when there is none.
class FixtureBackend : public LlmBackend {
public:
    explicit FixtureBackend(const nlohmann::json& fixture);
    static std::unique_ptr<FixtureBackend> from_file(const std::filesystem::path& path);

    std::string generate(const std::string& prompt, int max_tokens, double temperature) override;

    // Number of generate() calls served so far.
    std::size_t calls() const;

private:
    struct Rule {
        std::string match;
        std::vector<std::string> responses;
    };
    std::vector<Rule> rules_;
    std::optional<std::string> default_;
    mutable std::mutex mu_;
    std::map<std::pair<std::size_t, std::string>, std::size_t> cursor_;
    std::size_t calls_ = 0;
};

/// Minimal chat/completions client. Sends {model, messages, max_tokens,
/// temperature} (or {model, prompt, ...} in completion mode) with an optional
/// bearer token, and accepts the common response shapes:
/// choices[0].message.content, choices[0].text, or content[0].text.
class HttpChatBackend : public LlmBackend {
public:
    enum class Mode { chat, completion };

    HttpChatBackend(std::string url, std::string model, std::optional<std::string> api_key,
                    Mode mode = Mode::chat, int timeout_seconds = 60);

    // Reads the key from the named environment variable when it is set.
    static std::optional<std::string> api_key_from_env(const char* variable = "STEER_API_KEY");

    std::string generate(const std::string& prompt, int max_tokens, double temperature) override;

private:
    std::string base_;  // scheme://host[:port]
    std::string path_;
    std::string model_;
    std::optional<std::string> api_key_;
    Mode mode_;
    int timeout_seconds_;
};

/// Greedy decoding with a local model. Only temperature 0 is supported.
class ModelBackend : public LlmBackend {
public:
    explicit ModelBackend(ModelHandle model);
    std::string generate(const std::string& prompt, int max_tokens, double temperature) override;

private:
    ModelHandle model_;
};

/// Prompt templates. Placeholders: {trait} everywhere; {words}, {behaviors},
/// {behavior}, {index} (1-based) and {count} in the question template.
struct Templates {
    std::string version;
    std::string words;
    std::string behaviors;
    std::string question;

    /// Reads words.txt, behaviors.txt and question.txt from `dir`; the
    /// directory name is the version.
    static Templates load(const std::filesystem::path& dir);
    /// The templates shipped under resources/aca/v1.
    static Templates defaults();
};

std::filesystem::path default_template_dir();

std::string render(const std::string& tmpl, const std::map<std::string, std::string>& values);

struct Options {
    Templates templates = Templates::defaults();
    int max_tokens = 256;
    double temperature = 0.7;
    // Upper bound on concurrent backend requests during pair generation.
    int concurrency = 4;
    int max_attempts = 3;
};

/// Splits a response on newlines and commas, trims each item, drops list
/// markers ("-", "*", "1.", "2)") and empty items, and removes duplicates
/// keeping the first occurrence.
std::vector<std::string> parse_items(const std::string& response);

/// Extracts the question from a response: the first line containing '?',
/// cut after its last '?', with list markers removed. Returns nullopt when no
/// usable question is present.
std::optional<std::string> parse_question(const std::string& response);

SeedContext elicit_seed(const std::string& trait, LlmBackend& backend, const Options& options = {});

/// `count` pairs, one per behavior (cycling through the behaviors, or the
/// words when there are no behaviors). Each malformed response is retried up
/// to `max_attempts` total tries before a BackendError.
PromptPairSet generate_pairs(const SeedContext& seed, LlmBackend& backend, int count,
                             const Options& options = {});

std::vector<GeneratedQuestion> questions_of(const PromptPair& pair);

struct BuildResult {
    std::uint32_t entry_id = 0;
    SeedContext seed;
    PromptPairSet pairs;
    ControlVector vector;
};

/// elicit -> generate -> extract -> hub save. Failures are rethrown as
/// StageError labelled "elicit", "generate", "extract" or "save".
BuildResult build_and_save(const std::string& trait, LlmBackend& backend, const ModelHandle& model,
                           const std::vector<int>& layers, const std::filesystem::path& hub_path, int count,
                           const Options& options = {}, std::int64_t timestamp = 0, bool replace = false,
                           ReadPosition read_position = ReadPosition::last_token);

}  // namespace steer::aca
