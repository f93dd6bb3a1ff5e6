#include "steer/aca.hpp"

#include "steer/errors.hpp"
#include "steer/text_util.hpp"

#include "httplib.h"
#include "parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <regex>
#include <unordered_set>

namespace steer::aca {

FixtureBackend::FixtureBackend(const nlohmann::json& fixture) {
    try {
        for (const auto& r : fixture.value("rules", nlohmann::json::array())) {
            Rule rule{r.at("match").get<std::string>(), r.at("responses").get<std::vector<std::string>>()};
            if (rule.responses.empty()) throw FormatError("fixture rule '" + rule.match + "' has no responses");
            rules_.push_back(std::move(rule));
        }
        if (fixture.contains("default")) default_ = fixture.at("default").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("bad fixture: ") + e.what());
    }
}

std::unique_ptr<FixtureBackend> FixtureBackend::from_file(const std::filesystem::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(detail::read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("fixture " + path.string() + ": " + e.what());
    }
    return std::make_unique<FixtureBackend>(j);
}

std::string FixtureBackend::generate(const std::string& prompt, int, double) {
    std::lock_guard lock(mu_);
    ++calls_;
    for (std::size_t i = 0; i < rules_.size(); ++i) {
        if (prompt.find(rules_[i].match) == std::string::npos) continue;
        auto& n = cursor_[{i, prompt}];
        const auto& responses = rules_[i].responses;
        const std::string& out = responses[std::min(n, responses.size() - 1)];
        ++n;
        return out;
    }
    if (default_) return *default_;
    throw BackendError("fixture has no response for prompt: " + prompt.substr(0, 80));
}

std::size_t FixtureBackend::calls() const {
    std::lock_guard lock(mu_);
    return calls_;
}

HttpChatBackend::HttpChatBackend(std::string url, std::string model, std::optional<std::string> api_key, Mode mode,
                                 int timeout_seconds)
    : model_(std::move(model)), api_key_(std::move(api_key)), mode_(mode), timeout_seconds_(timeout_seconds) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw PreconditionError("backend url must be http(s)://host[:port]/path, got '" + url + "'");
    base_ = m[1];
    path_ = m[2].matched ? std::string(m[2]) : std::string("/");
}

std::optional<std::string> HttpChatBackend::api_key_from_env(const char* variable) {
    if (const char* v = std::getenv(variable); v != nullptr && *v != '\0') return std::string(v);
    return std::nullopt;
}

std::string HttpChatBackend::generate(const std::string& prompt, int max_tokens, double temperature) {
    nlohmann::json body{{"model", model_}, {"max_tokens", max_tokens}, {"temperature", temperature}};
    if (mode_ == Mode::chat) {
        body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", prompt}}});
    } else {
        body["prompt"] = prompt;
    }

    httplib::Client client(base_);
    client.set_connection_timeout(timeout_seconds_, 0);
    client.set_read_timeout(timeout_seconds_, 0);
    httplib::Headers headers;
    if (api_key_) headers.emplace("Authorization", "Bearer " + *api_key_);

    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw BackendError("request to " + base_ + path_ + " failed: " + httplib::to_string(res.error()));
    if (res->status < 200 || res->status >= 300) {
        throw BackendError("backend returned HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
    }

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception& e) {
        throw BackendError(std::string("backend response is not JSON: ") + e.what());
    }
    const nlohmann::json::json_pointer candidates[] = {
        nlohmann::json::json_pointer("/choices/0/message/content"),
        nlohmann::json::json_pointer("/choices/0/text"),
        nlohmann::json::json_pointer("/content/0/text"),
    };
    for (const auto& ptr : candidates) {
        if (j.contains(ptr) && j.at(ptr).is_string()) return j.at(ptr).get<std::string>();
    }
    throw BackendError("backend response has no recognizable text field");
}

ModelBackend::ModelBackend(ModelHandle model) : model_(std::move(model)) {}

std::string ModelBackend::generate(const std::string& prompt, int max_tokens, double temperature) {
    if (temperature != 0.0) throw BackendError("local model backend only supports temperature 0 (greedy decoding)");
    try {
        const auto& tok = model_->tokenizer();
        auto ids = tok.encode(prompt);
        auto out = greedy_decode(model_, ids, max_tokens);
        return tok.decode(std::span<const TokenId>(out).subspan(ids.size()));
    } catch (const Error& e) {
        throw BackendError(std::string("local model: ") + e.what());
    }
}

namespace {

std::string strip_trailing_newlines(std::string s) {
    while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) s.pop_back();
    return s;
}

std::string join(const std::vector<std::string>& items, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += sep;
        out += items[i];
    }
    return out;
}

// "- x", "* x", "1. x", "2) x" -> "x"
std::string strip_list_marker(std::string_view s) {
    s = detail::trim(s);
    static const std::regex marker(R"(^(?:[-*•]+|\d+[.)])\s*)");
    std::string str(s);
    std::smatch m;
    if (std::regex_search(str, m, marker)) str = str.substr(static_cast<std::size_t>(m.length(0)));
    return std::string(detail::trim(str));
}

}  // namespace

Templates Templates::load(const std::filesystem::path& dir) {
    Templates t;
    t.version = dir.filename().string();
    if (t.version.empty()) t.version = dir.parent_path().filename().string();
    t.words = strip_trailing_newlines(detail::read_text_file(dir / "words.txt"));
    t.behaviors = strip_trailing_newlines(detail::read_text_file(dir / "behaviors.txt"));
    t.question = strip_trailing_newlines(detail::read_text_file(dir / "question.txt"));
    return t;
}

std::filesystem::path default_template_dir() { return detail::resource_dir() / "aca" / "v1"; }

Templates Templates::defaults() { return load(default_template_dir()); }

std::string render(const std::string& tmpl, const std::map<std::string, std::string>& values) {
    std::string out;
    out.reserve(tmpl.size());
    std::size_t i = 0;
    while (i < tmpl.size()) {
        if (tmpl[i] == '{') {
            auto close = tmpl.find('}', i + 1);
            if (close != std::string::npos) {
                auto it = values.find(tmpl.substr(i + 1, close - i - 1));
                if (it != values.end()) {
                    out += it->second;
                    i = close + 1;
                    continue;
                }
            }
        }
        out += tmpl[i++];
    }
    return out;
}

std::vector<std::string> parse_items(const std::string& response) {
    std::vector<std::string> out;
    std::unordered_set<std::string> seen;
    for (auto line : detail::split_lines(response)) {
        for (const auto& piece : detail::split(line, ',')) {
            auto item = strip_list_marker(piece);
            if (item.empty() || !seen.insert(item).second) continue;
            out.push_back(std::move(item));
        }
    }
    return out;
}

std::optional<std::string> parse_question(const std::string& response) {
    for (auto line : detail::split_lines(response)) {
        auto q = line.rfind('?');
        if (q == std::string_view::npos) continue;
        auto text = strip_list_marker(line.substr(0, q));
        if (text.empty()) continue;
        return text + "?";
    }
    return std::nullopt;
}

SeedContext elicit_seed(const std::string& trait, LlmBackend& backend, const Options& options) {
    if (trait.empty()) throw PreconditionError("trait name is empty");
    const std::map<std::string, std::string> vars{{"trait", trait}};
    SeedContext seed{trait, {}, {}};
    seed.seed_words = parse_items(backend.generate(render(options.templates.words, vars), options.max_tokens,
                                                   options.temperature));
    seed.seed_behaviors = parse_items(backend.generate(render(options.templates.behaviors, vars),
                                                       options.max_tokens, options.temperature));
    if (seed.seed_words.empty() && seed.seed_behaviors.empty()) {
        throw EmptySeedError("backend returned no words or behaviors for trait '" + trait + "'");
    }
    return seed;
}

namespace {

std::string question_for(const SeedContext& seed, LlmBackend& backend, int index, int count, const Options& options) {
    const auto& pool = seed.seed_behaviors.empty() ? seed.seed_words : seed.seed_behaviors;
    const std::map<std::string, std::string> vars{
        {"trait", seed.trait},
        {"words", join(seed.seed_words, ", ")},
        {"behaviors", join(seed.seed_behaviors, "; ")},
        {"behavior", pool[static_cast<std::size_t>(index) % pool.size()]},
        {"index", std::to_string(index + 1)},
        {"count", std::to_string(count)},
    };
    const std::string prompt = render(options.templates.question, vars);
    std::string last;
    for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
        last = backend.generate(prompt, options.max_tokens, options.temperature);
        if (auto q = parse_question(last)) return *q;
    }
    throw BackendError("no question in " + std::to_string(options.max_attempts) + " attempts for pair " +
                       std::to_string(index + 1) + " of '" + seed.trait + "'; last response: " + last.substr(0, 120));
}

}  // namespace

PromptPairSet generate_pairs(const SeedContext& seed, LlmBackend& backend, int count, const Options& options) {
    if (count < 1) throw PreconditionError("pair count must be at least 1");
    if (seed.trait.empty()) throw PreconditionError("seed context has no trait");
    if (seed.seed_words.empty() && seed.seed_behaviors.empty()) {
        throw EmptySeedError("seed context for '" + seed.trait + "' has no words or behaviors");
    }
    if (options.max_attempts < 1) throw PreconditionError("max_attempts must be at least 1");

    std::vector<std::string> questions(static_cast<std::size_t>(count));
    detail::parallel_for(questions.size(), options.concurrency, [&](std::size_t i) {
        questions[i] = question_for(seed, backend, static_cast<int>(i), count, options);
    });

    PromptPairSet set{seed.trait, {}};
    for (auto& q : questions) {
        GeneratedQuestion pos{q, Polarity::positive}, neg{q, Polarity::negative};
        set.pairs.push_back({pos.answered(), neg.answered(), seed.trait});
    }
    return set;
}

std::vector<GeneratedQuestion> questions_of(const PromptPair& pair) {
    auto strip = [](const std::string& text, std::string_view suffix) -> std::string {
        if (text.size() < suffix.size() || text.compare(text.size() - suffix.size(), suffix.size(), suffix) != 0) {
            throw PreconditionError("text does not end with '" + std::string(suffix) + "': " + text);
        }
        return text.substr(0, text.size() - suffix.size());
    };
    return {{strip(pair.positive, " Yes"), Polarity::positive}, {strip(pair.negative, " No"), Polarity::negative}};
}

namespace {

template <class F>
auto stage(const char* name, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const std::exception& e) {
        throw StageError(name, e.what(), std::current_exception());
    }
}

}  // namespace

BuildResult build_and_save(const std::string& trait, LlmBackend& backend, const ModelHandle& model,
                           const std::vector<int>& layers, const std::filesystem::path& hub_path, int count,
                           const Options& options, std::int64_t timestamp, bool replace,
                           ReadPosition read_position) {
    if (layers.empty()) throw PreconditionError("no layers requested");
    if (count < 1) throw PreconditionError("pair count must be at least 1");
    BuildResult result;
    result.seed = stage("elicit", [&] { return elicit_seed(trait, backend, options); });
    result.pairs = stage("generate", [&] { return generate_pairs(result.seed, backend, count, options); });
    result.vector = stage("extract", [&] {
        return extract_control_vector(model, result.pairs, layers, read_position, timestamp);
    });
    result.entry_id = stage("save", [&] { return Hub(hub_path).save(result.vector, replace); });
    return result;
}

}  // namespace steer::aca
