#include "steer/aca.hpp"
#include "steer/errors.hpp"
#include "steer/synth.hpp"
#include "support/test_models.hpp"

#include "httplib.h"

#include <gtest/gtest.h>

#include <thread>

using namespace steer;
using namespace steer::aca;
using steer::testing::TempDir;
using steer::testing::tiny_config;

namespace {

Options fast_options() {
    Options o;
    o.temperature = 0.0;
    return o;
}

// Words and behavior prompts are recognized by phrases in the shipped templates.
nlohmann::json prepared_fixture(std::vector<std::string> questions = {"You are always prepared?"}) {
    return {
        {"rules",
         {
             {{"match", "comma-separated list of words"}, {"responses", {"organized, careful, organized, diligent"}}},
             {{"match", "one short behavior per line"}, {"responses", {"always prepared\nkeeps promises\n"}}},
             {{"match", "behavior: always prepared"}, {"responses", questions}},
             {{"match", "behavior: keeps promises"}, {"responses", {"1. Do you keep every promise you make? Yes"}}},
         }},
    };
}

}  // namespace

TEST(ParseItems, SplitsTrimsAndDeduplicates) {
    EXPECT_EQ(parse_items("helpful, flattering, agreeable"),
              (std::vector<std::string>{"helpful", "flattering", "agreeable"}));
    EXPECT_EQ(parse_items("b, a\n- b\n  * c  \n\n2) a, d"), (std::vector<std::string>{"b", "a", "c", "d"}));
    EXPECT_TRUE(parse_items("").empty());
    EXPECT_TRUE(parse_items(" ,\n , - ").empty());
}

TEST(ParseQuestion, CutsAtLastQuestionMark) {
    EXPECT_EQ(parse_question("You are always prepared?"), "You are always prepared?");
    EXPECT_EQ(parse_question("Sure!\n- Are you tidy? Really? Yes"), "Are you tidy? Really?");
    EXPECT_EQ(parse_question("no question here"), std::nullopt);
    EXPECT_EQ(parse_question("?"), std::nullopt);
}

TEST(Render, SubstitutesKnownPlaceholdersOnly) {
    EXPECT_EQ(render("{trait} and {other} {trait}", {{"trait", "Warm"}}), "Warm and {other} Warm");
    EXPECT_EQ(render("{unterminated", {{"unterminated", "x"}}), "{unterminated");
}

TEST(Templates, ShippedSetLoads) {
    auto t = Templates::defaults();
    EXPECT_EQ(t.version, "v1");
    EXPECT_NE(t.words.find("{trait}"), std::string::npos);
    EXPECT_NE(t.question.find("{behavior}"), std::string::npos);
}

TEST(Fixture, CursorAdvancesPerPromptAndRepeatsLast) {
    FixtureBackend b({{"rules", {{{"match", "q"}, {"responses", {"one", "two"}}}}}, {"default", "dflt"}});
    EXPECT_EQ(b.generate("q1", 10, 0), "one");
    EXPECT_EQ(b.generate("q2", 10, 0), "one");
    EXPECT_EQ(b.generate("q1", 10, 0), "two");
    EXPECT_EQ(b.generate("q1", 10, 0), "two");
    EXPECT_EQ(b.generate("zzz", 10, 0), "dflt");
    EXPECT_EQ(b.calls(), 5u);
    FixtureBackend strict(nlohmann::json{{"rules", nlohmann::json::array()}});
    EXPECT_THROW(strict.generate("x", 1, 0), BackendError);
}

TEST(ElicitSeed, ParsesBothLists) {
    FixtureBackend b(prepared_fixture());
    auto seed = elicit_seed("Conscientiousness", b, fast_options());
    EXPECT_EQ(seed.trait, "Conscientiousness");
    EXPECT_EQ(seed.seed_words, (std::vector<std::string>{"organized", "careful", "diligent"}));
    EXPECT_EQ(seed.seed_behaviors, (std::vector<std::string>{"always prepared", "keeps promises"}));
}

TEST(ElicitSeed, ThreeWords) {
    FixtureBackend b({{"rules", {{{"match", "words"}, {"responses", {"helpful, flattering, agreeable"}}}}},
                      {"default", ""}});
    EXPECT_EQ(elicit_seed("Sycophancy", b).seed_words.size(), 3u);
}

TEST(ElicitSeed, EmptyResponsesAreAnError) {
    FixtureBackend b(nlohmann::json{{"default", ""}});
    EXPECT_THROW(elicit_seed("Warmth", b), EmptySeedError);
    EXPECT_THROW(elicit_seed("", b), PreconditionError);
}

TEST(GeneratePairs, SinglePairFromBehavior) {
    FixtureBackend b(prepared_fixture());
    SeedContext seed{"Conscientiousness", {}, {"always prepared"}};
    auto set = generate_pairs(seed, b, 1, fast_options());
    ASSERT_EQ(set.pairs.size(), 1u);
    EXPECT_EQ(set.pairs[0].positive, "You are always prepared? Yes");
    EXPECT_EQ(set.pairs[0].negative, "You are always prepared? No");
    EXPECT_EQ(set.pairs[0].trait, "Conscientiousness");
}

TEST(GeneratePairs, CountAndOrderFollowBehaviors) {
    FixtureBackend b(prepared_fixture());
    SeedContext seed{"Conscientiousness", {"organized"}, {"always prepared", "keeps promises"}};
    auto set = generate_pairs(seed, b, 3, fast_options());
    ASSERT_EQ(set.pairs.size(), 3u);
    EXPECT_EQ(set.pairs[0].positive, "You are always prepared? Yes");
    EXPECT_EQ(set.pairs[1].positive, "Do you keep every promise you make? Yes");
    EXPECT_EQ(set.pairs[2].positive, "You are always prepared? Yes");
    for (const auto& p : set.pairs) {
        EXPECT_EQ(p.trait, "Conscientiousness");
        auto qs = questions_of(p);
        EXPECT_EQ(qs[0].text, qs[1].text);
        EXPECT_EQ(qs[0].expected_answer(), "Yes");
        EXPECT_EQ(qs[1].expected_answer(), "No");
    }
}

TEST(GeneratePairs, MalformedResponseIsRetried) {
    FixtureBackend b(prepared_fixture({"I cannot think of one.", "You are always prepared?"}));
    SeedContext seed{"Conscientiousness", {}, {"always prepared"}};
    auto set = generate_pairs(seed, b, 1, fast_options());
    EXPECT_EQ(set.pairs[0].positive, "You are always prepared? Yes");
    EXPECT_EQ(b.calls(), 2u);
}

TEST(GeneratePairs, RetriesAreBounded) {
    FixtureBackend b(prepared_fixture({"nope", "still nope", "no", "You are always prepared?"}));
    SeedContext seed{"Conscientiousness", {}, {"always prepared"}};
    EXPECT_THROW(generate_pairs(seed, b, 1, fast_options()), BackendError);
    EXPECT_EQ(b.calls(), 3u);
    EXPECT_THROW(generate_pairs(seed, b, 0, fast_options()), PreconditionError);
}

TEST(GeneratePairs, ConcurrencyDoesNotChangeResult) {
    nlohmann::json fx{{"rules", nlohmann::json::array()}};
    std::vector<std::string> behaviors;
    for (int i = 0; i < 12; ++i) {
        behaviors.push_back("habit " + std::to_string(i));
        fx["rules"].push_back({{"match", "behavior: habit " + std::to_string(i) + "."},
                               {"responses", {"Do you have habit " + std::to_string(i) + "?"}}});
    }
    SeedContext seed{"T", {}, behaviors};
    auto opts = fast_options();
    opts.concurrency = 1;
    FixtureBackend serial_backend(fx);
    auto serial = generate_pairs(seed, serial_backend, 12, opts);
    opts.concurrency = 8;
    FixtureBackend parallel_backend(fx);
    auto parallel = generate_pairs(seed, parallel_backend, 12, opts);
    EXPECT_EQ(pairs_to_jsonl(serial), pairs_to_jsonl(parallel));
    EXPECT_EQ(parallel.pairs[7].positive, "Do you have habit 7? Yes");
}

TEST(BuildAndSave, DeterministicAndEqualToDirectExtraction) {
    TempDir dir;
    auto model = random_model(tiny_config(3, 8), 21);
    std::vector<int> layers{1, 2};
    FixtureBackend b1(prepared_fixture()), b2(prepared_fixture());
    auto r1 = build_and_save("Conscientiousness", b1, model, layers, dir / "a.clmv", 4, fast_options(), 7);
    auto r2 = build_and_save("Conscientiousness", b2, model, layers, dir / "b.clmv", 4, fast_options(), 7);
    EXPECT_EQ(r1.entry_id, 0u);
    auto e1 = Hub(dir / "a.clmv").list().at(0);
    auto e2 = Hub(dir / "b.clmv").list().at(0);
    EXPECT_EQ(e1.checksum, e2.checksum);
    EXPECT_EQ(r1.vector, r2.vector);

    auto direct = extract_control_vector(model, r1.pairs, layers, ReadPosition::last_token, 7);
    EXPECT_EQ(Hub(dir / "a.clmv").load("Conscientiousness", model->id()), direct);
}

TEST(BuildAndSave, ErrorsCarryStage) {
    TempDir dir;
    auto model = random_model(tiny_config(2, 8), 1);
    FixtureBackend empty(nlohmann::json{{"default", ""}});
    EXPECT_THROW(build_and_save("T", empty, model, {}, dir / "h.clmv", 1), PreconditionError);
    try {
        build_and_save("T", empty, model, {0}, dir / "h.clmv", 1);
        FAIL();
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "elicit");
        EXPECT_THROW(std::rethrow_exception(e.cause()), EmptySeedError);
    }
    FixtureBackend fine(prepared_fixture());
    try {
        build_and_save("T", fine, model, {5}, dir / "h.clmv", 1, fast_options());
        FAIL();
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "extract");
    }
}

TEST(PairsJsonl, RoundTrip) {
    TempDir dir;
    PromptPairSet set{"T", {{"a? Yes", "a? No", "T"}, {"say \"hi\"? Yes", "say \"hi\"? No", "T"}}};
    write_pairs_jsonl(set, dir / "p.jsonl");
    auto back = read_pairs_jsonl(dir / "p.jsonl");
    EXPECT_EQ(back.trait, "T");
    EXPECT_EQ(pairs_to_jsonl(back), pairs_to_jsonl(set));
    EXPECT_THROW(parse_pairs_jsonl("{\"trait\":\"a\",\"positive\":\"x\",\"negative\":\"y\"}\n"
                                   "{\"trait\":\"b\",\"positive\":\"x\",\"negative\":\"y\"}\n"),
                 FormatError);
    EXPECT_THROW(parse_pairs_jsonl("not json"), FormatError);
}

TEST(ModelBackend, GreedyAndRejectsSampling) {
    auto model = steer::testing::constant_token_model(tiny_config(1, 8), 'z');
    ModelBackend b(model);
    EXPECT_EQ(b.generate("hi", 3, 0.0), "zzz");
    EXPECT_THROW(b.generate("hi", 3, 0.5), BackendError);
}

class ChatServer : public ::testing::Test {
protected:
    void SetUp() override {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            last_auth_ = req.get_header_value("Authorization");
            last_body_ = nlohmann::json::parse(req.body);
            nlohmann::json out{{"choices", {{{"message", {{"role", "assistant"}, {"content", "echo"}}}}}}};
            res.set_content(out.dump(), "application/json");
        });
        server_.Post("/v1/completions", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"choices":[{"text":"plain"}]})", "application/json");
        });
        server_.Post("/v1/messages", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"content":[{"type":"text","text":"blocks"}]})", "application/json");
        });
        server_.Post("/fail", [](const httplib::Request&, httplib::Response& res) {
            res.status = 500;
            res.set_content("oops", "text/plain");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    void TearDown() override {
        server_.stop();
        thread_.join();
    }
    std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port_) + path; }

    httplib::Server server_;
    std::thread thread_;
    int port_ = 0;
    std::string last_auth_;
    nlohmann::json last_body_;
};

TEST_F(ChatServer, SendsChatRequestWithBearerToken) {
    HttpChatBackend b(url("/v1/chat/completions"), "some-model", "secret");
    EXPECT_EQ(b.generate("hello", 32, 0.25), "echo");
    EXPECT_EQ(last_auth_, "Bearer secret");
    EXPECT_EQ(last_body_["model"], "some-model");
    EXPECT_EQ(last_body_["max_tokens"], 32);
    EXPECT_EQ(last_body_["temperature"], 0.25);
    EXPECT_EQ(last_body_["messages"][0]["content"], "hello");
}

TEST_F(ChatServer, AcceptsCompletionAndContentBlockShapes) {
    EXPECT_EQ(HttpChatBackend(url("/v1/completions"), "m", std::nullopt, HttpChatBackend::Mode::completion)
                  .generate("x", 1, 0),
              "plain");
    EXPECT_EQ(HttpChatBackend(url("/v1/messages"), "m", std::nullopt).generate("x", 1, 0), "blocks");
}

TEST_F(ChatServer, FailuresAreBackendErrors) {
    EXPECT_THROW(HttpChatBackend(url("/fail"), "m", std::nullopt).generate("x", 1, 0), BackendError);
    EXPECT_THROW(HttpChatBackend(url("/missing"), "m", std::nullopt).generate("x", 1, 0), BackendError);
    EXPECT_THROW(HttpChatBackend("ftp://nowhere", "m", std::nullopt), PreconditionError);
}
