#include "steer/errors.hpp"
#include "steer/steering.hpp"
#include "steer/synth.hpp"
#include "support/test_models.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

using namespace steer;
using steer::testing::random_control_vector;
using steer::testing::tiny_config;

namespace {

TokenSequence tokens_of(std::string_view s) { return TokenSequence(s.begin(), s.end()); }

PromptPairSet make_pairs(const std::string& trait, std::vector<std::pair<std::string, std::string>> texts) {
    PromptPairSet set{trait, {}};
    for (auto& [p, n] : texts) set.pairs.push_back({p, n, trait});
    return set;
}

// Records the residual at `layer` after every other hook at that layer.
std::vector<float> residual_at(const ModelHandle& m, std::string_view text, int layer, HookSet hooks = {}) {
    std::vector<float> out;
    hooks.add(layer, [&out](ResidualView& v) { out.assign(v.data.begin(), v.data.end()); });
    forward(m, tokens_of(text), hooks);
    return out;
}

float last_logit(const ModelHandle& m, std::string_view text, TokenId t, const HookSet& hooks = {}) {
    auto rec = forward(m, tokens_of(text), hooks);
    return rec.row(rec.seq_len - 1)[static_cast<std::size_t>(t)];
}

SteeringPlan single(std::shared_ptr<const ControlVector> v, std::vector<int> layers, double gamma) {
    return SteeringPlan{{PlanEntry{std::move(v), std::move(layers), gamma}}};
}

}  // namespace

TEST(Extract, IdenticalTextsGiveZeroVector) {
    auto m = random_model(tiny_config(3, 8), 1);
    auto set = make_pairs("t", {{"same? Yes", "same? Yes"}, {"other", "other"}});
    std::vector<int> layers{0, 2};
    auto v = extract_control_vector(m, set, layers);
    for (const auto& [l, vec] : v.layer_vectors) {
        for (float x : vec) EXPECT_EQ(x, 0.0f);
    }
}

TEST(Extract, MatchesHookRecordedAverage) {
    auto m = random_model(tiny_config(3, 16, 4), 2);
    auto set = make_pairs("Conscientiousness", {{"You are always prepared? Yes", "You are always prepared? No"},
                                                {"You pay attention to details? Yes", "You pay attention to details? No"}});
    std::vector<int> layers{1, 2};
    auto v = extract_control_vector(m, set, layers, ReadPosition::last_token, 1234);
    EXPECT_EQ(v.meta.pair_count, 2u);
    EXPECT_EQ(v.meta.timestamp, 1234);
    EXPECT_EQ(v.model_id, m->id());
    for (int l : layers) {
        std::vector<double> want(16, 0.0);
        for (const auto& p : set.pairs) {
            auto a = residual_at(m, p.positive, l);
            auto b = residual_at(m, p.negative, l);
            const std::size_t last_a = a.size() - 16, last_b = b.size() - 16;
            for (std::size_t i = 0; i < 16; ++i) want[i] += (a[last_a + i] - b[last_b + i]) / 2.0;
        }
        for (std::size_t i = 0; i < 16; ++i) EXPECT_NEAR(v.layer_vectors.at(l)[i], want[i], 1e-6);
    }
}

TEST(Extract, MeanOverTokensMatchesHookRecordedAverage) {
    auto m = random_model(tiny_config(2, 8), 3);
    auto set = make_pairs("t", {{"abc? Yes", "xy? No"}});
    std::vector<int> layers{1};
    auto v = extract_control_vector(m, set, layers, ReadPosition::mean_over_tokens);
    auto a = residual_at(m, "abc? Yes", 1);
    auto b = residual_at(m, "xy? No", 1);
    for (std::size_t i = 0; i < 8; ++i) {
        double ma = 0, mb = 0;
        for (std::size_t r = 0; r < a.size() / 8; ++r) ma += a[r * 8 + i];
        for (std::size_t r = 0; r < b.size() / 8; ++r) mb += b[r * 8 + i];
        ma /= static_cast<double>(a.size() / 8);
        mb /= static_cast<double>(b.size() / 8);
        EXPECT_NEAR(v.layer_vectors.at(1)[i], ma - mb, 1e-6);
    }
    EXPECT_EQ(v.meta.read_position, ReadPosition::mean_over_tokens);
}

TEST(Extract, SwappingRolesNegatesExactly) {
    auto m = random_model(tiny_config(3, 8), 4);
    auto set = make_pairs("t", {{"a? Yes", "a? No"}, {"bb? Yes", "bb? No"}, {"ccc? Yes", "ccc? No"}});
    PromptPairSet swapped = set;
    for (auto& p : swapped.pairs) std::swap(p.positive, p.negative);
    std::vector<int> layers{0, 1, 2};
    auto v = extract_control_vector(m, set, layers);
    auto w = extract_control_vector(m, swapped, layers);
    for (int l : layers) {
        for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(v.layer_vectors.at(l)[i], -w.layer_vectors.at(l)[i]);
    }
}

TEST(Extract, PairOrderDoesNotMatter) {
    auto m = random_model(tiny_config(2, 8), 5);
    std::vector<std::pair<std::string, std::string>> texts;
    for (int i = 0; i < 8; ++i) {
        texts.emplace_back("item " + std::to_string(i) + "? Yes", "item " + std::to_string(i) + "? No");
    }
    auto set = make_pairs("t", texts);
    auto shuffled = set;
    std::shuffle(shuffled.pairs.begin(), shuffled.pairs.end(), std::mt19937(9));
    std::vector<int> layers{0, 1};
    auto a = extract_control_vector(m, set, layers);
    auto b = extract_control_vector(m, shuffled, layers);
    for (int l : layers) {
        for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(a.layer_vectors.at(l)[i], b.layer_vectors.at(l)[i], 1e-6);
    }
}

TEST(Extract, Errors) {
    auto m = random_model(tiny_config(2, 8), 5);
    std::vector<int> ok{0}, bad{2}, none{};
    EXPECT_THROW(extract_control_vector(m, PromptPairSet{"t", {}}, ok), PreconditionError);
    auto set = make_pairs("t", {{"a? Yes", "a? No"}});
    EXPECT_THROW(extract_control_vector(m, set, bad), RangeError);
    EXPECT_THROW(extract_control_vector(m, set, none), PreconditionError);
    auto small = random_model(tiny_config(2, 8, 2, 100), 5);
    EXPECT_THROW(extract_control_vector(small, set, ok), TokenizeError);
}

TEST(PromptPairSet, Validation) {
    EXPECT_NO_THROW(make_pairs("t", {{"a? Yes", "a? No"}}).validate());
    EXPECT_THROW(make_pairs("t", {{"same", "same"}}).validate(), PreconditionError);
    EXPECT_THROW(make_pairs("t", {{"", "x"}}).validate(), PreconditionError);
    EXPECT_THROW(PromptPairSet({"t", {}}).validate(), PreconditionError);
    auto mixed = make_pairs("t", {{"a", "b"}});
    mixed.pairs[0].trait = "u";
    EXPECT_THROW(mixed.validate(), PreconditionError);
}

TEST(MakeHooks, GammaZeroGenerationEqualsVanilla) {
    auto m = random_model(tiny_config(3, 16, 4), 6);
    auto v = random_control_vector(*m, "t", {0, 1, 2}, 1, 3.0f);
    auto hooks = make_hooks(*m, single(v, {0, 1, 2}, 0.0));
    auto p = tokens_of("gamma zero");
    EXPECT_EQ(greedy_decode(m, p, 16, hooks), greedy_decode(m, p, 16));
}

TEST(MakeHooks, SameLayerEntriesAddUp) {
    auto m = random_model(tiny_config(3, 8), 7);
    auto v = random_control_vector(*m, "t", {1}, 2);
    SteeringPlan two{{PlanEntry{v, {1}, 0.7}, PlanEntry{v, {1}, -1.9}}};
    auto a = residual_at(m, "additivity", 1, make_hooks(*m, two));
    auto b = residual_at(m, "additivity", 1, make_hooks(*m, single(v, {1}, 0.7 - 1.9)));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(MakeHooks, InjectionSiteIsLinearForStackedEntries) {
    auto m = random_model(tiny_config(3, 8), 8);
    auto v1 = random_control_vector(*m, "a", {1}, 1);
    auto v2 = random_control_vector(*m, "b", {1}, 2);
    auto v3 = random_control_vector(*m, "c", {1, 2}, 3);
    SteeringPlan plan{{PlanEntry{v1, {1}, 1.5}, PlanEntry{v2, {1}, -0.5}, PlanEntry{v3, {1}, 2.25}}};
    auto vanilla = residual_at(m, "linear", 1);
    auto steered = residual_at(m, "linear", 1, make_hooks(*m, plan));
    for (std::size_t r = 0; r < vanilla.size() / 8; ++r) {
        for (std::size_t i = 0; i < 8; ++i) {
            double want = vanilla[r * 8 + i] + 1.5 * v1->layer_vectors.at(1)[i] - 0.5 * v2->layer_vectors.at(1)[i] +
                          2.25 * v3->layer_vectors.at(1)[i];
            EXPECT_NEAR(steered[r * 8 + i], want, 1e-6);
        }
    }
}

TEST(MakeHooks, AlignedVectorRaisesTargetLogit) {
    auto setup = steer::testing::aligned_model(11, 'k');
    auto hooks = make_hooks(*setup.model, single(setup.direction, {0}, 10.0));
    EXPECT_GT(last_logit(setup.model, "probe", 'k', hooks), last_logit(setup.model, "probe", 'k'));
}

TEST(MakeHooks, RejectsForeignVectors) {
    auto m = random_model(tiny_config(2, 8), 1);
    auto other = random_model(tiny_config(2, 8), 2);
    auto v = random_control_vector(*other, "t", {0}, 1);
    EXPECT_THROW(make_hooks(*m, single(v, {0}, 1.0)), ModelMismatchError);

    auto wide = std::make_shared<ControlVector>(*random_control_vector(*m, "t", {0}, 1));
    wide->hidden_dim = 16;
    wide->layer_vectors[0].resize(16);
    EXPECT_THROW(make_hooks(*m, single(wide, {0}, 1.0)), ModelMismatchError);

    auto own = random_control_vector(*m, "t", {0}, 1);
    EXPECT_THROW(make_hooks(*m, single(own, {1}, 1.0)), PreconditionError);  // no vector at layer 1
    EXPECT_THROW(make_hooks(*m, single(own, {0}, std::nan(""))), PreconditionError);
    EXPECT_THROW(make_hooks(*m, single(own, {}, 1.0)), PreconditionError);
}

TEST(Compose, EmptyAndSingle) {
    auto m = random_model(tiny_config(2, 8), 1);
    auto composed = compose(std::span<const SteeringPlan>{});
    EXPECT_TRUE(composed.empty());
    auto p = tokens_of("vanilla");
    EXPECT_EQ(greedy_decode(m, p, 8, make_hooks(*m, composed)), greedy_decode(m, p, 8));

    auto plan = single(random_control_vector(*m, "t", {0, 1}, 1), {0, 1}, 0.5);
    std::vector<SteeringPlan> one{plan};
    auto same = compose(one);
    ASSERT_EQ(same.entries.size(), 1u);
    EXPECT_EQ(same.entries[0].control, plan.entries[0].control);
    EXPECT_EQ(same.entries[0].layers, plan.entries[0].layers);
    EXPECT_EQ(same.entries[0].gamma, plan.entries[0].gamma);
}

TEST(Compose, AppliesFirstPlanThenSecondAtSharedLayer) {
    auto m = random_model(tiny_config(3, 8), 9);
    auto p1 = single(random_control_vector(*m, "a", {1}, 1), {1}, 2.0);
    auto p2 = single(random_control_vector(*m, "b", {1, 2}, 2), {1, 2}, -1.0);
    std::vector<SteeringPlan> both{p1, p2};
    auto composed = residual_at(m, "compose", 2, make_hooks(*m, compose(both)));

    HookSet manual = make_hooks(*m, p1);
    for (const auto& e : p2.entries) {
        for (int l : e.layers) {
            auto vec = e.control->layer_vectors.at(l);
            manual.add(l, [vec, g = static_cast<float>(e.gamma)](ResidualView& v) {
                for (std::size_t r = 0; r < v.rows; ++r) {
                    for (std::size_t i = 0; i < v.hidden; ++i) v.row(r)[i] += g * vec[i];
                }
            });
        }
    }
    auto expected = residual_at(m, "compose", 2, manual);
    EXPECT_EQ(composed, expected);
}

TEST(Compose, MixedModelsRejected) {
    auto a = random_model(tiny_config(2, 8), 1);
    auto b = random_model(tiny_config(2, 8), 2);
    std::vector<SteeringPlan> plans{single(random_control_vector(*a, "x", {0}, 1), {0}, 1.0),
                                    single(random_control_vector(*b, "y", {0}, 1), {0}, 1.0)};
    EXPECT_THROW(compose(plans), ModelMismatchError);
}

TEST(GammaSweep, ZeroRowEqualsVanilla) {
    auto setup = steer::testing::aligned_model(12, 'k');
    auto tmpl = single(setup.direction, {0}, 1.0);
    auto metric = [&](const SteeringPlan& p) {
        return static_cast<double>(last_logit(setup.model, "sweep", 'k', make_hooks(*setup.model, p)));
    };
    std::vector<double> g{0.0};
    auto rows = gamma_sweep(setup.model, tmpl, g, metric);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_TRUE(rows[0].ok);
    EXPECT_EQ(*rows[0].metric, static_cast<double>(last_logit(setup.model, "sweep", 'k')));
}

TEST(GammaSweep, DuplicatesAgreeAndMonotoneOnAlignedModel) {
    auto setup = steer::testing::aligned_model(13, 'k');
    auto tmpl = single(setup.direction, {0}, 1.0);
    auto metric = [&](const SteeringPlan& p) {
        return static_cast<double>(last_logit(setup.model, "sweep", 'k', make_hooks(*setup.model, p)));
    };
    std::vector<double> g{-1.0, 0.0, 1.0, 1.0};
    auto rows = gamma_sweep(setup.model, tmpl, g, metric);
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_LT(*rows[0].metric, *rows[1].metric);
    EXPECT_LT(*rows[1].metric, *rows[2].metric);
    EXPECT_EQ(*rows[2].metric, *rows[3].metric);
    EXPECT_EQ(rows[0].gamma, -1.0);
}

TEST(GammaSweep, FailedRowDoesNotAbort) {
    auto m = random_model(tiny_config(2, 8), 1);
    auto tmpl = single(random_control_vector(*m, "t", {0}, 1), {0}, 1.0);
    std::vector<double> g{1.0, 2.0, 3.0};
    auto rows = gamma_sweep(m, tmpl, g, [](const SteeringPlan& p) {
        if (p.entries[0].gamma == 2.0) throw Error("boom");
        return p.entries[0].gamma * 10;
    });
    EXPECT_TRUE(rows[0].ok);
    EXPECT_FALSE(rows[1].ok);
    EXPECT_EQ(rows[1].error, "boom");
    EXPECT_TRUE(rows[2].ok);
    EXPECT_EQ(sweep_to_csv(rows), "gamma,metric,status\n1,10,ok\n2,,failed\n3,30,ok\n");
    EXPECT_THROW(gamma_sweep(m, tmpl, std::vector<double>{}, [](const SteeringPlan&) { return 0.0; }),
                 PreconditionError);
}

TEST(Steering, DefaultInjectionLayer) {
    EXPECT_EQ(default_injection_layer(tiny_config(3, 8)), 2);
    EXPECT_EQ(default_injection_layer(tiny_config(80, 8)), 53);
    EXPECT_EQ(default_injection_layer(tiny_config(1, 8)), 0);
}
