#include <gtest/gtest.h>

#include <cmath>

#include "headlamp/ablation.hpp"
#include "headlamp/dynamism.hpp"
#include "test_util.hpp"

using namespace headlamp;

namespace {

TaskFactory toy_factory() {
    return [](int length, double depth, std::uint64_t seed) {
        ToyNiahConfig c;
        c.haystack_len = length;
        const auto s = make_toy_niah(testutil::toy_tokenizer(), c, depth, seed);
        return TaskInstance{s.prompt, s.needle_span, s.answer_text, s.max_new()};
    };
}

StaticRanking toy_ranking() {
    static const StaticRanking r = [] {
        std::vector<FrameSeries> corpus;
        const auto f = toy_factory();
        for (std::uint64_t seed = 0; seed < 4; ++seed)
            corpus.push_back(collect_frames(testutil::toy_model(), f(64, 0.5, seed), {}).frames);
        return rank_static(corpus, "toy");
    }();
    return r;
}

// Round half away from zero, computed with integers: n / d rounded.
std::size_t rounded_mean(std::size_t sum, std::size_t count) { return (2 * sum + count) / (2 * count); }

/// Backend wrapper that records every intervention it sees.
class RecordingBackend final : public Backend {
public:
    explicit RecordingBackend(const Backend& inner) : inner_(inner) {}
    ModelShape shape() const override { return inner_.shape(); }
    int max_context() const override { return inner_.max_context(); }
    Token eos_token() const override { return inner_.eos_token(); }
    StepOutput forward(std::span<const Token> tokens, const Intervention& iv) const override {
        masks.push_back(iv.masked_heads);
        return inner_.forward(tokens, iv);
    }
    mutable std::vector<HeadSet> masks;

private:
    const Backend& inner_;
};

}  // namespace

TEST(Ablation, ConditionNames) {
    for (auto c : {AblationCondition::None, AblationCondition::Dynamic, AblationCondition::StaticTop,
                   AblationCondition::Random})
        EXPECT_EQ(parse_condition(to_string(c)), c);
    EXPECT_THROW(parse_condition("all"), ConfigError);
}

TEST(Ablation, MatchedCountAgainstRunningMean) {
    Rng rng(5);
    for (int trial = 0; trial < 500; ++trial) {
        AblationState state(trial);
        std::vector<std::size_t> seen;
        const int steps = 1 + static_cast<int>(rng.below(12));
        for (int t = 0; t < steps; ++t) {
            const std::size_t cur = rng.uniform() < 0.4 ? 0 : rng.below(7);
            seen.push_back(cur);
            std::size_t sum = 0;
            bool any = false;
            for (auto v : seen) {
                sum += v;
                any = any || v > 0;
            }
            std::size_t expect = rounded_mean(sum, seen.size());
            if (any && expect == 0) expect = 1;
            ASSERT_EQ(matched_mask_count(state, cur), expect);
            state.dynamic_total += cur;
            state.any_active = any;
            ++state.steps;
        }
    }
}

TEST(Ablation, StepMasksFollowCondition) {
    const auto& model = testutil::toy_model();
    const auto task = toy_factory()(64, 0.5, 3);
    const auto ranking = toy_ranking();
    const ScoreSettings settings;
    const auto spans = settings.spans_for(task.prompt.size(), task.needle);

    AblationState none_state(1);
    const auto none = ablate_step(model, task.prompt, spans, AblationCondition::None, nullptr, none_state, settings);
    EXPECT_TRUE(none.masked.empty());
    EXPECT_EQ(none.pass2.logits, none.pass1.logits);
    ASSERT_FALSE(none.dynamic.empty());

    RecordingBackend rec(model);
    AblationState dyn_state(1);
    const auto dyn = ablate_step(rec, task.prompt, spans, AblationCondition::Dynamic, nullptr, dyn_state, settings);
    EXPECT_EQ(dyn.masked, dyn.dynamic);
    ASSERT_EQ(rec.masks.size(), 2u);
    EXPECT_TRUE(rec.masks[0].empty());
    EXPECT_EQ(rec.masks[1], dyn.dynamic);

    AblationState st_state(1);
    const auto st = ablate_step(model, task.prompt, spans, AblationCondition::StaticTop, &ranking, st_state, settings);
    EXPECT_EQ(st.masked.size(), std::min<std::size_t>(st.matched_count, kStaticTopK));
    for (const auto& h : st.masked) EXPECT_TRUE(ranking.top(kStaticTopK).contains(h));

    AblationState rnd_state(1);
    const auto rnd = ablate_step(model, task.prompt, spans, AblationCondition::Random, nullptr, rnd_state, settings);
    EXPECT_EQ(rnd.masked.size(), rnd.matched_count);
    EXPECT_EQ(rnd.matched_count, dyn.dynamic.size());

    AblationState missing(1);
    EXPECT_THROW(ablate_step(model, task.prompt, spans, AblationCondition::StaticTop, nullptr, missing, settings),
                 ConfigError);
}

TEST(Ablation, RandomOrderFixedPerSample) {
    const auto& model = testutil::toy_model();
    const auto task = toy_factory()(64, 0.25, 8);
    const ScoreSettings s;
    const auto a = run_ablation_sample(model, testutil::toy_tokenizer(), task, AblationCondition::Random, nullptr, 42, s,
                                       MetricKind::AccuracyContains);
    const auto b = run_ablation_sample(model, testutil::toy_tokenizer(), task, AblationCondition::Random, nullptr, 42, s,
                                       MetricKind::AccuracyContains);
    ASSERT_EQ(a.steps.size(), b.steps.size());
    for (std::size_t t = 0; t < a.steps.size(); ++t) EXPECT_EQ(a.steps[t].masked, b.steps[t].masked);
    // Within a sample, smaller masks are prefixes of the same permutation.
    for (std::size_t t = 1; t < a.steps.size(); ++t) {
        const auto& x = a.steps[t - 1].masked;
        const auto& y = a.steps[t].masked;
        const auto& small = x.size() <= y.size() ? x : y;
        const auto& large = x.size() <= y.size() ? y : x;
        for (const auto& h : small) EXPECT_TRUE(large.contains(h));
    }
}

TEST(Ablation, MiniGridSeparatesConditions) {
    const auto& model = testutil::toy_model();
    const auto ranking = toy_ranking();
    GridSpec spec;
    spec.lengths = {48, 96};
    spec.depths = {0.0, 0.5, 1.0};
    spec.runs_per_cell = 2;
    spec.master_seed = 9;
    const ScoreSettings s;
    const auto none = run_grid(model, testutil::toy_tokenizer(), toy_factory(), spec, AblationCondition::None, nullptr, s);
    const auto dyn = run_grid(model, testutil::toy_tokenizer(), toy_factory(), spec, AblationCondition::Dynamic, nullptr, s);
    ASSERT_EQ(none.cells.size(), 6u);
    for (const auto& c : none.cells) {
        EXPECT_TRUE(c.feasible);
        EXPECT_EQ(c.runs, 2);
        EXPECT_EQ(c.mean, 1.0);
        EXPECT_EQ(c.mean_masked, 0.0);
    }
    for (const auto& c : dyn.cells) {
        EXPECT_EQ(c.mean, 0.0);
        EXPECT_GT(c.mean_masked, 0.0);
    }
    EXPECT_EQ(none.cell(96, 0.5).length, 96);
    EXPECT_THROW(none.cell(10, 0.5), InputError);

    const auto rerun = run_grid(model, testutil::toy_tokenizer(), toy_factory(), spec, AblationCondition::None, nullptr, s);
    for (std::size_t i = 0; i < rerun.cells.size(); ++i) EXPECT_EQ(rerun.cells[i].mean, none.cells[i].mean);
}

TEST(Ablation, InfeasibleCellsAreMarked) {
    GridSpec spec;
    spec.lengths = {5, 48};
    spec.depths = {0.5};
    spec.runs_per_cell = 1;
    const auto g = run_grid(testutil::toy_model(), testutil::toy_tokenizer(), toy_factory(), spec,
                            AblationCondition::None, nullptr, {});
    EXPECT_FALSE(g.cells[0].feasible);
    EXPECT_EQ(g.cells[0].runs, 0);
    EXPECT_FALSE(g.cells[0].note.empty());
    EXPECT_TRUE(g.cells[1].feasible);
}

TEST(Ablation, GridSeedsAreDistinct) {
    std::set<std::uint64_t> seeds;
    for (std::size_t l = 0; l < 4; ++l)
        for (std::size_t d = 0; d < 5; ++d)
            for (int r = 0; r < 5; ++r) seeds.insert(grid_run_seed(1, l, d, r));
    EXPECT_EQ(seeds.size(), 100u);
}

TEST(Progressive, StepInvariantsAndOverlapBruteForce) {
    const auto& model = testutil::toy_model();
    const auto ranking = toy_ranking();
    const HeadSet top = ranking.top(kStaticTopK);
    const ScoreSettings s;
    for (int k : {0, 1, 2, 3}) {
        for (std::uint64_t seed = 0; seed < 3; ++seed) {
            const auto task = toy_factory()(64, 0.5, 100 + seed);
            const auto sample = progressive_sample(model, testutil::toy_tokenizer(), task, k, top, s,
                                                   MetricKind::AccuracyContains);
            std::size_t brute = 0;
            for (const auto& st : sample.steps) {
                EXPECT_LE(st.masked.size(), static_cast<std::size_t>(k));
                EXPECT_EQ(st.masked.size(), std::min<std::size_t>(k, st.dynamic.size()));
                for (const auto& h : st.masked) EXPECT_TRUE(st.dynamic.contains(h));
                // The compensating set never overlaps the original dynamic set.
                for (const auto& h : st.compensated) {
                    EXPECT_FALSE(st.dynamic.contains(h));
                    EXPECT_TRUE(st.after.contains(h));
                }
                std::size_t n = 0;
                for (int f = 0; f < model.shape().total_heads(); ++f) {
                    const auto h = model.shape().head_at(f);
                    if (st.after.contains(h) && !st.dynamic.contains(h) && top.contains(h)) ++n;
                }
                brute = std::max(brute, n);
            }
            EXPECT_EQ(sample.max_overlap, brute);
            if (k == 0) EXPECT_EQ(sample.metric, 1.0);
        }
    }
}

TEST(Progressive, NeedleMassOrdering) {
    StepOutput out;
    out.heads_per_layer = 2;
    out.attn_rows = {{0.5, 0.5, 0.0}, {0.1, 0.2, 0.7}, {0.0, 0.9, 0.1}, {0.2, 0.6, 0.2}};
    SpanSet spans = SpanSet::make(3, {1, 2}, 0, 0);
    const HeadSet dyn{{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    // Needle masses: 0.5, 0.9, 1.0, 0.8.
    const auto order = order_by_needle_mass(dyn, out, spans);
    const std::vector<HeadId> expect{{1, 0}, {0, 1}, {1, 1}, {0, 0}};
    EXPECT_EQ(order, expect);
}

TEST(Progressive, RunReusesInstancesAcrossK) {
    const auto& model = testutil::toy_model();
    const auto r = progressive_run(model, testutil::toy_tokenizer(), toy_factory(), {0, 1, 2}, 2, 48, toy_ranking(), 4, {},
                                   MetricKind::AccuracyContains);
    ASSERT_EQ(r.samples.size(), 6u);
    EXPECT_EQ(r.mean_metric[0], 1.0);
    EXPECT_LT(r.mean_metric[2], r.mean_metric[0]);
    for (int run = 0; run < 2; ++run) EXPECT_EQ(r.samples[run].seed, r.samples[2 + run].seed);
    EXPECT_THROW(progressive_run(model, testutil::toy_tokenizer(), toy_factory(), {2, 1}, 1, 48, toy_ranking(), 4, {},
                                 MetricKind::AccuracyContains),
                 ConfigError);
    EXPECT_THROW(progressive_run(model, testutil::toy_tokenizer(), toy_factory(), {-1}, 1, 48, toy_ranking(), 4, {},
                                 MetricKind::AccuracyContains),
                 ConfigError);
}
