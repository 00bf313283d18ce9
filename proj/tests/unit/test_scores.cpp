#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "headlamp/scores.hpp"
#include "test_util.hpp"

using namespace headlamp;

namespace {

// Independent oracle for the needle-share ratio: plain loops over index
// vectors, with the denominator taken as total mass minus excluded mass.
double ratio_oracle(const std::vector<double>& row, const std::vector<int>& needle, int sink_count, int local_window) {
    const int n = static_cast<int>(row.size());
    const int query = n - 1;
    auto excluded = [&](int j) { return j < sink_count || (j >= query - local_window && j < query); };
    double total = 0.0, removed = 0.0, on_needle = 0.0;
    for (int j = 0; j < n; ++j) {
        total += row[j];
        if (excluded(j)) removed += row[j];
    }
    for (int j : needle)
        if (!excluded(j)) on_needle += row[j];
    const double denom = total - removed;
    return denom > 0.0 ? on_needle / denom : 0.0;
}

std::vector<int> random_needle(Rng& rng, int n) {
    const int len = 1 + static_cast<int>(rng.below(std::max(1, n / 3)));
    const int start = static_cast<int>(rng.below(n - len + 1));
    std::vector<int> v;
    for (int i = 0; i < len; ++i) v.push_back(start + i);
    return v;
}

}  // namespace

TEST(SpanSet, MakeBuildsSinkAndLocal) {
    const auto s = SpanSet::make(10, {2, 3, 8}, 1, 4);
    EXPECT_EQ(s.sink, (std::set<int>{0}));
    EXPECT_EQ(s.local, (std::set<int>{5, 6, 7, 8}));
    EXPECT_EQ(s.effective_needle(), (std::set<int>{2, 3}));
    EXPECT_THROW(SpanSet::make(5, {5}), InputError);
}

TEST(ReasoningScore, MatchesSummationOracle) {
    Rng rng(2024);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 2 + static_cast<int>(rng.below(200));
        const auto row = testutil::random_row(rng, n);
        const auto needle = random_needle(rng, n);
        const int sink = static_cast<int>(rng.below(3));
        const int local = static_cast<int>(rng.below(6));
        const auto got = reasoning_score(row, SpanSet::make(n, needle, sink, local));
        ASSERT_NEAR(got.value, ratio_oracle(row, needle, sink, local), 1e-12) << "trial " << trial;
        ASSERT_GE(got.value, 0.0);
        ASSERT_LE(got.value, 1.0 + 1e-12);
    }
}

TEST(ReasoningScore, MonotoneInNeedleMass) {
    Rng rng(7);
    int checked = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 16 + static_cast<int>(rng.below(100));
        auto row = testutil::random_row(rng, n);
        const auto needle = random_needle(rng, n - 8);
        const auto spans = SpanSet::make(n, needle, 1, 4);
        const auto eff = spans.effective_needle();
        std::vector<int> others;
        for (int j = 0; j < n; ++j)
            if (!spans.excluded(j) && !eff.count(j) && row[j] > 0.0) others.push_back(j);
        if (eff.empty() || others.empty()) continue;
        const double before = reasoning_score(row, spans).value;
        const int from = others[rng.below(others.size())];
        const int to = *std::next(eff.begin(), static_cast<long>(rng.below(eff.size())));
        const double delta = row[from] * rng.uniform();
        row[from] -= delta;
        row[to] += delta;
        ASSERT_GE(reasoning_score(row, spans).value, before - 1e-12);
        ++checked;
    }
    EXPECT_GT(checked, 900);
}

TEST(ReasoningScore, ScaleFreeAndBlindToExcludedPositions) {
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
        const int n = 8 + static_cast<int>(rng.below(100));
        const auto row = testutil::random_row(rng, n);
        const auto spans = SpanSet::make(n, random_needle(rng, n), 1, 4);
        const double base = reasoning_score(row, spans).value;
        const double c = 0.01 + 100.0 * rng.uniform();
        auto scaled = row;
        for (auto& x : scaled) x *= c;
        ASSERT_NEAR(reasoning_score(scaled, spans).value, base, 1e-12);
        auto shifted = row;
        for (int j : spans.sink) shifted[j] += rng.uniform();
        for (int j : spans.local) shifted[j] += rng.uniform();
        ASSERT_NEAR(reasoning_score(shifted, spans).value, base, 1e-12);
    }
}

TEST(ReasoningScore, DegenerateWhenOnlyExcludedMass) {
    std::vector<double> row{0.5, 0.0, 0.25, 0.25, 0.0};
    const auto s = SpanSet::make(5, {1}, 1, 2);
    const auto r = reasoning_score(row, s);
    EXPECT_TRUE(r.degenerate);
    EXPECT_EQ(r.value, 0.0);
}

// Every row over a 12-token context with entries on the grid {0, 1, 2}
// (normalized), against the indicator computed from first principles.
TEST(CopyPasteScore, ExhaustiveGridMatchesIndicator) {
    const int n = 12;
    const Tokens tokens{0, 1, 2, 3, 1, 2, 0, 3, 2, 1, 3, 0};
    const std::vector<std::vector<int>> needles{{3, 4, 5}, {0, 7, 8, 9, 10}};
    std::vector<int> digits(n, 0);
    std::vector<double> row(n);
    std::size_t rows = 0;
    for (;;) {
        int i = 0;
        while (i < n && digits[i] == 2) digits[i++] = 0;
        if (i == n) break;
        ++digits[i];
        double sum = 0;
        for (int j = 0; j < n; ++j) sum += digits[j];
        for (int j = 0; j < n; ++j) row[j] = digits[j] / sum;
        int best_value = -1, best_index = -1;
        for (int j = 0; j < n; ++j)
            if (digits[j] > best_value) best_value = digits[j], best_index = j;
        for (const auto& needle : needles) {
            const auto spans = SpanSet::make(n, needle, 1, 4);
            const bool in_needle = std::find(needle.begin(), needle.end(), best_index) != needle.end();
            for (Token predicted = 0; predicted < 4; ++predicted) {
                const int expected = in_needle && tokens[best_index] == predicted ? 1 : 0;
                ASSERT_EQ(copy_paste_score(row, spans, tokens, predicted), expected);
            }
        }
        ++rows;
    }
    EXPECT_EQ(rows, 531440u);
}

TEST(CopyPasteScore, UsesRawNeedleEvenInsideLocalWindow) {
    // The query's local window covers index 3; the indicator still counts it.
    const std::vector<double> row{0.1, 0.1, 0.1, 0.6, 0.1};
    const Tokens toks{4, 4, 4, 9, 4};
    EXPECT_EQ(copy_paste_score(row, SpanSet::make(5, {3}, 1, 4), toks, 9), 1);
    EXPECT_EQ(copy_paste_score(row, SpanSet::make(5, {2}, 1, 4), toks, 9), 0);
    EXPECT_THROW(copy_paste_score(std::vector<double>{0.5, 0.5}, SpanSet::make(5, {3}), toks, 9), InputError);
}

TEST(FrameScores, ThresholdIsInclusive) {
    StepOutput out;
    out.heads_per_layer = 2;
    out.predicted_token = 0;
    // Context of 8 with sink {0} and local {3..6}: effective positions 1, 2.
    out.attn_rows = {{0, 0.3, 0.7, 0, 0, 0, 0, 0}, {0, 0.29, 0.71, 0, 0, 0, 0, 0}};
    out.degenerate_rows = {false, false};
    const auto spans = SpanSet::make(8, {1}, 1, 4);
    const Tokens toks(8, 0);
    const auto frame = frame_scores(out, toks, spans, ScoreKind::Reasoning, 0, ModelShape{1, 2, 4, 4});
    EXPECT_NEAR(frame.scores[0], 0.3, 1e-15);
    const auto set = select_dynamic_heads(frame, 0.3);
    EXPECT_EQ(set.heads, (HeadSet{{0, 0}}));
    EXPECT_THROW(frame_scores(out, toks, spans, ScoreKind::Reasoning, 0, ModelShape{1, 3, 4, 4}), InputError);
}

TEST(FrameScores, InductionHeadIsTheCopyHead) {
    const auto& m = testutil::small_induction_model();
    const Tokens toks{2, 9, 4, 11, 6, 2, 9, 4};
    const auto out = m.forward(toks, {});
    const auto spans = SpanSet::make(toks.size(), {1, 2, 3}, 1, 1);
    const auto frame = frame_scores(out, toks, spans, ScoreKind::CopyPaste, 0, m.shape());
    EXPECT_EQ(frame.score({1, 0}), 1.0);
    const auto set = select_dynamic_heads(frame);
    EXPECT_TRUE(set.heads.count({1, 0}));
}
