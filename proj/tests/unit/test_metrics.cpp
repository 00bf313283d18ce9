#include <gtest/gtest.h>

#include "headlamp/core.hpp"
#include "headlamp/metrics.hpp"

using namespace headlamp;

TEST(Normalize, LowercasesStripsPunctuationAndArticles) {
    EXPECT_EQ(normalize_answer("The  Quick, brown fox!"), "quick brown fox");
    EXPECT_EQ(normalize_answer("An apple a day"), "apple day");
    EXPECT_EQ(normalize_answer(""), "");
}

TEST(AccuracyContains, VerbatimSubstring) {
    const std::string uuid = "6f1c2a9e-3b7d-4e0a-9c5f-1a2b3c4d5e6f";
    EXPECT_EQ(accuracy_contains("The magic word is " + uuid + ".", uuid), 1.0);
    std::string corrupted = uuid;
    corrupted[5] = corrupted[5] == 'a' ? 'b' : 'a';
    EXPECT_EQ(accuracy_contains("The magic word is " + corrupted + ".", uuid), 0.0);
}

TEST(ExactMatch, SquadStyle) {
    EXPECT_EQ(exact_match("The Eiffel Tower.", "eiffel tower"), 1.0);
    EXPECT_EQ(exact_match("Eiffel", "eiffel tower"), 0.0);
}

TEST(TokenF1, HandComputed) {
    // prediction {paris, france}, gold {paris}: P = 1/2, R = 1, F1 = 2/3.
    EXPECT_NEAR(token_f1("Paris, France", "Paris"), 2.0 / 3.0, 1e-12);
    EXPECT_EQ(token_f1("london", "paris"), 0.0);
    EXPECT_EQ(token_f1("", ""), 1.0);
    // Repeated tokens count with multiplicity.
    // prediction [x, b, b, c], gold [b, b, d]: P = 2/4, R = 2/3.
    EXPECT_NEAR(token_f1("x b b c", "b b d"), 2.0 * 0.5 * (2.0 / 3.0) / (0.5 + 2.0 / 3.0), 1e-12);
}

TEST(RougeL, HandComputed) {
    // LCS("the cat sat on the mat", "the cat is on the mat") = 5 tokens.
    const double p = 5.0 / 6.0, r = 5.0 / 6.0;
    EXPECT_NEAR(rouge_l("the cat sat on the mat", "the cat is on the mat"), 2 * p * r / (p + r), 1e-12);
    EXPECT_EQ(rouge_l("", ""), 1.0);
    EXPECT_EQ(rouge_l("abc", ""), 0.0);
}

TEST(Score, DispatchesByKind) {
    EXPECT_EQ(score("x y", "x y", MetricKind::ExactMatch).value, 1.0);
    EXPECT_EQ(parse_metric_kind("rouge_l"), MetricKind::RougeL);
    EXPECT_EQ(to_string(MetricKind::F1), "f1");
    EXPECT_THROW(parse_metric_kind("bleu"), ConfigError);
}
