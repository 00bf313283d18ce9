#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace headlamp {

enum class MetricKind { AccuracyContains, RougeL, ExactMatch, F1 };

std::string to_string(MetricKind kind);
MetricKind parse_metric_kind(const std::string& text);

struct MetricResult {
    MetricKind kind = MetricKind::AccuracyContains;
    double value = 0.0;
};

/// Lowercase, drop ASCII punctuation, drop the articles a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view text);

/// 1 iff `gold` occurs verbatim in `prediction`.
double accuracy_contains(std::string_view prediction, std::string_view gold);
/// LCS F-measure over lowercase alphanumeric tokens.
double rouge_l(std::string_view prediction, std::string_view reference);
double exact_match(std::string_view prediction, std::string_view gold);
double token_f1(std::string_view prediction, std::string_view gold);

MetricResult score(std::string_view prediction, std::string_view gold, MetricKind kind);

}  // namespace headlamp
