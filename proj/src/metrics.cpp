#include "headlamp/metrics.hpp"

#include <cctype>
#include <map>
#include <sstream>

#include "headlamp/core.hpp"

namespace headlamp {
namespace {

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream in(s);
    for (std::string w; in >> w;) out.push_back(w);
    return out;
}

std::vector<std::string> alnum_tokens(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u)) {
            cur.push_back(static_cast<char>(std::tolower(u)));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

}  // namespace

std::string to_string(MetricKind kind) {
    switch (kind) {
        case MetricKind::AccuracyContains: return "accuracy_contains";
        case MetricKind::RougeL: return "rouge_l";
        case MetricKind::ExactMatch: return "em";
        case MetricKind::F1: return "f1";
    }
    return "?";
}

MetricKind parse_metric_kind(const std::string& text) {
    for (auto k : {MetricKind::AccuracyContains, MetricKind::RougeL, MetricKind::ExactMatch, MetricKind::F1})
        if (to_string(k) == text) return k;
    throw ConfigError("unknown metric '" + text + "'");
}

std::string normalize_answer(std::string_view text) {
    std::string stripped;
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (std::ispunct(u)) continue;
        stripped.push_back(static_cast<char>(std::tolower(u)));
    }
    std::string out;
    for (const auto& w : split_ws(stripped)) {
        if (w == "a" || w == "an" || w == "the") continue;
        if (!out.empty()) out.push_back(' ');
        out += w;
    }
    return out;
}

double accuracy_contains(std::string_view prediction, std::string_view gold) {
    return prediction.find(gold) != std::string_view::npos ? 1.0 : 0.0;
}

double rouge_l(std::string_view prediction, std::string_view reference) {
    const auto p = alnum_tokens(prediction);
    const auto r = alnum_tokens(reference);
    if (p.empty() && r.empty()) return 1.0;
    if (p.empty() || r.empty()) return 0.0;
    const auto lcs = static_cast<double>(lcs_length(p, r));
    if (lcs == 0.0) return 0.0;
    const double precision = lcs / static_cast<double>(p.size());
    const double recall = lcs / static_cast<double>(r.size());
    return 2.0 * precision * recall / (precision + recall);
}

double exact_match(std::string_view prediction, std::string_view gold) {
    return normalize_answer(prediction) == normalize_answer(gold) ? 1.0 : 0.0;
}

double token_f1(std::string_view prediction, std::string_view gold) {
    const auto p = split_ws(normalize_answer(prediction));
    const auto g = split_ws(normalize_answer(gold));
    if (p.empty() || g.empty()) return p == g ? 1.0 : 0.0;
    std::map<std::string, int> counts;
    for (const auto& w : g) ++counts[w];
    int common = 0;
    for (const auto& w : p)
        if (auto it = counts.find(w); it != counts.end() && it->second > 0) {
            --it->second;
            ++common;
        }
    if (common == 0) return 0.0;
    const double precision = static_cast<double>(common) / static_cast<double>(p.size());
    const double recall = static_cast<double>(common) / static_cast<double>(g.size());
    return 2.0 * precision * recall / (precision + recall);
}

MetricResult score(std::string_view prediction, std::string_view gold, MetricKind kind) {
    switch (kind) {
        case MetricKind::AccuracyContains: return {kind, accuracy_contains(prediction, gold)};
        case MetricKind::RougeL: return {kind, rouge_l(prediction, gold)};
        case MetricKind::ExactMatch: return {kind, exact_match(prediction, gold)};
        case MetricKind::F1: return {kind, token_f1(prediction, gold)};
    }
    return {kind, 0.0};
}

}  // namespace headlamp
