#pragma once

#include <cstddef>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "headlamp/core.hpp"
#include "headlamp/model.hpp"

namespace headlamp {

enum class ScoreKind { CopyPaste, Reasoning };

std::string to_string(ScoreKind kind);
ScoreKind parse_score_kind(const std::string& text);

/// Index sets over one input sequence of `length` tokens.
///
/// `needle` is stored as given. The copy-paste indicator tests membership in
/// it directly; the reasoning ratio drops needle indices that fall in the sink
/// or local window from its numerator (they stay excluded from the
/// denominator), which keeps the ratio <= 1.
struct SpanSet {
    std::size_t length = 0;
    std::set<int> needle;
    std::set<int> sink;
    std::set<int> local;

    /// sink = the first `sink_count` positions; local = the `local_window`
    /// positions immediately before the final (query) position.
    static SpanSet make(std::size_t length, const std::vector<int>& needle, int sink_count = 1, int local_window = 4);

    /// Needle indices outside sink and local.
    std::set<int> effective_needle() const;
    bool excluded(int index) const { return sink.contains(index) || local.contains(index); }
    /// Throws InputError if any index is out of range.
    void validate() const;
};

/// 1 iff the row's argmax (lowest index on ties) is a needle index holding the
/// predicted token.
int copy_paste_score(std::span<const double> attn_row, const SpanSet& spans, std::span<const Token> tokens,
                     Token predicted);

struct RatioScore {
    double value = 0.0;
    /// The effective-context mass was zero; value is reported as 0.
    bool degenerate = false;
};

/// Share of attention on the needle relative to all positions outside the sink
/// and local window.
RatioScore reasoning_score(std::span<const double> attn_row, const SpanSet& spans);

struct HeadScoreFrame {
    std::size_t step = 0;
    ScoreKind kind = ScoreKind::CopyPaste;
    int heads_per_layer = 0;
    std::vector<double> scores;  // flat head index
    std::vector<bool> degenerate;

    double score(HeadId h) const { return scores.at(h.layer * heads_per_layer + h.head); }
    int total_heads() const { return static_cast<int>(scores.size()); }
    HeadId head_at(int flat) const { return {flat / heads_per_layer, flat % heads_per_layer}; }
};

/// Scores every head of one step. `tokens` is the step's input sequence.
HeadScoreFrame frame_scores(const StepOutput& step, std::span<const Token> tokens, const SpanSet& spans, ScoreKind kind,
                            std::size_t step_index, const ModelShape& shape);

struct DynamicHeadSet {
    std::size_t step = 0;
    HeadSet heads;
};

inline constexpr double kDefaultReasoningThreshold = 0.30;

/// Copy-paste: heads scoring 1 (threshold ignored). Reasoning: score >= threshold.
DynamicHeadSet select_dynamic_heads(const HeadScoreFrame& frame, double threshold = kDefaultReasoningThreshold);

}  // namespace headlamp
