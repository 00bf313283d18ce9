#include "headlamp/scores.hpp"

namespace headlamp {

std::string to_string(ScoreKind kind) { return kind == ScoreKind::CopyPaste ? "copy_paste" : "reasoning"; }

ScoreKind parse_score_kind(const std::string& text) {
    if (text == "copy_paste") return ScoreKind::CopyPaste;
    if (text == "reasoning") return ScoreKind::Reasoning;
    throw ConfigError("unknown score kind '" + text + "' (expected copy_paste or reasoning)");
}

SpanSet SpanSet::make(std::size_t length, const std::vector<int>& needle, int sink_count, int local_window) {
    SpanSet s;
    s.length = length;
    s.needle.insert(needle.begin(), needle.end());
    for (int i = 0; i < sink_count && i < static_cast<int>(length); ++i) s.sink.insert(i);
    const int query = static_cast<int>(length) - 1;
    for (int i = std::max(0, query - local_window); i < query; ++i) s.local.insert(i);
    s.validate();
    return s;
}

std::set<int> SpanSet::effective_needle() const {
    std::set<int> out;
    for (int i : needle)
        if (!excluded(i)) out.insert(i);
    return out;
}

void SpanSet::validate() const {
    for (const auto* set : {&needle, &sink, &local}) {
        if (set->empty()) continue;
        if (*set->begin() < 0 || *set->rbegin() >= static_cast<int>(length))
            throw InputError("span index out of range for sequence length " + std::to_string(length));
    }
}

int copy_paste_score(std::span<const double> attn_row, const SpanSet& spans, std::span<const Token> tokens,
                     Token predicted) {
    if (attn_row.empty()) throw InputError("copy_paste_score: empty attention row");
    if (attn_row.size() != tokens.size() || attn_row.size() != spans.length)
        throw InputError("copy_paste_score: row, tokens and spans disagree on length");
    const auto top = static_cast<int>(argmax(attn_row));
    return spans.needle.contains(top) && tokens[top] == predicted ? 1 : 0;
}

RatioScore reasoning_score(std::span<const double> attn_row, const SpanSet& spans) {
    if (attn_row.size() != spans.length) throw InputError("reasoning_score: row length does not match spans");
    double needle_mass = 0.0;
    double context_mass = 0.0;
    for (std::size_t j = 0; j < attn_row.size(); ++j) {
        const int i = static_cast<int>(j);
        if (spans.excluded(i)) continue;
        context_mass += attn_row[j];
        if (spans.needle.contains(i)) needle_mass += attn_row[j];
    }
    if (context_mass <= 0.0) return {0.0, true};
    return {needle_mass / context_mass, false};
}

HeadScoreFrame frame_scores(const StepOutput& step, std::span<const Token> tokens, const SpanSet& spans, ScoreKind kind,
                            std::size_t step_index, const ModelShape& shape) {
    if (static_cast<int>(step.attn_rows.size()) != shape.total_heads() || step.heads_per_layer != shape.heads_per_layer)
        throw InputError("frame_scores: step has " + std::to_string(step.attn_rows.size()) + " heads, model has " +
                         std::to_string(shape.total_heads()));
    spans.validate();
    HeadScoreFrame frame;
    frame.step = step_index;
    frame.kind = kind;
    frame.heads_per_layer = shape.heads_per_layer;
    frame.scores.resize(step.attn_rows.size());
    frame.degenerate.assign(step.attn_rows.size(), false);
    for (std::size_t h = 0; h < step.attn_rows.size(); ++h) {
        const auto& row = step.attn_rows[h];
        if (kind == ScoreKind::CopyPaste) {
            frame.scores[h] = copy_paste_score(row, spans, tokens, step.predicted_token);
        } else {
            const auto r = reasoning_score(row, spans);
            frame.scores[h] = r.value;
            frame.degenerate[h] = r.degenerate;
        }
    }
    return frame;
}

DynamicHeadSet select_dynamic_heads(const HeadScoreFrame& frame, double threshold) {
    DynamicHeadSet out;
    out.step = frame.step;
    for (int f = 0; f < frame.total_heads(); ++f) {
        const double s = frame.scores[f];
        const bool active = frame.kind == ScoreKind::CopyPaste ? s == 1.0 : s >= threshold;
        if (active) out.heads.insert(frame.head_at(f));
    }
    return out;
}

}  // namespace headlamp
