#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "headlamp/core.hpp"
#include "headlamp/scores.hpp"

namespace headlamp {

/// Heads ordered by mean per-step score, highest first; ties by (layer, head).
struct StaticRanking {
    std::vector<std::pair<HeadId, double>> entries;
    std::string corpus;

    HeadSet top(std::size_t k) const;
    std::vector<HeadId> top_list(std::size_t k) const;
};

/// One sample's frames, in step order.
using FrameSeries = std::vector<HeadScoreFrame>;
using HeadSetSeries = std::vector<DynamicHeadSet>;

StaticRanking rank_static(const std::vector<FrameSeries>& corpus, std::string descriptor = {});

/// |a ∩ b| / |a ∪ b|; nullopt when both sets are empty.
std::optional<double> jaccard(const HeadSet& a, const HeadSet& b);

/// Entropy in nats of the distribution proportional to `counts`; 0 for an
/// all-zero input.
double activation_entropy(const std::vector<double>& counts);

struct DynamismReport {
    double jaccard_with_static = 0.0;
    double adjacent_jaccard = 0.0;
    double entropy = 0.0;
    /// Heads ordered by score variance over all steps, highest first.
    std::vector<std::pair<HeadId, double>> variance_ranking;
    std::size_t steps = 0;
    std::size_t static_steps_used = 0;       // steps with a non-empty dynamic set
    std::size_t adjacent_pairs_used = 0;
    std::size_t adjacent_pairs_excluded = 0;  // both-empty pairs
    bool empty_distribution = false;
};

/// `series` holds one HeadSetSeries per sample; adjacent pairs never cross
/// samples. When `frames` is given, variances use the real-valued scores;
/// otherwise they use 0/1 activation indicators.
DynamismReport dynamism_report(const std::vector<HeadSetSeries>& series, const HeadSet& static_top,
                               const ModelShape& shape, const std::vector<FrameSeries>* frames = nullptr);

/// Rows are the `n` heads with the highest score variance within one sample,
/// columns are steps.
struct VarianceHeatmap {
    std::vector<HeadId> heads;
    std::vector<std::vector<double>> values;
};

VarianceHeatmap variance_heatmap(const FrameSeries& frames, std::size_t n = 10);

}  // namespace headlamp
