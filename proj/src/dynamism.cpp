#include "headlamp/dynamism.hpp"

#include <algorithm>
#include <cmath>

namespace headlamp {
namespace {

std::vector<std::pair<HeadId, double>> sorted_desc(const std::vector<double>& values, int heads_per_layer) {
    std::vector<std::pair<HeadId, double>> out;
    out.reserve(values.size());
    for (std::size_t f = 0; f < values.size(); ++f)
        out.emplace_back(HeadId{static_cast<int>(f) / heads_per_layer, static_cast<int>(f) % heads_per_layer},
                         values[f]);
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    return out;
}

// Population variance per column of a steps x heads table.
std::vector<double> column_variance(const std::vector<std::vector<double>>& rows, std::size_t width) {
    std::vector<double> mean(width, 0.0), var(width, 0.0);
    if (rows.empty()) return var;
    for (const auto& r : rows)
        for (std::size_t h = 0; h < width; ++h) mean[h] += r[h];
    for (auto& m : mean) m /= static_cast<double>(rows.size());
    for (const auto& r : rows)
        for (std::size_t h = 0; h < width; ++h) var[h] += (r[h] - mean[h]) * (r[h] - mean[h]);
    for (auto& v : var) v /= static_cast<double>(rows.size());
    return var;
}

}  // namespace

HeadSet StaticRanking::top(std::size_t k) const {
    HeadSet out;
    for (std::size_t i = 0; i < k && i < entries.size(); ++i) out.insert(entries[i].first);
    return out;
}

std::vector<HeadId> StaticRanking::top_list(std::size_t k) const {
    std::vector<HeadId> out;
    for (std::size_t i = 0; i < k && i < entries.size(); ++i) out.push_back(entries[i].first);
    return out;
}

StaticRanking rank_static(const std::vector<FrameSeries>& corpus, std::string descriptor) {
    int width = -1;
    int heads_per_layer = 0;
    std::size_t count = 0;
    std::vector<double> sum;
    for (const auto& sample : corpus) {
        for (const auto& frame : sample) {
            if (width < 0) {
                width = frame.total_heads();
                heads_per_layer = frame.heads_per_layer;
                sum.assign(width, 0.0);
            } else if (frame.total_heads() != width || frame.heads_per_layer != heads_per_layer) {
                throw InputError("rank_static: frames disagree on head count");
            }
            for (int h = 0; h < width; ++h) sum[h] += frame.scores[h];
            ++count;
        }
    }
    if (count == 0) throw InputError("rank_static: empty corpus");
    for (auto& s : sum) s /= static_cast<double>(count);
    return {sorted_desc(sum, heads_per_layer), std::move(descriptor)};
}

std::optional<double> jaccard(const HeadSet& a, const HeadSet& b) {
    if (a.empty() && b.empty()) return std::nullopt;
    std::size_t inter = 0;
    for (const auto& h : a) inter += b.contains(h);
    return static_cast<double>(inter) / static_cast<double>(a.size() + b.size() - inter);
}

double activation_entropy(const std::vector<double>& counts) {
    double total = 0.0;
    for (double c : counts) {
        if (c < 0.0) throw InputError("activation_entropy: negative count");
        total += c;
    }
    if (total <= 0.0) return 0.0;
    double s = 0.0;
    for (double c : counts)
        if (c > 0.0) {
            const double p = c / total;
            s -= p * std::log(p);
        }
    return s;
}

DynamismReport dynamism_report(const std::vector<HeadSetSeries>& series, const HeadSet& static_top,
                               const ModelShape& shape, const std::vector<FrameSeries>* frames) {
    DynamismReport r;
    const auto width = static_cast<std::size_t>(shape.total_heads());
    std::vector<double> counts(width, 0.0);
    std::vector<std::vector<double>> table;
    double static_sum = 0.0, adjacent_sum = 0.0;

    for (const auto& sample : series) {
        for (std::size_t t = 0; t < sample.size(); ++t) {
            const auto& set = sample[t].heads;
            ++r.steps;
            std::vector<double> row(width, 0.0);
            for (const auto& h : set) {
                if (!shape.contains(h)) throw InputError("dynamism_report: head " + h.str() + " outside model");
                counts[shape.flat(h)] += 1.0;
                row[shape.flat(h)] = 1.0;
            }
            if (!frames) table.push_back(std::move(row));
            if (!set.empty()) {
                static_sum += *jaccard(set, static_top);
                ++r.static_steps_used;
            }
            if (t > 0) {
                if (auto j = jaccard(sample[t - 1].heads, set)) {
                    adjacent_sum += *j;
                    ++r.adjacent_pairs_used;
                } else {
                    ++r.adjacent_pairs_excluded;
                }
            }
        }
    }
    if (r.steps == 0) throw InputError("dynamism_report: empty series");
    if (frames) {
        for (const auto& sample : *frames)
            for (const auto& f : sample) {
                if (f.scores.size() != width) throw InputError("dynamism_report: frame head count mismatch");
                table.push_back(f.scores);
            }
    }
    r.jaccard_with_static = r.static_steps_used ? static_sum / static_cast<double>(r.static_steps_used) : 0.0;
    r.adjacent_jaccard = r.adjacent_pairs_used ? adjacent_sum / static_cast<double>(r.adjacent_pairs_used) : 0.0;
    r.entropy = activation_entropy(counts);
    r.empty_distribution = std::all_of(counts.begin(), counts.end(), [](double c) { return c == 0.0; });
    r.variance_ranking = sorted_desc(column_variance(table, width), shape.heads_per_layer);
    return r;
}

VarianceHeatmap variance_heatmap(const FrameSeries& frames, std::size_t n) {
    VarianceHeatmap out;
    if (frames.empty()) return out;
    const auto width = static_cast<std::size_t>(frames.front().total_heads());
    std::vector<std::vector<double>> table;
    for (const auto& f : frames) {
        if (f.scores.size() != width) throw InputError("variance_heatmap: frame head count mismatch");
        table.push_back(f.scores);
    }
    const auto ranking = sorted_desc(column_variance(table, width), frames.front().heads_per_layer);
    for (std::size_t i = 0; i < n && i < ranking.size(); ++i) {
        const HeadId h = ranking[i].first;
        out.heads.push_back(h);
        std::vector<double> row;
        for (const auto& f : frames) row.push_back(f.score(h));
        out.values.push_back(std::move(row));
    }
    return out;
}

}  // namespace headlamp
