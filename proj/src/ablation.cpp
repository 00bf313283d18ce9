#include "headlamp/ablation.hpp"

#include <algorithm>
#include <cmath>

namespace headlamp {
namespace {

HeadSet dynamic_set(const StepOutput& out, std::span<const Token> input, const SpanSet& spans, const ModelShape& shape,
                    const ScoreSettings& settings, std::size_t step) {
    const auto frame = frame_scores(out, input, spans, settings.kind, step, shape);
    return select_dynamic_heads(frame, settings.threshold).heads;
}

double decode_metric(const Tokenizer& tokenizer, const Tokens& generated, const std::string& gold, MetricKind metric) {
    return score(tokenizer.decode(generated), gold, metric).value;
}

}  // namespace

std::string to_string(AblationCondition c) {
    switch (c) {
        case AblationCondition::None: return "none";
        case AblationCondition::Dynamic: return "dynamic";
        case AblationCondition::StaticTop: return "static";
        case AblationCondition::Random: return "random";
    }
    return "?";
}

AblationCondition parse_condition(const std::string& text) {
    for (auto c : {AblationCondition::None, AblationCondition::Dynamic, AblationCondition::StaticTop,
                   AblationCondition::Random})
        if (to_string(c) == text) return c;
    throw ConfigError("unknown ablation condition '" + text + "' (none, dynamic, static, random)");
}

std::size_t matched_mask_count(const AblationState& state, std::size_t current) {
    const double mean = static_cast<double>(state.dynamic_total + current) / static_cast<double>(state.steps + 1);
    auto n = static_cast<std::size_t>(std::llround(mean));
    if (n == 0 && (state.any_active || current > 0)) n = 1;
    return n;
}

AblationStepRecord ablate_step(const Backend& model, std::span<const Token> prefix, const SpanSet& spans,
                               AblationCondition condition, const StaticRanking* ranking, AblationState& state,
                               const ScoreSettings& settings, std::size_t step_index) {
    if (static_cast<int>(prefix.size()) > model.max_context()) throw InputError("ablate_step: context overflow");
    const auto shape = model.shape();
    AblationStepRecord rec;
    rec.step = step_index;
    rec.pass1 = model.forward(prefix, {});
    rec.pass1_token = rec.pass1.predicted_token;
    rec.dynamic = dynamic_set(rec.pass1, prefix, spans, shape, settings, step_index);

    const std::size_t n = matched_mask_count(state, rec.dynamic.size());
    switch (condition) {
        case AblationCondition::None: break;
        case AblationCondition::Dynamic: rec.masked = rec.dynamic; break;
        case AblationCondition::StaticTop: {
            if (!ranking) throw ConfigError("static-top ablation needs a static ranking");
            const auto top = ranking->top_list(kStaticTopK);
            for (std::size_t i = 0; i < n && i < top.size(); ++i) rec.masked.insert(top[i]);
            rec.matched_count = n;
            break;
        }
        case AblationCondition::Random: {
            if (state.random_order.empty()) {
                for (int f = 0; f < shape.total_heads(); ++f) state.random_order.push_back(shape.head_at(f));
                Rng rng(derive_seed(state.seed, {0x52414e44}));
                rng.shuffle(state.random_order);
            }
            for (std::size_t i = 0; i < n && i < state.random_order.size(); ++i) rec.masked.insert(state.random_order[i]);
            rec.matched_count = n;
            break;
        }
    }

    state.dynamic_total += rec.dynamic.size();
    state.any_active = state.any_active || !rec.dynamic.empty();
    ++state.steps;

    if (rec.masked.empty()) {
        rec.pass2 = rec.pass1;
    } else {
        Intervention iv;
        iv.masked_heads = rec.masked;
        rec.pass2 = model.forward(prefix, iv);
    }
    rec.accepted = rec.pass2.predicted_token;
    return rec;
}

SampleRun run_ablation_sample(const Backend& model, const Tokenizer& tokenizer, const TaskInstance& task,
                              AblationCondition condition, const StaticRanking* ranking, std::uint64_t sample_seed,
                              const ScoreSettings& settings, MetricKind metric) {
    SampleRun run;
    AblationState state(sample_seed);
    Tokens input = task.prompt;
    for (std::size_t t = 0; t < task.max_new; ++t) {
        if (static_cast<int>(input.size()) > model.max_context()) {
            run.overflow = true;
            break;
        }
        const auto spans = settings.spans_for(input.size(), task.needle);
        auto rec = ablate_step(model, input, spans, condition, ranking, state, settings, t);
        input.push_back(rec.accepted);
        run.generated.push_back(rec.accepted);
        const bool eos = model.eos_token() >= 0 && rec.accepted == model.eos_token();
        run.steps.push_back(std::move(rec));
        if (eos) break;
    }
    run.text = tokenizer.decode(run.generated);
    run.metric = score(run.text, task.gold, metric).value;
    return run;
}

FrameRun collect_frames(const Backend& model, const TaskInstance& task, const ScoreSettings& settings,
                        std::string sample_id, std::uint64_t seed) {
    FrameRun out;
    out.trace = generate(model, task.prompt, task.max_new, {}, std::move(sample_id), seed);
    const auto shape = model.shape();
    for (std::size_t t = 0; t < out.trace.steps.size(); ++t) {
        const auto input = out.trace.input_at(t);
        auto spans = settings.spans_for(input.size(), task.needle);
        out.frames.push_back(frame_scores(out.trace.steps[t].output, input, spans, settings.kind, t, shape));
        out.spans.push_back(std::move(spans));
    }
    return out;
}

const GridCell& AblationGridResult::cell(int length, double depth) const {
    for (const auto& c : cells)
        if (c.length == length && c.depth == depth) return c;
    throw InputError("grid has no cell for the requested length/depth");
}

std::uint64_t grid_run_seed(std::uint64_t master, std::size_t length_index, std::size_t depth_index, int run) {
    return derive_seed(master, {0x47524944, length_index, depth_index, static_cast<std::uint64_t>(run)});
}

AblationGridResult run_grid(const Backend& model, const Tokenizer& tokenizer, const TaskFactory& factory,
                            const GridSpec& spec, AblationCondition condition, const StaticRanking* ranking,
                            const ScoreSettings& settings) {
    if (spec.runs_per_cell < 1) throw ConfigError("runs_per_cell must be positive");
    AblationGridResult result;
    result.condition = condition;
    result.metric = spec.metric;
    for (std::size_t li = 0; li < spec.lengths.size(); ++li) {
        for (std::size_t di = 0; di < spec.depths.size(); ++di) {
            GridCell cell;
            cell.length = spec.lengths[li];
            cell.depth = spec.depths[di];
            double sum = 0.0, masked = 0.0;
            std::size_t steps = 0;
            for (int r = 0; r < spec.runs_per_cell; ++r) {
                const auto seed = grid_run_seed(spec.master_seed, li, di, r);
                TaskInstance task;
                try {
                    task = factory(cell.length, cell.depth, seed);
                    if (static_cast<int>(task.prompt.size()) > model.max_context())
                        throw InputError("prompt of " + std::to_string(task.prompt.size()) + " tokens exceeds context");
                } catch (const InputError& e) {
                    cell.feasible = false;
                    cell.note = e.what();
                    break;
                }
                const auto run = run_ablation_sample(model, tokenizer, task, condition, ranking, seed, settings, spec.metric);
                sum += run.metric;
                for (const auto& s : run.steps) masked += static_cast<double>(s.masked.size());
                steps += run.steps.size();
                ++cell.runs;
            }
            if (cell.feasible && cell.runs > 0) {
                cell.mean = sum / cell.runs;
                cell.mean_masked = steps ? masked / static_cast<double>(steps) : 0.0;
            } else {
                cell.runs = 0;
            }
            result.cells.push_back(std::move(cell));
        }
    }
    return result;
}

std::vector<HeadId> order_by_needle_mass(const HeadSet& dynamic, const StepOutput& out, const SpanSet& spans) {
    std::vector<std::pair<HeadId, double>> mass;
    for (const auto& h : dynamic) {
        const auto& row = out.row(h);
        double m = 0.0;
        for (int i : spans.needle)
            if (i < static_cast<int>(row.size())) m += row[i];
        mass.emplace_back(h, m);
    }
    std::stable_sort(mass.begin(), mass.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<HeadId> order;
    for (const auto& [h, m] : mass) order.push_back(h);
    return order;
}

std::size_t compensated_overlap(const std::vector<ProgressiveStep>& steps, const HeadSet& top) {
    std::size_t best = 0;
    for (const auto& s : steps) {
        std::size_t n = 0;
        for (const auto& h : s.after)
            if (!s.dynamic.contains(h) && top.contains(h)) ++n;
        best = std::max(best, n);
    }
    return best;
}

ProgressiveSample progressive_sample(const Backend& model, const Tokenizer& tokenizer, const TaskInstance& task, int k,
                                     const HeadSet& static_top, const ScoreSettings& settings, MetricKind metric) {
    if (k < 0) throw ConfigError("progressive ablation: k must be non-negative");
    const auto shape = model.shape();
    ProgressiveSample sample;
    sample.k = k;
    Tokens input = task.prompt;
    Tokens generated;
    for (std::size_t t = 0; t < task.max_new; ++t) {
        if (static_cast<int>(input.size()) > model.max_context()) break;
        const auto spans = settings.spans_for(input.size(), task.needle);
        ProgressiveStep step;
        step.step = t;
        const auto pass1 = model.forward(input, {});
        step.dynamic = dynamic_set(pass1, input, spans, shape, settings, t);
        const auto order = order_by_needle_mass(step.dynamic, pass1, spans);
        for (std::size_t i = 0; i < order.size() && static_cast<int>(i) < k; ++i) step.masked.insert(order[i]);

        StepOutput pass2 = pass1;
        if (!step.masked.empty()) {
            Intervention iv;
            iv.masked_heads = step.masked;
            pass2 = model.forward(input, iv);
        }
        step.after = dynamic_set(pass2, input, spans, shape, settings, t);
        for (const auto& h : step.after)
            if (!step.dynamic.contains(h)) step.compensated.insert(h);

        input.push_back(pass2.predicted_token);
        generated.push_back(pass2.predicted_token);
        sample.steps.push_back(std::move(step));
        if (model.eos_token() >= 0 && pass2.predicted_token == model.eos_token()) break;
    }
    sample.metric = decode_metric(tokenizer, generated, task.gold, metric);
    sample.max_overlap = compensated_overlap(sample.steps, static_top);
    return sample;
}

ProgressiveResult progressive_run(const Backend& model, const Tokenizer& tokenizer, const TaskFactory& factory,
                                  const std::vector<int>& k_values, int runs, int length,
                                  const StaticRanking& ranking, std::uint64_t master_seed,
                                  const ScoreSettings& settings, MetricKind metric) {
    if (!std::is_sorted(k_values.begin(), k_values.end())) throw ConfigError("k values must be ascending");
    for (int k : k_values)
        if (k < 0 || k > model.shape().total_heads()) throw ConfigError("k out of range: " + std::to_string(k));
    const HeadSet top = ranking.top(kStaticTopK);

    std::vector<TaskInstance> tasks;
    std::vector<std::uint64_t> seeds;
    for (int r = 0; r < runs; ++r) {
        const auto seed = derive_seed(master_seed, {0x50524f47, static_cast<std::uint64_t>(r)});
        Rng rng(seed);
        tasks.push_back(factory(length, rng.uniform(), seed));
        seeds.push_back(seed);
    }

    ProgressiveResult result;
    result.k_values = k_values;
    for (int k : k_values) {
        double metric_sum = 0.0, overlap_sum = 0.0;
        for (int r = 0; r < runs; ++r) {
            auto s = progressive_sample(model, tokenizer, tasks[r], k, top, settings, metric);
            s.run = r;
            s.seed = seeds[r];
            metric_sum += s.metric;
            overlap_sum += static_cast<double>(s.max_overlap);
            result.samples.push_back(std::move(s));
        }
        result.mean_metric.push_back(runs ? metric_sum / runs : 0.0);
        result.mean_overlap.push_back(runs ? overlap_sum / runs : 0.0);
    }
    return result;
}

}  // namespace headlamp
