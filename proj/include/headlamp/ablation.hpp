#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "headlamp/core.hpp"
#include "headlamp/dynamism.hpp"
#include "headlamp/metrics.hpp"
#include "headlamp/model.hpp"
#include "headlamp/scores.hpp"
#include "headlamp/tokenizer.hpp"

namespace headlamp {

enum class AblationCondition { None, Dynamic, StaticTop, Random };

std::string to_string(AblationCondition c);
AblationCondition parse_condition(const std::string& text);

struct ScoreSettings {
    ScoreKind kind = ScoreKind::CopyPaste;
    double threshold = kDefaultReasoningThreshold;
    int sink_count = 1;
    int local_window = 4;

    SpanSet spans_for(std::size_t length, const std::vector<int>& needle) const {
        return SpanSet::make(length, needle, sink_count, local_window);
    }
};

inline constexpr std::size_t kStaticTopK = 20;

/// Per-sample state of the matched-count conditions.
struct AblationState {
    explicit AblationState(std::uint64_t sample_seed) : seed(sample_seed) {}

    std::uint64_t seed;
    std::size_t steps = 0;
    std::size_t dynamic_total = 0;
    bool any_active = false;
    std::vector<HeadId> random_order;  // drawn on first use
};

struct AblationStepRecord {
    std::size_t step = 0;
    StepOutput pass1;
    StepOutput pass2;
    HeadSet dynamic;     // from pass 1
    HeadSet masked;      // applied in pass 2
    std::size_t matched_count = 0;
    Token pass1_token = -1;
    Token accepted = -1;
};

/// Mask count for the matched conditions after observing `current` dynamic
/// heads at this step: round(mean |H| over the sample so far, this step
/// included), at least 1 once any step had an active head.
std::size_t matched_mask_count(const AblationState& state, std::size_t current);

/// Pass 1 without intervention, dynamic-set identification, pass 2 under the
/// condition's mask. Advances `state`.
AblationStepRecord ablate_step(const Backend& model, std::span<const Token> prefix, const SpanSet& spans,
                               AblationCondition condition, const StaticRanking* ranking, AblationState& state,
                               const ScoreSettings& settings, std::size_t step_index = 0);

/// Everything a run needs about one task instance.
struct TaskInstance {
    Tokens prompt;
    std::vector<int> needle;
    std::string gold;
    std::size_t max_new = 0;
};

struct SampleRun {
    Tokens generated;
    std::string text;
    double metric = 0.0;
    bool overflow = false;
    std::vector<AblationStepRecord> steps;
};

SampleRun run_ablation_sample(const Backend& model, const Tokenizer& tokenizer, const TaskInstance& task,
                              AblationCondition condition, const StaticRanking* ranking, std::uint64_t sample_seed,
                              const ScoreSettings& settings, MetricKind metric);

/// Unablated generation of one instance with per-step score frames.
struct FrameRun {
    GenerationTrace trace;
    FrameSeries frames;
    std::vector<SpanSet> spans;
};

FrameRun collect_frames(const Backend& model, const TaskInstance& task, const ScoreSettings& settings,
                        std::string sample_id = {}, std::uint64_t seed = 0);

/// Builds the instance for (length, depth, seed); throws InputError when the
/// combination is infeasible.
using TaskFactory = std::function<TaskInstance(int length, double depth, std::uint64_t seed)>;

struct GridSpec {
    std::vector<int> lengths;
    std::vector<double> depths;
    int runs_per_cell = 5;
    std::uint64_t master_seed = 0;
    MetricKind metric = MetricKind::AccuracyContains;
};

struct GridCell {
    int length = 0;
    double depth = 0.0;
    double mean = 0.0;
    int runs = 0;
    bool feasible = true;
    std::string note;
    double mean_masked = 0.0;  // mean heads masked per step
};

struct AblationGridResult {
    AblationCondition condition = AblationCondition::None;
    MetricKind metric = MetricKind::AccuracyContains;
    std::vector<GridCell> cells;  // lengths-major order

    const GridCell& cell(int length, double depth) const;
};

/// Per-run seed for cell (length index, depth index) and run r.
std::uint64_t grid_run_seed(std::uint64_t master, std::size_t length_index, std::size_t depth_index, int run);

AblationGridResult run_grid(const Backend& model, const Tokenizer& tokenizer, const TaskFactory& factory,
                            const GridSpec& spec, AblationCondition condition, const StaticRanking* ranking,
                            const ScoreSettings& settings);

struct ProgressiveStep {
    std::size_t step = 0;
    HeadSet dynamic;      // before masking
    HeadSet masked;       // top-k of `dynamic`
    HeadSet after;        // dynamic set recomputed under the mask
    HeadSet compensated;  // after minus dynamic
};

struct ProgressiveSample {
    int k = 0;
    int run = 0;
    std::uint64_t seed = 0;
    double metric = 0.0;
    std::size_t max_overlap = 0;  // max over steps of |compensated ∩ static top-20|
    std::vector<ProgressiveStep> steps;
};

struct ProgressiveResult {
    std::vector<int> k_values;
    std::vector<double> mean_metric;
    std::vector<double> mean_overlap;
    std::vector<ProgressiveSample> samples;
};

/// Heads of `dynamic` ordered by attention mass on the needle (descending),
/// ties by (layer, head).
std::vector<HeadId> order_by_needle_mass(const HeadSet& dynamic, const StepOutput& out, const SpanSet& spans);

/// max_t |(after_t minus dynamic_t) ∩ top|
std::size_t compensated_overlap(const std::vector<ProgressiveStep>& steps, const HeadSet& top);

ProgressiveSample progressive_sample(const Backend& model, const Tokenizer& tokenizer, const TaskInstance& task, int k,
                                     const HeadSet& static_top, const ScoreSettings& settings, MetricKind metric);

/// Instances come from factory(length, depth, seed) with depth and seed drawn
/// per run from the master seed; the same instances are reused for every k.
ProgressiveResult progressive_run(const Backend& model, const Tokenizer& tokenizer, const TaskFactory& factory,
                                  const std::vector<int>& k_values, int runs, int length,
                                  const StaticRanking& ranking, std::uint64_t master_seed,
                                  const ScoreSettings& settings, MetricKind metric);

}  // namespace headlamp
