#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "headlamp/ablation.hpp"
#include "headlamp/dynamism.hpp"
#include "headlamp/linalg.hpp"
#include "headlamp/model.hpp"
#include "headlamp/probe.hpp"
#include "headlamp/scores.hpp"

namespace headlamp {

inline constexpr const char* kTraceSchema = "hlt/1";

/// Provenance stamped on every artifact.
struct Provenance {
    std::string config_hash;
    std::uint64_t master_seed = 0;
};

struct StoredSample {
    GenerationTrace trace;
    std::vector<int> needle;
    FrameSeries frames;          // may be empty
    std::vector<SpanSet> spans;  // one per step, or empty
};

struct TraceFile {
    Provenance provenance;
    ModelShape shape;
    nlohmann::json extra = nlohmann::json::object();
    std::vector<StoredSample> samples;
};

struct TraceWriteOptions {
    /// Keep only the `sparse_top` largest weights of each attention row; 0
    /// keeps full rows.
    int sparse_top = 0;
};

/// Sparse form of one attention row. The true argmax is stored explicitly.
struct SparseRow {
    std::size_t length = 0;
    std::vector<int> index;
    std::vector<float> weight;
    int argmax = 0;
};

SparseRow sparsify_row(std::span<const double> row, int top_m);
std::vector<double> densify_row(const SparseRow& row);

void write_trace(const std::filesystem::path& path, const TraceFile& file, const TraceWriteOptions& options = {});
TraceFile read_trace(const std::filesystem::path& path);

/// Deterministic CSV writer helpers. Every file starts with a provenance
/// comment line.
std::string provenance_comment(const Provenance& p);
std::string format_number(double v);

std::string dynamism_csv(const Provenance& p, const std::string& model_name, const DynamismReport& r);
std::string heatmap_csv(const Provenance& p, const VarianceHeatmap& h);
std::string static_ranking_csv(const Provenance& p, const StaticRanking& r);
/// Rows are depths, columns are haystack lengths.
std::string grid_matrix_csv(const Provenance& p, const AblationGridResult& g);
std::string grid_long_csv(const Provenance& p, const AblationGridResult& g);
nlohmann::json grid_to_json(const Provenance& p, const AblationGridResult& g);
AblationGridResult grid_from_json(const nlohmann::json& j);
std::string progressive_csv(const Provenance& p, const ProgressiveResult& r);
std::string progressive_log_jsonl(const Provenance& p, const ProgressiveResult& r);
std::string sweep_csv(const Provenance& p, const std::vector<SweepPoint>& sweep);
nlohmann::json probe_metrics_json(const Provenance& p, const ProbeMetrics& m);

/// Static ranking JSON, readable back for later ablation runs.
nlohmann::json ranking_to_json(const Provenance& p, const StaticRanking& r);
StaticRanking ranking_from_json(const nlohmann::json& j);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace headlamp
