#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "headlamp/ablation.hpp"
#include "headlamp/config.hpp"
#include "headlamp/store.hpp"
#include "headlamp/tasks.hpp"
#include "headlamp/tokenizer.hpp"

namespace headlamp {

/// A question-answering instance for the retrieval loop.
struct QaInstance {
    std::string id;
    Tokens context;
    Tokens question;
    std::string gold;
};

/// Everything one CLI invocation works with: the resolved config, the model
/// backend, the tokenizer and the output directory.
class Workspace {
public:
    Workspace(RunConfig config, std::filesystem::path out_dir);

    const RunConfig& config() const { return config_; }
    const Provenance& provenance() const { return provenance_; }
    const std::filesystem::path& out() const { return out_; }
    const Tokenizer& tokenizer() const { return *tokenizer_; }
    const Backend& backend() const { return *backend_; }
    bool in_process() const { return config_.model.kind != "bridge"; }
    MetricKind metric() const { return parse_metric_kind(config_.task.metric); }

    /// Task instances for (length, depth, seed); NIAH-style tasks only.
    TaskFactory factory() const;
    /// The instances traced by gen-traces and the trace-consuming commands.
    std::vector<TaskInstance> trace_instances() const;
    std::vector<QaInstance> qa_instances() const;

    /// Traces from traces.path, else out/traces.jsonl, else freshly collected.
    std::vector<StoredSample> traces() const;
    std::vector<StoredSample> collect_traces() const;
    /// Ranking from ablation.ranking_path, else out/ranking.json, else
    /// computed from traces().
    StaticRanking ranking() const;

    std::filesystem::path artifact(const std::string& name) const { return out_ / name; }
    void write_artifact(const std::string& name, const std::string& text) const;

private:
    RunConfig config_;
    Provenance provenance_;
    std::filesystem::path out_;
    std::unique_ptr<Tokenizer> tokenizer_;
    std::unique_ptr<Backend> backend_;
    std::string haystack_;
    PromptTemplate template_;
    std::vector<MultiHopSample> hotpot_;
};

std::filesystem::path default_data_dir();

/// One function per CLI subcommand. Each returns the artifacts it wrote.
std::vector<std::filesystem::path> run_gen_traces(const Workspace& ws);
std::vector<std::filesystem::path> run_stats(const Workspace& ws);
std::vector<std::filesystem::path> run_ablate_grid(const Workspace& ws);
std::vector<std::filesystem::path> run_ablate_progressive(const Workspace& ws);
std::vector<std::filesystem::path> run_cca(const Workspace& ws);
std::vector<std::filesystem::path> run_probe_train(const Workspace& ws);
std::vector<std::filesystem::path> run_probe_eval(const Workspace& ws);
std::vector<std::filesystem::path> run_dynrag(const Workspace& ws);
std::vector<std::filesystem::path> run_report(const Workspace& ws);

}  // namespace headlamp
