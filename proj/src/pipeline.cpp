#include "headlamp/pipeline.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

#include "headlamp/bridge.hpp"
#include "headlamp/dynrag.hpp"
#include "headlamp/linalg.hpp"
#include "headlamp/probe.hpp"

namespace headlamp {
namespace {

using nlohmann::json;

constexpr std::uint64_t kTraceTag = 0x54524143;  // "TRAC"
constexpr std::uint64_t kQaTag = 0x51414141;

std::unique_ptr<Tokenizer> make_tokenizer(const RunConfig& c) {
    std::string kind = c.tokenizer;
    if (kind == "auto") kind = c.task.kind == "toy_niah" ? "toy" : "byte";
    if (kind == "toy") {
        ToyNiahConfig tc;
        tc.uuid_len = c.task.uuid_len;
        return std::make_unique<WordTokenizer>(toy_vocabulary(tc));
    }
    return std::make_unique<ByteTokenizer>();
}

std::unique_ptr<Backend> make_backend(const RunConfig& c, const Tokenizer& tok) {
    const auto& m = c.model;
    if (m.kind == "induction") {
        InductionOptions o;
        o.heads_per_layer = m.heads_per_layer;
        o.max_context = m.max_context;
        return std::make_unique<Model>(build_induction_model(tok.vocab_size(), m.seed, o));
    }
    if (m.kind == "random") {
        ModelConfig mc = m.random;
        if (mc.vocab_size == 0) mc.vocab_size = tok.vocab_size();
        return std::make_unique<Model>(build_model(mc));
    }
    if (m.kind == "file") {
        auto model = std::make_unique<Model>(load_model(m.path));
        if (model->config().vocab_size < tok.vocab_size())
            throw ConfigError("model vocabulary is smaller than the tokenizer's");
        return model;
    }
    std::unique_ptr<Transport> transport;
    if (m.bridge.transport == "stdio") transport = std::make_unique<StdioTransport>(m.bridge.command);
    else transport = std::make_unique<HttpTransport>(m.bridge.url);
    BridgeOptions o;
    o.max_context = m.bridge.max_context;
    o.logits_top_n = m.bridge.logits_top_n;
    o.eos_token = tok.eos();
    return std::make_unique<BridgeBackend>(std::move(transport), o);
}

std::string read_file(const std::filesystem::path& p) {
    try {
        return read_text(p);
    } catch (const InputError& e) {
        throw ConfigError(e.what());
    }
}

json read_json(const std::filesystem::path& p) {
    try {
        return json::parse(read_text(p));
    } catch (const json::parse_error& e) {
        throw FormatError(p.string() + ": " + e.what());
    }
}

std::vector<TraceSeries> series_of(const std::vector<StoredSample>& samples) {
    std::vector<TraceSeries> out;
    for (const auto& s : samples) {
        if (s.frames.size() != s.trace.steps.size()) throw FormatError("trace " + s.trace.sample_id + " has no score frames");
        out.push_back(make_series(s.trace, s.frames));
    }
    return out;
}

ProbeConfig probe_config(const Workspace& ws) {
    ProbeConfig pc = ws.config().probe.config;
    pc.seed = ws.config().seed;
    const auto& loss = ws.config().probe.loss;
    if (loss == "auto") pc.loss = ws.config().score.kind == ScoreKind::CopyPaste ? ProbeLoss::Asymmetric : ProbeLoss::SquaredError;
    else pc.loss = parse_probe_loss(loss);
    return pc;
}

PairDataset probe_dataset(const Workspace& ws) {
    return collect_pairs(series_of(ws.traces()), ws.config().probe.offset, ws.config().seed,
                         ws.backend().shape().heads_per_layer);
}

std::filesystem::path probe_path(const Workspace& ws) {
    return ws.config().probe.path.empty() ? ws.artifact("probe.hlmp") : std::filesystem::path(ws.config().probe.path);
}

}  // namespace

std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("HEADLAMP_DATA")) return env;
    return HEADLAMP_DATA_DIR;
}

Workspace::Workspace(RunConfig config, std::filesystem::path out_dir) : config_(std::move(config)), out_(std::move(out_dir)) {
    config_.validate();
    provenance_ = {config_.hash(), config_.seed};
    tokenizer_ = make_tokenizer(config_);
    if (config_.task.kind == "niah") {
        const auto hay = config_.task.haystack_path.empty() ? default_data_dir() / "haystack.txt"
                                                            : std::filesystem::path(config_.task.haystack_path);
        haystack_ = read_file(hay);
        template_ = config_.task.template_path.empty() ? PromptTemplate::niah_default()
                                                       : PromptTemplate::load(config_.task.template_path);
    }
    if (config_.task.kind == "hotpotqa") {
        auto load = load_hotpotqa(config_.task.hotpot_path, *tokenizer_);
        if (load.samples.empty()) throw ConfigError("no usable HotpotQA records in " + config_.task.hotpot_path);
        hotpot_ = std::move(load.samples);
    }
    backend_ = make_backend(config_, *tokenizer_);
    std::filesystem::create_directories(out_);
}

void Workspace::write_artifact(const std::string& name, const std::string& text) const { write_text(artifact(name), text); }

TaskFactory Workspace::factory() const {
    const auto& task = config_.task;
    const int max_new = task.max_new;
    if (task.kind == "toy_niah") {
        const auto* tok = dynamic_cast<const WordTokenizer*>(tokenizer_.get());
        if (!tok) throw ConfigError("toy_niah needs the toy tokenizer");
        ToyNiahConfig base;
        base.uuid_len = task.uuid_len;
        return [tok, base, max_new](int length, double depth, std::uint64_t seed) {
            ToyNiahConfig c = base;
            c.haystack_len = length;
            auto s = make_toy_niah(*tok, c, depth, seed);
            return TaskInstance{s.prompt, s.needle_span, s.answer_text, max_new > 0 ? std::size_t(max_new) : s.max_new()};
        };
    }
    if (task.kind == "niah") {
        const Tokenizer* tok = tokenizer_.get();
        const std::string* hay = &haystack_;
        const PromptTemplate* tmpl = &template_;
        return [tok, hay, tmpl, max_new](int length, double depth, std::uint64_t seed) {
            auto s = make_niah(*hay, *tok, static_cast<std::size_t>(length), depth, seed, *tmpl);
            const std::size_t budget = max_new > 0 ? std::size_t(max_new) : tok->encode(s.uuid).tokens.size() + 8;
            return TaskInstance{s.tokens, s.needle_span, s.uuid, budget};
        };
    }
    throw ConfigError("task.kind " + task.kind + " has no length/depth grid; use toy_niah or niah");
}

std::vector<QaInstance> Workspace::qa_instances() const {
    const auto& task = config_.task;
    std::vector<QaInstance> out;
    if (task.kind == "toy_niah") {
        const auto f = factory();
        for (int i = 0; i < task.samples; ++i) {
            const auto seed = derive_seed(config_.seed, {kQaTag, std::uint64_t(i)});
            const double depth = task.depths[static_cast<std::size_t>(i) % task.depths.size()];
            const auto inst = f(task.lengths.front(), depth, seed);
            // The prompt ends with the two-token cue "? magic".
            QaInstance q{"toy-" + std::to_string(i), Tokens(inst.prompt.begin(), inst.prompt.end() - 2),
                         Tokens(inst.prompt.end() - 2, inst.prompt.end()), inst.gold};
            out.push_back(std::move(q));
        }
        return out;
    }
    std::vector<MultiHopSample> samples;
    if (task.kind == "multihop") {
        for (int i = 0; i < task.samples; ++i)
            samples.push_back(make_multihop(*tokenizer_, derive_seed(config_.seed, {kQaTag, std::uint64_t(i)})));
    } else if (task.kind == "hotpotqa") {
        samples.assign(hotpot_.begin(), hotpot_.begin() + std::min<std::size_t>(hotpot_.size(), task.samples));
    } else {
        throw ConfigError("dynrag runs on toy_niah, multihop or hotpotqa tasks");
    }
    for (const auto& s : samples)
        out.push_back({s.id, tokenizer_->encode(s.context).tokens, tokenizer_->encode("\nQuestion: " + s.question + "\nAnswer:").tokens,
                       s.answer});
    return out;
}

std::vector<TaskInstance> Workspace::trace_instances() const {
    const auto& task = config_.task;
    std::vector<TaskInstance> out;
    if (task.kind == "toy_niah" || task.kind == "niah") {
        const auto f = factory();
        for (int i = 0; i < task.samples; ++i) {
            const auto seed = derive_seed(config_.seed, {kTraceTag, std::uint64_t(i)});
            const auto n = static_cast<std::size_t>(i);
            out.push_back(f(task.lengths[n % task.lengths.size()], task.depths[n % task.depths.size()], seed));
        }
        return out;
    }
    std::vector<MultiHopSample> samples;
    if (task.kind == "multihop") {
        for (int i = 0; i < task.samples; ++i)
            samples.push_back(make_multihop(*tokenizer_, derive_seed(config_.seed, {kTraceTag, std::uint64_t(i)})));
    } else {
        samples.assign(hotpot_.begin(), hotpot_.begin() + std::min<std::size_t>(hotpot_.size(), task.samples));
    }
    for (const auto& s : samples) {
        TaskInstance t;
        t.prompt = tokenizer_->encode(s.context).tokens;
        const auto q = tokenizer_->encode("\nQuestion: " + s.question + "\nAnswer:").tokens;
        t.prompt.insert(t.prompt.end(), q.begin(), q.end());
        t.needle = s.needle_indices();
        t.gold = s.answer;
        t.max_new = task.max_new > 0 ? std::size_t(task.max_new) : tokenizer_->encode(s.answer).tokens.size() + 8;
        out.push_back(std::move(t));
    }
    return out;
}

std::vector<StoredSample> Workspace::collect_traces() const {
    const auto instances = trace_instances();
    std::vector<StoredSample> out;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        const auto seed = derive_seed(config_.seed, {kTraceTag, i});
        auto run = collect_frames(*backend_, instances[i], config_.score, "s" + std::to_string(i), seed);
        out.push_back({std::move(run.trace), instances[i].needle, std::move(run.frames), std::move(run.spans)});
    }
    return out;
}

std::vector<StoredSample> Workspace::traces() const {
    std::filesystem::path p = config_.traces.path;
    if (p.empty() && std::filesystem::exists(artifact("traces.jsonl"))) p = artifact("traces.jsonl");
    if (p.empty()) return collect_traces();
    auto file = read_trace(p);
    if (file.shape != backend_->shape()) throw FormatError(p.string() + ": traces were recorded with a different model shape");
    return std::move(file.samples);
}

StaticRanking Workspace::ranking() const {
    std::filesystem::path p = config_.ablation.ranking_path;
    if (p.empty() && std::filesystem::exists(artifact("ranking.json"))) p = artifact("ranking.json");
    if (!p.empty()) return ranking_from_json(read_json(p));
    std::vector<FrameSeries> corpus;
    for (auto& s : traces()) corpus.push_back(std::move(s.frames));
    return rank_static(corpus, config_.task.kind);
}

std::vector<std::filesystem::path> run_gen_traces(const Workspace& ws) {
    TraceFile file;
    file.provenance = ws.provenance();
    file.shape = ws.backend().shape();
    file.extra = {{"task", ws.config().task.kind}, {"tokenizer", ws.tokenizer().name()}};
    file.samples = ws.collect_traces();
    TraceWriteOptions opt;
    opt.sparse_top = ws.config().traces.sparse_top >= 0 ? ws.config().traces.sparse_top : (ws.in_process() ? 0 : 64);
    const auto path = ws.artifact("traces.jsonl");
    write_trace(path, file, opt);
    return {path};
}

std::vector<std::filesystem::path> run_stats(const Workspace& ws) {
    const auto samples = ws.traces();
    std::vector<FrameSeries> frames;
    std::vector<HeadSetSeries> sets;
    for (const auto& s : samples) {
        if (s.frames.size() != s.trace.steps.size()) throw FormatError("trace " + s.trace.sample_id + " has no score frames");
        frames.push_back(s.frames);
        HeadSetSeries series;
        for (const auto& f : s.frames) series.push_back(select_dynamic_heads(f, ws.config().score.threshold));
        sets.push_back(std::move(series));
    }
    const auto ranking = rank_static(frames, ws.config().task.kind);
    const auto report = dynamism_report(sets, ranking.top(kStaticTopK), ws.backend().shape(), &frames);
    std::vector<std::filesystem::path> out;
    ws.write_artifact("dynamism.csv", dynamism_csv(ws.provenance(), ws.config().model.kind, report));
    out.push_back(ws.artifact("dynamism.csv"));
    ws.write_artifact("static_ranking.csv", static_ranking_csv(ws.provenance(), ranking));
    out.push_back(ws.artifact("static_ranking.csv"));
    ws.write_artifact("ranking.json", ranking_to_json(ws.provenance(), ranking).dump(2) + "\n");
    out.push_back(ws.artifact("ranking.json"));
    if (!frames.empty()) {
        ws.write_artifact("heatmap.csv", heatmap_csv(ws.provenance(), variance_heatmap(frames.front(), 10)));
        out.push_back(ws.artifact("heatmap.csv"));
    }
    return out;
}

std::vector<std::filesystem::path> run_ablate_grid(const Workspace& ws) {
    const auto& c = ws.config();
    GridSpec spec;
    spec.lengths = c.task.lengths;
    spec.depths = c.task.depths;
    spec.runs_per_cell = c.task.runs;
    spec.master_seed = c.seed;
    spec.metric = ws.metric();
    std::optional<StaticRanking> ranking;
    std::vector<std::filesystem::path> out;
    const auto factory = ws.factory();
    for (const auto& name : c.ablation.conditions) {
        const auto cond = parse_condition(name);
        if (cond == AblationCondition::StaticTop && !ranking) ranking = ws.ranking();
        const auto result = run_grid(ws.backend(), ws.tokenizer(), factory, spec, cond, ranking ? &*ranking : nullptr, c.score);
        const std::string base = "grid_" + to_string(cond);
        ws.write_artifact(base + ".json", grid_to_json(ws.provenance(), result).dump(2) + "\n");
        ws.write_artifact(base + ".csv", grid_matrix_csv(ws.provenance(), result));
        ws.write_artifact(base + "_long.csv", grid_long_csv(ws.provenance(), result));
        for (const char* ext : {".json", ".csv", "_long.csv"}) out.push_back(ws.artifact(base + ext));
    }
    return out;
}

std::vector<std::filesystem::path> run_ablate_progressive(const Workspace& ws) {
    const auto& c = ws.config();
    auto k_values = c.ablation.k_values;
    std::sort(k_values.begin(), k_values.end());
    k_values.erase(std::unique(k_values.begin(), k_values.end()), k_values.end());
    const auto ranking = ws.ranking();
    const auto result = progressive_run(ws.backend(), ws.tokenizer(), ws.factory(), k_values, c.ablation.runs,
                                        c.ablation.length, ranking, c.seed, c.score, ws.metric());
    ws.write_artifact("progressive.csv", progressive_csv(ws.provenance(), result));
    ws.write_artifact("progressive_log.jsonl", progressive_log_jsonl(ws.provenance(), result));
    return {ws.artifact("progressive.csv"), ws.artifact("progressive_log.jsonl")};
}

std::vector<std::filesystem::path> run_cca(const Workspace& ws) {
    const auto sweep = temporal_sweep(series_of(ws.traces()), ws.config().cca.offsets, ws.config().cca.options);
    ws.write_artifact("cca_sweep.csv", sweep_csv(ws.provenance(), sweep));
    return {ws.artifact("cca_sweep.csv")};
}

std::vector<std::filesystem::path> run_probe_train(const Workspace& ws) {
    const auto data = probe_dataset(ws);
    if (data.indices(Split::Train).empty() || data.indices(Split::Validation).empty())
        throw InputError("probe-train: too few (hidden, score) pairs for a train/validation split");
    const auto trained = train_probe(data, probe_config(ws));
    const auto path = probe_path(ws);
    save_probe(trained.model, path);
    ws.write_artifact("probe_train.json", probe_metrics_json(ws.provenance(), trained.metrics).dump(2) + "\n");
    return {path, ws.artifact("probe_train.json")};
}

std::vector<std::filesystem::path> run_probe_eval(const Workspace& ws) {
    const auto probe = load_probe(probe_path(ws));
    const auto data = probe_dataset(ws);
    if (probe.input_dim() != data.x.cols()) throw FormatError("probe input width does not match the traces");
    const auto metrics = evaluate_probe(probe, data);
    ws.write_artifact("probe_metrics.json", probe_metrics_json(ws.provenance(), metrics).dump(2) + "\n");
    return {ws.artifact("probe_metrics.json")};
}

std::vector<std::filesystem::path> run_dynrag(const Workspace& ws) {
    const auto& c = ws.config();
    DynRagConfig dc;
    dc.retrieval = c.dynrag.retrieval;
    dc.rind.threshold = c.dynrag.theta;
    dc.rind.stopwords = c.dynrag.stopwords_path.empty() ? default_stopwords() : load_stopwords(c.dynrag.stopwords_path);
    dc.max_new = c.dynrag.max_new;
    dc.draft_max = c.dynrag.draft_max;

    std::optional<ProbeModel> probe;
    std::optional<StaticRanking> ranking;
    const auto instances = ws.qa_instances();
    std::string csv = provenance_comment(ws.provenance()) + "policy,em,f1,samples,retrievals\n";
    std::vector<std::filesystem::path> out;
    for (const auto& name : c.dynrag.policies) {
        HeadPolicy policy;
        policy.kind = parse_policy(name);
        policy.n_heads = c.dynrag.n_heads;
        if (policy.kind == PolicyKind::DynamicProbe) {
            if (!probe) {
                const auto p = probe_path(ws);
                if (!std::filesystem::exists(p))
                    throw ConfigError("dynamic_probe needs a trained probe at " + p.string() + " (run probe-train first)");
                probe = load_probe(p);
            }
            policy.probe = &*probe;
        }
        if (policy.kind == PolicyKind::StaticTopN) {
            if (!ranking) ranking = ws.ranking();
            policy.static_heads = ranking->top_list(static_cast<std::size_t>(policy.n_heads));
        }
        double em = 0.0, f1 = 0.0;
        std::size_t retrievals = 0;
        for (std::size_t i = 0; i < instances.size(); ++i) {
            const auto& q = instances[i];
            dc.seed = derive_seed(c.seed, {kQaTag, i});
            const auto result = answer(ws.backend(), ws.tokenizer(), q.context, q.question, policy, dc);
            em += exact_match(result.text, q.gold);
            f1 += token_f1(result.text, q.gold);
            for (const auto& e : result.log)
                if (e.at("event") == "retrieve") ++retrievals;
            const auto log_path = ws.artifact("dynrag_logs/" + name + "/" + q.id + ".jsonl");
            std::filesystem::create_directories(log_path.parent_path());
            write_log(log_path, result.log);
        }
        const double n = instances.empty() ? 1.0 : static_cast<double>(instances.size());
        csv += name + "," + format_number(em / n) + "," + format_number(f1 / n) + "," + std::to_string(instances.size()) +
               "," + std::to_string(retrievals) + "\n";
        out.push_back(ws.artifact("dynrag_logs/" + name));
    }
    ws.write_artifact("dynrag.csv", csv);
    out.insert(out.begin(), ws.artifact("dynrag.csv"));
    return out;
}

std::vector<std::filesystem::path> run_report(const Workspace& ws) {
    std::vector<std::filesystem::path> grids;
    if (std::filesystem::exists(ws.out()))
        for (const auto& entry : std::filesystem::directory_iterator(ws.out())) {
            const auto name = entry.path().filename().string();
            if (name.rfind("grid_", 0) == 0 && entry.path().extension() == ".json") grids.push_back(entry.path());
        }
    std::sort(grids.begin(), grids.end());
    std::vector<std::filesystem::path> out;
    json summary{{"config_hash", ws.provenance().config_hash}, {"master_seed", ws.provenance().master_seed}};
    json conditions = json::array();
    for (const auto& g : grids) {
        const auto j = read_json(g);
        const auto result = grid_from_json(j);
        const Provenance p{j.value("config_hash", ""), j.value("master_seed", std::uint64_t{0})};
        const std::string name = "fig2_" + to_string(result.condition) + ".csv";
        ws.write_artifact(name, grid_matrix_csv(p, result));
        out.push_back(ws.artifact(name));
        double mean = 0.0;
        int feasible = 0;
        for (const auto& c : result.cells)
            if (c.feasible) mean += c.mean, ++feasible;
        conditions.push_back({{"condition", to_string(result.condition)},
                              {"source", g.filename().string()},
                              {"source_config_hash", p.config_hash},
                              {"mean", feasible ? mean / feasible : 0.0},
                              {"cells", result.cells.size()}});
    }
    summary["grids"] = conditions;
    json present = json::array();
    for (const char* name : {"traces.jsonl", "dynamism.csv", "heatmap.csv", "static_ranking.csv", "progressive.csv",
                             "cca_sweep.csv", "probe_train.json", "probe_metrics.json", "dynrag.csv"})
        if (std::filesystem::exists(ws.artifact(name))) present.push_back(name);
    summary["artifacts"] = present;
    ws.write_artifact("report.json", summary.dump(2) + "\n");
    out.push_back(ws.artifact("report.json"));
    return out;
}

}  // namespace headlamp
