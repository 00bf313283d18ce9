#include "headlamp/store.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace headlamp {
namespace {

using nlohmann::json;

json floats(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(static_cast<double>(static_cast<float>(x)));
    return a;
}

std::vector<double> read_floats(const json& a) {
    std::vector<double> v;
    v.reserve(a.size());
    for (const auto& x : a) v.push_back(static_cast<double>(static_cast<float>(x.get<double>())));
    return v;
}

json heads_json(const HeadSet& s) {
    json a = json::array();
    for (const auto& h : s) a.push_back({h.layer, h.head});
    return a;
}

HeadSet heads_from(const json& a) {
    HeadSet s;
    for (const auto& h : a) s.insert({h.at(0).get<int>(), h.at(1).get<int>()});
    return s;
}

json intervention_json(const Intervention& iv) {
    json j{{"masked", heads_json(iv.masked_heads)}};
    j["visible"] = iv.visible_positions ? json(*iv.visible_positions) : json(nullptr);
    return j;
}

Intervention intervention_from(const json& j) {
    Intervention iv;
    iv.masked_heads = heads_from(j.at("masked"));
    if (!j.at("visible").is_null()) iv.visible_positions = j.at("visible").get<std::vector<int>>();
    return iv;
}

json spans_json(const SpanSet& s) {
    return {{"length", s.length},
            {"needle", std::vector<int>(s.needle.begin(), s.needle.end())},
            {"sink", std::vector<int>(s.sink.begin(), s.sink.end())},
            {"local", std::vector<int>(s.local.begin(), s.local.end())}};
}

SpanSet spans_from(const json& j) {
    SpanSet s;
    s.length = j.at("length").get<std::size_t>();
    for (int i : j.at("needle").get<std::vector<int>>()) s.needle.insert(i);
    for (int i : j.at("sink").get<std::vector<int>>()) s.sink.insert(i);
    for (int i : j.at("local").get<std::vector<int>>()) s.local.insert(i);
    s.validate();
    return s;
}

json shape_json(const ModelShape& s) {
    return {{"n_layers", s.n_layers}, {"heads_per_layer", s.heads_per_layer}, {"d_model", s.d_model}, {"vocab_size", s.vocab_size}};
}

ModelShape shape_from(const json& j) {
    return {j.at("n_layers").get<int>(), j.at("heads_per_layer").get<int>(), j.at("d_model").get<int>(),
            j.at("vocab_size").get<int>()};
}

std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += "\"\"";
        else out.push_back(c);
    }
    return out + "\"";
}

}  // namespace

SparseRow sparsify_row(std::span<const double> row, int top_m) {
    if (row.empty()) throw InputError("sparsify_row: empty row");
    if (top_m <= 0) throw InputError("sparsify_row: top_m must be positive");
    SparseRow s;
    s.length = row.size();
    s.argmax = static_cast<int>(argmax(row));
    std::vector<int> order(row.size());
    std::iota(order.begin(), order.end(), 0);
    const auto m = std::min<std::size_t>(static_cast<std::size_t>(top_m), row.size());
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(), [&](int a, int b) {
        return row[a] != row[b] ? row[a] > row[b] : a < b;
    });
    order.resize(m);
    std::sort(order.begin(), order.end());
    for (int i : order) {
        s.index.push_back(i);
        s.weight.push_back(static_cast<float>(row[i]));
    }
    return s;
}

std::vector<double> densify_row(const SparseRow& row) {
    std::vector<double> out(row.length, 0.0);
    for (std::size_t i = 0; i < row.index.size(); ++i) {
        if (row.index[i] < 0 || static_cast<std::size_t>(row.index[i]) >= row.length) throw FormatError("sparse row index out of range");
        out[row.index[i]] = row.weight[i];
    }
    return out;
}

void write_trace(const std::filesystem::path& path, const TraceFile& file, const TraceWriteOptions& options) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    json header{{"type", "header"},
                {"schema", kTraceSchema},
                {"config_hash", file.provenance.config_hash},
                {"master_seed", file.provenance.master_seed},
                {"model", shape_json(file.shape)},
                {"sparse_top", options.sparse_top},
                {"extra", file.extra}};
    out << header.dump() << '\n';
    for (const auto& s : file.samples) {
        const auto& tr = s.trace;
        if (!s.frames.empty() && s.frames.size() != tr.steps.size()) throw InputError("write_trace: frames/steps mismatch");
        if (!s.spans.empty() && s.spans.size() != tr.steps.size()) throw InputError("write_trace: spans/steps mismatch");
        json rec{{"type", "sample"},
                 {"sample_id", tr.sample_id},
                 {"seed", tr.seed},
                 {"prompt", tr.prompt},
                 {"needle", s.needle},
                 {"overflow", tr.overflow},
                 {"stopped_on_eos", tr.stopped_on_eos},
                 {"steps", tr.steps.size()}};
        out << rec.dump() << '\n';
        for (std::size_t t = 0; t < tr.steps.size(); ++t) {
            const auto& st = tr.steps[t];
            json step{{"type", "step"},
                      {"sample_id", tr.sample_id},
                      {"step", t},
                      {"token", st.accepted},
                      {"predicted", st.output.predicted_token},
                      {"heads_per_layer", st.output.heads_per_layer},
                      {"final_hidden", floats(st.output.final_hidden)},
                      {"logits", floats(st.output.logits)},
                      {"degenerate", st.output.degenerate_rows},
                      {"intervention", intervention_json(st.intervention)}};
            json rows = json::array();
            for (const auto& row : st.output.attn_rows) {
                if (options.sparse_top > 0 && !row.empty()) {
                    const auto sp = sparsify_row(row, options.sparse_top);
                    rows.push_back({{"len", sp.length}, {"idx", sp.index}, {"w", sp.weight}, {"argmax", sp.argmax}});
                } else {
                    rows.push_back(floats(row));
                }
            }
            step["attn"] = std::move(rows);
            if (!s.spans.empty()) step["spans"] = spans_json(s.spans[t]);
            if (!s.frames.empty()) {
                const auto& f = s.frames[t];
                step["frame"] = {{"kind", to_string(f.kind)}, {"scores", f.scores}, {"degenerate", f.degenerate}};
            }
            out << step.dump() << '\n';
        }
    }
    if (!out) throw Error("write failed for " + path.string());
}

TraceFile read_trace(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    TraceFile file;
    std::size_t line_no = 0;
    bool have_header = false;
    StoredSample* current = nullptr;
    std::string line;
    auto fail = [&](const std::string& why) {
        return FormatError(path.string() + ": line " + std::to_string(line_no) + ": " + why);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw fail(std::string("corrupt record: ") + e.what());
        }
        try {
            const auto type = j.at("type").get<std::string>();
            if (!have_header) {
                if (type != "header") throw fail("expected header record");
                const auto schema = j.at("schema").get<std::string>();
                if (schema != kTraceSchema) throw fail("unsupported schema version '" + schema + "' (expected " + kTraceSchema + ")");
                file.provenance = {j.at("config_hash").get<std::string>(), j.at("master_seed").get<std::uint64_t>()};
                file.shape = shape_from(j.at("model"));
                if (j.contains("extra")) file.extra = j.at("extra");
                have_header = true;
            } else if (type == "sample") {
                StoredSample s;
                s.trace.sample_id = j.at("sample_id").get<std::string>();
                s.trace.seed = j.at("seed").get<std::uint64_t>();
                s.trace.prompt = j.at("prompt").get<Tokens>();
                s.needle = j.at("needle").get<std::vector<int>>();
                s.trace.overflow = j.at("overflow").get<bool>();
                s.trace.stopped_on_eos = j.at("stopped_on_eos").get<bool>();
                file.samples.push_back(std::move(s));
                current = &file.samples.back();
            } else if (type == "step") {
                if (!current || j.at("sample_id").get<std::string>() != current->trace.sample_id)
                    throw fail("step record without its sample record");
                if (j.at("step").get<std::size_t>() != current->trace.steps.size()) throw fail("steps out of order");
                GenerationStep st;
                st.accepted = j.at("token").get<Token>();
                st.output.predicted_token = j.at("predicted").get<Token>();
                st.output.heads_per_layer = j.at("heads_per_layer").get<int>();
                st.output.final_hidden = read_floats(j.at("final_hidden"));
                st.output.logits = read_floats(j.at("logits"));
                st.output.degenerate_rows = j.at("degenerate").get<std::vector<bool>>();
                st.intervention = intervention_from(j.at("intervention"));
                for (const auto& r : j.at("attn")) {
                    if (r.is_array()) {
                        st.output.attn_rows.push_back(read_floats(r));
                    } else {
                        SparseRow sp;
                        sp.length = r.at("len").get<std::size_t>();
                        sp.index = r.at("idx").get<std::vector<int>>();
                        sp.weight = r.at("w").get<std::vector<float>>();
                        sp.argmax = r.at("argmax").get<int>();
                        if (sp.index.size() != sp.weight.size()) throw fail("sparse row index/weight lengths differ");
                        st.output.attn_rows.push_back(densify_row(sp));
                    }
                }
                if (j.contains("spans")) current->spans.push_back(spans_from(j.at("spans")));
                if (j.contains("frame")) {
                    HeadScoreFrame f;
                    f.step = current->trace.steps.size();
                    f.kind = parse_score_kind(j.at("frame").at("kind").get<std::string>());
                    f.heads_per_layer = st.output.heads_per_layer;
                    f.scores = j.at("frame").at("scores").get<std::vector<double>>();
                    f.degenerate = j.at("frame").at("degenerate").get<std::vector<bool>>();
                    current->frames.push_back(std::move(f));
                }
                current->trace.steps.push_back(std::move(st));
            } else {
                throw fail("unknown record type '" + type + "'");
            }
        } catch (const json::exception& e) {
            throw fail(std::string("malformed record: ") + e.what());
        } catch (const InputError& e) {
            throw fail(e.what());
        }
    }
    if (!have_header) throw FormatError(path.string() + ": missing header");
    return file;
}

std::string provenance_comment(const Provenance& p) {
    return "# config_hash=" + p.config_hash + " master_seed=" + std::to_string(p.master_seed) + "\n";
}

std::string format_number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

std::string dynamism_csv(const Provenance& p, const std::string& model_name, const DynamismReport& r) {
    std::string s = provenance_comment(p);
    s += "model,jaccard_with_static,adjacent_jaccard,entropy,steps,static_steps_used,adjacent_pairs_used,"
         "adjacent_pairs_excluded,empty_distribution\n";
    s += csv_escape(model_name) + "," + format_number(r.jaccard_with_static) + "," + format_number(r.adjacent_jaccard) +
         "," + format_number(r.entropy) + "," + std::to_string(r.steps) + "," + std::to_string(r.static_steps_used) + "," +
         std::to_string(r.adjacent_pairs_used) + "," + std::to_string(r.adjacent_pairs_excluded) + "," +
         (r.empty_distribution ? "1" : "0") + "\n";
    return s;
}

std::string heatmap_csv(const Provenance& p, const VarianceHeatmap& h) {
    std::string s = provenance_comment(p) + "head";
    const std::size_t steps = h.values.empty() ? 0 : h.values.front().size();
    for (std::size_t t = 0; t < steps; ++t) s += ",t" + std::to_string(t);
    s += "\n";
    for (std::size_t i = 0; i < h.heads.size(); ++i) {
        s += h.heads[i].str();
        for (double v : h.values[i]) s += "," + format_number(v);
        s += "\n";
    }
    return s;
}

std::string static_ranking_csv(const Provenance& p, const StaticRanking& r) {
    std::string s = provenance_comment(p) + "rank,head,score\n";
    for (std::size_t i = 0; i < r.entries.size(); ++i)
        s += std::to_string(i + 1) + "," + r.entries[i].first.str() + "," + format_number(r.entries[i].second) + "\n";
    return s;
}

std::string grid_matrix_csv(const Provenance& p, const AblationGridResult& g) {
    std::vector<int> lengths;
    std::vector<double> depths;
    for (const auto& c : g.cells) {
        if (std::find(lengths.begin(), lengths.end(), c.length) == lengths.end()) lengths.push_back(c.length);
        if (std::find(depths.begin(), depths.end(), c.depth) == depths.end()) depths.push_back(c.depth);
    }
    std::string s = provenance_comment(p);
    s += "# condition=" + to_string(g.condition) + " metric=" + to_string(g.metric) + "\n";
    s += "depth";
    for (int l : lengths) s += "," + std::to_string(l);
    s += "\n";
    for (double d : depths) {
        s += format_number(d);
        for (int l : lengths) {
            const auto& c = g.cell(l, d);
            s += "," + (c.feasible ? format_number(c.mean) : std::string("NA"));
        }
        s += "\n";
    }
    return s;
}

std::string grid_long_csv(const Provenance& p, const AblationGridResult& g) {
    std::string s = provenance_comment(p) + "condition,metric,length,depth,mean,runs,mean_masked,feasible,note\n";
    for (const auto& c : g.cells)
        s += to_string(g.condition) + "," + to_string(g.metric) + "," + std::to_string(c.length) + "," +
             format_number(c.depth) + "," + format_number(c.mean) + "," + std::to_string(c.runs) + "," +
             format_number(c.mean_masked) + "," + (c.feasible ? "1" : "0") + "," + csv_escape(c.note) + "\n";
    return s;
}

json grid_to_json(const Provenance& p, const AblationGridResult& g) {
    json cells = json::array();
    for (const auto& c : g.cells)
        cells.push_back({{"length", c.length}, {"depth", c.depth}, {"mean", c.mean}, {"runs", c.runs},
                         {"feasible", c.feasible}, {"note", c.note}, {"mean_masked", c.mean_masked}});
    return {{"config_hash", p.config_hash}, {"master_seed", p.master_seed}, {"condition", to_string(g.condition)},
            {"metric", to_string(g.metric)}, {"cells", cells}};
}

AblationGridResult grid_from_json(const json& j) {
    AblationGridResult g;
    try {
        g.condition = parse_condition(j.at("condition").get<std::string>());
        g.metric = parse_metric_kind(j.at("metric").get<std::string>());
        for (const auto& c : j.at("cells"))
            g.cells.push_back({c.at("length").get<int>(), c.at("depth").get<double>(), c.at("mean").get<double>(),
                               c.at("runs").get<int>(), c.at("feasible").get<bool>(), c.at("note").get<std::string>(),
                               c.at("mean_masked").get<double>()});
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad grid result: ") + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(std::string("bad grid result: ") + e.what());
    }
    return g;
}

std::string progressive_csv(const Provenance& p, const ProgressiveResult& r) {
    std::string s = provenance_comment(p) + "k,mean_metric,mean_compensated_overlap\n";
    for (std::size_t i = 0; i < r.k_values.size(); ++i)
        s += std::to_string(r.k_values[i]) + "," + format_number(r.mean_metric[i]) + "," + format_number(r.mean_overlap[i]) + "\n";
    return s;
}

std::string progressive_log_jsonl(const Provenance& p, const ProgressiveResult& r) {
    std::string s = json{{"type", "header"}, {"config_hash", p.config_hash}, {"master_seed", p.master_seed}}.dump() + "\n";
    for (const auto& sample : r.samples) {
        for (const auto& st : sample.steps)
            s += json{{"type", "step"},        {"k", sample.k},
                      {"run", sample.run},     {"step", st.step},
                      {"dynamic", heads_json(st.dynamic)}, {"masked", heads_json(st.masked)},
                      {"after", heads_json(st.after)},     {"compensated", heads_json(st.compensated)}}
                     .dump() +
                 "\n";
        s += json{{"type", "sample"}, {"k", sample.k}, {"run", sample.run}, {"seed", sample.seed},
                  {"metric", sample.metric}, {"max_overlap", sample.max_overlap}}
                 .dump() +
             "\n";
    }
    return s;
}

std::string sweep_csv(const Provenance& p, const std::vector<SweepPoint>& sweep) {
    std::string s = provenance_comment(p) + "k,top1,top10_mean,top50_mean,rows,rank_x,rank_y,degenerate\n";
    for (const auto& pt : sweep) {
        const auto& r = pt.result;
        s += std::to_string(pt.offset) + "," + format_number(r.top1) + "," + format_number(r.top10_mean) + "," +
             format_number(r.top50_mean) + "," + std::to_string(r.rows) + "," + std::to_string(r.rank_x) + "," +
             std::to_string(r.rank_y) + "," + (r.degenerate ? "1" : "0") + "\n";
    }
    return s;
}

json probe_metrics_json(const Provenance& p, const ProbeMetrics& m) {
    json j{{"config_hash", p.config_hash}, {"master_seed", p.master_seed}, {"loss", to_string(m.loss)}};
    if (m.loss == ProbeLoss::Asymmetric)
        j["classifier"] = {{"precision", m.classifier.precision}, {"recall", m.classifier.recall},
                           {"f1", m.classifier.f1},               {"auprc", m.classifier.auprc},
                           {"threshold", m.classifier.threshold}, {"prevalence", m.classifier.prevalence}};
    else
        j["regressor"] = {{"mse", m.regressor.mse}, {"mae", m.regressor.mae}, {"r2", m.regressor.r2}};
    j["train_loss"] = m.train_loss;
    j["val_loss"] = m.val_loss;
    j["learning_rate"] = m.learning_rate;
    return j;
}

json ranking_to_json(const Provenance& p, const StaticRanking& r) {
    json entries = json::array();
    for (const auto& [h, s] : r.entries) entries.push_back({{"head", {h.layer, h.head}}, {"score", s}});
    return {{"config_hash", p.config_hash}, {"master_seed", p.master_seed}, {"corpus", r.corpus}, {"entries", entries}};
}

StaticRanking ranking_from_json(const json& j) {
    StaticRanking r;
    try {
        r.corpus = j.value("corpus", "");
        for (const auto& e : j.at("entries"))
            r.entries.push_back({{e.at("head").at(0).get<int>(), e.at("head").at(1).get<int>()}, e.at("score").get<double>()});
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad static ranking: ") + e.what());
    }
    return r;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace headlamp
