#include "headlamp/config.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>

namespace headlamp {
namespace {

using nlohmann::json;

/// Reads keys of one JSON object and rejects any key nobody asked for.
class Section {
public:
    Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + ": expected an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where(key) + ": " + e.what());
        }
    }

    const json* sub(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    std::string where(const char* key = nullptr) const {
        std::string w = path_.empty() ? "config" : path_;
        if (key) w += path_.empty() ? std::string(": ") + key : std::string(".") + key;
        return w;
    }

    std::string child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const {
        for (const auto& item : j_.items())
            if (!seen_.count(item.key())) throw ConfigError("unknown key '" + child(item.key().c_str()) + "'");
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

template <class F>
void with_section(Section& parent, const char* key, F&& f) {
    if (const json* j = parent.sub(key)) {
        Section s(*j, parent.child(key));
        f(s);
        s.finish();
    }
}

json model_config_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},     {"n_layers", c.n_layers},
            {"n_heads", c.n_heads_per_layer}, {"head_dim", c.head_dim}, {"max_context", c.max_context},
            {"init_seed", c.init_seed},       {"d_ff", c.d_ff},         {"layer_norm", c.layer_norm}};
}

void read_model_config(Section& s, ModelConfig& c) {
    s.get("vocab_size", c.vocab_size);
    s.get("d_model", c.d_model);
    s.get("n_layers", c.n_layers);
    s.get("n_heads", c.n_heads_per_layer);
    s.get("head_dim", c.head_dim);
    s.get("max_context", c.max_context);
    s.get("init_seed", c.init_seed);
    s.get("d_ff", c.d_ff);
    s.get("layer_norm", c.layer_norm);
}

json theta_json(double theta) { return std::isinf(theta) ? json("inf") : json(theta); }

void read_theta(Section& s, double& theta) {
    if (const json* j = s.sub("theta")) {
        if (j->is_string() && j->get<std::string>() == "inf") theta = std::numeric_limits<double>::infinity();
        else if (j->is_number()) theta = j->get<double>();
        else throw ConfigError(s.where("theta") + ": expected a number or \"inf\"");
    }
}

template <class T>
void require(bool ok, const std::string& what) {
    if (!ok) throw T(what);
}

}  // namespace

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

json RunConfig::to_json() const {
    json j;
    j["seed"] = seed;
    j["model"] = {{"kind", model.kind},
                  {"seed", model.seed},
                  {"heads_per_layer", model.heads_per_layer},
                  {"max_context", model.max_context},
                  {"path", model.path},
                  {"random", model_config_json(model.random)},
                  {"bridge",
                   {{"transport", model.bridge.transport},
                    {"command", model.bridge.command},
                    {"url", model.bridge.url},
                    {"max_context", model.bridge.max_context},
                    {"logits_top_n", model.bridge.logits_top_n}}}};
    j["tokenizer"] = tokenizer;
    j["task"] = {{"kind", task.kind},
                 {"lengths", task.lengths},
                 {"depths", task.depths},
                 {"runs", task.runs},
                 {"samples", task.samples},
                 {"uuid_len", task.uuid_len},
                 {"haystack_path", task.haystack_path},
                 {"template_path", task.template_path},
                 {"hotpot_path", task.hotpot_path},
                 {"metric", task.metric},
                 {"max_new", task.max_new}};
    j["score"] = {{"kind", to_string(score.kind)},
                  {"threshold", score.threshold},
                  {"sink_count", score.sink_count},
                  {"local_window", score.local_window}};
    j["ablation"] = {{"conditions", ablation.conditions},
                     {"k_values", ablation.k_values},
                     {"runs", ablation.runs},
                     {"length", ablation.length},
                     {"ranking_path", ablation.ranking_path}};
    j["cca"] = {{"offsets", cca.offsets},
                {"n_components", cca.options.n_components},
                {"pca_fraction_x", cca.options.pca_fraction_x},
                {"pca_fraction_y", cca.options.pca_fraction_y},
                {"ridge", cca.options.ridge}};
    const auto& pc = probe.config;
    j["probe"] = {{"hidden_dims", pc.hidden_dims},
                  {"dropout", pc.dropout},
                  {"epochs", pc.epochs},
                  {"batch_size", pc.batch_size},
                  {"learning_rate", pc.learning_rate},
                  {"plateau_patience", pc.plateau_patience},
                  {"plateau_min_delta", pc.plateau_min_delta},
                  {"plateau_factor", pc.plateau_factor},
                  {"clip_norm", pc.clip_norm},
                  {"gamma_pos", pc.asymmetric.gamma_pos},
                  {"gamma_neg", pc.asymmetric.gamma_neg},
                  {"margin", pc.asymmetric.margin},
                  {"loss", probe.loss},
                  {"offset", probe.offset},
                  {"path", probe.path}};
    j["dynrag"] = {{"policies", dynrag.policies},
                   {"n_heads", dynrag.n_heads},
                   {"top_k", dynrag.retrieval.top_k},
                   {"cluster_gap", dynrag.retrieval.cluster_gap},
                   {"window", dynrag.retrieval.window},
                   {"theta", theta_json(dynrag.theta)},
                   {"max_new", dynrag.max_new},
                   {"draft_max", dynrag.draft_max},
                   {"stopwords_path", dynrag.stopwords_path}};
    j["traces"] = {{"sparse_top", traces.sparse_top}, {"path", traces.path}};
    return j;
}

RunConfig RunConfig::from_json(const json& root) {
    RunConfig c;
    Section top(root, "");
    top.get("seed", c.seed);
    top.get("tokenizer", c.tokenizer);
    with_section(top, "model", [&](Section& s) {
        s.get("kind", c.model.kind);
        s.get("seed", c.model.seed);
        s.get("heads_per_layer", c.model.heads_per_layer);
        s.get("max_context", c.model.max_context);
        s.get("path", c.model.path);
        with_section(s, "random", [&](Section& r) { read_model_config(r, c.model.random); });
        with_section(s, "bridge", [&](Section& b) {
            b.get("transport", c.model.bridge.transport);
            b.get("command", c.model.bridge.command);
            b.get("url", c.model.bridge.url);
            b.get("max_context", c.model.bridge.max_context);
            b.get("logits_top_n", c.model.bridge.logits_top_n);
        });
    });
    with_section(top, "task", [&](Section& s) {
        s.get("kind", c.task.kind);
        s.get("lengths", c.task.lengths);
        s.get("depths", c.task.depths);
        s.get("runs", c.task.runs);
        s.get("samples", c.task.samples);
        s.get("uuid_len", c.task.uuid_len);
        s.get("haystack_path", c.task.haystack_path);
        s.get("template_path", c.task.template_path);
        s.get("hotpot_path", c.task.hotpot_path);
        s.get("metric", c.task.metric);
        s.get("max_new", c.task.max_new);
    });
    with_section(top, "score", [&](Section& s) {
        std::string kind = to_string(c.score.kind);
        s.get("kind", kind);
        c.score.kind = parse_score_kind(kind);
        s.get("threshold", c.score.threshold);
        s.get("sink_count", c.score.sink_count);
        s.get("local_window", c.score.local_window);
    });
    with_section(top, "ablation", [&](Section& s) {
        s.get("conditions", c.ablation.conditions);
        s.get("k_values", c.ablation.k_values);
        s.get("runs", c.ablation.runs);
        s.get("length", c.ablation.length);
        s.get("ranking_path", c.ablation.ranking_path);
    });
    with_section(top, "cca", [&](Section& s) {
        s.get("offsets", c.cca.offsets);
        s.get("n_components", c.cca.options.n_components);
        s.get("pca_fraction_x", c.cca.options.pca_fraction_x);
        s.get("pca_fraction_y", c.cca.options.pca_fraction_y);
        s.get("ridge", c.cca.options.ridge);
    });
    with_section(top, "probe", [&](Section& s) {
        auto& pc = c.probe.config;
        s.get("hidden_dims", pc.hidden_dims);
        s.get("dropout", pc.dropout);
        s.get("epochs", pc.epochs);
        s.get("batch_size", pc.batch_size);
        s.get("learning_rate", pc.learning_rate);
        s.get("plateau_patience", pc.plateau_patience);
        s.get("plateau_min_delta", pc.plateau_min_delta);
        s.get("plateau_factor", pc.plateau_factor);
        s.get("clip_norm", pc.clip_norm);
        s.get("gamma_pos", pc.asymmetric.gamma_pos);
        s.get("gamma_neg", pc.asymmetric.gamma_neg);
        s.get("margin", pc.asymmetric.margin);
        s.get("loss", c.probe.loss);
        s.get("offset", c.probe.offset);
        s.get("path", c.probe.path);
    });
    with_section(top, "dynrag", [&](Section& s) {
        s.get("policies", c.dynrag.policies);
        s.get("n_heads", c.dynrag.n_heads);
        s.get("top_k", c.dynrag.retrieval.top_k);
        s.get("cluster_gap", c.dynrag.retrieval.cluster_gap);
        s.get("window", c.dynrag.retrieval.window);
        read_theta(s, c.dynrag.theta);
        s.get("max_new", c.dynrag.max_new);
        s.get("draft_max", c.dynrag.draft_max);
        s.get("stopwords_path", c.dynrag.stopwords_path);
    });
    with_section(top, "traces", [&](Section& s) {
        s.get("sparse_top", c.traces.sparse_top);
        s.get("path", c.traces.path);
    });
    top.finish();
    c.validate();
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    json j;
    try {
        j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return from_json(j);
}

void RunConfig::validate() const {
    const std::set<std::string> model_kinds{"induction", "random", "file", "bridge"};
    require<ConfigError>(model_kinds.count(model.kind) > 0, "model.kind must be induction, random, file or bridge");
    require<ConfigError>(model.kind != "file" || !model.path.empty(), "model.path is required for model.kind = file");
    if (model.kind == "induction") {
        require<ConfigError>(model.heads_per_layer >= 1, "model.heads_per_layer must be >= 1");
        require<ConfigError>(model.max_context >= 2, "model.max_context must be >= 2");
    }
    if (model.kind == "bridge") {
        const auto& b = model.bridge;
        require<ConfigError>(b.transport == "stdio" || b.transport == "http", "model.bridge.transport must be stdio or http");
        require<ConfigError>(b.transport != "stdio" || !b.command.empty(), "model.bridge.command is required for stdio");
        require<ConfigError>(b.transport != "http" || !b.url.empty(), "model.bridge.url is required for http");
        require<ConfigError>(b.max_context >= 2, "model.bridge.max_context must be >= 2");
    }
    require<ConfigError>(tokenizer == "auto" || tokenizer == "byte" || tokenizer == "toy",
                         "tokenizer must be auto, byte or toy");
    const std::set<std::string> task_kinds{"toy_niah", "niah", "multihop", "hotpotqa"};
    require<ConfigError>(task_kinds.count(task.kind) > 0, "task.kind must be toy_niah, niah, multihop or hotpotqa");
    require<ConfigError>(task.kind != "hotpotqa" || !task.hotpot_path.empty(), "task.hotpot_path is required for hotpotqa");
    require<ConfigError>(!task.lengths.empty(), "task.lengths must not be empty");
    for (int l : task.lengths) require<ConfigError>(l > 0, "task.lengths must be positive");
    require<ConfigError>(!task.depths.empty(), "task.depths must not be empty");
    for (double d : task.depths) require<ConfigError>(d >= 0.0 && d <= 1.0, "task.depths must lie in [0, 1]");
    require<ConfigError>(task.runs >= 1, "task.runs must be >= 1");
    require<ConfigError>(task.samples >= 1, "task.samples must be >= 1");
    require<ConfigError>(task.uuid_len >= 1, "task.uuid_len must be >= 1");
    require<ConfigError>(task.max_new >= 0, "task.max_new must be >= 0");
    (void)parse_metric_kind(task.metric);
    require<ConfigError>(score.threshold >= 0.0 && score.threshold <= 1.0, "score.threshold must lie in [0, 1]");
    require<ConfigError>(score.sink_count >= 0, "score.sink_count must be >= 0");
    require<ConfigError>(score.local_window >= 0, "score.local_window must be >= 0");
    for (const auto& cond : ablation.conditions) (void)parse_condition(cond);
    for (int k : ablation.k_values) require<ConfigError>(k >= 0, "ablation.k_values must be >= 0");
    require<ConfigError>(ablation.runs >= 1, "ablation.runs must be >= 1");
    require<ConfigError>(ablation.length > 0, "ablation.length must be positive");
    for (int k : cca.offsets) require<ConfigError>(k >= 0, "cca.offsets must be >= 0");
    require<ConfigError>(cca.options.n_components >= 1, "cca.n_components must be >= 1");
    require<ConfigError>(cca.options.pca_fraction_x > 0.0 && cca.options.pca_fraction_x <= 1.0,
                         "cca.pca_fraction_x must lie in (0, 1]");
    require<ConfigError>(cca.options.pca_fraction_y > 0.0 && cca.options.pca_fraction_y <= 1.0,
                         "cca.pca_fraction_y must lie in (0, 1]");
    require<ConfigError>(cca.options.ridge >= 0.0, "cca.ridge must be >= 0");
    probe.config.validate();
    require<ConfigError>(probe.loss == "auto" || probe.loss == "asymmetric" || probe.loss == "squared_error",
                         "probe.loss must be auto, asymmetric or squared_error");
    require<ConfigError>(probe.offset >= 0, "probe.offset must be >= 0");
    for (const auto& p : dynrag.policies) (void)parse_policy(p);
    require<ConfigError>(dynrag.n_heads >= 1, "dynrag.n_heads must be >= 1");
    dynrag.retrieval.validate();
    require<ConfigError>(dynrag.theta > 0.0, "dynrag.theta must be positive");
    require<ConfigError>(dynrag.max_new >= 1, "dynrag.max_new must be >= 1");
    require<ConfigError>(dynrag.draft_max >= 1, "dynrag.draft_max must be >= 1");
    require<ConfigError>(traces.sparse_top >= -1, "traces.sparse_top must be -1, 0 or positive");
}

std::string RunConfig::hash() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(to_json().dump())));
    return buf;
}

}  // namespace headlamp
