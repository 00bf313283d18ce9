#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "headlamp/ablation.hpp"
#include "headlamp/dynrag.hpp"
#include "headlamp/linalg.hpp"
#include "headlamp/model.hpp"
#include "headlamp/probe.hpp"

namespace headlamp {

struct BridgeEndpoint {
    std::string transport = "stdio";  // "stdio" | "http"
    std::vector<std::string> command;  // stdio: argv of the server process
    std::string url;                   // http: http://host:port
    int max_context = 4096;
    int logits_top_n = -1;  // -1 asks for the full vocabulary
};

struct ModelSection {
    std::string kind = "induction";  // induction | random | file | bridge
    std::uint64_t seed = 7;
    int heads_per_layer = 32;        // induction
    int max_context = 1024;          // induction
    std::string path;                // file
    ModelConfig random;              // random; vocab_size 0 follows the tokenizer
    BridgeEndpoint bridge;
};

struct TaskSection {
    std::string kind = "toy_niah";  // toy_niah | niah | multihop | hotpotqa
    std::vector<int> lengths{256};
    std::vector<double> depths{0.0, 0.25, 0.5, 0.75, 1.0};
    int runs = 10;     // per grid cell
    int samples = 20;  // trace collection and dynrag
    int uuid_len = 4;
    std::string haystack_path;
    std::string template_path;
    std::string hotpot_path;
    std::string metric = "accuracy_contains";
    int max_new = 0;  // 0 uses the task's own budget
};

struct AblationSection {
    std::vector<std::string> conditions{"none", "dynamic", "static", "random"};
    std::vector<int> k_values{0, 1, 2, 3, 4};
    int runs = 20;
    int length = 256;
    std::string ranking_path;
};

struct CCASection {
    std::vector<int> offsets{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    CCAOptions options;
};

struct ProbeSection {
    ProbeConfig config;
    std::string loss = "auto";  // auto follows the score kind
    int offset = 0;
    std::string path;
};

struct DynRagSection {
    std::vector<std::string> policies{"dynamic_probe", "static_top", "dynamic_random", "fixed_random", "no_rag"};
    int n_heads = 5;
    RetrievalParams retrieval;
    double theta = 1.0;
    int max_new = 32;
    int draft_max = 16;
    std::string stopwords_path;
};

struct TraceSection {
    int sparse_top = -1;  // -1: full rows for in-process models, top-64 otherwise
    std::string path;
};

struct RunConfig {
    std::uint64_t seed = 0;
    ModelSection model;
    std::string tokenizer = "auto";  // auto | byte | toy
    TaskSection task;
    ScoreSettings score;
    AblationSection ablation;
    CCASection cca;
    ProbeSection probe;
    DynRagSection dynrag;
    TraceSection traces;

    /// Canonical form with every default filled in.
    nlohmann::json to_json() const;
    /// Throws ConfigError on unknown keys, wrong types or invalid values.
    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::filesystem::path& path);
    void validate() const;
    /// FNV-1a 64 of the canonical dump, as 16 hex digits.
    std::string hash() const;
};

std::uint64_t fnv1a64(std::string_view bytes);

}  // namespace headlamp
