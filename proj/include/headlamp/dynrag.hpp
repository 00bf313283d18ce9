#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <limits>
#include <set>
#include <string>
#include <vector>

#include "headlamp/core.hpp"
#include "headlamp/model.hpp"
#include "headlamp/probe.hpp"
#include "headlamp/tokenizer.hpp"

namespace headlamp {

struct RindConfig {
    double threshold = 1.0;  // +inf disables retrieval
    std::set<std::string> stopwords;
};

std::set<std::string> default_stopwords();
/// One word per line; blank lines and lines starting with '#' are ignored.
std::set<std::string> load_stopwords(const std::filesystem::path& path);

struct RindResult {
    bool triggered = false;
    std::size_t pos = 0;  // draft index of the first token over threshold
    std::vector<double> scores;
};

/// Scores each draft token as entropy x attention received x content flag.
///
/// `steps[j]` is the forward pass whose input ends just before draft[j], so
/// its logits produced draft[j] and the attention of query draft[j] lives in
/// steps[j + 1]. A final extra step (input ending with the last draft token)
/// is optional. `base` is the sequence position of draft[0].
RindResult rind(std::span<const Token> draft, const std::vector<StepOutput>& steps, std::size_t base,
                const Tokenizer& tokenizer, const RindConfig& config);

/// Character offsets where sentences start: 0, and after every terminator
/// followed by whitespace (the whitespace run is skipped).
std::vector<std::size_t> sentence_starts(const std::string& text);

/// Cuts `text` at the start of the sentence containing character `pos`.
std::string retract_to_sentence(const std::string& text, std::size_t pos);

/// Inclusive token interval [begin, end] over the context.
struct Window {
    int begin = 0;
    int end = 0;
    bool operator==(const Window&) const = default;
};

struct RetrievalParams {
    int top_k = 8;
    int cluster_gap = 8;
    int window = 64;

    void validate() const;
};

enum class PolicyKind { DynamicProbe, StaticTopN, DynamicRandom, FixedRandom, NoRAG };

std::string to_string(PolicyKind kind);
PolicyKind parse_policy(const std::string& text);

struct HeadPolicy {
    PolicyKind kind = PolicyKind::NoRAG;
    int n_heads = 5;
    const ProbeModel* probe = nullptr;    // DynamicProbe
    std::vector<HeadId> static_heads;     // StaticTopN: ranking order
};

struct RetrievalResult {
    std::vector<HeadId> heads;
    std::vector<double> averaged;  // per context position
    std::vector<int> topk;         // ascending positions
    std::vector<std::vector<int>> clusters;
    std::vector<int> representatives;
    std::vector<Window> windows;   // merged, sorted, disjoint
};

/// Groups ascending positions whose consecutive gap is at most `gap`.
std::vector<std::vector<int>> cluster_indices(const std::vector<int>& sorted_positions, int gap);
/// Merges overlapping inclusive intervals; output sorted and disjoint.
std::vector<Window> merge_windows(std::vector<Window> windows);
std::vector<int> window_positions(const std::vector<Window>& windows);

/// Head-driven context selection from one full-context forward pass over
/// context ++ question ++ generated. `heads` must be non-empty.
RetrievalResult retrieve_with_heads(const StepOutput& full, const std::vector<HeadId>& heads, int context_len,
                                    const RetrievalParams& params);

struct DynRagConfig {
    RetrievalParams retrieval;
    RindConfig rind;
    int max_new = 64;
    int draft_max = 32;
    std::uint64_t seed = 0;
};

struct DynRagResult {
    Tokens tokens;
    std::string text;
    bool partial = false;  // stopped on the token budget or context limit
    std::vector<nlohmann::json> log;
};

DynRagResult answer(const Backend& model, const Tokenizer& tokenizer, const Tokens& context, const Tokens& question,
                    const HeadPolicy& policy, const DynRagConfig& config);

/// Rebuilds the final token sequence from the log events alone.
Tokens replay_log(const std::vector<nlohmann::json>& log);

/// Violations of the loop's audit invariants; empty when the log is sound.
std::vector<std::string> check_log(const std::vector<nlohmann::json>& log);

void write_log(const std::filesystem::path& path, const std::vector<nlohmann::json>& log);
std::vector<nlohmann::json> read_log(const std::filesystem::path& path);

}  // namespace headlamp
