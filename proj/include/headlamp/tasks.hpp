#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "headlamp/core.hpp"
#include "headlamp/tokenizer.hpp"

namespace headlamp {

/// Prompt template with "{context}" and "{question}" placeholders, each
/// appearing exactly once.
struct PromptTemplate {
    std::string prefix;  // text before {context}
    std::string middle;  // between {context} and {question}
    std::string suffix;  // after {question}

    static PromptTemplate parse(const std::string& text);
    static PromptTemplate niah_default();
    static PromptTemplate load(const std::filesystem::path& path);
    std::string render(const std::string& context, const std::string& question) const;
};

inline constexpr const char* kNiahQuestion = "What is the magic word?";

std::string niah_needle(const std::string& uuid);
/// Random version-4 UUID in canonical lowercase form.
std::string make_uuid(Rng& rng);

struct NiahSample {
    std::string prompt;
    std::string uuid;
    std::string question;
    Tokens tokens;
    std::vector<CharRange> offsets;
    CharRange needle_chars;       // includes the trailing period
    std::vector<int> needle_span;  // token indices covering needle_chars
    std::size_t needle_insert_at = 0;  // char offset of the needle inside the haystack
    std::size_t target_len = 0;
    double depth = 0.0;
    std::uint64_t seed = 0;
};

/// Sentence boundaries of `text`: offsets just after a terminator that is
/// followed by whitespace or the end of the text.
std::vector<std::size_t> sentence_boundaries(const std::string& text);

NiahSample make_niah(const std::string& haystack_corpus, const Tokenizer& tokenizer, std::size_t target_len,
                     double depth, std::uint64_t seed, const PromptTemplate& tmpl = PromptTemplate::niah_default());

/// Token-level needle test for small word vocabularies: a haystack of random
/// sentences, a needle "magic u1 .. um ." of distinct symbols, and the cue
/// "? magic" at the end.
struct ToyNiahConfig {
    int haystack_len = 256;
    int uuid_len = 4;
    int n_symbols = 6;
    int n_filler_words = 6;
};

/// Vocabulary layout: "<eos>", ".", "magic", "?", filler words, then symbols k0...
std::vector<std::string> toy_vocabulary(const ToyNiahConfig& config);

struct ToyNiahSample {
    Tokens prompt;
    Tokens answer;           // the symbol sequence
    std::string answer_text;
    std::vector<int> needle_span;  // "magic" through the closing "."
    double depth = 0.0;
    std::uint64_t seed = 0;
    std::size_t max_new() const { return answer.size() + 2; }
};

ToyNiahSample make_toy_niah(const WordTokenizer& tokenizer, const ToyNiahConfig& config, double depth,
                            std::uint64_t seed);

struct MultiHopSample {
    std::string id;
    std::string context;
    std::string question;
    std::string answer;
    std::vector<CharRange> fact_chars;
    std::vector<std::vector<int>> fact_spans;  // token indices per supporting fact
    std::string provenance;                    // "synthetic" | "hotpotqa"

    std::vector<int> needle_indices() const;
};

MultiHopSample make_multihop(const Tokenizer& tokenizer, std::uint64_t seed, int n_distractors = 6);

struct HotpotLoad {
    std::vector<MultiHopSample> samples;
    std::size_t skipped = 0;
    std::vector<std::string> warnings;
};

/// Reads the public distractor-setting JSON array.
HotpotLoad load_hotpotqa(const std::filesystem::path& path, const Tokenizer& tokenizer);

}  // namespace headlamp
