#pragma once

#include <cstddef>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "headlamp/core.hpp"

namespace headlamp {

/// Half-open character range [begin, end).
struct CharRange {
    std::size_t begin = 0;
    std::size_t end = 0;
};

struct Encoding {
    Tokens tokens;
    std::vector<CharRange> offsets;  // one per token
};

struct Decoding {
    std::string text;
    std::vector<CharRange> offsets;  // one per token; empty range for tokens with no text
};

class Tokenizer {
public:
    virtual ~Tokenizer() = default;
    virtual int vocab_size() const = 0;
    /// -1 when the vocabulary has no end-of-sequence token.
    virtual Token eos() const = 0;
    virtual Encoding encode(std::string_view text) const = 0;
    virtual Decoding decode_with_offsets(std::span<const Token> tokens) const = 0;
    virtual std::string token_text(Token t) const = 0;
    virtual std::string name() const = 0;

    std::string decode(std::span<const Token> tokens) const { return decode_with_offsets(tokens).text; }
};

/// One token per byte; id 256 is end-of-sequence.
class ByteTokenizer final : public Tokenizer {
public:
    int vocab_size() const override { return 257; }
    Token eos() const override { return 256; }
    Encoding encode(std::string_view text) const override;
    Decoding decode_with_offsets(std::span<const Token> tokens) const override;
    std::string token_text(Token t) const override;
    std::string name() const override { return "byte"; }
};

/// Closed-vocabulary word tokenizer. Words are maximal runs of non-space,
/// non-punctuation characters; each of ".,!?;:" is its own token. Decoding
/// joins words with single spaces and attaches punctuation to the left.
class WordTokenizer final : public Tokenizer {
public:
    /// Special entries "<eos>" and "<unk>" are recognized by name if present.
    explicit WordTokenizer(std::vector<std::string> vocabulary);

    int vocab_size() const override { return static_cast<int>(vocab_.size()); }
    Token eos() const override { return eos_; }
    Encoding encode(std::string_view text) const override;
    Decoding decode_with_offsets(std::span<const Token> tokens) const override;
    std::string token_text(Token t) const override;
    std::string name() const override { return "word"; }

    Token id(const std::string& word) const;
    const std::vector<std::string>& vocabulary() const { return vocab_; }

private:
    std::vector<std::string> vocab_;
    std::map<std::string, Token, std::less<>> index_;
    Token eos_ = -1;
    Token unk_ = -1;
};

bool is_sentence_terminator(char c);

/// Token indices whose character ranges intersect [begin, end).
std::vector<int> tokens_covering(const std::vector<CharRange>& offsets, std::size_t begin, std::size_t end);

}  // namespace headlamp
