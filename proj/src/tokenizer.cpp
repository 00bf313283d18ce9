#include "headlamp/tokenizer.hpp"

#include <cctype>

namespace headlamp {
namespace {

bool is_punct_token_char(char c) {
    return c == '.' || c == ',' || c == '!' || c == '?' || c == ';' || c == ':';
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

bool is_sentence_terminator(char c) { return c == '.' || c == '!' || c == '?'; }

Encoding ByteTokenizer::encode(std::string_view text) const {
    Encoding e;
    e.tokens.reserve(text.size());
    e.offsets.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        e.tokens.push_back(static_cast<unsigned char>(text[i]));
        e.offsets.push_back({i, i + 1});
    }
    return e;
}

Decoding ByteTokenizer::decode_with_offsets(std::span<const Token> tokens) const {
    Decoding d;
    for (Token t : tokens) {
        if (t < 0 || t > 256) throw InputError("byte tokenizer: token " + std::to_string(t) + " out of range");
        const std::size_t at = d.text.size();
        if (t != 256) d.text.push_back(static_cast<char>(static_cast<unsigned char>(t)));
        d.offsets.push_back({at, d.text.size()});
    }
    return d;
}

std::string ByteTokenizer::token_text(Token t) const {
    if (t == 256) return "";
    if (t < 0 || t > 256) throw InputError("byte tokenizer: token out of range");
    return std::string(1, static_cast<char>(static_cast<unsigned char>(t)));
}

WordTokenizer::WordTokenizer(std::vector<std::string> vocabulary) : vocab_(std::move(vocabulary)) {
    if (vocab_.size() < 2) throw ConfigError("word tokenizer needs at least two entries");
    for (std::size_t i = 0; i < vocab_.size(); ++i) {
        const auto& w = vocab_[i];
        if (w.empty()) throw ConfigError("word tokenizer: empty vocabulary entry");
        if (!index_.emplace(w, static_cast<Token>(i)).second) throw ConfigError("word tokenizer: duplicate entry '" + w + "'");
    }
    if (auto it = index_.find("<eos>"); it != index_.end()) eos_ = it->second;
    if (auto it = index_.find("<unk>"); it != index_.end()) unk_ = it->second;
}

Token WordTokenizer::id(const std::string& word) const {
    auto it = index_.find(word);
    if (it != index_.end()) return it->second;
    if (unk_ >= 0) return unk_;
    throw InputError("word tokenizer: '" + word + "' not in vocabulary");
}

Encoding WordTokenizer::encode(std::string_view text) const {
    Encoding e;
    std::size_t i = 0;
    while (i < text.size()) {
        if (is_space(text[i])) {
            ++i;
            continue;
        }
        std::size_t j = i + 1;
        if (!is_punct_token_char(text[i]))
            while (j < text.size() && !is_space(text[j]) && !is_punct_token_char(text[j])) ++j;
        e.tokens.push_back(id(std::string(text.substr(i, j - i))));
        e.offsets.push_back({i, j});
        i = j;
    }
    return e;
}

Decoding WordTokenizer::decode_with_offsets(std::span<const Token> tokens) const {
    Decoding d;
    for (Token t : tokens) {
        if (t < 0 || t >= vocab_size()) throw InputError("word tokenizer: token " + std::to_string(t) + " out of range");
        if (t == eos_) {
            d.offsets.push_back({d.text.size(), d.text.size()});
            continue;
        }
        const std::string& w = vocab_[t];
        const bool attach = w.size() == 1 && is_punct_token_char(w[0]);
        if (!d.text.empty() && !attach) d.text.push_back(' ');
        const std::size_t at = d.text.size();
        d.text += w;
        d.offsets.push_back({at, d.text.size()});
    }
    return d;
}

std::string WordTokenizer::token_text(Token t) const {
    if (t < 0 || t >= vocab_size()) throw InputError("word tokenizer: token out of range");
    return t == eos_ ? std::string() : vocab_[t];
}

std::vector<int> tokens_covering(const std::vector<CharRange>& offsets, std::size_t begin, std::size_t end) {
    std::vector<int> out;
    for (std::size_t i = 0; i < offsets.size(); ++i) {
        const auto& r = offsets[i];
        if (r.begin < end && begin < r.end) out.push_back(static_cast<int>(i));
    }
    return out;
}

}  // namespace headlamp
