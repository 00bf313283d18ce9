#include "headlamp/tasks.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace headlamp {
namespace {

constexpr const char* kContextSlot = "{context}";
constexpr const char* kQuestionSlot = "{question}";

bool is_ws(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && is_ws(s[b])) ++b;
    while (e > b && is_ws(s[e - 1])) --e;
    return std::string(s.substr(b, e - b));
}

// 1-based line number of every top-level array element.
std::vector<std::size_t> element_lines(const std::string& text) {
    std::vector<std::size_t> lines;
    std::size_t line = 1;
    int depth = 0;
    bool in_string = false, escape = false, expecting = false;
    for (char c : text) {
        if (c == '\n') ++line;
        if (in_string) {
            if (escape) escape = false;
            else if (c == '\\') escape = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (depth == 1 && expecting && !is_ws(c) && c != ',' && c != ']') {
            lines.push_back(line);
            expecting = false;
        }
        if (c == '"') in_string = true;
        else if (c == '[' || c == '{') {
            ++depth;
            if (depth == 1) expecting = true;
        } else if (c == ']' || c == '}') {
            --depth;
        } else if (c == ',' && depth == 1) {
            expecting = true;
        }
    }
    return lines;
}

std::size_t line_of_offset(const std::string& text, std::size_t offset) {
    offset = std::min(offset, text.size());
    return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n'));
}

std::string capitalize(std::string s) {
    if (!s.empty()) s[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(s[0])));
    return s;
}

std::string lower(std::string s) {
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

}  // namespace

PromptTemplate PromptTemplate::parse(const std::string& text) {
    const auto c = text.find(kContextSlot);
    const auto q = text.find(kQuestionSlot);
    if (c == std::string::npos || q == std::string::npos || q < c ||
        text.find(kContextSlot, c + 1) != std::string::npos || text.find(kQuestionSlot, q + 1) != std::string::npos)
        throw ConfigError("prompt template needs {context} then {question}, once each");
    PromptTemplate t;
    t.prefix = text.substr(0, c);
    const auto after_c = c + std::string_view(kContextSlot).size();
    t.middle = text.substr(after_c, q - after_c);
    t.suffix = text.substr(q + std::string_view(kQuestionSlot).size());
    return t;
}

PromptTemplate PromptTemplate::niah_default() {
    return parse(
        "System\n"
        "You are a helpful AI bot that answers questions for a user. Keep your response short and direct.\n"
        "User\n"
        "Context:\n"
        "{context}\n"
        "Question:\n"
        "{question}\n"
        "Instruction:\n"
        "Don't give information outside the document or repeat your findings.");
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
    auto text = read_file(path);
    if (!text.empty() && text.back() == '\n') text.pop_back();
    return parse(text);
}

std::string PromptTemplate::render(const std::string& context, const std::string& question) const {
    return prefix + context + middle + question + suffix;
}

std::string niah_needle(const std::string& uuid) { return "The magic word is " + uuid + "."; }

std::string make_uuid(Rng& rng) {
    unsigned char b[16];
    for (int i = 0; i < 16; i += 8) {
        const auto v = rng.next_u64();
        for (int j = 0; j < 8; ++j) b[i + j] = static_cast<unsigned char>(v >> (8 * j));
    }
    b[6] = static_cast<unsigned char>((b[6] & 0x0f) | 0x40);
    b[8] = static_cast<unsigned char>((b[8] & 0x3f) | 0x80);
    std::string out;
    char hex[3];
    for (int i = 0; i < 16; ++i) {
        if (i == 4 || i == 6 || i == 8 || i == 10) out.push_back('-');
        std::snprintf(hex, sizeof hex, "%02x", b[i]);
        out += hex;
    }
    return out;
}

std::vector<std::size_t> sentence_boundaries(const std::string& text) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < text.size(); ++i)
        if (is_sentence_terminator(text[i]) && (i + 1 == text.size() || is_ws(text[i + 1]))) out.push_back(i + 1);
    return out;
}

NiahSample make_niah(const std::string& haystack_corpus, const Tokenizer& tokenizer, std::size_t target_len,
                     double depth, std::uint64_t seed, const PromptTemplate& tmpl) {
    if (trim(haystack_corpus).empty()) throw InputError("make_niah: empty haystack corpus");
    if (!(depth >= 0.0 && depth <= 1.0)) throw InputError("make_niah: depth must lie in [0, 1]");

    NiahSample s;
    s.seed = seed;
    s.depth = depth;
    s.target_len = target_len;
    s.question = kNiahQuestion;
    Rng rng(seed);
    s.uuid = make_uuid(rng);
    const std::string needle = niah_needle(s.uuid);

    const auto overhead = tokenizer.encode(tmpl.render("", s.question)).tokens.size();
    const auto needle_tokens = tokenizer.encode(" " + needle).tokens.size();
    if (target_len <= overhead + needle_tokens) throw InputError("make_niah: target length too short for the template");
    const std::size_t hay_tokens = target_len - overhead - needle_tokens;

    // Concatenate the corpus until it is long enough, then cut at a token edge.
    const std::string unit = trim(haystack_corpus);
    std::string hay;
    Encoding enc;
    while (true) {
        if (!hay.empty()) hay.push_back(' ');
        hay += unit;
        enc = tokenizer.encode(hay);
        if (enc.tokens.size() >= hay_tokens) break;
    }
    hay.resize(enc.offsets[hay_tokens - 1].end);

    // The start of the haystack counts as a boundary, so depth 0 puts the
    // needle first.
    auto bounds = sentence_boundaries(hay);
    bounds.insert(bounds.begin(), 0);
    const auto wanted = static_cast<std::size_t>(depth * static_cast<double>(hay.size()));
    std::size_t at = 0;
    for (auto b : bounds)
        if (b <= wanted) at = b;
    s.needle_insert_at = at;

    const std::string context = at == 0 ? needle + " " + hay : hay.substr(0, at) + " " + needle + hay.substr(at);
    s.prompt = tmpl.render(context, s.question);
    const std::size_t needle_begin = tmpl.prefix.size() + (at == 0 ? 0 : at + 1);
    s.needle_chars = {needle_begin, needle_begin + needle.size()};

    auto full = tokenizer.encode(s.prompt);
    s.tokens = std::move(full.tokens);
    s.offsets = std::move(full.offsets);
    s.needle_span = tokens_covering(s.offsets, s.needle_chars.begin, s.needle_chars.end);
    return s;
}

std::vector<std::string> toy_vocabulary(const ToyNiahConfig& config) {
    static const char* fillers[] = {"the", "sun", "rose", "over", "a", "hill", "and", "wind", "moved", "grass",
                                    "slow", "river", "stone", "light", "cold", "field"};
    if (config.n_filler_words < 2 || config.n_filler_words > 16) throw ConfigError("toy niah: n_filler_words in [2, 16]");
    if (config.uuid_len < 1 || config.uuid_len > config.n_symbols) throw ConfigError("toy niah: need uuid_len <= n_symbols");
    std::vector<std::string> v{"<eos>", ".", "magic", "?"};
    for (int i = 0; i < config.n_filler_words; ++i) v.emplace_back(fillers[i]);
    for (int i = 0; i < config.n_symbols; ++i) v.push_back("k" + std::to_string(i));
    return v;
}

ToyNiahSample make_toy_niah(const WordTokenizer& tokenizer, const ToyNiahConfig& config, double depth,
                            std::uint64_t seed) {
    if (!(depth >= 0.0 && depth <= 1.0)) throw InputError("make_toy_niah: depth must lie in [0, 1]");
    const Token dot = tokenizer.id("."), magic = tokenizer.id("magic"), cue = tokenizer.id("?");
    const Token first_filler = 4, first_symbol = 4 + config.n_filler_words;
    if (tokenizer.vocab_size() < first_symbol + config.n_symbols) throw ConfigError("make_toy_niah: vocabulary too small");

    ToyNiahSample s;
    s.depth = depth;
    s.seed = seed;
    Rng rng(seed);

    std::vector<Token> symbols(config.n_symbols);
    for (int i = 0; i < config.n_symbols; ++i) symbols[i] = first_symbol + i;
    rng.shuffle(symbols);
    s.answer.assign(symbols.begin(), symbols.begin() + config.uuid_len);
    s.answer_text = tokenizer.decode(s.answer);

    Tokens needle{magic};
    needle.insert(needle.end(), s.answer.begin(), s.answer.end());
    needle.push_back(dot);

    const int hay_len = config.haystack_len - static_cast<int>(needle.size());
    if (hay_len < 4) throw InputError("make_toy_niah: haystack too short");
    Tokens hay;
    while (static_cast<int>(hay.size()) < hay_len) {
        const int words = 3 + static_cast<int>(rng.below(5));
        for (int w = 0; w < words; ++w) hay.push_back(first_filler + static_cast<Token>(rng.below(config.n_filler_words)));
        hay.push_back(dot);
    }
    hay.resize(hay_len);

    std::vector<int> bounds;
    for (int i = 0; i < hay_len; ++i)
        if (hay[i] == dot) bounds.push_back(i + 1);
    if (bounds.empty()) throw InputError("make_toy_niah: haystack has no sentence boundary");
    const auto wanted = static_cast<int>(depth * hay_len);
    int at = bounds.front();
    for (int b : bounds)
        if (b <= wanted) at = b;

    s.prompt.assign(hay.begin(), hay.begin() + at);
    for (std::size_t i = 0; i < needle.size(); ++i) s.needle_span.push_back(at + static_cast<int>(i));
    s.prompt.insert(s.prompt.end(), needle.begin(), needle.end());
    s.prompt.insert(s.prompt.end(), hay.begin() + at, hay.end());
    s.prompt.push_back(cue);
    s.prompt.push_back(magic);
    return s;
}

std::vector<int> MultiHopSample::needle_indices() const {
    std::vector<int> out;
    for (const auto& span : fact_spans) out.insert(out.end(), span.begin(), span.end());
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

MultiHopSample make_multihop(const Tokenizer& tokenizer, std::uint64_t seed, int n_distractors) {
    static const char* syllables[] = {"ka", "lo", "mir", "ren", "tu", "sa", "vel", "dor", "ni", "pa",
                                      "zu", "ther", "mo", "qui", "bra", "fen", "gol", "hy", "ix", "jor"};
    constexpr std::size_t n_syll = sizeof syllables / sizeof syllables[0];
    if (n_distractors < 0) throw InputError("make_multihop: negative distractor count");
    Rng rng(seed);

    const int people = 1 + (n_distractors + 1) / 2;
    const int countries = people;
    std::vector<std::string> names;
    auto fresh = [&] {
        while (true) {
            const int parts = 2 + static_cast<int>(rng.below(2));
            std::string n;
            for (int i = 0; i < parts; ++i) n += syllables[rng.below(n_syll)];
            n = capitalize(n);
            const auto ln = lower(n);
            const bool clash = std::any_of(names.begin(), names.end(), [&](const std::string& o) {
                const auto lo = lower(o);
                return lo.find(ln) != std::string::npos || ln.find(lo) != std::string::npos;
            });
            if (!clash) {
                names.push_back(n);
                return n;
            }
        }
    };
    std::vector<std::string> person(people), country(countries), capital(countries);
    for (auto& p : person) p = fresh();
    for (int i = 0; i < countries; ++i) {
        country[i] = fresh();
        capital[i] = fresh();
    }

    struct Sentence {
        std::string text;
        int fact;  // -1 for distractors
    };
    std::vector<Sentence> sentences{{person[0] + " was born in " + country[0] + ".", 0},
                                    {"The capital of " + country[0] + " is " + capital[0] + ".", 1}};
    for (int d = 0; d < n_distractors; ++d) {
        const int i = 1 + d / 2;
        if (d % 2 == 0) sentences.push_back({person[i] + " was born in " + country[i] + ".", -1});
        else sentences.push_back({"The capital of " + country[i] + " is " + capital[i] + ".", -1});
    }
    rng.shuffle(sentences);

    MultiHopSample s;
    s.id = "synthetic-" + std::to_string(seed);
    s.provenance = "synthetic";
    s.question = "What is the capital of the country where " + person[0] + " was born?";
    s.answer = capital[0];
    s.fact_chars.resize(2);
    for (const auto& sent : sentences) {
        if (!s.context.empty()) s.context.push_back(' ');
        if (sent.fact >= 0) s.fact_chars[sent.fact] = {s.context.size(), s.context.size() + sent.text.size()};
        s.context += sent.text;
    }
    const auto enc = tokenizer.encode(s.context);
    for (const auto& r : s.fact_chars) s.fact_spans.push_back(tokens_covering(enc.offsets, r.begin, r.end));
    return s;
}

HotpotLoad load_hotpotqa(const std::filesystem::path& path, const Tokenizer& tokenizer) {
    using nlohmann::json;
    HotpotLoad out;
    const std::string text = read_file(path);
    if (trim(text).empty()) return out;

    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw FormatError(path.string() + ": line " + std::to_string(line_of_offset(text, e.byte)) +
                          ": invalid JSON: " + e.what());
    }
    if (!doc.is_array()) throw FormatError(path.string() + ": line 1: expected a JSON array of records");
    const auto lines = element_lines(text);

    for (std::size_t r = 0; r < doc.size(); ++r) {
        const auto& rec = doc[r];
        const std::size_t line = r < lines.size() ? lines[r] : 0;
        auto malformed = [&](const std::string& why) {
            return FormatError(path.string() + ": line " + std::to_string(line) + ": record " + std::to_string(r) +
                               ": " + why);
        };
        if (!rec.is_object()) throw malformed("record is not an object");
        for (const char* key : {"question", "answer", "context", "supporting_facts"})
            if (!rec.contains(key)) throw malformed(std::string("missing field '") + key + "'");
        if (!rec["question"].is_string() || !rec["answer"].is_string()) throw malformed("question/answer must be strings");
        if (!rec["context"].is_array() || !rec["supporting_facts"].is_array()) throw malformed("context/supporting_facts must be arrays");

        MultiHopSample s;
        s.provenance = "hotpotqa";
        s.id = rec.contains("_id") && rec["_id"].is_string() ? rec["_id"].get<std::string>() : "record-" + std::to_string(r);
        s.question = rec["question"].get<std::string>();
        s.answer = rec["answer"].get<std::string>();

        struct Para {
            std::string title;
            std::vector<CharRange> sents;
        };
        std::vector<Para> paras;
        for (const auto& p : rec["context"]) {
            if (!p.is_array() || p.size() != 2 || !p[0].is_string() || !p[1].is_array())
                throw malformed("context entries must be [title, [sentences]]");
            Para para{p[0].get<std::string>(), {}};
            s.context += para.title + ":";
            for (const auto& sent : p[1]) {
                if (!sent.is_string()) throw malformed("sentences must be strings");
                const auto t = trim(sent.get<std::string>());
                if (t.empty()) {
                    para.sents.push_back({s.context.size(), s.context.size()});
                    continue;
                }
                s.context.push_back(' ');
                para.sents.push_back({s.context.size(), s.context.size() + t.size()});
                s.context += t;
            }
            s.context.push_back('\n');
            paras.push_back(std::move(para));
        }

        bool mappable = true;
        for (const auto& f : rec["supporting_facts"]) {
            if (!f.is_array() || f.size() != 2 || !f[0].is_string() || !f[1].is_number_integer())
                throw malformed("supporting_facts entries must be [title, sentence_id]");
            const auto title = f[0].get<std::string>();
            const auto sid = f[1].get<long long>();
            auto it = std::find_if(paras.begin(), paras.end(), [&](const Para& p) { return p.title == title; });
            if (it == paras.end() || sid < 0 || sid >= static_cast<long long>(it->sents.size()) ||
                it->sents[sid].begin == it->sents[sid].end) {
                mappable = false;
                out.warnings.push_back("line " + std::to_string(line) + ": unmappable supporting fact [" + title + ", " +
                                       std::to_string(sid) + "]");
                break;
            }
            s.fact_chars.push_back(it->sents[sid]);
        }
        if (!mappable || s.fact_chars.empty()) {
            ++out.skipped;
            continue;
        }
        const auto enc = tokenizer.encode(s.context);
        for (const auto& range : s.fact_chars) s.fact_spans.push_back(tokens_covering(enc.offsets, range.begin, range.end));
        out.samples.push_back(std::move(s));
    }
    return out;
}

}  // namespace headlamp
