#include "headlamp/dynrag.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <optional>
#include <sstream>

namespace headlamp {
namespace {

using nlohmann::json;

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

double entropy_of_logits(const std::vector<double>& logits) {
    if (logits.empty()) return 0.0;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - mx);
    const double log_z = std::log(z);
    double h = 0.0;
    for (double l : logits) {
        const double lp = l - mx - log_z;
        const double p = std::exp(lp);
        if (p > 0.0) h -= p * lp;
    }
    return h;
}

bool ends_sentence(const Tokenizer& tokenizer, Token t) {
    const auto text = tokenizer.token_text(t);
    for (auto it = text.rbegin(); it != text.rend(); ++it) {
        if (std::isspace(static_cast<unsigned char>(*it))) continue;
        return is_sentence_terminator(*it);
    }
    return false;
}

json heads_json(const std::vector<HeadId>& heads) {
    json a = json::array();
    for (const auto& h : heads) a.push_back({h.layer, h.head});
    return a;
}

json windows_json(const std::vector<Window>& ws) {
    json a = json::array();
    for (const auto& w : ws) a.push_back({w.begin, w.end});
    return a;
}

std::vector<Window> windows_from_json(const json& a) {
    std::vector<Window> out;
    for (const auto& w : a) out.push_back({w.at(0).get<int>(), w.at(1).get<int>()});
    return out;
}

// Contiguous runs of the sorted positions below `limit`.
std::vector<Window> runs_below(const std::vector<int>& sorted, int limit) {
    std::vector<Window> out;
    for (int p : sorted) {
        if (p >= limit) break;
        if (!out.empty() && out.back().end + 1 == p) out.back().end = p;
        else out.push_back({p, p});
    }
    return out;
}

struct Segment {
    Tokens tokens;
    std::vector<StepOutput> steps;
    bool eos = false;
    bool overflow = false;
    double context_attention = 0.0;  // max mass any head put on context positions
    std::size_t hidden_noncontext = 0;
    std::vector<Window> visible_context;
};

// Greedy decoding from `seq` until a sentence terminator, `max_tokens`, or
// EOS. Context positions [0, context_len) are visible only if listed in
// `visible_context`. With `tail`, one more forward observes the last token.
Segment greedy_segment(const Backend& model, const Tokenizer& tokenizer, Tokens seq, int context_len,
                       const std::vector<int>& visible_context, int max_tokens, bool tail) {
    Segment s;
    s.visible_context = runs_below(visible_context, context_len);
    auto observe = [&](const Tokens& input) -> std::optional<StepOutput> {
        if (static_cast<int>(input.size()) > model.max_context()) return std::nullopt;
        Intervention iv;
        std::vector<int> visible = visible_context;
        for (int p = context_len; p < static_cast<int>(input.size()); ++p) visible.push_back(p);
        std::sort(visible.begin(), visible.end());
        visible.erase(std::unique(visible.begin(), visible.end()), visible.end());
        std::size_t hidden = 0;
        for (int p = context_len; p < static_cast<int>(input.size()); ++p)
            hidden += !std::binary_search(visible.begin(), visible.end(), p);
        s.hidden_noncontext += hidden;
        iv.visible_positions = std::move(visible);
        auto out = model.forward(input, iv);
        for (const auto& row : out.attn_rows) {
            double m = 0.0;
            for (int j = 0; j < context_len && j < static_cast<int>(row.size()); ++j)
                if (!std::binary_search(visible_context.begin(), visible_context.end(), j)) m += row[j];
            s.context_attention = std::max(s.context_attention, m);
        }
        return out;
    };
    for (int i = 0; i < max_tokens; ++i) {
        auto out = observe(seq);
        if (!out) {
            s.overflow = true;
            return s;
        }
        const Token t = out->predicted_token;
        s.steps.push_back(std::move(*out));
        s.tokens.push_back(t);
        seq.push_back(t);
        if (model.eos_token() >= 0 && t == model.eos_token()) {
            s.eos = true;
            break;
        }
        if (ends_sentence(tokenizer, t)) break;
    }
    if (tail && !s.tokens.empty())
        if (auto out = observe(seq)) s.steps.push_back(std::move(*out));
    return s;
}

json theta_json(double theta) { return std::isfinite(theta) ? json(theta) : json("inf"); }

}  // namespace

std::set<std::string> default_stopwords() {
    return {"a",     "about", "above", "after", "again", "against", "all",   "am",    "an",    "and",   "any",
            "are",   "as",    "at",    "be",    "because", "been",  "before", "being", "below", "between",
            "both",  "but",   "by",    "can",   "could", "did",     "do",    "does",  "doing", "down",  "during",
            "each",  "few",   "for",   "from",  "further", "had",   "has",   "have",  "having", "he",   "her",
            "here",  "hers",  "herself", "him", "himself", "his",   "how",   "i",     "if",    "in",    "into",
            "is",    "it",    "its",   "itself", "just", "me",      "more",  "most",  "my",    "myself", "no",
            "nor",   "not",   "now",   "of",    "off",   "on",      "once",  "only",  "or",    "other", "our",
            "ours",  "ourselves", "out", "over", "own",  "same",    "she",   "should", "so",   "some",  "such",
            "than",  "that",  "the",   "their", "theirs", "them",   "themselves", "then", "there", "these",
            "they",  "this",  "those", "through", "to",  "too",     "under", "until", "up",    "very",  "was",
            "we",    "were",  "what",  "when",  "where", "which",   "while", "who",   "whom",  "why",   "will",
            "with",  "would", "you",   "your",  "yours", "yourself", "yourselves"};
}

std::set<std::string> load_stopwords(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open stopword file " + path.string());
    std::set<std::string> out;
    for (std::string line; std::getline(in, line);) {
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
        std::size_t b = 0;
        while (b < line.size() && std::isspace(static_cast<unsigned char>(line[b]))) ++b;
        line = line.substr(b);
        if (line.empty() || line[0] == '#') continue;
        for (auto& c : line) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        out.insert(line);
    }
    return out;
}

RindResult rind(std::span<const Token> draft, const std::vector<StepOutput>& steps, std::size_t base,
                const Tokenizer& tokenizer, const RindConfig& config) {
    RindResult r;
    const std::size_t n = draft.size();
    if (n == 0) throw InputError("rind: empty draft");
    if (steps.size() < n) throw InputError("rind: fewer step outputs than draft tokens");
    if (!(config.threshold > 0.0)) throw ConfigError("rind threshold must be positive");

    const int hpl = steps.front().heads_per_layer;
    const int total = static_cast<int>(steps.front().attn_rows.size());
    const int first_last_layer = total - hpl;

    const auto dec = tokenizer.decode_with_offsets(draft);
    r.scores.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto range = dec.offsets[i];
        bool content = false;
        for (std::size_t c = range.begin; c < range.end; ++c) content = content || is_alnum(dec.text[c]);
        if (content) {
            std::size_t b = range.begin, e = range.end;
            while (b > 0 && is_alnum(dec.text[b - 1])) --b;
            while (e < dec.text.size() && is_alnum(dec.text[e])) ++e;
            std::string word = dec.text.substr(b, e - b);
            for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            content = !config.stopwords.contains(word);
        }
        if (!content) continue;

        double attention = 0.0;
        for (std::size_t j = i + 1; j < n && j + 1 < steps.size(); ++j) {
            const auto& out = steps[j + 1];
            double mean = 0.0;
            for (int h = first_last_layer; h < total; ++h) {
                const auto& row = out.attn_rows[h];
                if (base + i < row.size()) mean += row[base + i];
            }
            attention = std::max(attention, mean / hpl);
        }
        r.scores[i] = entropy_of_logits(steps[i].logits) * attention;
    }
    for (std::size_t i = 0; i < n; ++i)
        if (r.scores[i] > config.threshold) {
            r.triggered = true;
            r.pos = i;
            break;
        }
    return r;
}

std::vector<std::size_t> sentence_starts(const std::string& text) {
    std::vector<std::size_t> out{0};
    for (std::size_t i = 0; i + 1 < text.size(); ++i) {
        if (!is_sentence_terminator(text[i]) || !std::isspace(static_cast<unsigned char>(text[i + 1]))) continue;
        std::size_t j = i + 1;
        while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        out.push_back(j);
    }
    return out;
}

std::string retract_to_sentence(const std::string& text, std::size_t pos) {
    pos = std::min(pos, text.size());
    std::size_t cut = 0;
    for (auto s : sentence_starts(text))
        if (s <= pos) cut = s;
    return text.substr(0, cut);
}

void RetrievalParams::validate() const {
    if (top_k <= 0 || cluster_gap <= 0 || window <= 0) throw ConfigError("retrieval top_k, cluster_gap and window must be positive");
}

std::string to_string(PolicyKind kind) {
    switch (kind) {
        case PolicyKind::DynamicProbe: return "dynamic_probe";
        case PolicyKind::StaticTopN: return "static_top";
        case PolicyKind::DynamicRandom: return "dynamic_random";
        case PolicyKind::FixedRandom: return "fixed_random";
        case PolicyKind::NoRAG: return "no_rag";
    }
    return "?";
}

PolicyKind parse_policy(const std::string& text) {
    for (auto k : {PolicyKind::DynamicProbe, PolicyKind::StaticTopN, PolicyKind::DynamicRandom, PolicyKind::FixedRandom,
                   PolicyKind::NoRAG})
        if (to_string(k) == text) return k;
    throw ConfigError("unknown policy '" + text + "'");
}

std::vector<std::vector<int>> cluster_indices(const std::vector<int>& sorted_positions, int gap) {
    std::vector<std::vector<int>> out;
    for (int p : sorted_positions) {
        if (out.empty() || p - out.back().back() > gap) out.push_back({p});
        else out.back().push_back(p);
    }
    return out;
}

std::vector<Window> merge_windows(std::vector<Window> windows) {
    std::sort(windows.begin(), windows.end(), [](const Window& a, const Window& b) {
        return a.begin != b.begin ? a.begin < b.begin : a.end < b.end;
    });
    std::vector<Window> out;
    for (const auto& w : windows) {
        if (w.end < w.begin) throw InputError("merge_windows: inverted window");
        if (!out.empty() && w.begin <= out.back().end + 1) out.back().end = std::max(out.back().end, w.end);
        else out.push_back(w);
    }
    return out;
}

std::vector<int> window_positions(const std::vector<Window>& windows) {
    std::vector<int> out;
    for (const auto& w : windows)
        for (int p = w.begin; p <= w.end; ++p) out.push_back(p);
    return out;
}

RetrievalResult retrieve_with_heads(const StepOutput& full, const std::vector<HeadId>& heads, int context_len,
                                    const RetrievalParams& params) {
    params.validate();
    if (context_len <= 0) throw InputError("retrieve: empty context");
    if (heads.empty()) throw InputError("retrieve: no heads selected");
    RetrievalResult r;
    r.heads = heads;
    r.averaged.assign(static_cast<std::size_t>(context_len), 0.0);
    for (const auto& h : heads) {
        const auto& row = full.row(h);
        if (static_cast<int>(row.size()) < context_len) throw InputError("retrieve: attention row shorter than context");
        for (int j = 0; j < context_len; ++j) r.averaged[j] += row[j];
    }
    for (auto& a : r.averaged) a /= static_cast<double>(heads.size());

    std::vector<int> order(static_cast<std::size_t>(context_len));
    for (int j = 0; j < context_len; ++j) order[j] = j;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return r.averaged[a] > r.averaged[b]; });
    r.topk.assign(order.begin(), order.begin() + std::min(params.top_k, context_len));
    std::sort(r.topk.begin(), r.topk.end());

    r.clusters = cluster_indices(r.topk, params.cluster_gap);
    std::vector<Window> raw;
    const int before = params.window / 2;
    for (const auto& c : r.clusters) {
        int rep = c.front();
        for (int p : c)
            if (r.averaged[p] > r.averaged[rep]) rep = p;
        r.representatives.push_back(rep);
        Window w{rep - before, rep - before + params.window - 1};
        w.begin = std::max(0, std::min(w.begin, c.front()));
        w.end = std::min(context_len - 1, std::max(w.end, c.back()));
        raw.push_back(w);
    }
    r.windows = merge_windows(std::move(raw));
    return r;
}

DynRagResult answer(const Backend& model, const Tokenizer& tokenizer, const Tokens& context, const Tokens& question,
                    const HeadPolicy& policy, const DynRagConfig& config) {
    config.retrieval.validate();
    if (question.empty()) throw InputError("dynrag: empty question");
    if (context.empty() && policy.kind != PolicyKind::NoRAG) throw InputError("dynrag: empty context");
    if (config.draft_max <= 0 || config.max_new < 0) throw ConfigError("dynrag: draft_max must be positive");
    if (policy.kind != PolicyKind::NoRAG && policy.n_heads <= 0) throw ConfigError("dynrag: n_heads must be positive");
    if (policy.kind == PolicyKind::DynamicProbe && !policy.probe) throw ConfigError("dynrag: dynamic_probe needs a probe");
    if (policy.kind == PolicyKind::StaticTopN && policy.static_heads.empty())
        throw ConfigError("dynrag: static_top needs a static ranking");

    const auto shape = model.shape();
    const int C = static_cast<int>(context.size());
    Tokens prefix = context;
    prefix.insert(prefix.end(), question.begin(), question.end());

    DynRagResult result;
    auto& log = result.log;
    log.push_back({{"event", "start"},
                   {"policy", to_string(policy.kind)},
                   {"n_heads", policy.n_heads},
                   {"theta", theta_json(config.rind.threshold)},
                   {"top_k", config.retrieval.top_k},
                   {"cluster_gap", config.retrieval.cluster_gap},
                   {"window", config.retrieval.window},
                   {"max_new", config.max_new},
                   {"draft_max", config.draft_max},
                   {"seed", config.seed},
                   {"context_len", C},
                   {"question_len", question.size()}});

    auto random_heads = [&](std::uint64_t seed) {
        std::vector<HeadId> all;
        for (int f = 0; f < shape.total_heads(); ++f) all.push_back(shape.head_at(f));
        Rng rng(seed);
        rng.shuffle(all);
        all.resize(std::min<std::size_t>(all.size(), static_cast<std::size_t>(policy.n_heads)));
        return all;
    };
    const std::vector<HeadId> fixed = policy.kind == PolicyKind::FixedRandom
                                          ? random_heads(derive_seed(config.seed, {0x4658}))
                                          : std::vector<HeadId>{};

    Tokens G;
    bool partial = false;
    for (int round = 0;; ++round) {
        if (static_cast<int>(G.size()) >= config.max_new) {
            partial = config.max_new > 0;
            break;
        }
        Tokens seq = prefix;
        seq.insert(seq.end(), G.begin(), G.end());
        const int budget = std::min(config.draft_max, config.max_new - static_cast<int>(G.size()));
        const bool rag = policy.kind != PolicyKind::NoRAG;
        auto draft = greedy_segment(model, tokenizer, seq, C, {}, budget, rag);
        log.push_back({{"event", "draft"},
                       {"round", round},
                       {"tokens", draft.tokens},
                       {"text", tokenizer.decode(draft.tokens)},
                       {"context_attention", draft.context_attention},
                       {"hidden_noncontext", draft.hidden_noncontext}});
        if (draft.tokens.empty()) {
            partial = true;
            break;
        }

        RindResult check;
        if (rag) {
            check = rind(draft.tokens, draft.steps, seq.size(), tokenizer, config.rind);
            log.push_back({{"event", "rind"},
                           {"round", round},
                           {"scores", check.scores},
                           {"triggered", check.triggered},
                           {"pos", check.pos}});
        }
        if (!check.triggered) {
            G.insert(G.end(), draft.tokens.begin(), draft.tokens.end());
            log.push_back({{"event", "accept"}, {"round", round}, {"tokens", draft.tokens}});
            if (draft.eos) break;
            if (draft.overflow) {
                partial = true;
                break;
            }
            continue;
        }

        Tokens combined = G;
        combined.insert(combined.end(), draft.tokens.begin(), draft.tokens.end());
        const auto dec = tokenizer.decode_with_offsets(combined);
        const std::size_t pos_char = dec.offsets[G.size() + check.pos].begin;
        const std::size_t cut = retract_to_sentence(dec.text, pos_char).size();
        std::size_t keep = 0;
        while (cut > 0 && keep < combined.size() && dec.offsets[keep].end <= cut) ++keep;
        keep = std::max(keep, G.size());
        log.push_back({{"event", "retract"}, {"round", round}, {"keep_tokens", keep}, {"cut_char", cut}});
        G.assign(combined.begin(), combined.begin() + static_cast<std::ptrdiff_t>(keep));

        seq = prefix;
        seq.insert(seq.end(), G.begin(), G.end());
        if (static_cast<int>(seq.size()) > model.max_context()) {
            partial = true;
            break;
        }
        const auto full = model.forward(seq, {});
        std::vector<HeadId> heads;
        switch (policy.kind) {
            case PolicyKind::DynamicProbe: {
                Eigen::RowVectorXd h(static_cast<Eigen::Index>(full.final_hidden.size()));
                for (Eigen::Index i = 0; i < h.size(); ++i) h(i) = full.final_hidden[i];
                heads = predict_heads(*policy.probe, h, static_cast<std::size_t>(policy.n_heads));
                break;
            }
            case PolicyKind::StaticTopN:
                heads.assign(policy.static_heads.begin(),
                             policy.static_heads.begin() +
                                 std::min<std::ptrdiff_t>(policy.n_heads, static_cast<std::ptrdiff_t>(policy.static_heads.size())));
                break;
            case PolicyKind::DynamicRandom: heads = random_heads(derive_seed(config.seed, {0x4452, static_cast<std::uint64_t>(round)})); break;
            case PolicyKind::FixedRandom: heads = fixed; break;
            case PolicyKind::NoRAG: break;
        }
        for (const auto& h : heads)
            if (!shape.contains(h)) throw ConfigError("dynrag: head " + h.str() + " outside the model");
        const auto rr = retrieve_with_heads(full, heads, C, config.retrieval);
        json clusters = json::array();
        for (const auto& c : rr.clusters) clusters.push_back(c);
        log.push_back({{"event", "retrieve"},
                       {"round", round},
                       {"heads", heads_json(rr.heads)},
                       {"topk", rr.topk},
                       {"clusters", clusters},
                       {"representatives", rr.representatives},
                       {"windows", windows_json(rr.windows)}});

        const int regen_budget = std::min(config.draft_max, config.max_new - static_cast<int>(G.size()));
        if (regen_budget <= 0) {
            partial = true;
            break;
        }
        auto regen = greedy_segment(model, tokenizer, seq, C, window_positions(rr.windows), regen_budget, false);
        log.push_back({{"event", "regenerate"},
                       {"round", round},
                       {"tokens", regen.tokens},
                       {"text", tokenizer.decode(regen.tokens)},
                       {"visible_context", windows_json(regen.visible_context)},
                       {"hidden_noncontext", regen.hidden_noncontext}});
        G.insert(G.end(), regen.tokens.begin(), regen.tokens.end());
        if (regen.eos) break;
        if (regen.overflow || regen.tokens.empty()) {
            partial = true;
            break;
        }
    }

    result.tokens = G;
    result.text = tokenizer.decode(G);
    result.partial = partial;
    log.push_back({{"event", "finish"}, {"tokens", G}, {"text", result.text}, {"partial", partial}});
    return result;
}

Tokens replay_log(const std::vector<json>& log) {
    Tokens g, last_draft;
    for (const auto& e : log) {
        const auto ev = e.at("event").get<std::string>();
        if (ev == "draft") {
            last_draft = e.at("tokens").get<Tokens>();
        } else if (ev == "accept" || ev == "regenerate") {
            const auto t = e.at("tokens").get<Tokens>();
            g.insert(g.end(), t.begin(), t.end());
        } else if (ev == "retract") {
            Tokens combined = g;
            combined.insert(combined.end(), last_draft.begin(), last_draft.end());
            const auto keep = e.at("keep_tokens").get<std::size_t>();
            if (keep > combined.size()) throw FormatError("replay: retract keeps more tokens than exist");
            combined.resize(keep);
            g = std::move(combined);
        }
    }
    return g;
}

std::vector<std::string> check_log(const std::vector<json>& log) {
    std::vector<std::string> bad;
    if (log.empty() || log.front().value("event", "") != "start") return {"log does not begin with a start event"};
    if (log.back().value("event", "") != "finish") bad.push_back("log does not end with a finish event");
    const auto& start = log.front();
    const bool no_rag = start.at("policy").get<std::string>() == to_string(PolicyKind::NoRAG);
    const int C = start.at("context_len").get<int>();
    const int top_k = start.at("top_k").get<int>();

    std::vector<Window> last_windows;
    bool have_windows = false;
    for (std::size_t i = 0; i < log.size(); ++i) {
        const auto& e = log[i];
        const auto ev = e.at("event").get<std::string>();
        const std::string where = "event " + std::to_string(i) + " (" + ev + "): ";
        if (e.contains("hidden_noncontext") && e.at("hidden_noncontext").get<std::size_t>() != 0)
            bad.push_back(where + "question or generated tokens were hidden");
        if (ev == "draft" && e.at("context_attention").get<double>() != 0.0)
            bad.push_back(where + "draft attended to context");
        if (no_rag && (ev == "retrieve" || ev == "rind" || ev == "retract" || ev == "regenerate"))
            bad.push_back(where + "no_rag run performed retrieval work");
        if (ev == "retrieve") {
            const auto ws = windows_from_json(e.at("windows"));
            const auto topk = e.at("topk").get<std::vector<int>>();
            if (static_cast<int>(topk.size()) > top_k) bad.push_back(where + "more than top_k positions");
            if (e.at("clusters").size() > topk.size()) bad.push_back(where + "more clusters than top-k positions");
            for (std::size_t w = 0; w < ws.size(); ++w) {
                if (ws[w].begin < 0 || ws[w].end >= C || ws[w].begin > ws[w].end) bad.push_back(where + "window out of bounds");
                if (w > 0 && ws[w - 1].end + 1 >= ws[w].begin) bad.push_back(where + "windows touch, overlap or are unsorted");
            }
            for (int p : topk) {
                const bool covered = std::any_of(ws.begin(), ws.end(), [p](const Window& w) { return w.begin <= p && p <= w.end; });
                if (!covered) bad.push_back(where + "top-k position " + std::to_string(p) + " outside every window");
            }
            last_windows = ws;
            have_windows = true;
        }
        if (ev == "regenerate") {
            if (!have_windows) bad.push_back(where + "regenerate without a preceding retrieve");
            else if (windows_from_json(e.at("visible_context")) != last_windows)
                bad.push_back(where + "visible context differs from the merged windows");
        }
    }
    if (log.back().value("event", "") == "finish") {
        try {
            if (replay_log(log) != log.back().at("tokens").get<Tokens>()) bad.push_back("replay does not reproduce the final answer");
        } catch (const std::exception& ex) {
            bad.push_back(std::string("replay failed: ") + ex.what());
        }
    }
    return bad;
}

void write_log(const std::filesystem::path& path, const std::vector<json>& log) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    for (const auto& e : log) out << e.dump() << '\n';
}

std::vector<json> read_log(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open " + path.string());
    std::vector<json> out;
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
        ++line_no;
        if (line.empty()) continue;
        try {
            out.push_back(json::parse(line));
        } catch (const json::parse_error& e) {
            throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

}  // namespace headlamp
