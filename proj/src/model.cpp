#include "headlamp/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <sstream>

#include "headlamp/weights_io.hpp"

namespace headlamp {
namespace {

constexpr double kLayerNormEps = 1e-5;

void round_to_float(Eigen::MatrixXd& m) { m = m.cast<float>().cast<double>(); }
void round_to_float(Eigen::RowVectorXd& v) { v = v.cast<float>().cast<double>(); }

Eigen::MatrixXd layer_norm(const Eigen::MatrixXd& x, const Eigen::RowVectorXd& gain, const Eigen::RowVectorXd& bias) {
    Eigen::MatrixXd out(x.rows(), x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        const double mean = x.row(r).mean();
        const Eigen::RowVectorXd centered = x.row(r).array() - mean;
        const double var = centered.squaredNorm() / static_cast<double>(x.cols());
        out.row(r) = (centered / std::sqrt(var + kLayerNormEps)).cwiseProduct(gain) + bias;
    }
    return out;
}

double gelu(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

Eigen::MatrixXd random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = rng.normal() * stddev;
    return m;
}

double frequency(int k, int pos_dims) {
    return std::pow(10000.0, -2.0 * static_cast<double>(k) / static_cast<double>(pos_dims));
}

void check_shape(const Eigen::MatrixXd& m, Eigen::Index rows, Eigen::Index cols, const char* what) {
    if (m.rows() != rows || m.cols() != cols) {
        std::ostringstream os;
        os << what << " has shape " << m.rows() << "x" << m.cols() << ", expected " << rows << "x" << cols;
        throw ConfigError(os.str());
    }
}

}  // namespace

void ModelConfig::validate() const {
    if (vocab_size < 2) throw ConfigError("vocab_size must be >= 2");
    if (n_layers < 1) throw ConfigError("n_layers must be >= 1");
    if (n_heads_per_layer < 1 || head_dim < 1) throw ConfigError("n_heads_per_layer and head_dim must be >= 1");
    if (d_model != n_heads_per_layer * head_dim)
        throw ConfigError("d_model (" + std::to_string(d_model) + ") != n_heads_per_layer * head_dim (" +
                          std::to_string(n_heads_per_layer * head_dim) + ")");
    if (max_context < 2) throw ConfigError("max_context must be >= 2");
    if (d_ff < 0) throw ConfigError("d_ff must be >= 0");
    const int pd = effective_pos_dims();
    if (pd % 2 != 0 || pd < 2) throw ConfigError("positional dims must be even and >= 2");
    if (pos_offset < 0 || pos_offset + pd > d_model) throw ConfigError("positional dims exceed d_model");
    if (eos_token >= vocab_size) throw ConfigError("eos_token outside vocabulary");
}

Model::Model(ModelConfig config, ModelWeights weights, std::map<std::string, std::string> metadata)
    : config_(config), weights_(std::move(weights)), metadata_(std::move(metadata)) {
    config_.validate();
    const Eigen::Index d = config_.d_model;
    check_shape(weights_.embedding, config_.vocab_size, d, "embedding");
    check_shape(weights_.unembedding, d, config_.vocab_size, "unembedding");
    if (static_cast<int>(weights_.layers.size()) != config_.n_layers) throw ConfigError("layer count mismatch");
    round_to_float(weights_.embedding);
    round_to_float(weights_.unembedding);
    for (auto& L : weights_.layers) {
        check_shape(L.wq, d, d, "wq");
        check_shape(L.wk, d, d, "wk");
        check_shape(L.wv, d, d, "wv");
        check_shape(L.wo, d, d, "wo");
        for (auto* m : {&L.wq, &L.wk, &L.wv, &L.wo}) round_to_float(*m);
        if (config_.layer_norm) {
            for (auto* v : {&L.ln1_gain, &L.ln1_bias, &L.ln2_gain, &L.ln2_bias}) {
                if (v->size() != d) throw ConfigError("layer norm parameter size mismatch");
                round_to_float(*v);
            }
        }
        if (config_.d_ff > 0) {
            check_shape(L.w1, d, config_.d_ff, "w1");
            check_shape(L.w2, config_.d_ff, d, "w2");
            if (L.b1.size() != config_.d_ff || L.b2.size() != d) throw ConfigError("mlp bias size mismatch");
            round_to_float(L.w1);
            round_to_float(L.w2);
            round_to_float(L.b1);
            round_to_float(L.b2);
        }
    }
    if (config_.layer_norm) {
        if (weights_.lnf_gain.size() != d || weights_.lnf_bias.size() != d)
            throw ConfigError("final layer norm size mismatch");
        round_to_float(weights_.lnf_gain);
        round_to_float(weights_.lnf_bias);
    }

    const int pd = config_.effective_pos_dims();
    pe_table_.resize(config_.max_context, pd);
    for (int p = 0; p < config_.max_context; ++p) {
        for (int k = 0; k < pd / 2; ++k) {
            const double angle = p * frequency(k, pd);
            pe_table_(p, 2 * k) = std::sin(angle);
            pe_table_(p, 2 * k + 1) = std::cos(angle);
        }
    }
}

ModelShape Model::shape() const {
    return {config_.n_layers, config_.n_heads_per_layer, config_.d_model, config_.vocab_size};
}

Eigen::RowVectorXd Model::positional_encoding(int position) const { return pe_table_.row(position); }

StepOutput Model::forward(std::span<const Token> tokens, const Intervention& intervention) const {
    const int T = static_cast<int>(tokens.size());
    if (T < 1) throw InputError("forward: empty input");
    if (T > config_.max_context)
        throw InputError("forward: input of " + std::to_string(T) + " tokens exceeds max_context " +
                         std::to_string(config_.max_context));
    const ModelShape sh = shape();
    std::vector<char> masked(sh.total_heads(), 0);
    for (const auto& h : intervention.masked_heads) {
        if (!sh.contains(h)) throw InputError("forward: masked head " + h.str() + " out of range");
        masked[sh.flat(h)] = 1;
    }
    std::vector<char> visible(T, 1);
    if (intervention.visible_positions) {
        std::fill(visible.begin(), visible.end(), 0);
        for (int p : *intervention.visible_positions) {
            if (p < 0 || p >= T) throw InputError("forward: visible position " + std::to_string(p) + " out of range");
            visible[p] = 1;
        }
    }

    const int d = config_.d_model;
    const int hd = config_.head_dim;
    const int pd = config_.effective_pos_dims();
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Eigen::MatrixXd x(T, d);
    for (int p = 0; p < T; ++p) {
        const Token t = tokens[p];
        if (t < 0 || t >= config_.vocab_size) throw InputError("forward: token " + std::to_string(t) + " outside vocabulary");
        x.row(p) = weights_.embedding.row(t);
        x.row(p).segment(config_.pos_offset, pd) += pe_table_.row(p);
    }

    StepOutput out;
    out.heads_per_layer = config_.n_heads_per_layer;
    out.attn_rows.assign(sh.total_heads(), std::vector<double>(T, 0.0));
    out.degenerate_rows.assign(sh.total_heads(), false);

    std::vector<double> weights_buf(T);
    for (int l = 0; l < config_.n_layers; ++l) {
        const LayerWeights& L = weights_.layers[l];
        const bool last_layer = l + 1 == config_.n_layers;
        // The last layer only feeds the final position, so only its query is needed.
        const int first_query = last_layer ? T - 1 : 0;
        const int n_queries = T - first_query;

        const Eigen::MatrixXd h = config_.layer_norm ? layer_norm(x, L.ln1_gain, L.ln1_bias) : x;
        const Eigen::MatrixXd k = h * L.wk;
        const Eigen::MatrixXd v = h * L.wv;
        const Eigen::MatrixXd q = h.bottomRows(n_queries) * L.wq;
        Eigen::MatrixXd heads_out = Eigen::MatrixXd::Zero(n_queries, d);

        for (int head = 0; head < config_.n_heads_per_layer; ++head) {
            const int flat = l * config_.n_heads_per_layer + head;
            const Eigen::MatrixXd scores =
                (q.middleCols(head * hd, hd) * k.middleCols(head * hd, hd).transpose()) * scale;
            Eigen::MatrixXd attn = Eigen::MatrixXd::Zero(n_queries, T);
            for (int r = 0; r < n_queries; ++r) {
                const int i = first_query + r;
                double best = -std::numeric_limits<double>::infinity();
                for (int j = 0; j <= i; ++j)
                    if (visible[j]) best = std::max(best, scores(r, j));
                if (best == -std::numeric_limits<double>::infinity()) {
                    if (i == T - 1) out.degenerate_rows[flat] = true;
                    continue;
                }
                double sum = 0.0;
                for (int j = 0; j <= i; ++j) {
                    weights_buf[j] = visible[j] ? std::exp(scores(r, j) - best) : 0.0;
                    sum += weights_buf[j];
                }
                for (int j = 0; j <= i; ++j) attn(r, j) = weights_buf[j] / sum;
            }
            for (int j = 0; j < T; ++j) out.attn_rows[flat][j] = attn(n_queries - 1, j);
            if (!masked[flat]) heads_out.middleCols(head * hd, hd) = attn * v.middleCols(head * hd, hd);
        }

        x.bottomRows(n_queries) += heads_out * L.wo;

        if (config_.d_ff > 0) {
            const Eigen::MatrixXd rows = x.bottomRows(n_queries);
            const Eigen::MatrixXd h2 = config_.layer_norm ? layer_norm(rows, L.ln2_gain, L.ln2_bias) : rows;
            Eigen::MatrixXd pre = h2 * L.w1;
            pre.rowwise() += L.b1;
            const Eigen::MatrixXd act = pre.unaryExpr([](double z) { return gelu(z); });
            Eigen::MatrixXd mlp = act * L.w2;
            mlp.rowwise() += L.b2;
            x.bottomRows(n_queries) += mlp;
        }
    }

    Eigen::MatrixXd final_row = x.row(T - 1);
    if (config_.layer_norm) final_row = layer_norm(final_row, weights_.lnf_gain, weights_.lnf_bias);
    const Eigen::RowVectorXd logits = final_row * weights_.unembedding;
    out.final_hidden.assign(final_row.data(), final_row.data() + d);
    out.logits.assign(logits.data(), logits.data() + logits.size());
    out.predicted_token = static_cast<Token>(argmax(out.logits));
    return out;
}

Model build_model(const ModelConfig& config) {
    config.validate();
    Rng rng(config.init_seed);
    const int d = config.d_model;
    const double s = 1.0 / std::sqrt(static_cast<double>(d));

    ModelWeights w;
    w.embedding = random_matrix(rng, config.vocab_size, d, 1.0);
    for (int l = 0; l < config.n_layers; ++l) {
        LayerWeights L;
        L.wq = random_matrix(rng, d, d, s);
        L.wk = random_matrix(rng, d, d, s);
        L.wv = random_matrix(rng, d, d, s);
        L.wo = random_matrix(rng, d, d, s);
        if (config.layer_norm) {
            L.ln1_gain = Eigen::RowVectorXd::Ones(d);
            L.ln1_bias = Eigen::RowVectorXd::Zero(d);
            L.ln2_gain = Eigen::RowVectorXd::Ones(d);
            L.ln2_bias = Eigen::RowVectorXd::Zero(d);
        }
        if (config.d_ff > 0) {
            L.w1 = random_matrix(rng, d, config.d_ff, s);
            L.b1 = Eigen::RowVectorXd::Zero(config.d_ff);
            L.w2 = random_matrix(rng, config.d_ff, d, 1.0 / std::sqrt(static_cast<double>(config.d_ff)));
            L.b2 = Eigen::RowVectorXd::Zero(d);
        }
        w.layers.push_back(std::move(L));
    }
    if (config.layer_norm) {
        w.lnf_gain = Eigen::RowVectorXd::Ones(d);
        w.lnf_bias = Eigen::RowVectorXd::Zero(d);
    }
    w.unembedding = random_matrix(rng, d, config.vocab_size, s);
    return Model(config, std::move(w), {{"kind", "random"}});
}

Model build_induction_model(int vocab_size, std::uint64_t seed, const InductionOptions& options) {
    if (vocab_size < 4) throw ConfigError("induction model needs vocab_size >= 4");
    if (options.heads_per_layer < 2) throw ConfigError("induction model needs >= 2 heads per layer");
    const int V = vocab_size;
    const int P = options.pos_dims;
    const int hd = std::max(V, P);

    // Residual layout: TOK [0,V) | POS [V,V+P) | PREV [V+P,2V+P) | JUNK [2V+P,d)
    const int tok = 0;
    const int pos = V;
    const int prev = V + P;
    const int junk = 2 * V + P;

    ModelConfig cfg;
    cfg.vocab_size = V;
    cfg.n_layers = 2;
    cfg.n_heads_per_layer = options.heads_per_layer;
    cfg.head_dim = hd;
    cfg.d_model = options.heads_per_layer * hd;
    cfg.max_context = options.max_context;
    cfg.init_seed = seed;
    cfg.d_ff = 0;
    cfg.layer_norm = false;
    cfg.pos_offset = pos;
    cfg.pos_dims = P;
    cfg.validate();
    const int d = cfg.d_model;
    const int n_junk = d - junk;
    if (n_junk < 1) throw ConfigError("induction model: not enough residual dims for the circuit layout");
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

    Rng rng(seed);

    // Random orthonormal token embeddings.
    const Eigen::MatrixXd gaussian = random_matrix(rng, V, V, 1.0);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian);
    Eigen::MatrixXd rot = qr.householderQ();
    const Eigen::VectorXd diag = qr.matrixQR().diagonal();
    for (int c = 0; c < V; ++c)
        if (diag(c) < 0) rot.col(c) *= -1.0;

    ModelWeights w;
    w.embedding = Eigen::MatrixXd::Zero(V, d);
    w.embedding.middleCols(tok, V) = rot;
    w.embedding.middleCols(junk, n_junk) = random_matrix(rng, V, n_junk, 1.0 / std::sqrt(static_cast<double>(n_junk)));
    w.unembedding = Eigen::MatrixXd::Zero(d, V);
    w.unembedding.middleRows(tok, V) = rot.transpose();

    // Smallest gap between the positional self-similarity at offset 0 and any other
    // offset sets the previous-token head's inverse temperature.
    auto similarity = [&](int delta) {
        double g = 0.0;
        for (int k = 0; k < P / 2; ++k) g += std::cos(frequency(k, P) * delta);
        return g;
    };
    double worst = -std::numeric_limits<double>::infinity();
    for (int delta = 1; delta <= options.max_context; ++delta) worst = std::max(worst, similarity(delta));
    const double gap = similarity(0) - worst;
    constexpr double kPrevMargin = 30.0;   // nats between the previous token and any other key
    constexpr double kMatchMargin = 30.0;  // nats between an induction match and a non-match
    const double prev_gain = kPrevMargin / gap / scale;

    // Filler heads: read TOK, POS and JUNK; write only JUNK.
    auto fill_random_head = [&](LayerWeights& L, int head) {
        const int c0 = head * hd;
        for (int r = 0; r < d; ++r) {
            if (r >= prev && r < junk) continue;
            for (int c = 0; c < hd; ++c) {
                L.wq(r, c0 + c) = rng.normal() * 0.5;
                L.wk(r, c0 + c) = rng.normal() * 0.5;
                L.wv(r, c0 + c) = rng.normal() / std::sqrt(static_cast<double>(d));
            }
        }
        for (int c = 0; c < hd; ++c)
            for (int r = 0; r < n_junk; ++r) L.wo(c0 + c, junk + r) = rng.normal() / std::sqrt(static_cast<double>(hd));
    };

    for (int l = 0; l < 2; ++l) {
        LayerWeights L;
        L.wq = Eigen::MatrixXd::Zero(d, d);
        L.wk = Eigen::MatrixXd::Zero(d, d);
        L.wv = Eigen::MatrixXd::Zero(d, d);
        L.wo = Eigen::MatrixXd::Zero(d, d);
        if (l == 0) {
            // Previous-token head: query = rotation of PE(t) back one step, key = PE(j).
            for (int k = 0; k < P / 2; ++k) {
                const double om = frequency(k, P);
                L.wq(pos + 2 * k, 2 * k) = prev_gain * std::cos(om);
                L.wq(pos + 2 * k + 1, 2 * k) = -prev_gain * std::sin(om);
                L.wq(pos + 2 * k, 2 * k + 1) = prev_gain * std::sin(om);
                L.wq(pos + 2 * k + 1, 2 * k + 1) = prev_gain * std::cos(om);
            }
            for (int i = 0; i < P; ++i) L.wk(pos + i, i) = 1.0;
            for (int i = 0; i < V; ++i) {
                L.wv(tok + i, i) = 1.0;
                L.wo(i, prev + i) = 1.0;
            }
        } else {
            // Induction head: query = TOK(t), key = PREV(j) - TOK(j), value = TOK(j).
            const double match_gain = kMatchMargin / scale;
            for (int i = 0; i < V; ++i) {
                L.wq(tok + i, i) = match_gain;
                L.wk(prev + i, i) = 1.0;
                L.wk(tok + i, i) = -1.0;
                L.wv(tok + i, i) = 1.0;
                L.wo(i, tok + i) = options.copy_gain;
            }
        }
        for (int head = 1; head < options.heads_per_layer; ++head) fill_random_head(L, head);
        w.layers.push_back(std::move(L));
    }

    std::map<std::string, std::string> meta{
        {"kind", "induction"},
        {"prev_token_head", "L0-H0"},
        {"induction_head", "L1-H0"},
        {"layout", "tok=0:" + std::to_string(V) + " pos=" + std::to_string(pos) + ":" + std::to_string(P) +
                       " prev=" + std::to_string(prev) + ":" + std::to_string(V) + " junk=" + std::to_string(junk) +
                       ":" + std::to_string(n_junk)},
    };
    return Model(cfg, std::move(w), std::move(meta));
}

HeadId parse_head(const std::string& text) {
    int layer = -1, head = -1;
    if (std::sscanf(text.c_str(), "L%d-H%d", &layer, &head) != 2 || layer < 0 || head < 0)
        throw ConfigError("cannot parse head id '" + text + "' (expected L<layer>-H<head>)");
    return {layer, head};
}

std::optional<HeadId> documented_head(const Model& model, const std::string& key) {
    auto it = model.metadata().find(key);
    if (it == model.metadata().end()) return std::nullopt;
    return parse_head(it->second);
}

Tokens GenerationTrace::generated() const {
    Tokens out;
    out.reserve(steps.size());
    for (const auto& s : steps) out.push_back(s.accepted);
    return out;
}

Tokens GenerationTrace::input_at(std::size_t t) const {
    Tokens in = prompt;
    for (std::size_t i = 0; i < t && i < steps.size(); ++i) in.push_back(steps[i].accepted);
    return in;
}

GenerationTrace generate(const Backend& backend, std::span<const Token> prompt, std::size_t max_new,
                         const InterventionProvider& provider, std::string sample_id, std::uint64_t seed) {
    if (prompt.empty()) throw InputError("generate: empty prompt");
    if (static_cast<int>(prompt.size()) > backend.max_context())
        throw InputError("generate: prompt exceeds max_context");
    GenerationTrace trace;
    trace.prompt.assign(prompt.begin(), prompt.end());
    trace.sample_id = std::move(sample_id);
    trace.seed = seed;
    Tokens input = trace.prompt;
    for (std::size_t t = 0; t < max_new; ++t) {
        if (static_cast<int>(input.size()) > backend.max_context()) {
            trace.overflow = true;
            break;
        }
        GenerationStep step;
        if (provider) step.intervention = provider(t, input);
        step.output = backend.forward(input, step.intervention);
        step.accepted = step.output.predicted_token;
        input.push_back(step.accepted);
        const bool eos = backend.eos_token() >= 0 && step.accepted == backend.eos_token();
        trace.steps.push_back(std::move(step));
        if (eos) {
            trace.stopped_on_eos = true;
            break;
        }
    }
    return trace;
}

namespace {

nlohmann::json config_to_json(const ModelConfig& c) {
    return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},     {"n_layers", c.n_layers},
            {"n_heads_per_layer", c.n_heads_per_layer}, {"head_dim", c.head_dim}, {"max_context", c.max_context},
            {"positional_scheme", "sinusoidal-absolute"}, {"init_seed", c.init_seed}, {"d_ff", c.d_ff},
            {"layer_norm", c.layer_norm}, {"pos_offset", c.pos_offset}, {"pos_dims", c.pos_dims},
            {"eos_token", c.eos_token}};
}

ModelConfig config_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.vocab_size = j.at("vocab_size");
    c.d_model = j.at("d_model");
    c.n_layers = j.at("n_layers");
    c.n_heads_per_layer = j.at("n_heads_per_layer");
    c.head_dim = j.at("head_dim");
    c.max_context = j.at("max_context");
    if (j.at("positional_scheme") != "sinusoidal-absolute") throw FormatError("unsupported positional scheme");
    c.init_seed = j.at("init_seed");
    c.d_ff = j.at("d_ff");
    c.layer_norm = j.at("layer_norm");
    c.pos_offset = j.at("pos_offset");
    c.pos_dims = j.at("pos_dims");
    c.eos_token = j.at("eos_token");
    return c;
}

}  // namespace

void save_model(const Model& model, const std::filesystem::path& path) {
    WeightFile f;
    f.kind = WeightFile::kTransformer;
    f.header["config"] = config_to_json(model.config());
    f.header["metadata"] = model.metadata();
    const auto& w = model.weights();
    f.tensors.emplace_back("embedding", w.embedding);
    for (std::size_t l = 0; l < w.layers.size(); ++l) {
        const auto& L = w.layers[l];
        const std::string p = "layers." + std::to_string(l) + ".";
        f.tensors.emplace_back(p + "wq", L.wq);
        f.tensors.emplace_back(p + "wk", L.wk);
        f.tensors.emplace_back(p + "wv", L.wv);
        f.tensors.emplace_back(p + "wo", L.wo);
        if (model.config().layer_norm) {
            f.tensors.emplace_back(p + "ln1_gain", L.ln1_gain);
            f.tensors.emplace_back(p + "ln1_bias", L.ln1_bias);
            f.tensors.emplace_back(p + "ln2_gain", L.ln2_gain);
            f.tensors.emplace_back(p + "ln2_bias", L.ln2_bias);
        }
        if (model.config().d_ff > 0) {
            f.tensors.emplace_back(p + "w1", L.w1);
            f.tensors.emplace_back(p + "b1", L.b1);
            f.tensors.emplace_back(p + "w2", L.w2);
            f.tensors.emplace_back(p + "b2", L.b2);
        }
    }
    if (model.config().layer_norm) {
        f.tensors.emplace_back("lnf_gain", w.lnf_gain);
        f.tensors.emplace_back("lnf_bias", w.lnf_bias);
    }
    f.tensors.emplace_back("unembedding", w.unembedding);
    write_weight_file(path, f);
}

Model load_model(const std::filesystem::path& path) {
    const WeightFile f = read_weight_file(path);
    if (f.kind != WeightFile::kTransformer) throw FormatError(path.string() + ": not a transformer weight file");
    const ModelConfig cfg = config_from_json(f.header.at("config"));
    ModelWeights w;
    w.embedding = f.tensor("embedding");
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        LayerWeights L;
        L.wq = f.tensor(p + "wq");
        L.wk = f.tensor(p + "wk");
        L.wv = f.tensor(p + "wv");
        L.wo = f.tensor(p + "wo");
        if (cfg.layer_norm) {
            L.ln1_gain = f.tensor(p + "ln1_gain");
            L.ln1_bias = f.tensor(p + "ln1_bias");
            L.ln2_gain = f.tensor(p + "ln2_gain");
            L.ln2_bias = f.tensor(p + "ln2_bias");
        }
        if (cfg.d_ff > 0) {
            L.w1 = f.tensor(p + "w1");
            L.b1 = f.tensor(p + "b1");
            L.w2 = f.tensor(p + "w2");
            L.b2 = f.tensor(p + "b2");
        }
        w.layers.push_back(std::move(L));
    }
    if (cfg.layer_norm) {
        w.lnf_gain = f.tensor("lnf_gain");
        w.lnf_bias = f.tensor("lnf_bias");
    }
    w.unembedding = f.tensor("unembedding");
    return Model(cfg, std::move(w), f.header.value("metadata", std::map<std::string, std::string>{}));
}

}  // namespace headlamp
