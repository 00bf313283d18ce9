#include "headlamp/probe.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "headlamp/weights_io.hpp"

namespace headlamp {
namespace {

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& m, const std::vector<int>& idx) {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), m.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = m.row(idx[i]);
    return out;
}

double sigmoid(double z) { return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); }

// log(sigmoid(z)) without overflow.
double log_sigmoid(double z) { return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z)); }

struct FlatPair {
    double score;
    bool positive;
};

std::vector<FlatPair> flatten_sorted(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels) {
    if (scores.rows() != labels.rows() || scores.cols() != labels.cols())
        throw InputError("classifier metrics: score and label shapes differ");
    std::vector<FlatPair> v;
    v.reserve(static_cast<std::size_t>(scores.size()));
    for (Eigen::Index i = 0; i < scores.rows(); ++i)
        for (Eigen::Index j = 0; j < scores.cols(); ++j) v.push_back({scores(i, j), labels(i, j) >= 0.5});
    std::stable_sort(v.begin(), v.end(), [](const FlatPair& a, const FlatPair& b) { return a.score > b.score; });
    return v;
}

// Forward pass keeping the per-layer inputs for backprop. `masks` holds the
// dropout multipliers of each hidden layer (empty means no dropout).
struct ForwardCache {
    std::vector<Eigen::MatrixXd> inputs;     // input to each layer
    std::vector<Eigen::MatrixXd> preact;     // pre-activation of hidden layers
    Eigen::MatrixXd output;
};

ForwardCache forward_cached(const std::vector<DenseLayer>& layers, const Eigen::MatrixXd& x,
                            const std::vector<Eigen::MatrixXd>& masks) {
    ForwardCache c;
    Eigen::MatrixXd a = x;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        c.inputs.push_back(a);
        Eigen::MatrixXd z = (a * layers[l].w).rowwise() + layers[l].b;
        if (l + 1 == layers.size()) {
            c.output = std::move(z);
            break;
        }
        c.preact.push_back(z);
        a = z.cwiseMax(0.0);
        if (!masks.empty()) a = a.cwiseProduct(masks[l]);
    }
    return c;
}

std::vector<DenseLayer> backward(const std::vector<DenseLayer>& layers, const ForwardCache& c, Eigen::MatrixXd g,
                                 const std::vector<Eigen::MatrixXd>& masks) {
    std::vector<DenseLayer> grads(layers.size());
    for (std::size_t l = layers.size(); l-- > 0;) {
        grads[l].w = c.inputs[l].transpose() * g;
        grads[l].b = g.colwise().sum();
        if (l == 0) break;
        g = g * layers[l].w.transpose();
        if (!masks.empty()) g = g.cwiseProduct(masks[l - 1]);
        g = g.cwiseProduct((c.preact[l - 1].array() > 0.0).cast<double>().matrix());
    }
    return grads;
}

double loss_and_grad(ProbeLoss kind, const Eigen::MatrixXd& out, const Eigen::MatrixXd& y, const AsymmetricParams& p,
                     Eigen::MatrixXd* grad) {
    return kind == ProbeLoss::Asymmetric ? asymmetric_loss(out, y, p, grad) : squared_error_loss(out, y, grad);
}

struct AdamState {
    std::vector<DenseLayer> m, v;
    long step = 0;
};

}  // namespace

TraceSeries make_series(const GenerationTrace& trace, const FrameSeries& frames) {
    if (trace.steps.size() != frames.size()) throw InputError("make_series: trace and frames disagree on step count");
    TraceSeries s;
    s.sample_id = trace.sample_id;
    if (frames.empty()) return s;
    const auto d = static_cast<Eigen::Index>(trace.steps.front().output.final_hidden.size());
    const auto h = static_cast<Eigen::Index>(frames.front().scores.size());
    s.hidden.resize(static_cast<Eigen::Index>(frames.size()), d);
    s.scores.resize(static_cast<Eigen::Index>(frames.size()), h);
    for (std::size_t t = 0; t < frames.size(); ++t) {
        const auto& hid = trace.steps[t].output.final_hidden;
        if (static_cast<Eigen::Index>(hid.size()) != d || static_cast<Eigen::Index>(frames[t].scores.size()) != h)
            throw InputError("make_series: ragged step records");
        for (Eigen::Index j = 0; j < d; ++j) s.hidden(static_cast<Eigen::Index>(t), j) = hid[j];
        for (Eigen::Index j = 0; j < h; ++j) s.scores(static_cast<Eigen::Index>(t), j) = frames[t].scores[j];
    }
    return s;
}

std::vector<int> PairDataset::indices(Split s) const {
    std::vector<int> out;
    for (std::size_t i = 0; i < split.size(); ++i)
        if (split[i] == s) out.push_back(static_cast<int>(i));
    return out;
}

Eigen::MatrixXd PairDataset::x_of(Split s) const { return rows_of(x, indices(s)); }
Eigen::MatrixXd PairDataset::y_of(Split s) const { return rows_of(y, indices(s)); }

PairDataset collect_pairs(const std::vector<TraceSeries>& traces, int k, std::uint64_t seed, int heads_per_layer) {
    if (k < 0) throw InputError("collect_pairs: negative offset");
    PairDataset ds;
    ds.offset = k;
    ds.heads_per_layer = heads_per_layer;
    Eigen::Index rows = 0, dx = -1, dy = -1;
    for (const auto& t : traces) {
        if (t.hidden.rows() != t.scores.rows()) throw InputError("collect_pairs: ragged trace " + t.sample_id);
        if (t.hidden.rows() == 0) continue;
        if (dx < 0) {
            dx = t.hidden.cols();
            dy = t.scores.cols();
        } else if (t.hidden.cols() != dx || t.scores.cols() != dy) {
            throw InputError("collect_pairs: traces disagree on dimensions");
        }
        rows += std::max<Eigen::Index>(t.hidden.rows() - k, 0);
    }
    ds.x.resize(rows, std::max<Eigen::Index>(dx, 0));
    ds.y.resize(rows, std::max<Eigen::Index>(dy, 0));
    Eigen::Index r = 0;
    for (const auto& t : traces) {
        const Eigen::Index n = t.hidden.rows() - k;
        if (n <= 0) {
            ++ds.traces_without_rows;
            continue;
        }
        ds.x.middleRows(r, n) = t.hidden.topRows(n);
        ds.y.middleRows(r, n) = t.scores.middleRows(k, n);
        for (Eigen::Index i = 0; i < n; ++i) ds.sample_ids.push_back(t.sample_id);
        r += n;
    }

    std::vector<int> order(static_cast<std::size_t>(rows));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(std::floor(0.7 * static_cast<double>(rows)));
    const auto n_val = static_cast<std::size_t>(std::floor(0.2 * static_cast<double>(rows)));
    ds.split.assign(order.size(), Split::Test);
    for (std::size_t i = 0; i < order.size(); ++i)
        ds.split[order[i]] = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Validation : Split::Test);
    return ds;
}

std::vector<SweepPoint> temporal_sweep(const std::vector<TraceSeries>& traces, const std::vector<int>& offsets,
                                       const CCAOptions& options) {
    std::vector<SweepPoint> out;
    for (int k : offsets) {
        const auto ds = collect_pairs(traces, k, 0, 1);
        SweepPoint p{k, {}};
        if (ds.x.rows() < 2) {
            p.result.degenerate = true;
            p.result.rows = static_cast<std::size_t>(ds.x.rows());
            p.result.warnings.push_back("fewer than two rows at offset " + std::to_string(k));
        } else {
            p.result = cca(ds.x, ds.y, options);
        }
        out.push_back(std::move(p));
    }
    return out;
}

std::string to_string(ProbeLoss loss) { return loss == ProbeLoss::Asymmetric ? "asymmetric" : "squared_error"; }

ProbeLoss parse_probe_loss(const std::string& text) {
    if (text == "asymmetric") return ProbeLoss::Asymmetric;
    if (text == "squared_error") return ProbeLoss::SquaredError;
    throw ConfigError("unknown probe loss '" + text + "' (asymmetric or squared_error)");
}

void ProbeConfig::validate() const {
    for (int d : hidden_dims)
        if (d <= 0) throw ConfigError("probe hidden dims must be positive");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("probe dropout must lie in [0, 1)");
    if (epochs <= 0 || batch_size <= 0 || plateau_patience <= 0) throw ConfigError("probe epochs, batch size and patience must be positive");
    if (!(learning_rate > 0.0) || !(clip_norm > 0.0)) throw ConfigError("probe learning rate and clip norm must be positive");
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("plateau factor must lie in (0, 1)");
    if (asymmetric.margin < 0.0 || asymmetric.margin >= 1.0 || asymmetric.gamma_neg < 0.0 || asymmetric.gamma_pos < 0.0)
        throw ConfigError("invalid asymmetric loss parameters");
}

Eigen::MatrixXd ProbeModel::logits(const Eigen::MatrixXd& standardized) const {
    return forward_cached(layers, standardized, {}).output;
}

Eigen::MatrixXd ProbeModel::predict(const Eigen::MatrixXd& hidden) const {
    if (hidden.cols() != input_dim())
        throw InputError("probe expects " + std::to_string(input_dim()) + "-dim input, got " + std::to_string(hidden.cols()));
    Eigen::MatrixXd out = logits(input.apply(hidden));
    if (loss == ProbeLoss::Asymmetric) out = out.unaryExpr([](double z) { return sigmoid(z); });
    return out;
}

double asymmetric_loss(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& targets, const AsymmetricParams& p,
                       Eigen::MatrixXd* grad) {
    if (logits.rows() != targets.rows() || logits.cols() != targets.cols()) throw InputError("loss: shape mismatch");
    const double count = static_cast<double>(logits.size());
    if (grad) grad->resize(logits.rows(), logits.cols());
    double total = 0.0;
    for (Eigen::Index i = 0; i < logits.rows(); ++i) {
        for (Eigen::Index j = 0; j < logits.cols(); ++j) {
            const double z = logits(i, j), y = targets(i, j);
            const double prob = sigmoid(z);
            const double dp_dz = prob * (1.0 - prob);
            double loss = 0.0, dz = 0.0;
            if (y > 0.0) {
                // -(1-p)^g+ log p
                const double logp = log_sigmoid(z);
                const double w = std::pow(1.0 - prob, p.gamma_pos);
                loss += y * (-w * logp);
                double dl_dz = -(1.0 - prob) * w;  // derivative of -w log p through log p
                if (p.gamma_pos > 0.0) dl_dz += p.gamma_pos * std::pow(1.0 - prob, p.gamma_pos - 1.0) * logp * dp_dz;
                dz += y * dl_dz;
            }
            if (y < 1.0) {
                // -q^g- log(1-q), q = max(p - m, 0)
                const double q = std::max(prob - p.margin, 0.0);
                if (q > 0.0) {
                    const double log1mq = std::log1p(-q);
                    const double w = std::pow(q, p.gamma_neg);
                    loss += (1.0 - y) * (-w * log1mq);
                    double dl_dq = w / (1.0 - q);
                    if (p.gamma_neg > 0.0) dl_dq -= p.gamma_neg * std::pow(q, p.gamma_neg - 1.0) * log1mq;
                    dz += (1.0 - y) * dl_dq * dp_dz;
                }
            }
            total += loss;
            if (grad) (*grad)(i, j) = dz / count;
        }
    }
    return total / count;
}

double squared_error_loss(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& targets, Eigen::MatrixXd* grad) {
    if (outputs.rows() != targets.rows() || outputs.cols() != targets.cols()) throw InputError("loss: shape mismatch");
    const Eigen::MatrixXd diff = outputs - targets;
    const double count = static_cast<double>(outputs.size());
    if (grad) *grad = 2.0 * diff / count;
    return diff.squaredNorm() / count;
}

double probe_loss(const ProbeModel& model, const Eigen::MatrixXd& standardized, const Eigen::MatrixXd& targets,
                  const AsymmetricParams& params, std::vector<DenseLayer>* grads) {
    const auto cache = forward_cached(model.layers, standardized, {});
    Eigen::MatrixXd g;
    const double loss = loss_and_grad(model.loss, cache.output, targets, params, grads ? &g : nullptr);
    if (grads) *grads = backward(model.layers, cache, std::move(g), {});
    return loss;
}

double best_f1_threshold(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels) {
    const auto v = flatten_sorted(scores, labels);
    const auto positives = static_cast<double>(std::count_if(v.begin(), v.end(), [](const FlatPair& p) { return p.positive; }));
    if (positives == 0.0) return 0.5;
    double best_f1 = -1.0, best_t = 0.5, tp = 0.0;
    for (std::size_t i = 0; i < v.size();) {
        std::size_t j = i;
        while (j < v.size() && v[j].score == v[i].score) tp += v[j++].positive;
        const double precision = tp / static_cast<double>(j);
        const double recall = tp / positives;
        const double f1 = precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        if (f1 > best_f1) {
            best_f1 = f1;
            best_t = v[i].score;
        }
        i = j;
    }
    return best_t;
}

double average_precision(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels) {
    const auto v = flatten_sorted(scores, labels);
    const auto positives = static_cast<double>(std::count_if(v.begin(), v.end(), [](const FlatPair& p) { return p.positive; }));
    if (positives == 0.0) return 0.0;
    double ap = 0.0, tp = 0.0, prev_recall = 0.0;
    for (std::size_t i = 0; i < v.size();) {
        std::size_t j = i;
        while (j < v.size() && v[j].score == v[i].score) tp += v[j++].positive;
        const double recall = tp / positives;
        ap += (recall - prev_recall) * (tp / static_cast<double>(j));
        prev_recall = recall;
        i = j;
    }
    return ap;
}

ClassifierMetrics classifier_metrics(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels, double threshold) {
    const auto v = flatten_sorted(scores, labels);
    ClassifierMetrics m;
    m.threshold = threshold;
    double tp = 0.0, fp = 0.0, positives = 0.0;
    for (const auto& p : v) {
        positives += p.positive;
        if (p.score >= threshold) (p.positive ? tp : fp) += 1.0;
    }
    m.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
    m.recall = positives > 0.0 ? tp / positives : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
    m.auprc = average_precision(scores, labels);
    m.prevalence = v.empty() ? 0.0 : positives / static_cast<double>(v.size());
    return m;
}

RegressorMetrics regressor_metrics(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& targets) {
    if (predictions.rows() != targets.rows() || predictions.cols() != targets.cols())
        throw InputError("regressor metrics: shape mismatch");
    RegressorMetrics m;
    if (targets.size() == 0) return m;
    const Eigen::MatrixXd diff = predictions - targets;
    const double count = static_cast<double>(targets.size());
    m.mse = diff.squaredNorm() / count;
    m.mae = diff.cwiseAbs().sum() / count;
    const double ss_res = diff.squaredNorm();
    const double ss_tot = (targets.rowwise() - targets.colwise().mean()).squaredNorm();
    m.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
    return m;
}

ProbeMetrics evaluate_probe(const ProbeModel& model, const PairDataset& dataset) {
    const auto x = dataset.x_of(Split::Test);
    const auto y = dataset.y_of(Split::Test);
    if (x.rows() == 0) throw InputError("evaluate_probe: empty test split");
    ProbeMetrics m;
    m.loss = model.loss;
    const auto pred = model.predict(x);
    if (model.loss == ProbeLoss::Asymmetric) m.classifier = classifier_metrics(pred, y, model.threshold);
    else m.regressor = regressor_metrics(pred, y);
    return m;
}

TrainedProbe train_probe(const PairDataset& dataset, const ProbeConfig& config) {
    config.validate();
    const auto train_idx = dataset.indices(Split::Train);
    const auto val_idx = dataset.indices(Split::Validation);
    if (train_idx.empty() || val_idx.empty() || dataset.indices(Split::Test).empty())
        throw InputError("train_probe: every split needs at least one row");

    TrainedProbe out;
    ProbeModel& model = out.model;
    model.loss = config.loss;
    model.heads_per_layer = dataset.heads_per_layer > 0 ? dataset.heads_per_layer : 1;

    const Eigen::MatrixXd x_train_raw = rows_of(dataset.x, train_idx);
    model.input = Standardizer::zscore(x_train_raw);
    const Eigen::MatrixXd x_train = model.input.apply(x_train_raw);
    const Eigen::MatrixXd y_train = rows_of(dataset.y, train_idx);
    const Eigen::MatrixXd x_val = model.input.apply(rows_of(dataset.x, val_idx));
    const Eigen::MatrixXd y_val = rows_of(dataset.y, val_idx);

    const int d_in = static_cast<int>(dataset.x.cols());
    const int d_out = static_cast<int>(dataset.y.cols());
    std::vector<int> dims = config.hidden_dims.empty() ? std::vector<int>{8 * d_in, 4 * d_in, 4 * d_in} : config.hidden_dims;
    dims.insert(dims.begin(), d_in);
    dims.push_back(d_out);

    Rng init_rng(derive_seed(config.seed, {1}));
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(dims[l]));
        DenseLayer layer;
        layer.w.resize(dims[l], dims[l + 1]);
        layer.b.resize(dims[l + 1]);
        for (Eigen::Index i = 0; i < layer.w.size(); ++i) layer.w.data()[i] = (2.0 * init_rng.uniform() - 1.0) * bound;
        for (Eigen::Index i = 0; i < layer.b.size(); ++i) layer.b(i) = (2.0 * init_rng.uniform() - 1.0) * bound;
        model.layers.push_back(std::move(layer));
    }

    AdamState adam;
    for (const auto& l : model.layers) {
        adam.m.push_back({Eigen::MatrixXd::Zero(l.w.rows(), l.w.cols()), Eigen::RowVectorXd::Zero(l.b.size())});
        adam.v.push_back(adam.m.back());
    }
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    Rng shuffle_rng(derive_seed(config.seed, {2}));
    Rng dropout_rng(derive_seed(config.seed, {3}));
    const double keep = 1.0 - config.dropout;
    double lr = config.learning_rate;
    double best_val = std::numeric_limits<double>::infinity();
    int bad_epochs = 0;

    std::vector<int> order(train_idx.size());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            const std::vector<int> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(end));
            const Eigen::MatrixXd xb = rows_of(x_train, batch);
            const Eigen::MatrixXd yb = rows_of(y_train, batch);

            std::vector<Eigen::MatrixXd> masks;
            if (config.dropout > 0.0) {
                for (std::size_t l = 0; l + 1 < model.layers.size(); ++l) {
                    Eigen::MatrixXd mask(xb.rows(), model.layers[l].w.cols());
                    for (Eigen::Index i = 0; i < mask.size(); ++i)
                        mask.data()[i] = dropout_rng.uniform() < keep ? 1.0 / keep : 0.0;
                    masks.push_back(std::move(mask));
                }
            }
            const auto cache = forward_cached(model.layers, xb, masks);
            Eigen::MatrixXd g;
            const double loss = loss_and_grad(config.loss, cache.output, yb, config.asymmetric, &g);
            if (!std::isfinite(loss))
                throw Error("train_probe: non-finite loss at epoch " + std::to_string(epoch) + ", batch starting at row " +
                            std::to_string(start) + " (lr " + std::to_string(lr) + ")");
            epoch_loss += loss * static_cast<double>(batch.size());
            auto grads = backward(model.layers, cache, std::move(g), masks);

            double norm2 = 0.0;
            for (const auto& gl : grads) norm2 += gl.w.squaredNorm() + gl.b.squaredNorm();
            const double norm = std::sqrt(norm2);
            const double clip = norm > config.clip_norm ? config.clip_norm / (norm + 1e-6) : 1.0;

            ++adam.step;
            const double c1 = 1.0 - std::pow(beta1, static_cast<double>(adam.step));
            const double c2 = 1.0 - std::pow(beta2, static_cast<double>(adam.step));
            for (std::size_t l = 0; l < model.layers.size(); ++l) {
                auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
                    m = beta1 * m + (1.0 - beta1) * (clip * grad);
                    v = beta2 * v + (1.0 - beta2) * (clip * grad).cwiseAbs2();
                    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
                };
                update(model.layers[l].w, adam.m[l].w, adam.v[l].w, grads[l].w);
                update(model.layers[l].b, adam.m[l].b, adam.v[l].b, grads[l].b);
            }
        }
        out.metrics.train_loss.push_back(epoch_loss / static_cast<double>(order.size()));
        out.metrics.learning_rate.push_back(lr);

        const double val = loss_and_grad(config.loss, model.logits(x_val), y_val, config.asymmetric, nullptr);
        out.metrics.val_loss.push_back(val);
        if (!std::isfinite(val)) throw Error("train_probe: non-finite validation loss at epoch " + std::to_string(epoch));
        if (val < best_val - config.plateau_min_delta) {
            best_val = val;
            bad_epochs = 0;
        } else if (++bad_epochs >= config.plateau_patience) {
            lr *= config.plateau_factor;
            bad_epochs = 0;
        }
    }

    if (model.loss == ProbeLoss::Asymmetric)
        model.threshold = best_f1_threshold(model.predict(rows_of(dataset.x, val_idx)), y_val);
    const auto train_loss = std::move(out.metrics.train_loss);
    const auto val_loss = std::move(out.metrics.val_loss);
    const auto lrs = std::move(out.metrics.learning_rate);
    out.metrics = evaluate_probe(model, dataset);
    out.metrics.train_loss = train_loss;
    out.metrics.val_loss = val_loss;
    out.metrics.learning_rate = lrs;
    return out;
}

std::vector<HeadId> predict_heads(const ProbeModel& probe, const Eigen::RowVectorXd& hidden, std::size_t top_n) {
    const Eigen::RowVectorXd scores = probe.predict(hidden).row(0);
    std::vector<int> order(static_cast<std::size_t>(scores.size()));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores(a) > scores(b); });
    std::vector<HeadId> out;
    for (std::size_t i = 0; i < top_n && i < order.size(); ++i)
        out.push_back({order[i] / probe.heads_per_layer, order[i] % probe.heads_per_layer});
    return out;
}

void save_probe(const ProbeModel& probe, const std::filesystem::path& path) {
    WeightFile f;
    f.kind = WeightFile::kProbe;
    f.header = {{"format", "probe"},
                {"loss", to_string(probe.loss)},
                {"heads_per_layer", probe.heads_per_layer},
                {"threshold", probe.threshold},
                {"n_layers", probe.layers.size()}};
    f.tensors.emplace_back("input.shift", probe.input.shift);
    f.tensors.emplace_back("input.scale", probe.input.scale);
    for (std::size_t l = 0; l < probe.layers.size(); ++l) {
        f.tensors.emplace_back("layer" + std::to_string(l) + ".w", probe.layers[l].w);
        f.tensors.emplace_back("layer" + std::to_string(l) + ".b", probe.layers[l].b);
    }
    write_weight_file(path, f);
}

ProbeModel load_probe(const std::filesystem::path& path) {
    const auto f = read_weight_file(path);
    if (f.kind != WeightFile::kProbe) throw FormatError(path.string() + ": not a probe weight file");
    ProbeModel p;
    try {
        p.loss = parse_probe_loss(f.header.at("loss").get<std::string>());
        p.heads_per_layer = f.header.at("heads_per_layer").get<int>();
        p.threshold = f.header.at("threshold").get<double>();
        const auto n = f.header.at("n_layers").get<std::size_t>();
        p.input.shift = f.tensor("input.shift");
        p.input.scale = f.tensor("input.scale");
        for (std::size_t l = 0; l < n; ++l) {
            DenseLayer layer;
            layer.w = f.tensor("layer" + std::to_string(l) + ".w");
            layer.b = f.tensor("layer" + std::to_string(l) + ".b");
            p.layers.push_back(std::move(layer));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": bad probe header: " + e.what());
    } catch (const ConfigError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
    return p;
}

}  // namespace headlamp
