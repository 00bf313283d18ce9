#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "headlamp/probe.hpp"
#include "test_util.hpp"

using namespace headlamp;

namespace {

double sig(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Eigen::MatrixXd gaussian(Rng& rng, int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

PairDataset split_dataset(Eigen::MatrixXd x, Eigen::MatrixXd y, int heads_per_layer = 2) {
    PairDataset ds;
    ds.heads_per_layer = heads_per_layer;
    ds.x = std::move(x);
    ds.y = std::move(y);
    for (Eigen::Index i = 0; i < ds.x.rows(); ++i) {
        const auto r = i % 10;
        ds.split.push_back(r < 7 ? Split::Train : (r < 9 ? Split::Validation : Split::Test));
    }
    return ds;
}

// Labels from fixed hyperplanes through the origin.
PairDataset separable(std::uint64_t seed, int rows) {
    Rng rng(seed);
    const Eigen::MatrixXd x = gaussian(rng, rows, 6);
    const Eigen::MatrixXd w = gaussian(rng, 6, 4);
    Eigen::MatrixXd y = ((x * w).array() > 0.0).cast<double>();
    return split_dataset(x, y);
}

ProbeConfig small_config(ProbeLoss loss) {
    ProbeConfig c;
    c.hidden_dims = {32};
    c.dropout = 0.0;
    c.epochs = 60;
    c.batch_size = 32;
    c.learning_rate = 3e-3;
    c.loss = loss;
    c.asymmetric.gamma_neg = 0.0;
    c.asymmetric.margin = 0.0;
    c.seed = 5;
    return c;
}

}  // namespace

TEST(ProbeLoss, AsymmetricHandValues) {
    AsymmetricParams p;  // gamma+ 0, gamma- 4, margin 0.05
    Eigen::MatrixXd z(1, 2), y(1, 2);
    z << 0.3, 1.2;
    y << 1.0, 0.0;
    const double pos = -std::log(sig(0.3));
    const double q = sig(1.2) - 0.05;
    const double neg = -std::pow(q, 4.0) * std::log(1.0 - q);
    EXPECT_NEAR(asymmetric_loss(z, y, p), (pos + neg) / 2.0, 1e-12);

    // Negatives under the margin cost nothing.
    Eigen::MatrixXd lo(1, 1), zero(1, 1);
    lo << std::log(0.04 / 0.96);
    zero << 0.0;
    EXPECT_EQ(asymmetric_loss(lo, zero, p), 0.0);

    // With both focusing terms off and no margin this is binary cross-entropy.
    AsymmetricParams bce{0.0, 0.0, 0.0};
    Eigen::MatrixXd y2(1, 2);
    y2 << 0.0, 1.0;
    const double expect = (-std::log(1.0 - sig(0.3)) - std::log(sig(1.2))) / 2.0;
    EXPECT_NEAR(asymmetric_loss(z, y2, bce), expect, 1e-12);
}

TEST(ProbeLoss, GradientsMatchFiniteDifferences) {
    Rng rng(9);
    for (const AsymmetricParams& p : {AsymmetricParams{}, AsymmetricParams{1.0, 2.0, 0.1}, AsymmetricParams{0, 0, 0}}) {
        Eigen::MatrixXd z = 2.0 * gaussian(rng, 5, 4);
        Eigen::MatrixXd y(5, 4);
        for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform() < 0.4 ? 1.0 : 0.0;
        Eigen::MatrixXd g;
        asymmetric_loss(z, y, p, &g);
        Eigen::MatrixXd g2;
        squared_error_loss(z, y, &g2);
        const double h = 1e-6;
        for (Eigen::Index i = 0; i < z.size(); ++i) {
            Eigen::MatrixXd zp = z, zm = z;
            zp.data()[i] += h;
            zm.data()[i] -= h;
            EXPECT_NEAR(g.data()[i], (asymmetric_loss(zp, y, p) - asymmetric_loss(zm, y, p)) / (2 * h), 1e-7);
            EXPECT_NEAR(g2.data()[i], (squared_error_loss(zp, y) - squared_error_loss(zm, y)) / (2 * h), 1e-7);
        }
    }
    EXPECT_THROW(squared_error_loss(Eigen::MatrixXd(1, 2), Eigen::MatrixXd(2, 1)), InputError);
}

TEST(ProbeLoss, NetworkGradientsMatchFiniteDifferences) {
    Rng rng(4);
    for (auto loss : {ProbeLoss::Asymmetric, ProbeLoss::SquaredError}) {
        ProbeModel m;
        m.loss = loss;
        for (auto [in, out] : std::vector<std::pair<int, int>>{{3, 5}, {5, 4}, {4, 2}})
            m.layers.push_back({0.7 * gaussian(rng, in, out), 0.1 * gaussian(rng, 1, out)});
        const Eigen::MatrixXd x = gaussian(rng, 6, 3);
        Eigen::MatrixXd y(6, 2);
        for (Eigen::Index i = 0; i < y.size(); ++i) y.data()[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
        const AsymmetricParams p{0.5, 2.0, 0.05};
        std::vector<DenseLayer> grads;
        probe_loss(m, x, y, p, &grads);
        ASSERT_EQ(grads.size(), 3u);
        const double h = 1e-6;
        for (std::size_t l = 0; l < m.layers.size(); ++l) {
            for (Eigen::Index i = 0; i < m.layers[l].w.size(); ++i) {
                auto mp = m, mm = m;
                mp.layers[l].w.data()[i] += h;
                mm.layers[l].w.data()[i] -= h;
                const double fd = (probe_loss(mp, x, y, p) - probe_loss(mm, x, y, p)) / (2 * h);
                EXPECT_NEAR(grads[l].w.data()[i], fd, 1e-6) << "layer " << l << " w " << i;
            }
            for (Eigen::Index i = 0; i < m.layers[l].b.size(); ++i) {
                auto mp = m, mm = m;
                mp.layers[l].b(i) += h;
                mm.layers[l].b(i) -= h;
                const double fd = (probe_loss(mp, x, y, p) - probe_loss(mm, x, y, p)) / (2 * h);
                EXPECT_NEAR(grads[l].b(i), fd, 1e-6) << "layer " << l << " b " << i;
            }
        }
    }
}

TEST(ProbeMetrics, AveragePrecisionHandExample) {
    Eigen::MatrixXd s(1, 4), l(1, 4);
    s << 0.9, 0.8, 0.7, 0.6;
    l << 1, 0, 1, 0;
    EXPECT_NEAR(average_precision(s, l), (1.0 + 2.0 / 3.0) / 2.0, 1e-12);
    l << 0, 0, 0, 0;
    EXPECT_EQ(average_precision(s, l), 0.0);
    // A tied group counts as one cut.
    s << 0.5, 0.5, 0.5, 0.5;
    l << 1, 0, 1, 0;
    EXPECT_NEAR(average_precision(s, l), 0.5, 1e-12);
}

TEST(ProbeMetrics, BestThresholdMatchesBruteForce) {
    Rng rng(6);
    for (int trial = 0; trial < 50; ++trial) {
        Eigen::MatrixXd s(4, 5), l(4, 5);
        for (Eigen::Index i = 0; i < s.size(); ++i) {
            s.data()[i] = std::round(rng.uniform() * 10.0) / 10.0;
            l.data()[i] = rng.uniform() < s.data()[i] ? 1.0 : 0.0;
        }
        if (l.sum() == 0.0) continue;
        const double t = best_f1_threshold(s, l);
        double best = 0.0;
        for (Eigen::Index i = 0; i < s.size(); ++i) best = std::max(best, classifier_metrics(s, l, s.data()[i]).f1);
        EXPECT_NEAR(classifier_metrics(s, l, t).f1, best, 1e-12);
    }
}

TEST(ProbeMetrics, ClassifierAndRegressorHandValues) {
    Eigen::MatrixXd s(1, 4), l(1, 4);
    s << 0.9, 0.2, 0.6, 0.4;
    l << 1, 1, 0, 0;
    const auto m = classifier_metrics(s, l, 0.5);
    EXPECT_DOUBLE_EQ(m.precision, 0.5);
    EXPECT_DOUBLE_EQ(m.recall, 0.5);
    EXPECT_DOUBLE_EQ(m.f1, 0.5);
    EXPECT_DOUBLE_EQ(m.prevalence, 0.5);

    Eigen::MatrixXd p(3, 1), t(3, 1);
    p << 1, 2, 4;
    t << 1, 3, 5;
    const auto r = regressor_metrics(p, t);
    EXPECT_DOUBLE_EQ(r.mse, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.mae, 2.0 / 3.0);
    EXPECT_DOUBLE_EQ(r.r2, 1.0 - 2.0 / 8.0);
}

TEST(PairData, OffsetPairingAndSplit) {
    std::vector<TraceSeries> traces;
    for (int t = 0; t < 3; ++t) {
        TraceSeries s;
        s.sample_id = "s" + std::to_string(t);
        const int steps = 4 + t * 10;
        s.hidden.resize(steps, 2);
        s.scores.resize(steps, 3);
        for (int i = 0; i < steps; ++i) {
            s.hidden.row(i) << t, i;
            s.scores.row(i) << t, i, -i;
        }
        traces.push_back(s);
    }
    const int k = 5;
    const auto ds = collect_pairs(traces, k, 1, 3);
    // Steps 4, 14, 24 give 0, 9, 19 rows.
    ASSERT_EQ(ds.x.rows(), 28);
    EXPECT_EQ(ds.traces_without_rows, 1u);
    for (Eigen::Index r = 0; r < ds.x.rows(); ++r) {
        EXPECT_EQ(ds.y(r, 0), ds.x(r, 0));
        EXPECT_EQ(ds.y(r, 1), ds.x(r, 1) + k);
    }
    EXPECT_EQ(ds.indices(Split::Train).size(), 19u);
    EXPECT_EQ(ds.indices(Split::Validation).size(), 5u);
    EXPECT_EQ(ds.indices(Split::Test).size(), 4u);
    EXPECT_EQ(collect_pairs(traces, k, 1, 3).split, ds.split);
    EXPECT_THROW(collect_pairs(traces, -1, 1, 3), InputError);
}

TEST(Probe, SeparableClassifierReachesHighF1) {
    const auto ds = separable(1, 3000);
    const auto trained = train_probe(ds, small_config(ProbeLoss::Asymmetric));
    EXPECT_GE(trained.metrics.classifier.f1, 0.95);
    EXPECT_GE(trained.metrics.classifier.auprc, 0.95);
    EXPECT_EQ(trained.metrics.train_loss.size(), 60u);
    EXPECT_LT(trained.metrics.train_loss.back(), trained.metrics.train_loss.front());
}

TEST(Probe, SmoothRegressionReachesHighR2) {
    Rng rng(2);
    const Eigen::MatrixXd x = gaussian(rng, 3000, 5);
    const Eigen::MatrixXd w = gaussian(rng, 5, 3);
    const Eigen::MatrixXd y = (x * w / 3.0).unaryExpr([](double v) { return sig(v); });
    const auto trained = train_probe(split_dataset(x, y), small_config(ProbeLoss::SquaredError));
    EXPECT_GE(trained.metrics.regressor.r2, 0.95);
}

TEST(Probe, TrainingIsDeterministicAndRoundTrips) {
    const auto ds = separable(3, 600);
    auto cfg = small_config(ProbeLoss::Asymmetric);
    cfg.epochs = 5;
    cfg.dropout = 0.1;
    const auto a = train_probe(ds, cfg);
    const auto b = train_probe(ds, cfg);
    ASSERT_EQ(a.model.layers.size(), b.model.layers.size());
    for (std::size_t l = 0; l < a.model.layers.size(); ++l) EXPECT_EQ(a.model.layers[l].w, b.model.layers[l].w);
    EXPECT_EQ(a.model.threshold, b.model.threshold);

    const auto path = testutil::temp_dir("probe") / "probe.hlmp";
    save_probe(a.model, path);
    const auto loaded = load_probe(path);
    EXPECT_EQ(loaded.loss, a.model.loss);
    EXPECT_EQ(loaded.threshold, a.model.threshold);
    EXPECT_EQ(loaded.heads_per_layer, 2);
    // Tensors are stored as float32.
    ASSERT_EQ(loaded.layers.size(), a.model.layers.size());
    for (std::size_t l = 0; l < a.model.layers.size(); ++l)
        EXPECT_EQ(loaded.layers[l].w, a.model.layers[l].w.cast<float>().cast<double>());
    const auto x = ds.x_of(Split::Test);
    EXPECT_LT((loaded.predict(x) - a.model.predict(x)).cwiseAbs().maxCoeff(), 1e-5);
    EXPECT_THROW(loaded.predict(Eigen::MatrixXd::Zero(1, 3)), InputError);
}

TEST(Probe, PredictHeadsOrdersByScore) {
    ProbeModel m;
    m.loss = ProbeLoss::SquaredError;
    m.heads_per_layer = 2;
    m.input.shift = Eigen::RowVectorXd::Zero(1);
    m.input.scale = Eigen::RowVectorXd::Ones(1);
    DenseLayer layer{Eigen::MatrixXd(1, 4), Eigen::RowVectorXd::Zero(4)};
    layer.w << 0.1, 0.7, 0.7, 0.3;
    m.layers.push_back(layer);
    const auto heads = predict_heads(m, Eigen::RowVectorXd::Ones(1), 3);
    const std::vector<HeadId> expect{{0, 1}, {1, 0}, {1, 1}};
    EXPECT_EQ(heads, expect);
}

TEST(Probe, ConfigValidation) {
    ProbeConfig c;
    EXPECT_NO_THROW(c.validate());
    c.dropout = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.hidden_dims = {0};
    EXPECT_THROW(c.validate(), ConfigError);
    c = {};
    c.plateau_factor = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(parse_probe_loss("hinge"), ConfigError);
    EXPECT_EQ(parse_probe_loss(to_string(ProbeLoss::SquaredError)), ProbeLoss::SquaredError);
}
