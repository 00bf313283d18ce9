#include "headlamp/linalg.hpp"

#include <algorithm>
#include <cmath>

#include "headlamp/core.hpp"

namespace headlamp {

Eigen::MatrixXd Standardizer::apply(const Eigen::MatrixXd& x) const {
    if (x.cols() != shift.size()) throw InputError("standardizer: column count mismatch");
    Eigen::MatrixXd out = x.rowwise() - shift;
    for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j) *= scale(j) > 0.0 ? 1.0 / scale(j) : 0.0;
    return out;
}

Standardizer Standardizer::zscore(const Eigen::MatrixXd& x) {
    Standardizer s;
    s.shift = x.colwise().mean();
    s.scale.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
        const double var = (x.col(j).array() - s.shift(j)).square().sum() / std::max<Eigen::Index>(x.rows(), 1);
        s.scale(j) = std::sqrt(var);
    }
    return s;
}

Standardizer Standardizer::minmax(const Eigen::MatrixXd& x) {
    Standardizer s;
    s.shift = x.colwise().minCoeff();
    s.scale = x.colwise().maxCoeff() - s.shift;
    return s;
}

Eigen::MatrixXd PCAProjection::transform(const Eigen::MatrixXd& x) const {
    if (x.cols() != mean.size()) throw InputError("pca: column count mismatch");
    Eigen::MatrixXd z = (x.rowwise() - mean) * components;
    if (whiten)
        for (Eigen::Index j = 0; j < z.cols(); ++j) z.col(j) /= std::sqrt(variances(j));
    return z;
}

PCAProjection fit_pca(const Eigen::MatrixXd& x, double fraction, bool whiten) {
    if (x.rows() < 2) throw InputError("pca: need at least two rows");
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("pca: variance fraction must lie in (0, 1]");
    PCAProjection p;
    p.whiten = whiten;
    p.mean = x.colwise().mean();
    const Eigen::MatrixXd centered = x.rowwise() - p.mean;
    Eigen::BDCSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    const Eigen::VectorXd var = svd.singularValues().array().square() / static_cast<double>(x.rows() - 1);

    const double total = var.sum();
    const double floor = var.size() ? var(0) * 1e-10 : 0.0;
    int keep = 0;
    double acc = 0.0;
    if (total > 0.0) {
        for (Eigen::Index i = 0; i < var.size(); ++i) {
            if (var(i) <= floor) break;
            acc += var(i);
            ++keep;
            if (acc / total >= fraction - 1e-12) break;
        }
    }
    p.components = svd.matrixV().leftCols(keep);
    p.variances = var.head(keep);
    p.retained_fraction = total > 0.0 ? acc / total : 0.0;
    return p;
}

double mean_of_top(const std::vector<double>& values, std::size_t n) {
    const std::size_t m = std::min(n, values.size());
    if (m == 0) return 0.0;
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += values[i];
    return s / static_cast<double>(m);
}

namespace {

Eigen::MatrixXd inverse_sqrt(const Eigen::MatrixXd& c) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(c);
    const Eigen::VectorXd inv = es.eigenvalues().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

CCAResult cca(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const CCAOptions& options) {
    if (x.rows() != y.rows()) throw InputError("cca: X and Y row counts differ");
    if (options.n_components < 1) throw ConfigError("cca: n_components must be positive");
    CCAResult r;
    r.rows = static_cast<std::size_t>(x.rows());
    if (x.rows() < 2) {
        r.degenerate = true;
        r.warnings.push_back("fewer than two rows");
        return r;
    }

    const Eigen::MatrixXd xs = Standardizer::zscore(x).apply(x);
    const Eigen::MatrixXd ys = Standardizer::minmax(y).apply(y);
    const auto px = fit_pca(xs, options.pca_fraction_x, true);
    const auto py = fit_pca(ys, options.pca_fraction_y, true);
    r.rank_x = px.rank();
    r.rank_y = py.rank();
    if (r.rank_x == 0 || r.rank_y == 0) {
        r.degenerate = true;
        r.warnings.push_back(r.rank_x == 0 ? "X has zero variance" : "Y has zero variance");
        return r;
    }

    const int n_comp = std::min({options.n_components, r.rank_x, r.rank_y});
    if (n_comp < options.n_components)
        r.warnings.push_back("n_components clamped from " + std::to_string(options.n_components) + " to " +
                             std::to_string(n_comp));

    const Eigen::MatrixXd a = px.transform(xs);
    const Eigen::MatrixXd b = py.transform(ys);
    const double denom = static_cast<double>(x.rows() - 1);
    Eigen::MatrixXd cxx = a.transpose() * a / denom;
    Eigen::MatrixXd cyy = b.transpose() * b / denom;
    const Eigen::MatrixXd cxy = a.transpose() * b / denom;
    cxx.diagonal().array() += options.ridge;
    cyy.diagonal().array() += options.ridge;

    const Eigen::MatrixXd t = inverse_sqrt(cxx) * cxy * inverse_sqrt(cyy);
    Eigen::BDCSVD<Eigen::MatrixXd> svd(t);
    const auto& sv = svd.singularValues();
    for (int i = 0; i < n_comp && i < sv.size(); ++i) r.correlations.push_back(std::clamp(sv(i), 0.0, 1.0));
    r.top1 = r.correlations.empty() ? 0.0 : r.correlations.front();
    r.top10_mean = mean_of_top(r.correlations, 10);
    r.top50_mean = mean_of_top(r.correlations, 50);
    return r;
}

}  // namespace headlamp
