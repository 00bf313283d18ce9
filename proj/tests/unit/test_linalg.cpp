#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "headlamp/core.hpp"
#include "headlamp/linalg.hpp"

using namespace headlamp;

namespace {

Eigen::MatrixXd gaussian(Rng& rng, int rows, int cols) {
    Eigen::MatrixXd m(rows, cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

// Canonical correlations as square roots of the eigenvalues of
// Sxx^-1 Sxy Syy^-1 Syx, on raw centered data.
std::vector<double> classical_cca(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
    const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
    const Eigen::MatrixXd sxx = xc.transpose() * xc, syy = yc.transpose() * yc, sxy = xc.transpose() * yc;
    const Eigen::MatrixXd m = sxx.inverse() * sxy * syy.inverse() * sxy.transpose();
    Eigen::EigenSolver<Eigen::MatrixXd> es(m);
    std::vector<double> out;
    for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) out.push_back(std::sqrt(std::max(0.0, es.eigenvalues()(i).real())));
    std::sort(out.rbegin(), out.rend());
    out.resize(std::min<std::size_t>(out.size(), std::min(x.cols(), y.cols())));
    return out;
}

CCAOptions exact_options() {
    CCAOptions o;
    o.pca_fraction_x = 1.0;
    o.pca_fraction_y = 1.0;
    o.ridge = 0.0;
    return o;
}

}  // namespace

TEST(Standardizer, ZScoreAndMinMax) {
    Eigen::MatrixXd x(4, 3);
    x << 1, 5, 2, 2, 5, 4, 3, 5, 6, 4, 5, 8;
    const auto z = Standardizer::zscore(x).apply(x);
    EXPECT_NEAR(z.col(0).mean(), 0.0, 1e-12);
    EXPECT_NEAR(z.col(0).squaredNorm() / 4.0, 1.0, 1e-12);
    EXPECT_TRUE(z.col(1).isZero());
    const auto mm = Standardizer::minmax(x).apply(x);
    EXPECT_DOUBLE_EQ(mm(0, 2), 0.0);
    EXPECT_DOUBLE_EQ(mm(3, 2), 1.0);
    EXPECT_DOUBLE_EQ(mm(1, 0), 1.0 / 3.0);
    EXPECT_TRUE(mm.col(1).isZero());
    EXPECT_THROW(Standardizer::zscore(x).apply(Eigen::MatrixXd::Zero(2, 2)), InputError);
}

TEST(PCA, RetainsRequestedVarianceWithFewestComponents) {
    Rng rng(3);
    Eigen::MatrixXd x = gaussian(rng, 400, 4);
    x.col(0) *= 10.0;
    x.col(1) *= 3.0;
    x.col(2) *= 1.0;
    x.col(3) *= 0.1;
    const auto p = fit_pca(x, 0.9);
    // Sample variances of the columns decide the rank independently.
    const Eigen::MatrixXd c = x.rowwise() - x.colwise().mean();
    std::vector<double> v;
    for (int j = 0; j < 4; ++j) v.push_back(c.col(j).squaredNorm() / 399.0);
    std::sort(v.rbegin(), v.rend());
    const double total = v[0] + v[1] + v[2] + v[3];
    int expect = 0;
    double acc = 0.0;
    while (acc / total < 0.9) acc += v[expect++];
    EXPECT_EQ(p.rank(), expect);
    EXPECT_GE(p.retained_fraction, 0.9);
    EXPECT_TRUE((p.components.transpose() * p.components).isIdentity(1e-10));
    for (int i = 1; i < p.rank(); ++i) EXPECT_GE(p.variances(i - 1), p.variances(i));
}

TEST(PCA, WhitenedOutputHasIdentityCovariance) {
    Rng rng(4);
    Eigen::MatrixXd x = gaussian(rng, 300, 3) * Eigen::Matrix3d::Random();
    const auto p = fit_pca(x, 1.0, true);
    ASSERT_EQ(p.rank(), 3);
    const auto z = p.transform(x);
    const Eigen::MatrixXd cov = z.transpose() * z / 299.0;
    EXPECT_TRUE(cov.isIdentity(1e-9));
}

TEST(PCA, ZeroVarianceAndBadInput) {
    EXPECT_EQ(fit_pca(Eigen::MatrixXd::Constant(10, 3, 2.0), 0.95).rank(), 0);
    EXPECT_THROW(fit_pca(Eigen::MatrixXd::Zero(1, 3), 0.95), InputError);
    EXPECT_THROW(fit_pca(Eigen::MatrixXd::Zero(4, 3), 0.0), ConfigError);
    EXPECT_THROW(fit_pca(Eigen::MatrixXd::Zero(4, 3), 1.5), ConfigError);
    // Rank-deficient input keeps only the real directions.
    Rng rng(1);
    Eigen::MatrixXd x = gaussian(rng, 50, 2);
    Eigen::MatrixXd wide(50, 3);
    wide << x, x.col(0) + x.col(1);
    EXPECT_EQ(fit_pca(wide, 1.0).rank(), 2);
}

TEST(CCA, MatchesClassicalEigenFormulation) {
    Rng rng(10);
    for (int trial = 0; trial < 10; ++trial) {
        const int n = 500, dx = 2 + trial % 3, dy = 2 + (trial + 1) % 3;
        const Eigen::MatrixXd latent = gaussian(rng, n, 2);
        Eigen::MatrixXd x = latent * Eigen::MatrixXd::Random(2, dx) + 0.5 * gaussian(rng, n, dx);
        Eigen::MatrixXd y = latent * Eigen::MatrixXd::Random(2, dy) + 0.8 * gaussian(rng, n, dy);
        auto o = exact_options();
        o.n_components = std::min(dx, dy);
        const auto r = cca(x, y, o);
        const auto oracle = classical_cca(x, y);
        ASSERT_EQ(r.correlations.size(), oracle.size());
        for (std::size_t i = 0; i < oracle.size(); ++i) EXPECT_NEAR(r.correlations[i], oracle[i], 1e-8) << i;
        EXPECT_FALSE(r.degenerate);
    }
}

TEST(CCA, LinearRelationGivesUnitCorrelation) {
    Rng rng(2);
    const Eigen::MatrixXd x = gaussian(rng, 200, 4);
    const Eigen::MatrixXd y = x * Eigen::MatrixXd::Random(4, 3);
    const auto r = cca(x, y, exact_options());
    EXPECT_NEAR(r.top1, 1.0, 1e-6);
    EXPECT_EQ(r.correlations.size(), 3u);
    ASSERT_FALSE(r.warnings.empty());
}

TEST(CCA, IndependentDataGivesSmallCorrelation) {
    Rng rng(8);
    const auto r = cca(gaussian(rng, 5000, 3), gaussian(rng, 5000, 3), exact_options());
    EXPECT_LT(r.top1, 0.08);
}

TEST(CCA, InvariantToAffineRescaling) {
    Rng rng(12);
    const Eigen::MatrixXd latent = gaussian(rng, 300, 2);
    const Eigen::MatrixXd x = latent + 0.3 * gaussian(rng, 300, 2);
    const Eigen::MatrixXd y = latent * Eigen::Matrix2d::Random() + gaussian(rng, 300, 2);
    Eigen::MatrixXd x2 = x * 7.0;
    x2.array() += 3.0;
    const auto a = cca(x, y, exact_options());
    const auto b = cca(x2, y, exact_options());
    for (std::size_t i = 0; i < a.correlations.size(); ++i) EXPECT_NEAR(a.correlations[i], b.correlations[i], 1e-9);
}

TEST(CCA, SummaryStatistics) {
    Rng rng(5);
    const Eigen::MatrixXd latent = gaussian(rng, 400, 12);
    const auto r = cca(latent + gaussian(rng, 400, 12), latent + gaussian(rng, 400, 12), exact_options());
    ASSERT_EQ(r.correlations.size(), 12u);
    EXPECT_TRUE(std::is_sorted(r.correlations.rbegin(), r.correlations.rend()));
    EXPECT_DOUBLE_EQ(r.top1, r.correlations[0]);
    double s10 = 0.0, s12 = 0.0;
    for (int i = 0; i < 12; ++i) {
        if (i < 10) s10 += r.correlations[i];
        s12 += r.correlations[i];
    }
    EXPECT_NEAR(r.top10_mean, s10 / 10.0, 1e-12);
    EXPECT_NEAR(r.top50_mean, s12 / 12.0, 1e-12);
}

TEST(CCA, DegenerateInputs) {
    Rng rng(1);
    const auto constant = cca(Eigen::MatrixXd::Ones(20, 3), gaussian(rng, 20, 2));
    EXPECT_TRUE(constant.degenerate);
    EXPECT_EQ(constant.top1, 0.0);
    EXPECT_TRUE(cca(gaussian(rng, 1, 2), gaussian(rng, 1, 2)).degenerate);
    EXPECT_THROW(cca(gaussian(rng, 4, 2), gaussian(rng, 5, 2)), InputError);
}

TEST(CCA, MeanOfTop) {
    EXPECT_EQ(mean_of_top({}, 3), 0.0);
    EXPECT_DOUBLE_EQ(mean_of_top({0.9, 0.5, 0.1}, 2), 0.7);
    EXPECT_DOUBLE_EQ(mean_of_top({0.9, 0.5, 0.1}, 50), 0.5);
}
