#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace headlamp {

/// Per-column affine rescaling fitted on one matrix and applied to others.
/// Constant columns map to 0.
struct Standardizer {
    Eigen::RowVectorXd shift;
    Eigen::RowVectorXd scale;

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const;
    static Standardizer zscore(const Eigen::MatrixXd& x);
    static Standardizer minmax(const Eigen::MatrixXd& x);
};

struct PCAProjection {
    Eigen::RowVectorXd mean;
    Eigen::MatrixXd components;  // d x r, orthonormal columns
    Eigen::VectorXd variances;   // per retained component, descending
    double retained_fraction = 0.0;
    bool whiten = false;

    int rank() const { return static_cast<int>(components.cols()); }
    Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;
};

/// Keeps the fewest leading components whose variance share reaches
/// `fraction`. Components with variance below 1e-10 of the largest are never
/// kept. Zero-variance input gives rank 0.
PCAProjection fit_pca(const Eigen::MatrixXd& x, double fraction, bool whiten = false);

struct CCAOptions {
    int n_components = 50;
    double pca_fraction_x = 0.95;
    double pca_fraction_y = 0.99;
    double ridge = 1e-6;
};

struct CCAResult {
    std::vector<double> correlations;  // descending
    double top1 = 0.0;
    double top10_mean = 0.0;
    double top50_mean = 0.0;
    int rank_x = 0;
    int rank_y = 0;
    std::size_t rows = 0;
    bool degenerate = false;
    std::vector<std::string> warnings;
};

/// X is z-scored and Y min-max scaled, both are reduced by whitened PCA, and
/// the canonical correlations are the singular values of the regularized,
/// whitened cross-covariance.
CCAResult cca(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const CCAOptions& options = {});

/// Mean of the first min(n, size) values; 0 for an empty input.
double mean_of_top(const std::vector<double>& values, std::size_t n);

}  // namespace headlamp
