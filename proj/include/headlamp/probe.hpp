#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "headlamp/core.hpp"
#include "headlamp/dynamism.hpp"
#include "headlamp/linalg.hpp"
#include "headlamp/model.hpp"

namespace headlamp {

/// Per-step final hidden states and head-score vectors of one generation.
struct TraceSeries {
    std::string sample_id;
    Eigen::MatrixXd hidden;  // steps x d_model
    Eigen::MatrixXd scores;  // steps x total heads
};

TraceSeries make_series(const GenerationTrace& trace, const FrameSeries& frames);

enum class Split : std::uint8_t { Train = 0, Validation = 1, Test = 2 };

struct PairDataset {
    int offset = 0;
    int heads_per_layer = 0;
    Eigen::MatrixXd x;  // hidden at step n
    Eigen::MatrixXd y;  // scores at step n + offset
    std::vector<Split> split;
    std::vector<std::string> sample_ids;
    std::size_t traces_without_rows = 0;

    bool empty() const { return x.rows() == 0; }
    std::vector<int> indices(Split s) const;
    Eigen::MatrixXd x_of(Split s) const;
    Eigen::MatrixXd y_of(Split s) const;
};

/// Pairs hidden[n] with scores[n + k] for every valid n of every trace, then
/// assigns a 70/20/10 train/validation/test split by seeded shuffle.
PairDataset collect_pairs(const std::vector<TraceSeries>& traces, int k, std::uint64_t seed, int heads_per_layer);

struct SweepPoint {
    int offset = 0;
    CCAResult result;
};

std::vector<SweepPoint> temporal_sweep(const std::vector<TraceSeries>& traces, const std::vector<int>& offsets,
                                       const CCAOptions& options = {});

enum class ProbeLoss { Asymmetric, SquaredError };

std::string to_string(ProbeLoss loss);
ProbeLoss parse_probe_loss(const std::string& text);

struct AsymmetricParams {
    double gamma_pos = 0.0;
    double gamma_neg = 4.0;
    double margin = 0.05;
};

struct ProbeConfig {
    /// Empty means {8d, 4d, 4d} for input width d.
    std::vector<int> hidden_dims;
    double dropout = 0.1;
    int epochs = 100;
    int batch_size = 128;
    double learning_rate = 3e-4;
    int plateau_patience = 3;
    double plateau_min_delta = 1e-4;
    double plateau_factor = 0.5;
    double clip_norm = 1.0;
    ProbeLoss loss = ProbeLoss::Asymmetric;
    AsymmetricParams asymmetric;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DenseLayer {
    Eigen::MatrixXd w;  // in x out
    Eigen::RowVectorXd b;
};

/// Multi-layer perceptron from hidden state to per-head scores. Inputs are
/// z-scored with statistics fitted on the training split.
class ProbeModel {
public:
    ProbeLoss loss = ProbeLoss::Asymmetric;
    int heads_per_layer = 1;
    double threshold = 0.5;  // classifier decision threshold
    Standardizer input;
    std::vector<DenseLayer> layers;

    int input_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.front().w.rows()); }
    int output_dim() const { return layers.empty() ? 0 : static_cast<int>(layers.back().w.cols()); }

    /// Raw network outputs for already-standardized input.
    Eigen::MatrixXd logits(const Eigen::MatrixXd& standardized) const;
    /// Probabilities (classifier) or values (regressor) for raw hidden states.
    Eigen::MatrixXd predict(const Eigen::MatrixXd& hidden) const;
};

/// Mean loss over all elements and its gradient with respect to the outputs.
double asymmetric_loss(const Eigen::MatrixXd& logits, const Eigen::MatrixXd& targets, const AsymmetricParams& p,
                       Eigen::MatrixXd* grad = nullptr);
double squared_error_loss(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& targets,
                          Eigen::MatrixXd* grad = nullptr);

/// Loss of `model` on standardized input without dropout, and optionally the
/// gradient for every layer (same shapes as the weights).
double probe_loss(const ProbeModel& model, const Eigen::MatrixXd& standardized, const Eigen::MatrixXd& targets,
                  const AsymmetricParams& params, std::vector<DenseLayer>* grads = nullptr);

struct ClassifierMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double auprc = 0.0;
    double threshold = 0.5;
    double prevalence = 0.0;
};

struct RegressorMetrics {
    double mse = 0.0;
    double mae = 0.0;
    double r2 = 0.0;
};

struct ProbeMetrics {
    ProbeLoss loss = ProbeLoss::Asymmetric;
    ClassifierMetrics classifier;
    RegressorMetrics regressor;
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_loss;
    std::vector<double> learning_rate;
};

/// Threshold maximizing F1 over the flattened (score, label) pairs; predicts
/// positive when score >= threshold.
double best_f1_threshold(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels);
ClassifierMetrics classifier_metrics(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels, double threshold);
double average_precision(const Eigen::MatrixXd& scores, const Eigen::MatrixXd& labels);
RegressorMetrics regressor_metrics(const Eigen::MatrixXd& predictions, const Eigen::MatrixXd& targets);

struct TrainedProbe {
    ProbeModel model;
    ProbeMetrics metrics;
};

TrainedProbe train_probe(const PairDataset& dataset, const ProbeConfig& config);
ProbeMetrics evaluate_probe(const ProbeModel& model, const PairDataset& dataset);

/// Heads by predicted score, highest first; lower flat index on ties.
std::vector<HeadId> predict_heads(const ProbeModel& probe, const Eigen::RowVectorXd& hidden, std::size_t top_n);

void save_probe(const ProbeModel& probe, const std::filesystem::path& path);
ProbeModel load_probe(const std::filesystem::path& path);

}  // namespace headlamp
