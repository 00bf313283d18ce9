#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "headlamp/core.hpp"

namespace headlamp {

enum class PositionalScheme { SinusoidalAbsolute };

struct ModelConfig {
    int vocab_size = 257;
    int d_model = 64;
    int n_layers = 2;
    int n_heads_per_layer = 4;
    int head_dim = 16;
    int max_context = 512;
    PositionalScheme positional_scheme = PositionalScheme::SinusoidalAbsolute;
    std::uint64_t init_seed = 0;

    /// MLP width; 0 builds attention-only blocks.
    int d_ff = 0;
    /// Pre-norm layer norms plus a final norm.
    bool layer_norm = true;
    /// The sinusoidal encoding occupies residual dims [pos_offset, pos_offset + pos_dims).
    /// pos_dims = 0 means the whole residual stream.
    int pos_offset = 0;
    int pos_dims = 0;
    /// Generation stops after emitting this token; -1 disables.
    Token eos_token = -1;

    /// Throws ConfigError when an invariant is violated.
    void validate() const;
    int effective_pos_dims() const { return pos_dims == 0 ? d_model : pos_dims; }
    bool operator==(const ModelConfig&) const = default;
};

struct Intervention {
    HeadSet masked_heads;
    /// Positions keys may be read from; absent means every position is visible.
    std::optional<std::vector<int>> visible_positions;
};

/// Output of one forward pass, observed at the final input position.
struct StepOutput {
    std::vector<double> logits;
    /// Attention of the final query position, indexed by flat head index.
    std::vector<std::vector<double>> attn_rows;
    /// True for heads whose final query had no visible key (the row is all zeros).
    std::vector<bool> degenerate_rows;
    std::vector<double> final_hidden;
    Token predicted_token = -1;
    int heads_per_layer = 0;

    const std::vector<double>& row(HeadId h) const { return attn_rows.at(h.layer * heads_per_layer + h.head); }
};

/// Anything that can run an instrumented forward pass: the in-process model or a
/// remote runtime reached over the bridge protocol.
class Backend {
public:
    virtual ~Backend() = default;
    virtual ModelShape shape() const = 0;
    virtual int max_context() const = 0;
    virtual Token eos_token() const { return -1; }
    virtual StepOutput forward(std::span<const Token> tokens, const Intervention& intervention) const = 0;
};

struct LayerWeights {
    // d_model x d_model; head h owns columns [h*head_dim, (h+1)*head_dim) of wq/wk/wv
    // and the same rows of wo.
    Eigen::MatrixXd wq, wk, wv, wo;
    Eigen::RowVectorXd ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    Eigen::MatrixXd w1, w2;
    Eigen::RowVectorXd b1, b2;
};

struct ModelWeights {
    Eigen::MatrixXd embedding;    // vocab x d_model
    std::vector<LayerWeights> layers;
    Eigen::RowVectorXd lnf_gain, lnf_bias;
    Eigen::MatrixXd unembedding;  // d_model x vocab
};

class Model final : public Backend {
public:
    /// Weights are rounded to float32 on construction so that a saved model
    /// reloads bit-identically.
    Model(ModelConfig config, ModelWeights weights, std::map<std::string, std::string> metadata = {});

    const ModelConfig& config() const { return config_; }
    const ModelWeights& weights() const { return weights_; }
    const std::map<std::string, std::string>& metadata() const { return metadata_; }

    ModelShape shape() const override;
    int max_context() const override { return config_.max_context; }
    Token eos_token() const override { return config_.eos_token; }
    StepOutput forward(std::span<const Token> tokens, const Intervention& intervention) const override;

    /// Sinusoidal encoding of one position, pos_dims wide.
    Eigen::RowVectorXd positional_encoding(int position) const;

private:
    ModelConfig config_;
    ModelWeights weights_;
    std::map<std::string, std::string> metadata_;
    Eigen::MatrixXd pe_table_;  // max_context x pos_dims
};

/// Seeded random weights; equal configs give bit-identical models.
Model build_model(const ModelConfig& config);

struct InductionOptions {
    int heads_per_layer = 32;
    int max_context = 1024;
    int pos_dims = 16;
    /// Logit gain of the copied token relative to the direct token path.
    double copy_gain = 4.0;
};

/// Two attention-only layers wired analytically as a previous-token head
/// (L0-H0) feeding an induction head (L1-H0). Every other head is a seeded
/// filler head that writes only into residual dims the circuit never reads.
/// The seed draws the token-embedding rotation and the filler weights.
Model build_induction_model(int vocab_size, std::uint64_t seed, const InductionOptions& options = {});

/// Heads recorded in the model metadata ("induction_head", "prev_token_head").
std::optional<HeadId> documented_head(const Model& model, const std::string& key);
HeadId parse_head(const std::string& text);

struct GenerationStep {
    StepOutput output;
    Token accepted = -1;
    Intervention intervention;
};

struct GenerationTrace {
    Tokens prompt;
    std::vector<GenerationStep> steps;
    std::string sample_id;
    std::uint64_t seed = 0;
    bool overflow = false;
    bool stopped_on_eos = false;

    Tokens generated() const;
    /// prompt ++ accepted tokens 0..t-1
    Tokens input_at(std::size_t t) const;
};

using InterventionProvider = std::function<Intervention(std::size_t step, std::span<const Token> input)>;

/// Greedy decoding. Stops after max_new tokens or an EOS token; running out of
/// context mid-generation truncates the trace and sets the overflow flag.
GenerationTrace generate(const Backend& backend, std::span<const Token> prompt, std::size_t max_new,
                         const InterventionProvider& provider = {}, std::string sample_id = {},
                         std::uint64_t seed = 0);

void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

}  // namespace headlamp
