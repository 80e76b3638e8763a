#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "contab/common.hpp"

namespace contab {

/// Architecture. Zero-valued widths resolve to their defaults in resolved().
struct ModelConfig {
    std::size_t n_features = 0;
    std::size_t token_dim = 16;
    std::size_t n_layers = 3;
    std::size_t n_heads = 2;
    std::size_t ff_dim = 0;      // 0 -> 4 * token_dim
    std::size_t z_dim = 0;       // 0 -> max(1, n_features / 2)
    std::size_t mlp_hidden = 0;  // 0 -> z_dim
    std::size_t n_classes = 2;

    ModelConfig resolved() const;
    void validate() const;
    std::size_t sequence_length() const { return n_features + 1; }
    std::size_t head_dim() const { return token_dim / n_heads; }

    nlohmann::json to_json() const;
    static ModelConfig from_json(const nlohmann::json& j);
    bool operator==(const ModelConfig&) const = default;
};

struct BlockParameters {
    Matrix ln1_gain, ln1_bias;  // 1 x T
    Matrix wq, bq, wk, bk, wv, bv, wo, bo;
    Matrix ln2_gain, ln2_bias;
    Matrix ff1_w, ff1_b;  // T x F, 1 x F
    Matrix ff2_w, ff2_b;  // F x T, 1 x T
};

struct TensorRef {
    std::string name;
    Matrix* value;
};

struct ConstTensorRef {
    std::string name;
    const Matrix* value;
};

/// Every learnable tensor of the autoencoder plus both heads. Gradients and
/// optimizer accumulators reuse this type.
struct ModelParameters {
    Matrix input_weights;     // 1 x M, per-feature multiplicative weights
    Matrix token_scale;       // M x T
    Matrix token_bias;        // M x T
    Matrix column_embedding;  // M x T
    Matrix summary_token;     // 1 x T
    std::vector<BlockParameters> blocks;
    Matrix proj_w, proj_b;  // T x Z, 1 x Z
    Matrix dec_w, dec_b;    // Z x M, 1 x M
    Matrix cls_w1, cls_b1;  // Z x H, 1 x H
    Matrix cls_w2, cls_b2;  // H x C, 1 x C
    Matrix ft_w, ft_b;      // Z x C, 1 x C

    static ModelParameters zeros(const ModelConfig& config);
    static ModelParameters initialize(const ModelConfig& config, std::mt19937_64& rng);

    std::vector<TensorRef> tensors();
    std::vector<ConstTensorRef> tensors() const;

    void set_zero();
    bool all_finite() const;
};

/// Coarse grouping of tensor names: input_weights, tokenizer, encoder,
/// projection, decoder, classifier, finetune_head.
std::string parameter_group(std::string_view tensor_name);
std::vector<std::string> parameter_groups();

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

struct LayerNormCache {
    Matrix normalized;
    Eigen::VectorXd inv_std;
};

struct BlockCache {
    Matrix input;
    LayerNormCache ln1;
    Matrix attn_in, q, k, v;
    std::vector<Matrix> probs;  // [sample * n_heads + head], S x S
    Matrix context;
    Matrix mid;
    LayerNormCache ln2;
    Matrix ff_in, ff_pre, ff_act;
};

struct EncoderCache {
    Matrix weighted_input;  // B x M
    std::vector<BlockCache> blocks;
    Matrix summary;  // B x T, final state of the summary token
};

struct ClassifierCache {
    Matrix z, pre, hidden;
};

/// x o W, row-wise.
Matrix apply_input_weights(const Matrix& x, const Matrix& weights);
Eigen::VectorXd apply_input_weights(const Eigen::VectorXd& x, const Eigen::VectorXd& weights);

/// Maps weighted inputs (B x M) to bottleneck embeddings (B x z_dim).
Matrix encode(const ModelParameters& params, const ModelConfig& config, const Matrix& weighted_input,
              EncoderCache* cache = nullptr);

/// Accumulates parameter gradients for d(loss)/dz into `grads`. When
/// `d_weighted_input` is non-null it receives d(loss)/d(weighted input).
void encode_backward(const ModelParameters& params, const ModelConfig& config, const EncoderCache& cache,
                     const Matrix& dz, ModelParameters& grads, Matrix* d_weighted_input = nullptr);

/// sigmoid(z A + b).
Matrix decode(const ModelParameters& params, const Matrix& z);

/// Shared two-layer MLP head, z -> logits.
Matrix classify(const ModelParameters& params, const Matrix& z, ClassifierCache* cache = nullptr);
Matrix classify_backward(const ModelParameters& params, const ClassifierCache& cache, const Matrix& dlogits,
                         ModelParameters& grads);

/// Linear fine-tune head, z -> logits.
Matrix finetune_logits(const ModelParameters& params, const Matrix& z);

/// Unit-norm copy. Zero vectors pass through unchanged and bump *zero_count.
Eigen::VectorXd l2_normalize(const Eigen::VectorXd& z, std::size_t* zero_count = nullptr);
Matrix l2_normalize_rows(const Matrix& z, std::size_t* zero_count = nullptr);

/// Backprop through row-wise L2 normalization.
Matrix l2_normalize_rows_backward(const Matrix& z, const Matrix& d_normalized);

Matrix softmax_rows(const Matrix& logits);

double gelu(double x);
double gelu_derivative(double x);

}  // namespace contab
