#pragma once

#include <cstdint>

#include "json.hpp"

#include "contab/common.hpp"

namespace contab {

struct LossConfig {
    double lambda = 0.01;  // penalty weight on the input weights
    int p = 2;             // penalty norm, 1 or 2
    double alpha = 1.0;    // classification weight
    double beta = 1.0;     // contrastive weight
    double margin = 2.0;

    void validate() const;
    nlohmann::json to_json() const;
    static LossConfig from_json(const nlohmann::json& j);
};

struct LossReport {
    std::uint64_t step = 0;
    double reconstruction = 0.0;
    double classification = 0.0;
    double contrastive = 0.0;
    double penalty = 0.0;
    double total = 0.0;

    bool operator==(const LossReport&) const = default;
};

// Each loss has a value-only form and a form that also returns gradients
// with respect to its tensor inputs.

/// Mean over pairs of (1/M)|x1 - r1|^2 + (1/M)|x2 - r2|^2.
double reconstruction_loss(const Matrix& x1, const Matrix& recon1, const Matrix& x2, const Matrix& recon2);

struct ReconstructionGrad {
    double value;
    Matrix d_recon1, d_recon2;
};
ReconstructionGrad reconstruction_loss_grad(const Matrix& x1, const Matrix& recon1, const Matrix& x2,
                                            const Matrix& recon2);

/// lambda * ||W||_p.
double regularization_penalty(const Matrix& weights, double lambda, int p);
/// Subgradient 0 where the norm is not differentiable.
Matrix regularization_penalty_grad(const Matrix& weights, double lambda, int p);

double self_loss(double reconstruction, double penalty);

/// mean CE over branch 1 plus mean CE over branch 2. Labels must be in
/// [0, n_classes); rows of the two branches need not match in count.
double classification_loss(const Matrix& logits1, const Labels& y1, const Matrix& logits2, const Labels& y2);

struct ClassificationGrad {
    double value;
    Matrix d_logits1, d_logits2;
};
ClassificationGrad classification_loss_grad(const Matrix& logits1, const Labels& y1, const Matrix& logits2,
                                            const Labels& y2);

/// Single-branch mean cross-entropy.
double cross_entropy(const Matrix& logits, const Labels& y);
ClassificationGrad cross_entropy_grad(const Matrix& logits, const Labels& y);

/// Margin contrastive loss over index-aligned pairs of (normalized)
/// embeddings: similar pairs pay d^2/2, dissimilar pairs max(0, m - d)^2 / 2.
double contrastive_loss(const Matrix& z1, const Matrix& z2, const Labels& y1, const Labels& y2, double margin);

struct ContrastiveGrad {
    double value;
    Matrix d_z1, d_z2;
};
ContrastiveGrad contrastive_loss_grad(const Matrix& z1, const Matrix& z2, const Labels& y1, const Labels& y2,
                                      double margin);

double semi_loss(double self, double classification, double contrastive, double alpha, double beta);

}  // namespace contab
