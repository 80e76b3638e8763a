#include "contab/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace contab {

namespace {

constexpr double kProbabilityFloor = 1e-12;

void check_same_shape(const Matrix& a, const Matrix& b, const char* what) {
    if (a.rows() != b.rows() || a.cols() != b.cols())
        throw DataError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                        std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                        std::to_string(b.cols()) + ")");
}

void check_labels(const Matrix& logits, const Labels& y) {
    if (static_cast<std::size_t>(logits.rows()) != y.size())
        throw DataError("label count does not match logits rows");
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] < 0 || y[i] >= logits.cols())
            throw DataError("label " + std::to_string(y[i]) + " out of range at row " + std::to_string(i));
    }
}

}  // namespace

void LossConfig::validate() const {
    for (double v : {lambda, alpha, beta})
        if (!std::isfinite(v) || v < 0.0) throw UsageError("loss weights must be finite and non-negative");
    if (p != 1 && p != 2) throw UsageError("penalty norm p must be 1 or 2");
    if (!std::isfinite(margin) || margin <= 0.0) throw UsageError("contrastive margin must be positive");
}

nlohmann::json LossConfig::to_json() const {
    return {{"lambda", lambda}, {"p", p}, {"alpha", alpha}, {"beta", beta}, {"margin", margin}};
}

LossConfig LossConfig::from_json(const nlohmann::json& j) {
    LossConfig c;
    c.lambda = j.value("lambda", c.lambda);
    c.p = j.value("p", c.p);
    c.alpha = j.value("alpha", c.alpha);
    c.beta = j.value("beta", c.beta);
    c.margin = j.value("margin", c.margin);
    return c;
}

// ---------------------------------------------------------------------------

double reconstruction_loss(const Matrix& x1, const Matrix& r1, const Matrix& x2, const Matrix& r2) {
    check_same_shape(x1, r1, "reconstruction_loss");
    check_same_shape(x2, r2, "reconstruction_loss");
    check_same_shape(x1, x2, "reconstruction_loss");
    if (x1.rows() == 0) return 0.0;
    const double M = static_cast<double>(x1.cols());
    const double B = static_cast<double>(x1.rows());
    return ((x1 - r1).squaredNorm() / M + (x2 - r2).squaredNorm() / M) / B;
}

ReconstructionGrad reconstruction_loss_grad(const Matrix& x1, const Matrix& r1, const Matrix& x2, const Matrix& r2) {
    ReconstructionGrad g;
    g.value = reconstruction_loss(x1, r1, x2, r2);
    const double scale = 2.0 / (static_cast<double>(x1.cols()) * static_cast<double>(std::max<Eigen::Index>(1, x1.rows())));
    g.d_recon1 = scale * (r1 - x1);
    g.d_recon2 = scale * (r2 - x2);
    return g;
}

double regularization_penalty(const Matrix& w, double lambda, int p) {
    if (!w.allFinite()) throw NumericalError("non-finite input weights");
    if (p == 1) return lambda * w.cwiseAbs().sum();
    if (p == 2) return lambda * w.norm();
    throw UsageError("penalty norm p must be 1 or 2");
}

Matrix regularization_penalty_grad(const Matrix& w, double lambda, int p) {
    if (p == 1) return lambda * w.unaryExpr([](double v) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
    if (p == 2) {
        const double n = w.norm();
        if (n == 0.0) return Matrix::Zero(w.rows(), w.cols());
        return (lambda / n) * w;
    }
    throw UsageError("penalty norm p must be 1 or 2");
}

double self_loss(double reconstruction, double penalty) { return reconstruction + penalty; }

// ---------------------------------------------------------------------------

ClassificationGrad cross_entropy_grad(const Matrix& logits, const Labels& y) {
    check_labels(logits, y);
    ClassificationGrad g{0.0, Matrix::Zero(logits.rows(), logits.cols()), {}};
    if (y.empty()) return g;
    const double inv_n = 1.0 / static_cast<double>(y.size());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        const Eigen::RowVectorXd e = (logits.row(r).array() - mx).exp().matrix();
        const double sum = e.sum();
        const double log_p = logits(r, y[r]) - mx - std::log(sum);
        g.value -= std::max(log_p, std::log(kProbabilityFloor));
        g.d_logits1.row(r) = e / sum;
        g.d_logits1(r, y[r]) -= 1.0;
    }
    g.value *= inv_n;
    g.d_logits1 *= inv_n;
    return g;
}

double cross_entropy(const Matrix& logits, const Labels& y) { return cross_entropy_grad(logits, y).value; }

ClassificationGrad classification_loss_grad(const Matrix& logits1, const Labels& y1, const Matrix& logits2,
                                            const Labels& y2) {
    auto a = cross_entropy_grad(logits1, y1);
    auto b = cross_entropy_grad(logits2, y2);
    return {a.value + b.value, std::move(a.d_logits1), std::move(b.d_logits1)};
}

double classification_loss(const Matrix& logits1, const Labels& y1, const Matrix& logits2, const Labels& y2) {
    return cross_entropy(logits1, y1) + cross_entropy(logits2, y2);
}

// ---------------------------------------------------------------------------

ContrastiveGrad contrastive_loss_grad(const Matrix& z1, const Matrix& z2, const Labels& y1, const Labels& y2,
                                      double margin) {
    check_same_shape(z1, z2, "contrastive_loss");
    if (y1.size() != static_cast<std::size_t>(z1.rows()) || y2.size() != y1.size())
        throw DataError("contrastive_loss: labels not aligned with embeddings");
    ContrastiveGrad g{0.0, Matrix::Zero(z1.rows(), z1.cols()), Matrix::Zero(z2.rows(), z2.cols())};
    const auto B = z1.rows();
    if (B == 0) return g;
    const double inv_b = 1.0 / static_cast<double>(B);
    for (Eigen::Index i = 0; i < B; ++i) {
        if (y1[i] == kUnlabeled || y2[i] == kUnlabeled)
            throw DataError("contrastive_loss: unlabeled row " + std::to_string(i));
        const Eigen::RowVectorXd diff = z1.row(i) - z2.row(i);
        const double d = diff.norm();
        if (y1[i] == y2[i]) {
            g.value += 0.5 * d * d;
            g.d_z1.row(i) = diff * inv_b;
        } else {
            const double gap = std::max(0.0, margin - d);
            g.value += 0.5 * gap * gap;
            if (gap > 0.0 && d > 0.0) g.d_z1.row(i) = (-gap / d) * diff * inv_b;
        }
        g.d_z2.row(i) = -g.d_z1.row(i);
    }
    g.value *= inv_b;
    return g;
}

double contrastive_loss(const Matrix& z1, const Matrix& z2, const Labels& y1, const Labels& y2, double margin) {
    return contrastive_loss_grad(z1, z2, y1, y2, margin).value;
}

double semi_loss(double self, double classification, double contrastive, double alpha, double beta) {
    return self + alpha * classification + beta * contrastive;
}

}  // namespace contab
