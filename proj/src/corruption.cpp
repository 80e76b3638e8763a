#include "contab/corruption.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "contab/data.hpp"

namespace contab {

EmpiricalMarginals fit_marginals(const Matrix& train) {
    if (train.rows() == 0 || train.cols() == 0) throw DataError("cannot fit marginals on an empty dataset");
    return {train.transpose()};
}

EmpiricalMarginals fit_marginals(const TableDataset& train) { return fit_marginals(train.X); }

void CorruptionConfig::validate() const {
    if (!(ratio >= 0.0 && ratio <= 1.0)) throw UsageError("corruption ratio must lie in [0, 1]");
    if (mode == CorruptionMode::gaussian && !(gaussian_sigma >= 0.0))
        throw UsageError("gaussian corruption sigma must be non-negative");
}

std::size_t corrupted_feature_count(double ratio, std::size_t n_features) {
    return static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n_features)));
}

CorruptedBatch corrupt(const Matrix& batch, const EmpiricalMarginals& marginals, const CorruptionConfig& config,
                       std::mt19937_64& rng) {
    config.validate();
    const auto M = static_cast<std::size_t>(batch.cols());
    if (M != marginals.n_features())
        throw DataError("batch has " + std::to_string(M) + " features, marginals have " +
                        std::to_string(marginals.n_features()));

    CorruptedBatch out{batch, Mask::Zero(batch.rows(), batch.cols())};
    const std::size_t t = corrupted_feature_count(config.ratio, M);
    if (t == 0) return out;

    std::vector<std::size_t> features(M);
    std::uniform_int_distribution<std::size_t> pick_row(0, marginals.pool_size() - 1);
    std::normal_distribution<double> noise(0.0, config.gaussian_sigma);

    for (Eigen::Index r = 0; r < batch.rows(); ++r) {
        std::iota(features.begin(), features.end(), std::size_t{0});
        // Partial Fisher-Yates: the first t slots become a uniform t-subset.
        for (std::size_t k = 0; k < t; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, M - 1);
            std::swap(features[k], features[pick(rng)]);
        }
        for (std::size_t k = 0; k < t; ++k) {
            const std::size_t j = features[k];
            out.mask(r, j) = 1;
            if (config.mode == CorruptionMode::marginal) {
                out.values(r, j) = marginals.pools(j, pick_row(rng));
            } else {
                out.values(r, j) = batch(r, j) + noise(rng);
            }
        }
    }
    return out;
}

}  // namespace contab
