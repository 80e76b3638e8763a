#pragma once

#include <cstddef>
#include <random>

#include "contab/common.hpp"

namespace contab {

struct TableDataset;

/// Per-feature pools of observed training values. Row j of `pools` is
/// column j of the training matrix, duplicates kept, so a uniform draw over
/// the row samples the feature's empirical marginal.
struct EmpiricalMarginals {
    Matrix pools;  // M x n_train

    std::size_t n_features() const { return static_cast<std::size_t>(pools.rows()); }
    std::size_t pool_size() const { return static_cast<std::size_t>(pools.cols()); }
};

EmpiricalMarginals fit_marginals(const Matrix& train);
EmpiricalMarginals fit_marginals(const TableDataset& train);

enum class CorruptionMode {
    marginal,  // replace with a draw from the feature's empirical marginal
    gaussian,  // add N(0, sigma^2) noise at the chosen positions
};

struct CorruptionConfig {
    double ratio = 0.3;
    std::uint64_t seed = 0;
    CorruptionMode mode = CorruptionMode::marginal;
    double gaussian_sigma = 0.1;

    void validate() const;
};

/// t = round(ratio * M).
std::size_t corrupted_feature_count(double ratio, std::size_t n_features);

struct CorruptedBatch {
    Matrix values;
    Mask mask;  // 1 where the entry was replaced
};

/// Picks t distinct features per row uniformly without replacement and
/// replaces each with an independent uniform draw from that feature's pool.
/// Unchosen entries are copied bit-for-bit.
CorruptedBatch corrupt(const Matrix& batch, const EmpiricalMarginals& marginals, const CorruptionConfig& config,
                       std::mt19937_64& rng);

}  // namespace contab
