#pragma once

#include <cstddef>
#include <cstdint>

#include "contab/data.hpp"

namespace contab {

/// Two Gaussian clusters in a small informative subspace, padded with noisy
/// copies of the informative features and with pure noise. Columns are
/// ordered [informative | copies | noise]; copy k duplicates informative
/// feature k % n_informative.
struct RedundantClustersSpec {
    std::size_t n_samples = 2000;
    std::size_t n_informative = 4;
    std::size_t n_copies = 8;
    std::size_t n_noise = 8;
    double center_offset = 0.8;  // cluster means at +/- offset on every informative axis
    double copy_noise = 0.3;     // std of the noise added to copies
    double label_fraction = 1.0;  // fraction of rows that keep their label
    std::uint64_t seed = 0;
};

/// Raw (unscaled) table with labels "0"/"1", suitable for fit_preprocessor.
RawTable make_redundant_clusters(const RedundantClustersSpec& spec);

/// The same data pushed through schema inference with numeric-only columns,
/// fit_preprocessor and transform.
TableDataset make_redundant_clusters_dataset(const RedundantClustersSpec& spec);

}  // namespace contab
