#include "contab/synthetic.hpp"

#include <random>

namespace contab {

RawTable make_redundant_clusters(const RedundantClustersSpec& spec) {
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> unit(0.0, 1.0);
    std::bernoulli_distribution keep_label(spec.label_fraction);

    RawTable t;
    for (std::size_t j = 0; j < spec.n_informative; ++j) t.columns.push_back("informative_" + std::to_string(j));
    for (std::size_t j = 0; j < spec.n_copies; ++j) t.columns.push_back("copy_" + std::to_string(j));
    for (std::size_t j = 0; j < spec.n_noise; ++j) t.columns.push_back("noise_" + std::to_string(j));
    t.labels.emplace();

    std::vector<double> informative(spec.n_informative);
    for (std::size_t i = 0; i < spec.n_samples; ++i) {
        const int label = static_cast<int>(i % 2);
        const double sign = label ? 1.0 : -1.0;
        std::vector<Cell> row;
        row.reserve(t.columns.size());
        for (std::size_t j = 0; j < spec.n_informative; ++j) {
            informative[j] = sign * spec.center_offset + unit(rng);
            row.emplace_back(format_double(informative[j]));
        }
        for (std::size_t j = 0; j < spec.n_copies; ++j)
            row.emplace_back(format_double(informative[j % spec.n_informative] + spec.copy_noise * unit(rng)));
        for (std::size_t j = 0; j < spec.n_noise; ++j) row.emplace_back(format_double(unit(rng)));
        t.rows.push_back(std::move(row));
        const bool labeled = keep_label(rng);
        t.labels->push_back(labeled ? Cell{std::to_string(label)} : std::nullopt);
    }
    return t;
}

TableDataset make_redundant_clusters_dataset(const RedundantClustersSpec& spec) {
    const RawTable raw = make_redundant_clusters(spec);
    // Every column is continuous; cardinality 0 keeps them numerical.
    const auto schema = infer_schema(raw, 0);
    auto state = fit_preprocessor(raw, schema);
    state.label_classes = {"0", "1"};
    return transform(raw, state).dataset;
}

}  // namespace contab
