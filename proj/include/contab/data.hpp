#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "contab/common.hpp"

namespace contab {

// ---------------------------------------------------------------------------
// Raw tables
// ---------------------------------------------------------------------------

using Cell = std::optional<std::string>;  // nullopt = missing

struct CsvOptions {
    std::vector<std::string> missing_markers{"", "NA", "?"};
    char delimiter = ',';
};

/// String cells exactly as read, with missing markers collapsed to nullopt.
struct RawTable {
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;
    std::optional<std::vector<Cell>> labels;

    std::size_t n_rows() const { return rows.size(); }
    std::size_t n_cols() const { return columns.size(); }
    bool all_missing(std::size_t col) const;
    RawTable select_rows(const std::vector<std::size_t>& indices) const;
};

/// RFC-4180 parse of delimited text. First record is the header.
std::vector<std::vector<std::string>> parse_csv(const std::string& text, char delimiter = ',');

RawTable parse_table(const std::string& text, const std::optional<std::string>& label_column,
                     const CsvOptions& options = {});
RawTable load_csv(const std::filesystem::path& path,
                  const std::optional<std::string>& label_column = std::nullopt,
                  const CsvOptions& options = {});

/// Quotes a field only when it needs it.
std::string csv_escape(const std::string& field, char delimiter = ',');

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

enum class ColumnKind { numerical, categorical };

struct ColumnSchema {
    std::string name;
    ColumnKind kind = ColumnKind::numerical;
    std::vector<std::string> categories;  // first-appearance order
    bool all_missing = false;
};

inline constexpr std::size_t kDefaultMaxCategoricalCardinality = 20;

std::vector<ColumnSchema> infer_schema(const RawTable& table,
                                       std::size_t max_categorical_cardinality =
                                           kDefaultMaxCategoricalCardinality);

std::optional<double> parse_number(const std::string& s);

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

/// Backward-difference contrast matrix, k x (k-1). Column j (1-based) holds
/// -(k-j)/k for levels 1..j and j/k for levels j+1..k.
Matrix backward_difference_contrast(std::size_t k);

struct ContrastMap {
    std::vector<std::string> levels;
    Matrix contrast;  // levels.size() x (levels.size() - 1)
};

struct OutputColumn {
    std::string name;
    std::string source;
    int contrast_column = -1;  // -1 for numerical passthrough
};

inline constexpr int kPreprocessorSchemaVersion = 1;

struct PreprocessorState {
    std::vector<ColumnSchema> input_schema;
    std::vector<std::string> dropped_columns;
    std::map<std::string, double> numeric_impute;
    std::map<std::string, std::string> categorical_impute;
    std::map<std::string, ContrastMap> contrast_maps;
    std::vector<double> scale_min;
    std::vector<double> scale_max;
    std::vector<OutputColumn> output_layout;
    std::vector<std::string> label_classes;

    std::size_t n_outputs() const { return output_layout.size(); }

    nlohmann::json to_json() const;
    static PreprocessorState from_json(const nlohmann::json& j);
    std::string serialize() const;
    std::uint64_t fingerprint() const { return fnv1a64(serialize()); }
};

PreprocessorState fit_preprocessor(const RawTable& table, const std::vector<ColumnSchema>& schema);

enum class UnseenCategoryPolicy { modal, error };

struct TransformOptions {
    UnseenCategoryPolicy unseen = UnseenCategoryPolicy::modal;
};

struct TableDataset {
    Matrix X;
    std::optional<Labels> y;
    std::vector<std::string> feature_names;
    std::vector<std::size_t> row_ids;
    std::size_t n_classes = 0;

    std::size_t n_samples() const { return static_cast<std::size_t>(X.rows()); }
    std::size_t n_features() const { return static_cast<std::size_t>(X.cols()); }
    std::size_t n_labeled() const;
    TableDataset select_rows(const std::vector<std::size_t>& indices) const;
};

struct TransformResult {
    TableDataset dataset;
    std::size_t unseen_categories = 0;
};

TransformResult transform(const RawTable& table, const PreprocessorState& state,
                          const TransformOptions& options = {});

/// Maps raw label strings onto the state's class list. Missing labels become
/// kUnlabeled; labels not in the list are a DataError.
Labels encode_labels(const std::vector<Cell>& raw, const std::vector<std::string>& classes);

/// Distinct observed labels, numerically sorted when all parse as numbers,
/// lexicographically otherwise.
std::vector<std::string> label_classes(const std::vector<Cell>& raw);

/// Column-wise min-max fit on an already numeric matrix, used to rescale
/// concatenated feature blocks.
struct MinMaxScaler {
    Eigen::RowVectorXd min;
    Eigen::RowVectorXd max;

    static MinMaxScaler fit(const Matrix& X);
    Matrix apply(const Matrix& X) const;
};

// ---------------------------------------------------------------------------
// Splitting
// ---------------------------------------------------------------------------

struct SplitFractions {
    double train = 0.8;
    double val = 0.1;
    double test = 0.1;
};

struct SplitIndices {
    std::vector<std::size_t> train, val, test;
};

/// Stratified by label when labels exist (unlabeled rows form their own stratum).
SplitIndices split_indices(const std::optional<Labels>& labels, std::size_t n,
                           const SplitFractions& fractions, std::uint64_t seed);

struct DatasetSplits {
    TableDataset train, val, test;
};

DatasetSplits split(const TableDataset& dataset, const SplitFractions& fractions,
                    std::uint64_t seed);

// ---------------------------------------------------------------------------
// Processed-dataset files
// ---------------------------------------------------------------------------

inline constexpr const char* kLabelColumn = "__label__";
inline constexpr const char* kRowIdColumn = "__row_id__";

void write_dataset_csv(const std::filesystem::path& path, const TableDataset& dataset);
TableDataset read_dataset_csv(const std::filesystem::path& path, std::size_t n_classes = 0);

}  // namespace contab
