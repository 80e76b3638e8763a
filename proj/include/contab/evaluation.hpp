#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "contab/data.hpp"
#include "contab/model.hpp"
#include "contab/training.hpp"

namespace contab {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Mann-Whitney AUROC: P(score_pos > score_neg) with ties counted as 1/2.
/// Labels must be 0/1 with both classes present.
double auroc(std::span<const double> scores, std::span<const int> labels);

double accuracy(std::span<const int> predictions, std::span<const int> labels);

std::vector<int> argmax_rows(const Matrix& m);

enum class FeatureMode { raw, distilled, concat };
std::string to_string(FeatureMode mode);
FeatureMode feature_mode_from_string(const std::string& s);

struct MetricReport {
    std::string dataset;
    std::string method;
    FeatureMode mode = FeatureMode::raw;
    std::string metric;  // "auroc" or "accuracy"
    double value = 0.0;
    std::size_t n_test = 0;
    bool warning = false;
    std::string note;

    nlohmann::json to_json() const;
};

/// AUROC on the positive-class column for binary tasks, accuracy otherwise.
MetricReport score_predictions(const Matrix& probabilities, const Labels& labels, std::size_t n_classes);

// ---------------------------------------------------------------------------
// Embeddings and plug-and-play features
// ---------------------------------------------------------------------------

struct EmbeddingBatch {
    Matrix Z;  // unit-norm rows
    std::uint64_t source_checkpoint = 0;
    std::vector<std::size_t> row_ids;
};

EmbeddingBatch embed_dataset(const ModelConfig& model, const ModelParameters& params, const TableDataset& dataset);

/// Header row_id,z_0..z_{k-1}; values with 17 significant digits.
void write_embeddings_csv(std::ostream& out, const EmbeddingBatch& batch);
void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingBatch& batch);
EmbeddingBatch read_embeddings_csv(const std::filesystem::path& path);

/// Corruption masks in the embeddings layout: row_id,m_0..m_{M-1}.
void write_mask_csv(std::ostream& out, const Mask& mask, const std::vector<std::size_t>& row_ids);

/// Columns [x | z]; labels and raw values carried through untouched.
TableDataset concat_features(const TableDataset& dataset, const EmbeddingBatch& embeddings);

/// The embedding block alone as a dataset.
TableDataset distilled_features(const TableDataset& dataset, const EmbeddingBatch& embeddings);

// ---------------------------------------------------------------------------
// Logistic regression baseline
// ---------------------------------------------------------------------------

struct LogisticConfig {
    double l2 = 1e-4;  // on coefficients, not intercepts
    double tolerance = 1e-6;
    std::size_t max_iterations = 2000;
    bool fit_intercept = true;
    std::size_t history = 10;  // L-BFGS memory
};

struct LogisticModel {
    Matrix coef;                 // d x C
    Eigen::RowVectorXd intercept;  // 1 x C
    bool converged = false;
    std::size_t iterations = 0;
    double gradient_norm = 0.0;

    Matrix predict_proba(const Matrix& X) const;
};

/// Multinomial logistic regression, L-BFGS on mean cross-entropy plus
/// (l2/2)|coef|^2. Only labeled rows are used.
LogisticModel fit_logistic(const TableDataset& train, const LogisticConfig& config = {});

MetricReport logistic_regression(const TableDataset& train, const TableDataset& test,
                                 const LogisticConfig& config = {});

// ---------------------------------------------------------------------------
// External baselines
// ---------------------------------------------------------------------------

class BaselineAdapter {
public:
    virtual ~BaselineAdapter() = default;
    /// Per-class probabilities for every test row, shape (n_test, n_classes).
    virtual Matrix fit_predict_proba(const TableDataset& train, const TableDataset& test) = 0;
};

class LogisticAdapter : public BaselineAdapter {
public:
    explicit LogisticAdapter(LogisticConfig config = {}) : config_(config) {}
    Matrix fit_predict_proba(const TableDataset& train, const TableDataset& test) override;

private:
    LogisticConfig config_;
};

/// Runs `<command> <train.csv> <test.csv> <scores.csv>` in a scratch
/// directory. Exchange files use the processed-dataset CSV layout; scores.csv
/// has a header class_0..class_{C-1} and one row per test row.
class ProcessAdapter : public BaselineAdapter {
public:
    ProcessAdapter(std::string command, std::filesystem::path scratch_dir)
        : command_(std::move(command)), scratch_(std::move(scratch_dir)) {}
    Matrix fit_predict_proba(const TableDataset& train, const TableDataset& test) override;

private:
    std::string command_;
    std::filesystem::path scratch_;
};

void write_scores_csv(const std::filesystem::path& path, const Matrix& probabilities);
Matrix read_scores_csv(const std::filesystem::path& path);

class AdapterRegistry {
public:
    void add(const std::string& name, std::shared_ptr<BaselineAdapter> adapter) { adapters_[name] = std::move(adapter); }
    BaselineAdapter* find(const std::string& name) const;
    std::vector<std::string> names() const;

private:
    std::map<std::string, std::shared_ptr<BaselineAdapter>> adapters_;
};

struct AdapterOutcome {
    std::optional<MetricReport> report;
    bool skipped = false;
    std::string reason;
};

/// Never throws for a missing or failing adapter; those come back skipped.
AdapterOutcome baseline_adapter(const AdapterRegistry& registry, const std::string& name, const TableDataset& train,
                                const TableDataset& test);

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

/// Fits a baseline on raw, distilled and concatenated features. Embedding
/// blocks are rescaled with a min-max fit on the training rows.
std::vector<MetricReport> evaluate_feature_modes(const std::string& dataset_name, const TableDataset& train,
                                                 const TableDataset& test, const ModelConfig& model,
                                                 const ModelParameters& params,
                                                 const std::vector<FeatureMode>& modes,
                                                 const LogisticConfig& logistic = {},
                                                 const AdapterRegistry* adapters = nullptr,
                                                 std::vector<std::string>* skipped = nullptr);

/// Rescales the embedding columns of both sets with a min-max fit on `train`.
std::pair<TableDataset, TableDataset> rescale_pair(const TableDataset& train, const TableDataset& test);

MetricReport evaluate_finetuned(const FinetunedModel& model, const TableDataset& test, const std::string& dataset_name);

struct AblationConfig {
    std::vector<double> ratios{0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
    ModelConfig model;
    TrainConfig train;
    FinetuneConfig finetune;
};

struct AblationTable {
    std::vector<std::string> datasets;
    std::vector<double> ratios;
    std::vector<std::vector<MetricReport>> cells;  // [dataset][ratio]

    /// Index of the per-row maximum; earliest ratio on ties.
    std::size_t best_column(std::size_t row) const;
    nlohmann::json to_json() const;
};

/// For each ratio: semi-supervised pretraining, fine-tuning, test metric.
AblationTable ablation_runner(const std::string& dataset_name, const TableDataset& train, const TableDataset& test,
                              const AblationConfig& config, std::ostream* progress = nullptr);

void render_ablation_table(std::ostream& out, const AblationTable& table);
/// Rows are (dataset, method), columns raw / distilled / concat.
void render_feature_table(std::ostream& out, const std::vector<MetricReport>& reports);

}  // namespace contab
