#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "contab/checkpoint.hpp"
#include "contab/corruption.hpp"
#include "contab/data.hpp"
#include "contab/losses.hpp"
#include "contab/model.hpp"

namespace contab {

enum class TrainMode { self, semi };

struct TrainConfig {
    std::size_t batch_size = 128;
    std::size_t epochs = 1000;
    double learning_rate = 1e-4;
    double rmsprop_decay = 0.9;
    double rmsprop_epsilon = 1e-8;
    double corruption_ratio = 0.3;
    CorruptionMode corruption_mode = CorruptionMode::marginal;
    double gaussian_sigma = 0.1;
    LossConfig loss;
    TrainMode mode = TrainMode::semi;
    std::uint64_t seed = 0;
    std::size_t checkpoint_every = 0;  // steps; 0 disables periodic checkpoints

    void validate() const;
    nlohmann::json to_json() const;
    static TrainConfig from_json(const nlohmann::json& j);
};

std::string to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);
std::string to_string(CorruptionMode mode);
CorruptionMode corruption_mode_from_string(const std::string& s);

/// Fresh state: parameters drawn from the seed's init stream, zero
/// accumulators, data and corruption streams derived from the same seed.
TrainState init_train_state(const ModelConfig& model, const TrainConfig& config, std::uint64_t preprocessor_hash = 0);

/// Groups that the optimizer may update; the rest stay bit-unchanged.
using GroupSet = std::set<std::string>;
GroupSet pretrain_groups(TrainMode mode);

/// acc <- rho*acc + (1-rho) g^2; theta <- theta - lr g / (sqrt(acc) + eps).
/// A non-finite gradient aborts the step before anything is written and
/// names the offending tensor.
void rmsprop_step(ModelParameters& params, const ModelParameters& grads, ModelParameters& accumulators, double lr,
                  double rho, double eps, const GroupSet* groups = nullptr);

struct Batch {
    std::vector<std::size_t> rows;
    Matrix X;
    std::optional<Labels> y;
};

/// Two independent uniform draws of B rows each, without replacement inside a
/// batch. B larger than the dataset shrinks to n.
std::pair<Batch, Batch> sample_two_batches(const TableDataset& dataset, std::size_t batch_size, std::mt19937_64& rng);

std::size_t steps_per_epoch(std::size_t n_samples, std::size_t batch_size);

/// Inputs to one objective evaluation: clean rows (reconstruction targets),
/// their corrupted copies (encoder inputs), labels or kUnlabeled.
struct StepInputs {
    Matrix x1, x2;
    Matrix corrupted1, corrupted2;
    Labels y1, y2;
};

struct PairDistanceStats {
    double similar_mean = 0.0;
    double dissimilar_mean = 0.0;
    std::size_t similar_count = 0;
    std::size_t dissimilar_count = 0;
};

/// L_self (mode self) or L_semi (mode semi) on fixed inputs. When `grads` is
/// non-null it is zeroed and filled with the full gradient.
LossReport evaluate_objective(const ModelParameters& params, const ModelConfig& model, const LossConfig& loss,
                              TrainMode mode, const StepInputs& inputs, ModelParameters* grads = nullptr,
                              PairDistanceStats* pair_stats = nullptr);

class DivergenceError : public NumericalError {
public:
    DivergenceError(const std::string& what, std::shared_ptr<const TrainState> last_good)
        : NumericalError(what), last_good_(std::move(last_good)) {}
    const TrainState& last_good() const { return *last_good_; }

private:
    std::shared_ptr<const TrainState> last_good_;
};

struct TrainHooks {
    std::function<void(const LossReport&)> on_step;
    std::function<void(const TrainState&)> on_checkpoint;
    std::optional<std::uint64_t> stop_after_step;  // for split runs / resume tests
    std::ostream* progress = nullptr;              // epoch summaries
};

struct PretrainResult {
    TrainState state;
    std::vector<LossReport> log;
    std::vector<PairDistanceStats> pair_stats;  // one entry per step (semi mode)
    std::size_t warnings = 0;
};

/// Runs (or resumes) pretraining from `state` until epochs * steps_per_epoch.
PretrainResult pretrain(const TableDataset& dataset, TrainState state, const TrainConfig& config,
                        const TrainHooks& hooks = {});

PretrainResult pretrain_self(const TableDataset& dataset, const ModelConfig& model, TrainConfig config,
                             const TrainHooks& hooks = {});
PretrainResult pretrain_semi(const TableDataset& dataset, const ModelConfig& model, TrainConfig config,
                             const TrainHooks& hooks = {});

/// Default architecture for a dataset: n_features and n_classes filled in.
ModelConfig model_config_for(const TableDataset& dataset, ModelConfig base = {});

// ---------------------------------------------------------------------------
// Loss log
// ---------------------------------------------------------------------------

/// Column order: step,reconstruction,classification,contrastive,penalty,total[,wall_clock_s]
void write_loss_log_header(std::ostream& out, bool wall_clock = true);
void write_loss_log_row(std::ostream& out, const LossReport& r, std::optional<double> wall_clock_s = std::nullopt);

// ---------------------------------------------------------------------------
// Downstream
// ---------------------------------------------------------------------------

/// Raw bottleneck embeddings of X under frozen parameters.
Matrix embed_matrix(const ModelParameters& params, const ModelConfig& model, const Matrix& X,
                    std::size_t chunk = 512);

struct FinetuneConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 128;
    double learning_rate = 1e-4;
    double rmsprop_decay = 0.9;
    double rmsprop_epsilon = 1e-8;
    std::uint64_t seed = 0;
    bool freeze_encoder = false;  // true gives a linear probe on frozen embeddings

    nlohmann::json to_json() const;
};

struct FinetunedModel {
    ModelConfig model;
    ModelParameters params;
    std::vector<double> epoch_losses;

    Matrix predict_proba(const Matrix& X) const;
    Matrix embed(const Matrix& X) const { return embed_matrix(params, model, X); }
};

/// Mean cross-entropy of the fine-tune head over the labeled rows.
double finetune_objective(const ModelParameters& params, const ModelConfig& model, const TableDataset& data);

FinetunedModel finetune(const ModelConfig& model, const ModelParameters& pretrained, const TableDataset& labeled,
                        const FinetuneConfig& config);

}  // namespace contab
