#include "contab/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>

namespace contab {

namespace {

enum StreamId : std::uint64_t { kInitStream = 1, kDataStream = 2, kCorruptionStream = 3, kFinetuneStream = 4 };

std::mt19937_64 derive_stream(std::uint64_t seed, StreamId id) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(id)};
    return std::mt19937_64(seq);
}

Matrix gather_rows(const Matrix& m, const std::vector<Eigen::Index>& rows) {
    Matrix out(static_cast<Eigen::Index>(rows.size()), m.cols());
    for (std::size_t k = 0; k < rows.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = m.row(rows[k]);
    return out;
}

void scatter_add_rows(Matrix& dst, const Matrix& src, const std::vector<Eigen::Index>& rows) {
    for (std::size_t k = 0; k < rows.size(); ++k) dst.row(rows[k]) += src.row(static_cast<Eigen::Index>(k));
}

Labels gather_labels(const Labels& y, const std::vector<Eigen::Index>& rows) {
    Labels out;
    out.reserve(rows.size());
    for (auto r : rows) out.push_back(y[static_cast<std::size_t>(r)]);
    return out;
}

// Decoder and input-weight backward shared by both pretraining modes.
Matrix decoder_backward(const ModelParameters& p, const Matrix& z, const Matrix& recon, const Matrix& d_recon,
                        ModelParameters& g) {
    const Matrix dpre = d_recon.cwiseProduct(recon.cwiseProduct((1.0 - recon.array()).matrix()));
    g.dec_w.noalias() += z.transpose() * dpre;
    g.dec_b.row(0) += dpre.colwise().sum();
    return dpre * p.dec_w.transpose();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

std::string to_string(TrainMode mode) { return mode == TrainMode::self ? "self" : "semi"; }

TrainMode train_mode_from_string(const std::string& s) {
    if (s == "self") return TrainMode::self;
    if (s == "semi") return TrainMode::semi;
    throw UsageError("unknown training mode '" + s + "' (expected self or semi)");
}

std::string to_string(CorruptionMode mode) { return mode == CorruptionMode::marginal ? "marginal" : "gaussian"; }

CorruptionMode corruption_mode_from_string(const std::string& s) {
    if (s == "marginal") return CorruptionMode::marginal;
    if (s == "gaussian") return CorruptionMode::gaussian;
    throw UsageError("unknown corruption mode '" + s + "' (expected marginal or gaussian)");
}

void TrainConfig::validate() const {
    if (batch_size < 2) throw UsageError("batch size must be at least 2");
    if (epochs < 1) throw UsageError("epochs must be at least 1");
    if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
    if (!(rmsprop_decay >= 0.0 && rmsprop_decay < 1.0)) throw UsageError("rmsprop decay must lie in [0, 1)");
    if (!(rmsprop_epsilon >= 0.0)) throw UsageError("rmsprop epsilon must be non-negative");
    CorruptionConfig{corruption_ratio, seed, corruption_mode, gaussian_sigma}.validate();
    loss.validate();
}

nlohmann::json TrainConfig::to_json() const {
    return {{"batch_size", batch_size},
            {"epochs", epochs},
            {"learning_rate", learning_rate},
            {"rmsprop_decay", rmsprop_decay},
            {"rmsprop_epsilon", rmsprop_epsilon},
            {"corruption_ratio", corruption_ratio},
            {"corruption_mode", to_string(corruption_mode)},
            {"gaussian_sigma", gaussian_sigma},
            {"loss", loss.to_json()},
            {"mode", to_string(mode)},
            {"seed", seed},
            {"checkpoint_every", checkpoint_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.batch_size = j.value("batch_size", c.batch_size);
    c.epochs = j.value("epochs", c.epochs);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    c.rmsprop_decay = j.value("rmsprop_decay", c.rmsprop_decay);
    c.rmsprop_epsilon = j.value("rmsprop_epsilon", c.rmsprop_epsilon);
    c.corruption_ratio = j.value("corruption_ratio", c.corruption_ratio);
    c.corruption_mode = corruption_mode_from_string(j.value("corruption_mode", to_string(c.corruption_mode)));
    c.gaussian_sigma = j.value("gaussian_sigma", c.gaussian_sigma);
    if (j.contains("loss")) c.loss = LossConfig::from_json(j.at("loss"));
    c.mode = train_mode_from_string(j.value("mode", to_string(c.mode)));
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    return c;
}

nlohmann::json FinetuneConfig::to_json() const {
    return {{"epochs", epochs},
            {"batch_size", batch_size},
            {"learning_rate", learning_rate},
            {"rmsprop_decay", rmsprop_decay},
            {"rmsprop_epsilon", rmsprop_epsilon},
            {"seed", seed},
            {"freeze_encoder", freeze_encoder}};
}

ModelConfig model_config_for(const TableDataset& dataset, ModelConfig base) {
    base.n_features = dataset.n_features();
    if (dataset.n_classes >= 2) base.n_classes = dataset.n_classes;
    return base.resolved();
}

TrainState init_train_state(const ModelConfig& model, const TrainConfig& config, std::uint64_t preprocessor_hash) {
    TrainState st;
    st.model = model.resolved();
    st.model.validate();
    auto init_rng = derive_stream(config.seed, kInitStream);
    st.params = ModelParameters::initialize(st.model, init_rng);
    st.accumulators = ModelParameters::zeros(st.model);
    st.data_rng = derive_stream(config.seed, kDataStream);
    st.corruption_rng = derive_stream(config.seed, kCorruptionStream);
    st.preprocessor_hash = preprocessor_hash;
    return st;
}

GroupSet pretrain_groups(TrainMode mode) {
    GroupSet groups{"input_weights", "tokenizer", "encoder", "projection", "decoder"};
    if (mode == TrainMode::semi) groups.insert("classifier");
    return groups;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

void rmsprop_step(ModelParameters& params, const ModelParameters& grads, ModelParameters& accumulators, double lr,
                  double rho, double eps, const GroupSet* groups) {
    auto p = params.tensors();
    auto g = grads.tensors();
    auto a = accumulators.tensors();
    if (p.size() != g.size() || p.size() != a.size()) throw DataError("rmsprop: parameter layouts differ");
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (groups && !groups->count(parameter_group(p[i].name))) continue;
        if (g[i].value->rows() != p[i].value->rows() || g[i].value->cols() != p[i].value->cols())
            throw DataError("rmsprop: gradient shape mismatch for " + p[i].name);
        if (!g[i].value->allFinite()) throw NumericalError("non-finite gradient in " + p[i].name);
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (groups && !groups->count(parameter_group(p[i].name))) continue;
        auto acc = a[i].value->array();
        const auto grad = g[i].value->array();
        acc = rho * acc + (1.0 - rho) * grad.square();
        // A zero gradient never moves a parameter, even when eps = 0 and acc = 0.
        p[i].value->array() -= (grad == 0.0).select(0.0, lr * grad / (acc.sqrt() + eps));
    }
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

std::size_t steps_per_epoch(std::size_t n, std::size_t batch_size) {
    const std::size_t b = std::min(batch_size, n);
    return b == 0 ? 0 : (n + b - 1) / b;
}

std::pair<Batch, Batch> sample_two_batches(const TableDataset& ds, std::size_t batch_size, std::mt19937_64& rng) {
    const std::size_t n = ds.n_samples();
    if (n == 0) throw DataError("cannot sample from an empty dataset");
    const std::size_t B = std::min(batch_size, n);
    std::vector<std::size_t> pool(n);
    auto draw = [&] {
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        for (std::size_t k = 0; k < B; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, n - 1);
            std::swap(pool[k], pool[pick(rng)]);
        }
        Batch b;
        b.rows.assign(pool.begin(), pool.begin() + static_cast<long>(B));
        b.X.resize(static_cast<Eigen::Index>(B), ds.X.cols());
        if (ds.y) b.y.emplace();
        for (std::size_t k = 0; k < B; ++k) {
            b.X.row(static_cast<Eigen::Index>(k)) = ds.X.row(static_cast<Eigen::Index>(b.rows[k]));
            if (ds.y) b.y->push_back((*ds.y)[b.rows[k]]);
        }
        return b;
    };
    Batch first = draw();
    Batch second = draw();
    return {std::move(first), std::move(second)};
}

// ---------------------------------------------------------------------------
// Objective
// ---------------------------------------------------------------------------

LossReport evaluate_objective(const ModelParameters& p, const ModelConfig& raw, const LossConfig& loss,
                              TrainMode mode, const StepInputs& in, ModelParameters* grads,
                              PairDistanceStats* pair_stats) {
    const ModelConfig c = raw.resolved();
    LossReport report;

    EncoderCache enc1, enc2;
    const Matrix z1 = encode(p, c, apply_input_weights(in.corrupted1, p.input_weights), &enc1);
    const Matrix z2 = encode(p, c, apply_input_weights(in.corrupted2, p.input_weights), &enc2);
    const Matrix r1 = decode(p, z1);
    const Matrix r2 = decode(p, z2);
    const auto rec = reconstruction_loss_grad(in.x1, r1, in.x2, r2);
    report.reconstruction = rec.value;
    report.penalty = regularization_penalty(p.input_weights, loss.lambda, loss.p);
    report.total = self_loss(report.reconstruction, report.penalty);

    Matrix dz1, dz2;
    if (grads) {
        *grads = ModelParameters::zeros(c);
        dz1 = decoder_backward(p, z1, r1, rec.d_recon1, *grads);
        dz2 = decoder_backward(p, z2, r2, rec.d_recon2, *grads);
    }

    if (mode == TrainMode::semi) {
        std::vector<Eigen::Index> lab1, lab2, pairs;
        for (std::size_t i = 0; i < in.y1.size(); ++i) {
            const bool a = in.y1[i] != kUnlabeled;
            const bool b = in.y2[i] != kUnlabeled;
            if (a) lab1.push_back(static_cast<Eigen::Index>(i));
            if (b) lab2.push_back(static_cast<Eigen::Index>(i));
            if (a && b) pairs.push_back(static_cast<Eigen::Index>(i));
        }

        ClassifierCache cls1, cls2;
        const Matrix logits1 = classify(p, gather_rows(z1, lab1), &cls1);
        const Matrix logits2 = classify(p, gather_rows(z2, lab2), &cls2);
        const auto cls = classification_loss_grad(logits1, gather_labels(in.y1, lab1), logits2,
                                                  gather_labels(in.y2, lab2));
        report.classification = cls.value;

        const Matrix pz1 = gather_rows(z1, pairs);
        const Matrix pz2 = gather_rows(z2, pairs);
        const Labels py1 = gather_labels(in.y1, pairs);
        const Labels py2 = gather_labels(in.y2, pairs);
        const Matrix u1 = l2_normalize_rows(pz1);
        const Matrix u2 = l2_normalize_rows(pz2);
        const auto con = contrastive_loss_grad(u1, u2, py1, py2, loss.margin);
        report.contrastive = con.value;
        report.total = semi_loss(report.total, report.classification, report.contrastive, loss.alpha, loss.beta);

        if (pair_stats) {
            *pair_stats = {};
            for (std::size_t k = 0; k < pairs.size(); ++k) {
                const double d = (u1.row(static_cast<Eigen::Index>(k)) - u2.row(static_cast<Eigen::Index>(k))).norm();
                if (py1[k] == py2[k]) {
                    pair_stats->similar_mean += d;
                    ++pair_stats->similar_count;
                } else {
                    pair_stats->dissimilar_mean += d;
                    ++pair_stats->dissimilar_count;
                }
            }
            if (pair_stats->similar_count) pair_stats->similar_mean /= static_cast<double>(pair_stats->similar_count);
            if (pair_stats->dissimilar_count)
                pair_stats->dissimilar_mean /= static_cast<double>(pair_stats->dissimilar_count);
        }

        if (grads) {
            scatter_add_rows(dz1, classify_backward(p, cls1, loss.alpha * cls.d_logits1, *grads), lab1);
            scatter_add_rows(dz2, classify_backward(p, cls2, loss.alpha * cls.d_logits2, *grads), lab2);
            scatter_add_rows(dz1, l2_normalize_rows_backward(pz1, loss.beta * con.d_z1), pairs);
            scatter_add_rows(dz2, l2_normalize_rows_backward(pz2, loss.beta * con.d_z2), pairs);
        }
    }

    if (grads) {
        Matrix dxw1, dxw2;
        encode_backward(p, c, enc1, dz1, *grads, &dxw1);
        encode_backward(p, c, enc2, dz2, *grads, &dxw2);
        grads->input_weights.row(0) += dxw1.cwiseProduct(in.corrupted1).colwise().sum();
        grads->input_weights.row(0) += dxw2.cwiseProduct(in.corrupted2).colwise().sum();
        grads->input_weights += regularization_penalty_grad(p.input_weights, loss.lambda, loss.p);
    }
    return report;
}

// ---------------------------------------------------------------------------
// Pretraining
// ---------------------------------------------------------------------------

PretrainResult pretrain(const TableDataset& dataset, TrainState state, const TrainConfig& config,
                        const TrainHooks& hooks) {
    config.validate();
    state.model = state.model.resolved();
    if (dataset.n_features() != state.model.n_features)
        throw DataError("dataset has " + std::to_string(dataset.n_features()) + " features, model expects " +
                        std::to_string(state.model.n_features));
    if (dataset.n_samples() == 0) throw DataError("cannot pretrain on an empty dataset");

    PretrainResult result;
    TrainMode mode = config.mode;
    if (mode == TrainMode::semi && dataset.n_labeled() == 0) {
        std::cerr << "warning: no labeled rows, semi-supervised pretraining falls back to self-supervised\n";
        mode = TrainMode::self;
        ++result.warnings;
    }
    if (config.batch_size > dataset.n_samples()) {
        std::cerr << "warning: batch size " << config.batch_size << " exceeds " << dataset.n_samples()
                  << " rows, using " << dataset.n_samples() << "\n";
        ++result.warnings;
    }

    const auto marginals = fit_marginals(dataset.X);
    const CorruptionConfig corruption{config.corruption_ratio, config.seed, config.corruption_mode,
                                      config.gaussian_sigma};
    const std::size_t per_epoch = steps_per_epoch(dataset.n_samples(), config.batch_size);
    const std::uint64_t total = static_cast<std::uint64_t>(config.epochs) * per_epoch;
    const std::uint64_t stop = hooks.stop_after_step ? std::min(*hooks.stop_after_step, total) : total;
    const GroupSet groups = pretrain_groups(mode);
    const Labels no_labels(std::min(config.batch_size, dataset.n_samples()), kUnlabeled);

    ModelParameters grads;
    double epoch_sum = 0.0;
    std::size_t epoch_steps = 0;
    while (state.step < stop) {
        const auto data_before = state.data_rng;
        const auto corruption_before = state.corruption_rng;
        auto fail = [&](const std::string& why) {
            auto last_good = std::make_shared<TrainState>(state);
            last_good->data_rng = data_before;
            last_good->corruption_rng = corruption_before;
            return DivergenceError(why + " at step " + std::to_string(state.step + 1), std::move(last_good));
        };

        auto [b1, b2] = sample_two_batches(dataset, config.batch_size, state.data_rng);
        StepInputs in;
        in.corrupted1 = corrupt(b1.X, marginals, corruption, state.corruption_rng).values;
        in.corrupted2 = corrupt(b2.X, marginals, corruption, state.corruption_rng).values;
        in.x1 = std::move(b1.X);
        in.x2 = std::move(b2.X);
        in.y1 = b1.y ? std::move(*b1.y) : no_labels;
        in.y2 = b2.y ? std::move(*b2.y) : no_labels;

        PairDistanceStats stats;
        LossReport report;
        try {
            report = evaluate_objective(state.params, state.model, config.loss, mode, in, &grads, &stats);
        } catch (const NumericalError& e) {
            throw fail(e.what());
        }
        if (!std::isfinite(report.total)) throw fail("non-finite loss");
        try {
            rmsprop_step(state.params, grads, state.accumulators, config.learning_rate, config.rmsprop_decay,
                         config.rmsprop_epsilon, &groups);
        } catch (const NumericalError& e) {
            throw fail(e.what());
        }
        ++state.step;
        report.step = state.step;
        result.log.push_back(report);
        if (mode == TrainMode::semi) result.pair_stats.push_back(stats);
        if (hooks.on_step) hooks.on_step(report);
        if (config.checkpoint_every && state.step % config.checkpoint_every == 0 && hooks.on_checkpoint)
            hooks.on_checkpoint(state);

        epoch_sum += report.total;
        ++epoch_steps;
        if (state.step % per_epoch == 0) {
            if (hooks.progress)
                *hooks.progress << "epoch " << state.step / per_epoch << "/" << config.epochs
                                << " mean_loss " << epoch_sum / static_cast<double>(epoch_steps) << "\n";
            epoch_sum = 0.0;
            epoch_steps = 0;
        }
    }
    result.state = std::move(state);
    return result;
}

PretrainResult pretrain_self(const TableDataset& dataset, const ModelConfig& model, TrainConfig config,
                             const TrainHooks& hooks) {
    config.mode = TrainMode::self;
    return pretrain(dataset, init_train_state(model, config), config, hooks);
}

PretrainResult pretrain_semi(const TableDataset& dataset, const ModelConfig& model, TrainConfig config,
                             const TrainHooks& hooks) {
    config.mode = TrainMode::semi;
    return pretrain(dataset, init_train_state(model, config), config, hooks);
}

// ---------------------------------------------------------------------------
// Loss log
// ---------------------------------------------------------------------------

void write_loss_log_header(std::ostream& out, bool wall_clock) {
    out << "step,reconstruction,classification,contrastive,penalty,total";
    if (wall_clock) out << ",wall_clock_s";
    out << '\n';
}

void write_loss_log_row(std::ostream& out, const LossReport& r, std::optional<double> wall_clock_s) {
    out << r.step << ',' << format_double(r.reconstruction) << ',' << format_double(r.classification) << ','
        << format_double(r.contrastive) << ',' << format_double(r.penalty) << ',' << format_double(r.total);
    if (wall_clock_s) out << ',' << format_double(*wall_clock_s);
    out << '\n';
}

// ---------------------------------------------------------------------------
// Downstream
// ---------------------------------------------------------------------------

Matrix embed_matrix(const ModelParameters& params, const ModelConfig& model, const Matrix& X, std::size_t chunk) {
    const ModelConfig c = model.resolved();
    if (static_cast<std::size_t>(X.cols()) != c.n_features)
        throw DataError("data has " + std::to_string(X.cols()) + " features, checkpoint expects " +
                        std::to_string(c.n_features));
    Matrix Z(X.rows(), static_cast<Eigen::Index>(c.z_dim));
    for (Eigen::Index start = 0; start < X.rows(); start += static_cast<Eigen::Index>(chunk)) {
        const Eigen::Index len = std::min<Eigen::Index>(static_cast<Eigen::Index>(chunk), X.rows() - start);
        Z.middleRows(start, len) = encode(params, c, apply_input_weights(X.middleRows(start, len), params.input_weights));
    }
    return Z;
}

Matrix FinetunedModel::predict_proba(const Matrix& X) const {
    return softmax_rows(finetune_logits(params, embed_matrix(params, model, X)));
}

double finetune_objective(const ModelParameters& params, const ModelConfig& model, const TableDataset& data) {
    if (!data.y) throw DataError("fine-tuning objective needs labels");
    std::vector<std::size_t> rows;
    Labels y;
    for (std::size_t i = 0; i < data.n_samples(); ++i) {
        if ((*data.y)[i] == kUnlabeled) continue;
        rows.push_back(i);
        y.push_back((*data.y)[i]);
    }
    const Matrix X = data.select_rows(rows).X;
    return cross_entropy(finetune_logits(params, embed_matrix(params, model, X)), y);
}

FinetunedModel finetune(const ModelConfig& model, const ModelParameters& pretrained, const TableDataset& labeled,
                        const FinetuneConfig& config) {
    const ModelConfig c = model.resolved();
    if (!labeled.y) throw DataError("fine-tuning needs a labeled dataset");
    if (labeled.n_features() != c.n_features)
        throw DataError("dataset has " + std::to_string(labeled.n_features()) + " features, checkpoint expects " +
                        std::to_string(c.n_features));
    if (labeled.n_classes != 0 && labeled.n_classes != c.n_classes)
        throw DataError("dataset has " + std::to_string(labeled.n_classes) + " classes, fine-tune head has " +
                        std::to_string(c.n_classes));
    if (config.batch_size < 1) throw UsageError("fine-tune batch size must be positive");
    if (!(config.learning_rate > 0.0)) throw UsageError("fine-tune learning rate must be positive");

    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labeled.n_samples(); ++i)
        if ((*labeled.y)[i] != kUnlabeled) {
            if ((*labeled.y)[i] >= static_cast<int>(c.n_classes))
                throw DataError("label " + std::to_string((*labeled.y)[i]) + " exceeds fine-tune head classes");
            rows.push_back(i);
        }
    if (rows.empty()) throw DataError("fine-tuning needs at least one labeled row");

    FinetunedModel out{c, pretrained, {}};
    ModelParameters acc = ModelParameters::zeros(c);
    ModelParameters grads;
    const GroupSet groups = config.freeze_encoder
                                ? GroupSet{"finetune_head"}
                                : GroupSet{"input_weights", "tokenizer", "encoder", "projection", "finetune_head"};
    auto rng = derive_stream(config.seed, kFinetuneStream);
    auto& p = out.params;

    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        std::shuffle(rows.begin(), rows.end(), rng);
        double sum = 0.0;
        for (std::size_t start = 0; start < rows.size(); start += config.batch_size) {
            const std::size_t end = std::min(rows.size(), start + config.batch_size);
            const std::vector<std::size_t> idx(rows.begin() + static_cast<long>(start), rows.begin() + static_cast<long>(end));
            Matrix X(static_cast<Eigen::Index>(idx.size()), labeled.X.cols());
            Labels y;
            for (std::size_t k = 0; k < idx.size(); ++k) {
                X.row(static_cast<Eigen::Index>(k)) = labeled.X.row(static_cast<Eigen::Index>(idx[k]));
                y.push_back((*labeled.y)[idx[k]]);
            }
            EncoderCache cache;
            const Matrix z = encode(p, c, apply_input_weights(X, p.input_weights), &cache);
            const auto ce = cross_entropy_grad(finetune_logits(p, z), y);
            if (!std::isfinite(ce.value)) throw NumericalError("non-finite fine-tuning loss");
            sum += ce.value * static_cast<double>(idx.size());

            grads = ModelParameters::zeros(c);
            grads.ft_w.noalias() = z.transpose() * ce.d_logits1;
            grads.ft_b.row(0) = ce.d_logits1.colwise().sum();
            if (!config.freeze_encoder) {
                Matrix dxw;
                encode_backward(p, c, cache, ce.d_logits1 * p.ft_w.transpose(), grads, &dxw);
                grads.input_weights.row(0) += dxw.cwiseProduct(X).colwise().sum();
            }
            rmsprop_step(p, grads, acc, config.learning_rate, config.rmsprop_decay, config.rmsprop_epsilon, &groups);
        }
        out.epoch_losses.push_back(sum / static_cast<double>(rows.size()));
    }
    return out;
}

}  // namespace contab
