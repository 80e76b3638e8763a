#include "contab/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "contab/checkpoint.hpp"

namespace contab {

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

double auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw DataError("auroc: scores and labels differ in length");
    std::size_t n_pos = 0, n_neg = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == 1)
            ++n_pos;
        else if (labels[i] == 0)
            ++n_neg;
        else
            throw DataError("auroc: labels must be 0 or 1");
        if (std::isnan(scores[i])) throw DataError("auroc: NaN score at index " + std::to_string(i));
    }
    if (n_pos == 0 || n_neg == 0) throw DataError("auroc undefined: only one class present");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });

    // Walk tie groups in ascending order; each positive beats every negative
    // strictly below it and splits credit with negatives in its own group.
    double wins = 0.0;
    std::size_t neg_below = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        std::size_t pos_here = 0, neg_here = 0;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] == 1 ? pos_here : neg_here)++;
            ++j;
        }
        wins += static_cast<double>(pos_here) * (static_cast<double>(neg_below) + 0.5 * static_cast<double>(neg_here));
        neg_below += neg_here;
        i = j;
    }
    return wins / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double accuracy(std::span<const int> predictions, std::span<const int> labels) {
    if (predictions.size() != labels.size()) throw DataError("accuracy: length mismatch");
    if (labels.empty()) throw DataError("accuracy: empty input");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hits += predictions[i] == labels[i];
    return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<int> argmax_rows(const Matrix& m) {
    std::vector<int> out(static_cast<std::size_t>(m.rows()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        Eigen::Index idx = 0;
        m.row(r).maxCoeff(&idx);
        out[static_cast<std::size_t>(r)] = static_cast<int>(idx);
    }
    return out;
}

std::string to_string(FeatureMode mode) {
    switch (mode) {
        case FeatureMode::raw: return "raw";
        case FeatureMode::distilled: return "distilled";
        case FeatureMode::concat: return "concat";
    }
    return "?";
}

FeatureMode feature_mode_from_string(const std::string& s) {
    if (s == "raw") return FeatureMode::raw;
    if (s == "distilled") return FeatureMode::distilled;
    if (s == "concat") return FeatureMode::concat;
    throw UsageError("unknown feature mode '" + s + "' (expected raw, distilled or concat)");
}

nlohmann::json MetricReport::to_json() const {
    nlohmann::json j{{"dataset", dataset}, {"method", method}, {"features", to_string(mode)},
                     {"metric", metric},   {"value", value},   {"n_test", n_test}};
    if (warning) j["warning"] = true;
    if (!note.empty()) j["note"] = note;
    return j;
}

MetricReport score_predictions(const Matrix& probs, const Labels& labels, std::size_t n_classes) {
    std::vector<double> scores;
    std::vector<int> y;
    std::vector<int> pred;
    const auto argmax = argmax_rows(probs);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] == kUnlabeled) continue;
        y.push_back(labels[i]);
        pred.push_back(argmax[i]);
        if (n_classes == 2) scores.push_back(probs(static_cast<Eigen::Index>(i), 1));
    }
    MetricReport r;
    r.n_test = y.size();
    if (r.n_test == 0) throw DataError("no labeled test rows to score");
    if (n_classes == 2) {
        r.metric = "auroc";
        r.value = auroc(scores, y);
    } else {
        r.metric = "accuracy";
        r.value = accuracy(pred, y);
    }
    return r;
}

// ---------------------------------------------------------------------------
// Embeddings
// ---------------------------------------------------------------------------

EmbeddingBatch embed_dataset(const ModelConfig& model, const ModelParameters& params, const TableDataset& dataset) {
    EmbeddingBatch out;
    out.Z = l2_normalize_rows(embed_matrix(params, model, dataset.X));
    out.source_checkpoint = parameter_fingerprint(params);
    out.row_ids = dataset.row_ids;
    if (out.row_ids.empty()) {
        out.row_ids.resize(dataset.n_samples());
        std::iota(out.row_ids.begin(), out.row_ids.end(), std::size_t{0});
    }
    return out;
}

void write_embeddings_csv(std::ostream& out, const EmbeddingBatch& batch) {
    out << "row_id";
    for (Eigen::Index k = 0; k < batch.Z.cols(); ++k) out << ",z_" << k;
    out << '\n';
    for (Eigen::Index r = 0; r < batch.Z.rows(); ++r) {
        out << batch.row_ids[static_cast<std::size_t>(r)];
        for (Eigen::Index k = 0; k < batch.Z.cols(); ++k) out << ',' << format_double(batch.Z(r, k));
        out << '\n';
    }
}

void write_embeddings_csv(const std::filesystem::path& path, const EmbeddingBatch& batch) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path.string());
    write_embeddings_csv(out, batch);
}

EmbeddingBatch read_embeddings_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const auto records = parse_csv(ss.str());
    if (records.empty() || records[0].empty() || records[0][0] != "row_id")
        throw DataError("not an embeddings file: " + path.string());
    EmbeddingBatch b;
    const auto k = static_cast<Eigen::Index>(records[0].size() - 1);
    b.Z.resize(static_cast<Eigen::Index>(records.size() - 1), k);
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != records[0].size()) throw DataError("ragged row in embeddings file");
        b.row_ids.push_back(static_cast<std::size_t>(std::stoull(records[r][0])));
        for (Eigen::Index c = 0; c < k; ++c) {
            auto v = parse_number(records[r][static_cast<std::size_t>(c + 1)]);
            if (!v) throw DataError("non-numeric embedding value");
            b.Z(static_cast<Eigen::Index>(r - 1), c) = *v;
        }
    }
    return b;
}

void write_mask_csv(std::ostream& out, const Mask& mask, const std::vector<std::size_t>& row_ids) {
    out << "row_id";
    for (Eigen::Index k = 0; k < mask.cols(); ++k) out << ",m_" << k;
    out << '\n';
    for (Eigen::Index r = 0; r < mask.rows(); ++r) {
        out << (row_ids.empty() ? static_cast<std::size_t>(r) : row_ids[static_cast<std::size_t>(r)]);
        for (Eigen::Index k = 0; k < mask.cols(); ++k) out << ',' << static_cast<int>(mask(r, k));
        out << '\n';
    }
}

namespace {

void check_alignment(const TableDataset& dataset, const EmbeddingBatch& emb) {
    if (emb.Z.rows() != dataset.X.rows()) throw DataError("embedding rows do not match dataset rows");
    if (!dataset.row_ids.empty() && emb.row_ids != dataset.row_ids)
        throw DataError("embedding row ids are not aligned with dataset rows");
}

}  // namespace

TableDataset concat_features(const TableDataset& dataset, const EmbeddingBatch& emb) {
    check_alignment(dataset, emb);
    TableDataset out = dataset;
    out.X.resize(dataset.X.rows(), dataset.X.cols() + emb.Z.cols());
    out.X.leftCols(dataset.X.cols()) = dataset.X;
    out.X.rightCols(emb.Z.cols()) = emb.Z;
    for (Eigen::Index k = 0; k < emb.Z.cols(); ++k) out.feature_names.push_back("z_" + std::to_string(k));
    return out;
}

TableDataset distilled_features(const TableDataset& dataset, const EmbeddingBatch& emb) {
    check_alignment(dataset, emb);
    TableDataset out = dataset;
    out.X = emb.Z;
    out.feature_names.clear();
    for (Eigen::Index k = 0; k < emb.Z.cols(); ++k) out.feature_names.push_back("z_" + std::to_string(k));
    return out;
}

std::pair<TableDataset, TableDataset> rescale_pair(const TableDataset& train, const TableDataset& test) {
    const auto scaler = MinMaxScaler::fit(train.X);
    TableDataset a = train, b = test;
    a.X = scaler.apply(train.X);
    b.X = scaler.apply(test.X);
    return {std::move(a), std::move(b)};
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

namespace {

struct LogisticProblem {
    Matrix X;
    Labels y;
    std::size_t d = 0, C = 0;
    const LogisticConfig* config = nullptr;

    std::size_t n_params() const { return d * C + (config->fit_intercept ? C : 0); }

    void unpack(const Eigen::VectorXd& theta, Matrix& coef, Eigen::RowVectorXd& intercept) const {
        coef = Eigen::Map<const Matrix>(theta.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(C));
        intercept = Eigen::RowVectorXd::Zero(static_cast<Eigen::Index>(C));
        if (config->fit_intercept)
            intercept = Eigen::Map<const Eigen::RowVectorXd>(theta.data() + d * C, static_cast<Eigen::Index>(C));
    }

    double value_grad(const Eigen::VectorXd& theta, Eigen::VectorXd& grad) const {
        Matrix coef;
        Eigen::RowVectorXd intercept;
        unpack(theta, coef, intercept);
        Matrix logits = X * coef;
        logits.rowwise() += intercept;
        const auto ce = cross_entropy_grad(logits, y);
        const Matrix gcoef = X.transpose() * ce.d_logits1 + config->l2 * coef;
        grad.resize(static_cast<Eigen::Index>(n_params()));
        Eigen::Map<Matrix>(grad.data(), static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(C)) = gcoef;
        if (config->fit_intercept)
            Eigen::Map<Eigen::RowVectorXd>(grad.data() + d * C, static_cast<Eigen::Index>(C)) =
                ce.d_logits1.colwise().sum();
        return ce.value + 0.5 * config->l2 * coef.squaredNorm();
    }
};

}  // namespace

Matrix LogisticModel::predict_proba(const Matrix& X) const {
    Matrix logits = X * coef;
    logits.rowwise() += intercept;
    return softmax_rows(logits);
}

LogisticModel fit_logistic(const TableDataset& train, const LogisticConfig& config) {
    if (!train.y) throw DataError("logistic regression needs labels");
    LogisticProblem prob;
    prob.config = &config;
    prob.d = train.n_features();
    prob.C = std::max<std::size_t>(2, train.n_classes);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < train.n_samples(); ++i)
        if ((*train.y)[i] != kUnlabeled) {
            rows.push_back(i);
            prob.y.push_back((*train.y)[i]);
        }
    if (rows.empty()) throw DataError("logistic regression needs labeled rows");
    prob.X = train.select_rows(rows).X;

    // L-BFGS with Armijo backtracking; deterministic given the data.
    Eigen::VectorXd theta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(prob.n_params()));
    Eigen::VectorXd grad;
    double f = prob.value_grad(theta, grad);
    std::deque<Eigen::VectorXd> s_hist, y_hist;
    std::deque<double> rho_hist;

    LogisticModel model;
    std::size_t it = 0;
    for (; it < config.max_iterations; ++it) {
        if (grad.norm() < config.tolerance) {
            model.converged = true;
            break;
        }
        // Two-loop recursion.
        Eigen::VectorXd q = grad;
        std::vector<double> alpha(s_hist.size());
        for (std::size_t k = s_hist.size(); k-- > 0;) {
            alpha[k] = rho_hist[k] * s_hist[k].dot(q);
            q -= alpha[k] * y_hist[k];
        }
        if (!s_hist.empty()) q *= s_hist.back().dot(y_hist.back()) / y_hist.back().squaredNorm();
        for (std::size_t k = 0; k < s_hist.size(); ++k) {
            const double beta = rho_hist[k] * y_hist[k].dot(q);
            q += (alpha[k] - beta) * s_hist[k];
        }
        Eigen::VectorXd dir = -q;
        double slope = grad.dot(dir);
        if (slope >= 0.0) {
            dir = -grad;
            slope = -grad.squaredNorm();
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        double step = 1.0;
        Eigen::VectorXd next, next_grad;
        double next_f = f;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls) {
            next = theta + step * dir;
            next_f = prob.value_grad(next, next_grad);
            if (next_f <= f + 1e-4 * step * slope) {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) break;

        Eigen::VectorXd s = next - theta;
        Eigen::VectorXd yv = next_grad - grad;
        const double sy = s.dot(yv);
        if (sy > 1e-12) {
            s_hist.push_back(std::move(s));
            y_hist.push_back(std::move(yv));
            rho_hist.push_back(1.0 / sy);
            if (s_hist.size() > config.history) {
                s_hist.pop_front();
                y_hist.pop_front();
                rho_hist.pop_front();
            }
        }
        theta = std::move(next);
        grad = std::move(next_grad);
        f = next_f;
    }
    if (!model.converged && grad.norm() < config.tolerance) model.converged = true;
    model.iterations = it;
    model.gradient_norm = grad.norm();
    prob.unpack(theta, model.coef, model.intercept);
    return model;
}

MetricReport logistic_regression(const TableDataset& train, const TableDataset& test, const LogisticConfig& config) {
    if (!test.y) throw DataError("logistic regression evaluation needs test labels");
    const auto model = fit_logistic(train, config);
    auto report = score_predictions(model.predict_proba(test.X), *test.y, std::max<std::size_t>(2, train.n_classes));
    report.method = "logistic_regression";
    if (!model.converged) {
        report.warning = true;
        report.note = "solver stopped before gradient tolerance (|g|=" + format_double(model.gradient_norm) + ")";
    }
    return report;
}

// ---------------------------------------------------------------------------
// Adapters
// ---------------------------------------------------------------------------

Matrix LogisticAdapter::fit_predict_proba(const TableDataset& train, const TableDataset& test) {
    return fit_logistic(train, config_).predict_proba(test.X);
}

void write_scores_csv(const std::filesystem::path& path, const Matrix& probs) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot write file: " + path.string());
    for (Eigen::Index c = 0; c < probs.cols(); ++c) out << (c ? "," : "") << "class_" << c;
    out << '\n';
    for (Eigen::Index r = 0; r < probs.rows(); ++r) {
        for (Eigen::Index c = 0; c < probs.cols(); ++c) out << (c ? "," : "") << format_double(probs(r, c));
        out << '\n';
    }
}

Matrix read_scores_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot read file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    const auto records = parse_csv(ss.str());
    if (records.empty()) throw DataError("empty scores file: " + path.string());
    Matrix m(static_cast<Eigen::Index>(records.size() - 1), static_cast<Eigen::Index>(records[0].size()));
    for (std::size_t r = 1; r < records.size(); ++r) {
        if (records[r].size() != records[0].size()) throw DataError("ragged row in scores file");
        for (std::size_t c = 0; c < records[r].size(); ++c) {
            auto v = parse_number(records[r][c]);
            if (!v) throw DataError("non-numeric score in " + path.string());
            m(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c)) = *v;
        }
    }
    return m;
}

Matrix ProcessAdapter::fit_predict_proba(const TableDataset& train, const TableDataset& test) {
    std::filesystem::create_directories(scratch_);
    const auto train_path = scratch_ / "train.csv";
    const auto test_path = scratch_ / "test.csv";
    const auto scores_path = scratch_ / "scores.csv";
    std::filesystem::remove(scores_path);
    write_dataset_csv(train_path, train);
    write_dataset_csv(test_path, test);
    const std::string cmd = command_ + " '" + train_path.string() + "' '" + test_path.string() + "' '" +
                            scores_path.string() + "'";
    const int rc = std::system(cmd.c_str());
    if (rc != 0) throw DataError("adapter command failed with status " + std::to_string(rc) + ": " + command_);
    Matrix scores = read_scores_csv(scores_path);
    if (scores.rows() != test.X.rows()) throw DataError("adapter returned " + std::to_string(scores.rows()) +
                                                        " score rows for " + std::to_string(test.X.rows()) + " test rows");
    return scores;
}

BaselineAdapter* AdapterRegistry::find(const std::string& name) const {
    auto it = adapters_.find(name);
    return it == adapters_.end() ? nullptr : it->second.get();
}

std::vector<std::string> AdapterRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [name, _] : adapters_) out.push_back(name);
    return out;
}

AdapterOutcome baseline_adapter(const AdapterRegistry& registry, const std::string& name, const TableDataset& train,
                                const TableDataset& test) {
    AdapterOutcome outcome;
    BaselineAdapter* adapter = registry.find(name);
    if (!adapter) {
        outcome.skipped = true;
        outcome.reason = "adapter '" + name + "' not registered";
        return outcome;
    }
    try {
        if (!test.y) throw DataError("adapter evaluation needs test labels");
        const Matrix probs = adapter->fit_predict_proba(train, test);
        MetricReport r = score_predictions(probs, *test.y, std::max<std::size_t>(2, train.n_classes));
        r.method = name;
        outcome.report = std::move(r);
    } catch (const std::exception& e) {
        outcome.skipped = true;
        outcome.reason = e.what();
    }
    return outcome;
}

// ---------------------------------------------------------------------------
// Pipelines
// ---------------------------------------------------------------------------

std::vector<MetricReport> evaluate_feature_modes(const std::string& dataset_name, const TableDataset& train,
                                                 const TableDataset& test, const ModelConfig& model,
                                                 const ModelParameters& params, const std::vector<FeatureMode>& modes,
                                                 const LogisticConfig& logistic, const AdapterRegistry* adapters,
                                                 std::vector<std::string>* skipped) {
    std::vector<MetricReport> reports;
    std::optional<EmbeddingBatch> train_emb, test_emb;
    for (FeatureMode mode : modes) {
        TableDataset a, b;
        if (mode == FeatureMode::raw) {
            a = train;
            b = test;
        } else {
            if (!train_emb) {
                train_emb = embed_dataset(model, params, train);
                test_emb = embed_dataset(model, params, test);
            }
            if (mode == FeatureMode::concat) {
                std::tie(a, b) = rescale_pair(concat_features(train, *train_emb), concat_features(test, *test_emb));
            } else {
                std::tie(a, b) =
                    rescale_pair(distilled_features(train, *train_emb), distilled_features(test, *test_emb));
            }
        }
        MetricReport r = logistic_regression(a, b, logistic);
        r.dataset = dataset_name;
        r.mode = mode;
        reports.push_back(r);
        if (adapters) {
            for (const auto& name : adapters->names()) {
                auto outcome = baseline_adapter(*adapters, name, a, b);
                if (outcome.report) {
                    outcome.report->dataset = dataset_name;
                    outcome.report->mode = mode;
                    outcome.report->note = "identical adapter settings across feature modes";
                    reports.push_back(*outcome.report);
                } else if (skipped) {
                    skipped->push_back(name + " (" + to_string(mode) + "): " + outcome.reason);
                }
            }
        }
    }
    return reports;
}

MetricReport evaluate_finetuned(const FinetunedModel& model, const TableDataset& test, const std::string& dataset_name) {
    if (!test.y) throw DataError("evaluation needs test labels");
    MetricReport r = score_predictions(model.predict_proba(test.X), *test.y, model.model.resolved().n_classes);
    r.dataset = dataset_name;
    r.method = "finetuned_encoder";
    r.mode = FeatureMode::raw;
    return r;
}

std::size_t AblationTable::best_column(std::size_t row) const {
    const auto& cells_row = cells.at(row);
    std::size_t best = 0;
    for (std::size_t c = 1; c < cells_row.size(); ++c)
        if (cells_row[c].value > cells_row[best].value) best = c;
    return best;
}

nlohmann::json AblationTable::to_json() const {
    nlohmann::json j{{"ratios", ratios}, {"rows", nlohmann::json::array()}};
    for (std::size_t r = 0; r < datasets.size(); ++r) {
        nlohmann::json row{{"dataset", datasets[r]}, {"best_ratio", ratios[best_column(r)]}};
        for (const auto& cell : cells[r]) row["cells"].push_back(cell.to_json());
        j["rows"].push_back(row);
    }
    return j;
}

AblationTable ablation_runner(const std::string& dataset_name, const TableDataset& train, const TableDataset& test,
                              const AblationConfig& config, std::ostream* progress) {
    if (config.ratios.empty()) throw UsageError("ablation needs at least one corruption ratio");
    for (double r : config.ratios)
        if (!(r >= 0.0 && r <= 1.0)) throw UsageError("corruption ratios must lie in [0, 1]");

    AblationTable table;
    table.datasets = {dataset_name};
    table.ratios = config.ratios;
    table.cells.emplace_back();
    const ModelConfig model = model_config_for(train, config.model);
    for (double ratio : config.ratios) {
        TrainConfig tc = config.train;
        tc.corruption_ratio = ratio;
        auto pre = pretrain_semi(train, model, tc);
        auto tuned = finetune(model, pre.state.params, train, config.finetune);
        MetricReport r = evaluate_finetuned(tuned, test, dataset_name);
        r.method = "ratio=" + format_double(ratio);
        if (progress) *progress << "ratio " << ratio << ": " << r.metric << " " << r.value << "\n";
        table.cells.back().push_back(std::move(r));
    }
    return table;
}

void render_ablation_table(std::ostream& out, const AblationTable& table) {
    out << std::left << std::setw(16) << "Dataset";
    for (double r : table.ratios) {
        std::ostringstream h;
        h << std::fixed << std::setprecision(1) << r;
        out << std::setw(10) << h.str();
    }
    out << '\n';
    for (std::size_t row = 0; row < table.datasets.size(); ++row) {
        out << std::setw(16) << table.datasets[row];
        const std::size_t best = table.best_column(row);
        for (std::size_t c = 0; c < table.cells[row].size(); ++c) {
            std::ostringstream v;
            v << std::fixed << std::setprecision(4) << table.cells[row][c].value << (c == best ? "*" : "");
            out << std::setw(10) << v.str();
        }
        out << '\n';
    }
}

void render_feature_table(std::ostream& out, const std::vector<MetricReport>& reports) {
    std::vector<std::pair<std::string, std::string>> rows;
    std::map<std::pair<std::string, std::string>, std::map<FeatureMode, const MetricReport*>> grid;
    for (const auto& r : reports) {
        auto key = std::pair{r.dataset, r.method};
        if (!grid.count(key)) rows.push_back(key);
        grid[key][r.mode] = &r;
    }
    out << std::left << std::setw(16) << "Dataset" << std::setw(24) << "Method" << std::setw(12) << "Metric"
        << std::setw(12) << "raw" << std::setw(12) << "distilled" << std::setw(12) << "concat" << '\n';
    for (const auto& key : rows) {
        const auto& cells = grid[key];
        out << std::setw(16) << key.first << std::setw(24) << key.second << std::setw(12)
            << cells.begin()->second->metric;
        for (FeatureMode m : {FeatureMode::raw, FeatureMode::distilled, FeatureMode::concat}) {
            auto it = cells.find(m);
            std::ostringstream v;
            if (it == cells.end())
                v << "-";
            else
                v << std::fixed << std::setprecision(4) << it->second->value << (it->second->warning ? "!" : "");
            out << std::setw(12) << v.str();
        }
        out << '\n';
    }
}

}  // namespace contab
