#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "contab/evaluation.hpp"
#include "contab/synthetic.hpp"
#include "support/oracles.hpp"

using namespace contab;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "contab_test_eval" / name;
    fs::create_directories(p);
    return p;
}

TableDataset clusters(std::size_t n, std::uint64_t seed) {
    RedundantClustersSpec s;
    s.n_samples = n;
    s.n_informative = 2;
    s.n_copies = 2;
    s.n_noise = 4;
    s.seed = seed;
    auto d = make_redundant_clusters_dataset(s);
    d.n_classes = 2;
    return d;
}

ModelConfig small_model(const TableDataset& d) {
    ModelConfig m;
    m.token_dim = 8;
    m.n_layers = 1;
    return model_config_for(d, m);
}

// Newton's method on (beta, b) for the binary logistic objective
// mean logloss + (l2 / 4) beta^2, the two-class image of the multinomial
// objective with penalty (l2 / 2)(c0^2 + c1^2) and beta = c1 - c0.
std::pair<double, double> newton_1d(const std::vector<double>& x, const std::vector<int>& y, double l2) {
    double beta = 0.0, b = 0.0;
    const double n = static_cast<double>(x.size());
    for (int it = 0; it < 100; ++it) {
        double g0 = 0, g1 = 0, h00 = 0, h01 = 0, h11 = 0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double p = 1.0 / (1.0 + std::exp(-(beta * x[i] + b)));
            const double r = p - y[i];
            const double w = p * (1 - p);
            g0 += r * x[i] / n;
            g1 += r / n;
            h00 += w * x[i] * x[i] / n;
            h01 += w * x[i] / n;
            h11 += w / n;
        }
        g0 += 0.5 * l2 * beta;
        h00 += 0.5 * l2;
        const double det = h00 * h11 - h01 * h01;
        beta -= (h11 * g0 - h01 * g1) / det;
        b -= (h00 * g1 - h01 * g0) / det;
    }
    return {beta, b};
}

}  // namespace

TEST(Auroc, Examples) {
    const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
    const std::vector<int> y{0, 0, 1, 1};
    EXPECT_DOUBLE_EQ(auroc(s, y), 0.75);
    EXPECT_EQ(auroc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}), 1.0);
    EXPECT_EQ(auroc(std::vector<double>(6, 0.3), std::vector<int>{0, 1, 0, 1, 1, 0}), 0.5);
}

TEST(Auroc, SingleClassIsError) {
    EXPECT_THROW(auroc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), DataError);
    EXPECT_THROW(auroc(std::vector<double>{0.1}, std::vector<int>{2}), DataError);
}

TEST(Auroc, MatchesPairCountWithTies) {
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t n = 2 + rng() % 60;
        std::vector<double> s(n);
        std::vector<int> y(n);
        const int levels = 1 + static_cast<int>(rng() % 8);  // few levels -> many ties
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng() % levels) / levels;
            y[i] = static_cast<int>(rng() % 2);
        }
        y[0] = 0;
        y[1] = 1;
        EXPECT_NEAR(auroc(s, y), oracle::auroc(s, y), 1e-12);
    }
}

TEST(Auroc, MonotoneInvarianceAndComplement) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    std::vector<double> s(200), t(200), neg(200);
    std::vector<int> y(200);
    for (int i = 0; i < 200; ++i) {
        y[i] = i % 3 == 0;
        s[i] = g(rng) + y[i];
        t[i] = std::exp(3 * s[i]) + 7;
        neg[i] = -s[i];
    }
    EXPECT_EQ(auroc(s, y), auroc(t, y));
    EXPECT_NEAR(auroc(s, y) + auroc(neg, y), 1.0, 1e-15);
}

TEST(Accuracy, Examples) {
    EXPECT_EQ(accuracy(std::vector<int>{1, 0, 2}, std::vector<int>{1, 0, 2}), 1.0);
    EXPECT_EQ(accuracy(std::vector<int>{1, 1}, std::vector<int>{0, 0}), 0.0);
    EXPECT_EQ(accuracy(std::vector<int>{1, 0, 1, 1}, std::vector<int>{1, 0, 1, 0}), 0.75);
    EXPECT_THROW(accuracy(std::vector<int>{}, std::vector<int>{}), DataError);
}

TEST(ScorePredictions, BinaryUsesAurocMulticlassAccuracy) {
    Matrix p(4, 2);
    p << 0.9, 0.1, 0.6, 0.4, 0.65, 0.35, 0.2, 0.8;
    auto r = score_predictions(p, {0, 0, 1, 1}, 2);
    EXPECT_EQ(r.metric, "auroc");
    EXPECT_DOUBLE_EQ(r.value, 0.75);
    EXPECT_EQ(r.n_test, 4u);
    Matrix q(3, 3);
    q << 1, 0, 0, 0, 1, 0, 0, 1, 0;
    r = score_predictions(q, {0, 1, 2}, 3);
    EXPECT_EQ(r.metric, "accuracy");
    EXPECT_NEAR(r.value, 2.0 / 3, 1e-15);
}

TEST(Embeddings, ShapeNormAndPurity) {
    auto d = clusters(60, 3);
    Matrix twice = d.X;
    twice.row(5) = twice.row(9);
    d.X = twice;
    const auto m = small_model(d);
    std::mt19937_64 rng(4);
    const auto p = ModelParameters::initialize(m, rng);
    const auto e = embed_dataset(m, p, d);
    EXPECT_EQ(e.Z.rows(), 60);
    EXPECT_EQ(e.Z.cols(), 4);
    for (Eigen::Index i = 0; i < e.Z.rows(); ++i) EXPECT_NEAR(e.Z.row(i).norm(), 1.0, 1e-9);
    EXPECT_EQ(e.Z.row(5), e.Z.row(9));
    EXPECT_EQ(embed_dataset(m, p, d).Z, e.Z);
    EXPECT_EQ(e.row_ids, d.row_ids);
    EXPECT_EQ(e.source_checkpoint, parameter_fingerprint(p));
}

TEST(Embeddings, CsvRoundTripIsExact) {
    auto d = clusters(20, 5);
    const auto m = small_model(d);
    std::mt19937_64 rng(6);
    const auto e = embed_dataset(m, ModelParameters::initialize(m, rng), d);
    const auto path = scratch("emb") / "e.csv";
    write_embeddings_csv(path, e);
    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "row_id,z_0,z_1,z_2,z_3");
    const auto back = read_embeddings_csv(path);
    EXPECT_EQ(back.Z, e.Z);
    EXPECT_EQ(back.row_ids, e.row_ids);
}

TEST(Embeddings, MaskExport) {
    Mask m(2, 3);
    m << 1, 0, 1, 0, 0, 1;
    std::ostringstream out;
    write_mask_csv(out, m, {7, 8});
    EXPECT_EQ(out.str(), "row_id,m_0,m_1,m_2\n7,1,0,1\n8,0,0,1\n");
}

TEST(Concat, ColumnsAndBitIdenticalRawBlock) {
    TableDataset d;
    d.X = Matrix::Random(5, 16).cwiseAbs();
    d.y = Labels{0, 1, 1, 0, 1};
    d.row_ids = {0, 1, 2, 3, 4};
    d.n_classes = 2;
    for (int j = 0; j < 16; ++j) d.feature_names.push_back("f" + std::to_string(j));
    EmbeddingBatch e;
    e.Z = Matrix::Random(5, 8);
    e.row_ids = d.row_ids;
    const auto c = concat_features(d, e);
    EXPECT_EQ(c.n_features(), 24u);
    EXPECT_EQ(c.X.leftCols(16), d.X);
    EXPECT_EQ(c.X.rightCols(8), e.Z);
    EXPECT_EQ(*c.y, *d.y);
    EXPECT_EQ(distilled_features(d, e).X, e.Z);

    EmbeddingBatch empty;
    empty.Z = Matrix(5, 0);
    empty.row_ids = d.row_ids;
    EXPECT_EQ(concat_features(d, empty).X, d.X);

    e.row_ids = {0, 1, 2, 4, 3};
    EXPECT_THROW(concat_features(d, e), DataError);
}

TEST(Logistic, SeparableTrainingAccuracyAndDeterminism) {
    TableDataset d;
    d.X = Matrix(8, 2);
    d.X << 0, 0, 0.1, 0.3, 0.2, 0.1, 0.3, 0.2, 0.7, 0.8, 0.8, 0.6, 0.9, 0.9, 1.0, 0.7;
    d.y = Labels{0, 0, 0, 0, 1, 1, 1, 1};
    d.n_classes = 2;
    LogisticConfig c;
    c.l2 = 1e-8;
    const auto m = fit_logistic(d, c);
    EXPECT_EQ(accuracy(argmax_rows(m.predict_proba(d.X)), *d.y), 1.0);
    const auto m2 = fit_logistic(d, c);
    EXPECT_EQ(m.coef, m2.coef);
    EXPECT_EQ(m.intercept, m2.intercept);
}

TEST(Logistic, MatchesNewtonOracleIn1D) {
    const std::vector<double> x{0.1, 0.2, 0.25, 0.4, 0.5, 0.55, 0.7, 0.8, 0.9, 0.95};
    const std::vector<int> y{0, 0, 1, 0, 1, 0, 1, 1, 0, 1};
    TableDataset d;
    d.X = Matrix(10, 1);
    for (int i = 0; i < 10; ++i) d.X(i, 0) = x[i];
    d.y = Labels(y.begin(), y.end());
    d.n_classes = 2;
    for (double l2 : {1e-4, 0.1}) {
        LogisticConfig c;
        c.l2 = l2;
        c.tolerance = 1e-8;
        const auto m = fit_logistic(d, c);
        EXPECT_TRUE(m.converged);
        const auto [beta, b] = newton_1d(x, y, l2);
        EXPECT_NEAR(m.coef(0, 1) - m.coef(0, 0), beta, 1e-4);
        EXPECT_NEAR(m.intercept(1) - m.intercept(0), b, 1e-4);
    }
}

TEST(Logistic, NonConvergenceIsFlaggedNotFatal) {
    const auto d = clusters(80, 7);
    LogisticConfig c;
    c.max_iterations = 1;
    const auto r = logistic_regression(d, d, c);
    EXPECT_TRUE(r.warning);
    EXPECT_GE(r.value, 0.0);
    EXPECT_LE(r.value, 1.0);
}

TEST(Adapters, UnregisteredIsSkipped) {
    const auto d = clusters(40, 8);
    AdapterRegistry reg;
    const auto out = baseline_adapter(reg, "xgboost", d, d);
    EXPECT_TRUE(out.skipped);
    EXPECT_FALSE(out.report);
    EXPECT_NE(out.reason.find("xgboost"), std::string::npos);
}

TEST(Adapters, LogisticSelfAdapterReproducesReport) {
    const auto train = clusters(120, 9);
    const auto test = clusters(40, 10);
    AdapterRegistry reg;
    reg.add("logistic", std::make_shared<LogisticAdapter>());
    const auto out = baseline_adapter(reg, "logistic", train, test);
    ASSERT_TRUE(out.report);
    const auto direct = logistic_regression(train, test);
    EXPECT_EQ(out.report->value, direct.value);
    EXPECT_EQ(out.report->metric, direct.metric);
    EXPECT_EQ(out.report->n_test, direct.n_test);
}

TEST(Adapters, ProcessUniformScoresGiveHalf) {
    const auto dir = scratch("adapter");
    const auto script = dir / "uniform.sh";
    {
        std::ofstream f(script);
        f << "#!/bin/sh\n"
             "n=$(($(wc -l < \"$2\") - 1))\n"
             "echo class_0,class_1 > \"$3\"\n"
             "i=0; while [ $i -lt $n ]; do echo 0.5,0.5 >> \"$3\"; i=$((i+1)); done\n";
    }
    fs::permissions(script, fs::perms::owner_all);
    const auto train = clusters(30, 11);
    const auto test = clusters(20, 12);
    AdapterRegistry reg;
    reg.add("uniform", std::make_shared<ProcessAdapter>(script.string(), dir / "work"));
    const auto out = baseline_adapter(reg, "uniform", train, test);
    ASSERT_TRUE(out.report) << out.reason;
    EXPECT_EQ(out.report->value, 0.5);
    EXPECT_EQ(out.report->method, "uniform");
}

TEST(Adapters, FailingProcessIsSkipped) {
    AdapterRegistry reg;
    reg.add("broken", std::make_shared<ProcessAdapter>("false", scratch("broken")));
    const auto d = clusters(20, 13);
    const auto out = baseline_adapter(reg, "broken", d, d);
    EXPECT_TRUE(out.skipped);
    EXPECT_FALSE(out.reason.empty());
}

TEST(Adapters, ScoresCsvRoundTrip) {
    Matrix p(2, 3);
    p << 0.2, 0.3, 0.5, 1.0 / 3, 1.0 / 3, 1.0 / 3;
    const auto path = scratch("scores") / "s.csv";
    write_scores_csv(path, p);
    EXPECT_EQ(read_scores_csv(path), p);
}

TEST(Pipeline, FeatureModesProduceValidReports) {
    const auto train = clusters(120, 14);
    const auto test = clusters(40, 15);
    const auto m = small_model(train);
    std::mt19937_64 rng(16);
    const auto p = ModelParameters::initialize(m, rng);
    AdapterRegistry reg;
    reg.add("logistic_adapter", std::make_shared<LogisticAdapter>());
    std::vector<std::string> skipped;
    const auto reports = evaluate_feature_modes("toy", train, test, m, p,
                                                {FeatureMode::raw, FeatureMode::distilled, FeatureMode::concat}, {},
                                                &reg, &skipped);
    ASSERT_EQ(reports.size(), 6u);
    EXPECT_TRUE(skipped.empty());
    for (const auto& r : reports) {
        EXPECT_GE(r.value, 0.0);
        EXPECT_LE(r.value, 1.0);
        EXPECT_EQ(r.n_test, 40u);
        EXPECT_EQ(r.dataset, "toy");
    }
    std::ostringstream table;
    render_feature_table(table, reports);
    EXPECT_NE(table.str().find("logistic_regression"), std::string::npos);
    EXPECT_NE(table.str().find("concat"), std::string::npos);
    const auto j = reports[0].to_json();
    EXPECT_EQ(j.at("features"), "raw");
    EXPECT_EQ(j.at("metric"), "auroc");
}

TEST(Pipeline, RescalePairFitsOnTrain) {
    TableDataset a, b;
    a.X = Matrix(2, 1);
    a.X << 2, 4;
    b.X = Matrix(2, 1);
    b.X << 3, 6;
    const auto [ra, rb] = rescale_pair(a, b);
    EXPECT_EQ(ra.X(0, 0), 0.0);
    EXPECT_EQ(ra.X(1, 0), 1.0);
    EXPECT_EQ(rb.X(0, 0), 0.5);
    EXPECT_EQ(rb.X(1, 0), 1.0);
}

TEST(Ablation, SingleRatioAndBestColumn) {
    const auto train = clusters(60, 17);
    const auto test = clusters(30, 18);
    AblationConfig c;
    c.ratios = {0.3};
    c.model.token_dim = 4;
    c.model.n_layers = 1;
    c.train.epochs = 2;
    c.train.batch_size = 32;
    c.finetune.epochs = 2;
    const auto t = ablation_runner("toy", train, test, c);
    ASSERT_EQ(t.cells.size(), 1u);
    ASSERT_EQ(t.cells[0].size(), 1u);
    EXPECT_EQ(t.best_column(0), 0u);
    std::ostringstream out;
    render_ablation_table(out, t);
    EXPECT_NE(out.str().find("*"), std::string::npos);
    EXPECT_NE(out.str().find("0.3"), std::string::npos);

    AblationTable tie;
    tie.datasets = {"x"};
    tie.ratios = {0.0, 0.1, 0.2};
    MetricReport r;
    r.value = 0.8;
    tie.cells = {{r, r, r}};
    tie.cells[0][2].value = 0.7;
    EXPECT_EQ(tie.best_column(0), 0u);
    tie.cells[0][1].value = 0.9;
    EXPECT_EQ(tie.best_column(0), 1u);

    c.ratios = {1.5};
    EXPECT_THROW(ablation_runner("toy", train, test, c), UsageError);
}
