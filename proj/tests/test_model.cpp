#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "contab/checkpoint.hpp"
#include "contab/corruption.hpp"
#include "contab/model.hpp"
#include "contab/training.hpp"
#include "support/oracles.hpp"

using namespace contab;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.n_features = 8;
    c.token_dim = 4;
    c.n_layers = 3;
    c.n_heads = 2;
    c.z_dim = 4;
    c.n_classes = 2;
    return c.resolved();
}

Matrix uniform(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo = 0.0, double hi = 1.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

// Random parameters with every tensor moved off its initial value, so that
// gains, biases and input weights are generic points for the checks.
ModelParameters generic_params(const ModelConfig& c, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto p = ModelParameters::initialize(c, rng);
    std::normal_distribution<double> n(0.0, 0.1);
    for (auto& t : p.tensors())
        for (Eigen::Index e = 0; e < t.value->size(); ++e) t.value->data()[e] += n(rng);
    return p;
}

StepInputs step_inputs(const ModelConfig& c, std::uint64_t seed, std::size_t B = 4) {
    std::mt19937_64 rng(seed);
    StepInputs in;
    const auto M = static_cast<Eigen::Index>(c.n_features);
    in.x1 = uniform(rng, B, M);
    in.x2 = uniform(rng, B, M);
    const auto marg = fit_marginals(uniform(rng, 16, M));
    in.corrupted1 = corrupt(in.x1, marg, {0.3, 0, CorruptionMode::marginal, 0.1}, rng).values;
    in.corrupted2 = corrupt(in.x2, marg, {0.3, 0, CorruptionMode::marginal, 0.1}, rng).values;
    in.y1 = {0, 1, 1, 0};
    in.y2 = {0, 0, 1, 1};
    in.y1.resize(B, 0);
    in.y2.resize(B, 1);
    return in;
}

}  // namespace

TEST(InputWeights, ElementwiseProduct) {
    Eigen::VectorXd x(2), w(2);
    x << 0.5, 0.2;
    w << 2, 0;
    const auto y = apply_input_weights(x, w);
    EXPECT_EQ(y(0), 1.0);
    EXPECT_EQ(y(1), 0.0);
    EXPECT_EQ(apply_input_weights(x, Eigen::VectorXd::Ones(2)), x);
    EXPECT_THROW(apply_input_weights(x, Eigen::VectorXd::Ones(3)), DataError);
    Matrix X(2, 2), W(1, 2);
    X << 1, 2, 3, 4;
    W << 10, -1;
    Matrix expected(2, 2);
    expected << 10, -2, 30, -4;
    EXPECT_EQ(apply_input_weights(X, W), expected);
}

TEST(InputWeights, GradientIsInput) {
    // d/dW_j of sum_j c_j (x o W)_j = c_j x_j, through the encoder's own backward pass
    const auto c = small_config();
    const auto p = generic_params(c, 1);
    std::mt19937_64 rng(2);
    const Matrix x = uniform(rng, 1, 8);
    EncoderCache cache;
    const Matrix z = encode(p, c, apply_input_weights(x, p.input_weights), &cache);
    auto grads = ModelParameters::zeros(c);
    Matrix d_xw;
    encode_backward(p, c, cache, Matrix::Ones(1, z.cols()), grads, &d_xw);
    ASSERT_EQ(d_xw.cols(), 8);
    // chain rule through x o W: dL/dW_j = dL/d(xw)_j * x_j
    const double h = 1e-6;
    for (int j = 0; j < 8; ++j) {
        Matrix wp = p.input_weights, wm = p.input_weights;
        wp(0, j) += h;
        wm(0, j) -= h;
        const double num =
            (encode(p, c, apply_input_weights(x, wp)).sum() - encode(p, c, apply_input_weights(x, wm)).sum()) / (2 * h);
        const double ana = d_xw(0, j) * x(0, j);
        EXPECT_LT(std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), 1e-8}), 1e-6) << j;
    }
}

TEST(Config, DefaultsAndValidation) {
    ModelConfig c;
    c.n_features = 20;
    const auto r = c.resolved();
    EXPECT_EQ(r.z_dim, 10u);
    EXPECT_EQ(r.ff_dim, 64u);
    EXPECT_EQ(r.mlp_hidden, 10u);
    EXPECT_EQ(r.n_layers, 3u);
    EXPECT_EQ(r.n_heads, 2u);
    c.n_features = 7;
    EXPECT_EQ(c.resolved().z_dim, 3u);
    c.n_features = 1;
    EXPECT_EQ(c.resolved().z_dim, 1u);
    c.token_dim = 5;
    EXPECT_THROW(c.resolved().validate(), UsageError);
    EXPECT_EQ(ModelConfig::from_json(r.to_json()), r);
}

TEST(Encoder, OutputWidthIsHalfTheFeatures) {
    ModelConfig c;
    c.n_features = 20;
    c = c.resolved();
    std::mt19937_64 rng(3);
    const auto p = ModelParameters::initialize(c, rng);
    const Matrix z = encode(p, c, uniform(rng, 5, 20));
    EXPECT_EQ(z.rows(), 5);
    EXPECT_EQ(z.cols(), 10);
}

TEST(Encoder, Pure) {
    const auto c = small_config();
    const auto p = generic_params(c, 4);
    std::mt19937_64 rng(5);
    Matrix x = uniform(rng, 1, 8);
    Matrix twice(2, 8);
    twice << x, x;
    const Matrix z = encode(p, c, twice);
    EXPECT_EQ(z.row(0), z.row(1));
    EXPECT_EQ(encode(p, c, x), encode(p, c, x));
}

TEST(Encoder, BatchRowsIndependent) {
    const auto c = small_config();
    const auto p = generic_params(c, 6);
    std::mt19937_64 rng(7);
    const Matrix x = uniform(rng, 5, 8);
    const Matrix z = encode(p, c, x);
    for (Eigen::Index i = 0; i < 5; ++i) EXPECT_EQ(encode(p, c, x.row(i)), z.row(i));
}

TEST(Encoder, FeaturePermutationWithParametersLeavesZUnchanged) {
    const auto c = small_config();
    auto p = generic_params(c, 8);
    std::mt19937_64 rng(9);
    Matrix x = uniform(rng, 3, 8);
    const Matrix z = encode(p, c, x);

    std::vector<int> perm{3, 0, 7, 1, 6, 2, 5, 4};
    Matrix xp(3, 8);
    auto q = p;
    for (int j = 0; j < 8; ++j) {
        xp.col(j) = x.col(perm[j]);
        q.token_scale.row(j) = p.token_scale.row(perm[j]);
        q.token_bias.row(j) = p.token_bias.row(perm[j]);
        q.column_embedding.row(j) = p.column_embedding.row(perm[j]);
    }
    EXPECT_LT((encode(q, c, xp) - z).cwiseAbs().maxCoeff(), 1e-12);
    // without permuting the parameters the output does change
    EXPECT_GT((encode(p, c, xp) - z).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Encoder, NonFiniteInputRejected) {
    const auto c = small_config();
    const auto p = generic_params(c, 10);
    Matrix x = Matrix::Zero(1, 8);
    x(0, 3) = std::nan("");
    EXPECT_THROW(encode(p, c, x), NumericalError);
    EXPECT_THROW(encode(p, c, Matrix::Zero(1, 7)), DataError);
}

TEST(Decoder, RangeAndZeroInput) {
    const auto c = small_config();
    auto p = generic_params(c, 11);
    p.dec_b.setZero();
    const Matrix half = decode(p, Matrix::Zero(2, 4));
    EXPECT_EQ(half, Matrix::Constant(2, 8, 0.5));
    std::mt19937_64 rng(12);
    const Matrix r = decode(p, uniform(rng, 50, 4, -30, 30));
    EXPECT_GT(r.minCoeff(), 0.0);
    EXPECT_LT(r.maxCoeff(), 1.0);
    EXPECT_EQ(p.dec_w.size() + p.dec_b.size(), 4 * 8 + 8);
}

TEST(Classifier, ShapesAndZeroWeights) {
    const auto c = small_config();
    auto p = generic_params(c, 13);
    std::mt19937_64 rng(14);
    const Matrix z = uniform(rng, 6, 4, -1, 1);
    const Matrix logits = classify(p, z);
    EXPECT_EQ(logits.rows(), 6);
    EXPECT_EQ(logits.cols(), 2);
    p.cls_w1.setZero();
    p.cls_b1.setZero();
    p.cls_w2.setZero();
    p.cls_b2.setZero();
    const Matrix probs = softmax_rows(classify(p, z));
    EXPECT_LT((probs.array() - 0.5).abs().maxCoeff(), 1e-15);
}

TEST(Normalize, Examples) {
    Eigen::VectorXd v(2);
    v << 3, 4;
    const auto u = l2_normalize(v);
    EXPECT_DOUBLE_EQ(u(0), 0.6);
    EXPECT_DOUBLE_EQ(u(1), 0.8);
    Eigen::VectorXd unit(3);
    unit << 1, 0, 0;
    EXPECT_EQ(l2_normalize(unit), unit);
    std::size_t zeros = 0;
    EXPECT_EQ(l2_normalize(Eigen::VectorXd::Zero(3), &zeros), Eigen::VectorXd::Zero(3));
    EXPECT_EQ(zeros, 1u);
    std::mt19937_64 rng(15);
    const Matrix rows = l2_normalize_rows(uniform(rng, 200, 7, -5, 5));
    for (Eigen::Index i = 0; i < rows.rows(); ++i) EXPECT_NEAR(rows.row(i).norm(), 1.0, 1e-12);
}

TEST(Normalize, BackwardMatchesFiniteDifferences) {
    std::mt19937_64 rng(16);
    const Matrix z = uniform(rng, 3, 4, -1, 1);
    const Matrix w = uniform(rng, 3, 4, -1, 1);
    const Matrix g = l2_normalize_rows_backward(z, w);
    const double h = 1e-6;
    for (Eigen::Index e = 0; e < z.size(); ++e) {
        Matrix up = z, dn = z;
        up.data()[e] += h;
        dn.data()[e] -= h;
        const double num = ((l2_normalize_rows(up).array() * w.array()).sum() -
                            (l2_normalize_rows(dn).array() * w.array()).sum()) / (2 * h);
        EXPECT_NEAR(g.data()[e], num, 1e-8);
    }
}

TEST(Activations, GeluDerivative) {
    for (double x : {-3.0, -0.7, 0.0, 0.4, 2.5}) {
        const double num = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
        EXPECT_NEAR(gelu_derivative(x), num, 1e-8);
    }
    EXPECT_EQ(gelu(0.0), 0.0);
}

TEST(Parameters, GroupsCoverEveryTensor) {
    const auto c = small_config();
    auto p = ModelParameters::zeros(c);
    const auto groups = parameter_groups();
    for (const auto& t : p.tensors())
        EXPECT_NE(std::find(groups.begin(), groups.end(), parameter_group(t.name)), groups.end()) << t.name;
    EXPECT_EQ(parameter_group("encoder.block1.wq"), "encoder");
    EXPECT_EQ(parameter_group("input_weights"), "input_weights");
    std::mt19937_64 rng(0);
    const auto init = ModelParameters::initialize(c, rng);
    EXPECT_EQ(init.input_weights, Matrix::Ones(1, 8));
    EXPECT_EQ(init.blocks[0].ln1_gain, Matrix::Ones(1, 4));
    EXPECT_TRUE(init.all_finite());
}

// Every tensor, every element: L_self and L_semi against central differences.
class ObjectiveGradient : public ::testing::TestWithParam<TrainMode> {};

TEST_P(ObjectiveGradient, MatchesFiniteDifferences) {
    const auto c = small_config();
    const auto p = generic_params(c, 21);
    const auto in = step_inputs(c, 22);
    LossConfig loss;
    loss.lambda = 0.05;
    const TrainMode mode = GetParam();
    ModelParameters grads;
    evaluate_objective(p, c, loss, mode, in, &grads);
    const auto result = oracle::check_gradients(
        p, grads, [&](const ModelParameters& q) { return evaluate_objective(q, c, loss, mode, in).total; });
    EXPECT_LT(result.max_rel_error, 1e-4) << result.worst_tensor;
    EXPECT_GT(result.checked, 500u);
}

INSTANTIATE_TEST_SUITE_P(Modes, ObjectiveGradient, ::testing::Values(TrainMode::self, TrainMode::semi));

TEST(ObjectiveGradientL1, PenaltyP1) {
    const auto c = small_config();
    const auto p = generic_params(c, 23);
    const auto in = step_inputs(c, 24);
    LossConfig loss;
    loss.lambda = 0.1;
    loss.p = 1;
    ModelParameters grads;
    evaluate_objective(p, c, loss, TrainMode::semi, in, &grads);
    const auto result = oracle::check_gradients(
        p, grads, [&](const ModelParameters& q) { return evaluate_objective(q, c, loss, TrainMode::semi, in).total; },
        1e-5, 1e-6, [](const std::string& n) { return n == "input_weights"; });
    EXPECT_LT(result.max_rel_error, 1e-4) << result.worst_tensor;
}

TEST(Checkpoint, RoundTripIsBitExact) {
    const auto c = small_config();
    TrainConfig tc;
    tc.seed = 5;
    auto st = init_train_state(c, tc, 0xabcdef);
    st.params = generic_params(c, 30);
    st.accumulators = generic_params(c, 31);
    st.step = 17;
    st.data_rng.discard(13);
    const fs::path path = fs::temp_directory_path() / "contab_model_ckpt.bin";
    save_checkpoint(path, st, tc.to_json());
    const auto back = load_checkpoint(path);
    EXPECT_EQ(back.state.model, st.model);
    EXPECT_EQ(back.state.step, 17u);
    EXPECT_EQ(back.state.preprocessor_hash, 0xabcdefu);
    EXPECT_EQ(back.state.data_rng, st.data_rng);
    EXPECT_EQ(back.state.corruption_rng, st.corruption_rng);
    EXPECT_EQ(parameter_fingerprint(back.state.params), parameter_fingerprint(st.params));
    EXPECT_EQ(parameter_fingerprint(back.state.accumulators), parameter_fingerprint(st.accumulators));
    std::mt19937_64 rng(32);
    const Matrix x = uniform(rng, 5, 8);
    EXPECT_EQ(encode(back.state.params, c, x), encode(st.params, c, x));
    EXPECT_EQ(back.train_config, tc.to_json());
}

TEST(Checkpoint, CorruptFilesRejected) {
    const fs::path path = fs::temp_directory_path() / "contab_bad_ckpt.bin";
    std::ofstream(path, std::ios::binary) << "not a checkpoint";
    EXPECT_THROW(load_checkpoint(path), DataError);
    EXPECT_THROW(load_checkpoint(fs::temp_directory_path() / "does_not_exist.bin"), DataError);

    // truncated payload
    const auto c = small_config();
    auto st = init_train_state(c, {}, 0);
    const fs::path good = fs::temp_directory_path() / "contab_trunc_ckpt.bin";
    save_checkpoint(good, st);
    const auto size = fs::file_size(good);
    fs::resize_file(good, size - 8);
    EXPECT_THROW(load_checkpoint(good), DataError);
}
