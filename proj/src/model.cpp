#include "contab/model.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace contab {

namespace {

constexpr double kLayerNormEps = 1e-5;

Matrix uniform(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

Matrix fan_in_uniform(std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
    return uniform(fan_in, fan_out, 1.0 / std::sqrt(static_cast<double>(fan_in)), rng);
}

Matrix layer_norm(const Matrix& x, const Matrix& gain, const Matrix& bias, LayerNormCache& cache) {
    const auto n = x.rows();
    const auto d = static_cast<double>(x.cols());
    cache.normalized.resize(n, x.cols());
    cache.inv_std.resize(n);
    for (Eigen::Index r = 0; r < n; ++r) {
        const double mean = x.row(r).sum() / d;
        const auto centered = (x.row(r).array() - mean).matrix();
        const double var = centered.squaredNorm() / d;
        const double inv = 1.0 / std::sqrt(var + kLayerNormEps);
        cache.inv_std[r] = inv;
        cache.normalized.row(r) = centered * inv;
    }
    Matrix y = cache.normalized.array().rowwise() * gain.row(0).array();
    y.rowwise() += bias.row(0);
    return y;
}

Matrix layer_norm_backward(const Matrix& dy, const Matrix& gain, const LayerNormCache& cache, Matrix& dgain,
                           Matrix& dbias) {
    dgain.row(0) += (dy.array() * cache.normalized.array()).colwise().sum().matrix();
    dbias.row(0) += dy.colwise().sum();
    const double d = static_cast<double>(dy.cols());
    Matrix dx(dy.rows(), dy.cols());
    for (Eigen::Index r = 0; r < dy.rows(); ++r) {
        const Eigen::RowVectorXd dn = dy.row(r).cwiseProduct(gain.row(0));
        const double mean_dn = dn.sum() / d;
        const double mean_dn_n = dn.dot(cache.normalized.row(r)) / d;
        dx.row(r) = cache.inv_std[r] *
                    (dn.array() - mean_dn - cache.normalized.row(r).array() * mean_dn_n).matrix();
    }
    return dx;
}

void check_finite(const Matrix& m, const char* what, std::size_t layer) {
    if (!m.allFinite())
        throw NumericalError(std::string("non-finite activations in ") + what + " at layer " + std::to_string(layer));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

ModelConfig ModelConfig::resolved() const {
    ModelConfig c = *this;
    if (c.ff_dim == 0) c.ff_dim = 4 * c.token_dim;
    if (c.z_dim == 0) c.z_dim = std::max<std::size_t>(1, c.n_features / 2);
    if (c.mlp_hidden == 0) c.mlp_hidden = c.z_dim;
    return c;
}

void ModelConfig::validate() const {
    if (n_features == 0) throw UsageError("model needs at least one input feature");
    if (token_dim == 0 || n_heads == 0 || token_dim % n_heads != 0)
        throw UsageError("token_dim must be a positive multiple of n_heads");
    if (n_layers == 0) throw UsageError("model needs at least one transformer layer");
    if (n_classes < 2) throw UsageError("n_classes must be at least 2");
}

nlohmann::json ModelConfig::to_json() const {
    return {{"n_features", n_features}, {"token_dim", token_dim}, {"n_layers", n_layers},
            {"n_heads", n_heads},       {"ff_dim", ff_dim},       {"z_dim", z_dim},
            {"mlp_hidden", mlp_hidden}, {"n_classes", n_classes}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.n_features = j.at("n_features").get<std::size_t>();
    c.token_dim = j.at("token_dim").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.ff_dim = j.at("ff_dim").get<std::size_t>();
    c.z_dim = j.at("z_dim").get<std::size_t>();
    c.mlp_hidden = j.at("mlp_hidden").get<std::size_t>();
    c.n_classes = j.at("n_classes").get<std::size_t>();
    return c;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

ModelParameters ModelParameters::zeros(const ModelConfig& raw) {
    const ModelConfig c = raw.resolved();
    const auto M = c.n_features, T = c.token_dim, F = c.ff_dim, Z = c.z_dim, H = c.mlp_hidden, C = c.n_classes;
    ModelParameters p;
    p.input_weights = Matrix::Zero(1, M);
    p.token_scale = Matrix::Zero(M, T);
    p.token_bias = Matrix::Zero(M, T);
    p.column_embedding = Matrix::Zero(M, T);
    p.summary_token = Matrix::Zero(1, T);
    p.blocks.resize(c.n_layers);
    for (auto& b : p.blocks) {
        b.ln1_gain = b.ln1_bias = b.ln2_gain = b.ln2_bias = Matrix::Zero(1, T);
        b.wq = b.wk = b.wv = b.wo = Matrix::Zero(T, T);
        b.bq = b.bk = b.bv = b.bo = Matrix::Zero(1, T);
        b.ff1_w = Matrix::Zero(T, F);
        b.ff1_b = Matrix::Zero(1, F);
        b.ff2_w = Matrix::Zero(F, T);
        b.ff2_b = Matrix::Zero(1, T);
    }
    p.proj_w = Matrix::Zero(T, Z);
    p.proj_b = Matrix::Zero(1, Z);
    p.dec_w = Matrix::Zero(Z, M);
    p.dec_b = Matrix::Zero(1, M);
    p.cls_w1 = Matrix::Zero(Z, H);
    p.cls_b1 = Matrix::Zero(1, H);
    p.cls_w2 = Matrix::Zero(H, C);
    p.cls_b2 = Matrix::Zero(1, C);
    p.ft_w = Matrix::Zero(Z, C);
    p.ft_b = Matrix::Zero(1, C);
    return p;
}

ModelParameters ModelParameters::initialize(const ModelConfig& raw, std::mt19937_64& rng) {
    const ModelConfig c = raw.resolved();
    c.validate();
    const auto M = c.n_features, T = c.token_dim, F = c.ff_dim, Z = c.z_dim, H = c.mlp_hidden, C = c.n_classes;
    ModelParameters p = zeros(c);
    p.input_weights.setOnes();
    p.token_scale = uniform(M, T, 1.0, rng);
    p.column_embedding = fan_in_uniform(T, M, rng).transpose();
    p.summary_token = uniform(1, T, 1.0 / std::sqrt(static_cast<double>(T)), rng);
    for (auto& b : p.blocks) {
        b.ln1_gain.setOnes();
        b.ln2_gain.setOnes();
        b.wq = fan_in_uniform(T, T, rng);
        b.wk = fan_in_uniform(T, T, rng);
        b.wv = fan_in_uniform(T, T, rng);
        b.wo = fan_in_uniform(T, T, rng);
        b.ff1_w = fan_in_uniform(T, F, rng);
        b.ff2_w = fan_in_uniform(F, T, rng);
    }
    p.proj_w = fan_in_uniform(T, Z, rng);
    p.dec_w = fan_in_uniform(Z, M, rng);
    p.cls_w1 = fan_in_uniform(Z, H, rng);
    p.cls_w2 = fan_in_uniform(H, C, rng);
    p.ft_w = fan_in_uniform(Z, C, rng);
    return p;
}

std::vector<TensorRef> ModelParameters::tensors() {
    std::vector<TensorRef> out{{"input_weights", &input_weights},
                               {"tokenizer.scale", &token_scale},
                               {"tokenizer.bias", &token_bias},
                               {"tokenizer.column_embedding", &column_embedding},
                               {"tokenizer.summary_token", &summary_token}};
    for (std::size_t l = 0; l < blocks.size(); ++l) {
        auto& b = blocks[l];
        const std::string pre = "encoder.block" + std::to_string(l) + ".";
        for (auto [name, m] : {std::pair{"ln1_gain", &b.ln1_gain}, {"ln1_bias", &b.ln1_bias}, {"wq", &b.wq},
                               {"bq", &b.bq}, {"wk", &b.wk}, {"bk", &b.bk}, {"wv", &b.wv}, {"bv", &b.bv},
                               {"wo", &b.wo}, {"bo", &b.bo}, {"ln2_gain", &b.ln2_gain}, {"ln2_bias", &b.ln2_bias},
                               {"ff1_w", &b.ff1_w}, {"ff1_b", &b.ff1_b}, {"ff2_w", &b.ff2_w}, {"ff2_b", &b.ff2_b}})
            out.push_back({pre + name, m});
    }
    out.push_back({"projection.w", &proj_w});
    out.push_back({"projection.b", &proj_b});
    out.push_back({"decoder.w", &dec_w});
    out.push_back({"decoder.b", &dec_b});
    out.push_back({"classifier.w1", &cls_w1});
    out.push_back({"classifier.b1", &cls_b1});
    out.push_back({"classifier.w2", &cls_w2});
    out.push_back({"classifier.b2", &cls_b2});
    out.push_back({"finetune_head.w", &ft_w});
    out.push_back({"finetune_head.b", &ft_b});
    return out;
}

std::vector<ConstTensorRef> ModelParameters::tensors() const {
    std::vector<ConstTensorRef> out;
    for (auto& t : const_cast<ModelParameters*>(this)->tensors()) out.push_back({t.name, t.value});
    return out;
}

void ModelParameters::set_zero() {
    for (auto& t : tensors()) t.value->setZero();
}

bool ModelParameters::all_finite() const {
    for (const auto& t : tensors())
        if (!t.value->allFinite()) return false;
    return true;
}

std::string parameter_group(std::string_view name) {
    const auto dot = name.find('.');
    return std::string(name.substr(0, dot));
}

std::vector<std::string> parameter_groups() {
    return {"input_weights", "tokenizer", "encoder", "projection", "decoder", "classifier", "finetune_head"};
}

// ---------------------------------------------------------------------------
// Elementwise pieces
// ---------------------------------------------------------------------------

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_derivative(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
    const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
    return cdf + x * pdf;
}

Matrix apply_input_weights(const Matrix& x, const Matrix& weights) {
    if (weights.rows() != 1 || x.cols() != weights.cols())
        throw DataError("input weights length " + std::to_string(weights.size()) + " does not match " +
                        std::to_string(x.cols()) + " features");
    return x.array().rowwise() * weights.row(0).array();
}

Eigen::VectorXd apply_input_weights(const Eigen::VectorXd& x, const Eigen::VectorXd& weights) {
    if (x.size() != weights.size())
        throw DataError("input weights length " + std::to_string(weights.size()) + " does not match " +
                        std::to_string(x.size()) + " features");
    return x.cwiseProduct(weights);
}

Matrix softmax_rows(const Matrix& logits) {
    Matrix out(logits.rows(), logits.cols());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double mx = logits.row(r).maxCoeff();
        out.row(r) = (logits.row(r).array() - mx).exp().matrix();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

Eigen::VectorXd l2_normalize(const Eigen::VectorXd& z, std::size_t* zero_count) {
    const double n = z.norm();
    if (n == 0.0) {
        if (zero_count) ++*zero_count;
        return z;
    }
    return z / n;
}

Matrix l2_normalize_rows(const Matrix& z, std::size_t* zero_count) {
    Matrix out = z;
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double n = z.row(r).norm();
        if (n == 0.0) {
            if (zero_count) ++*zero_count;
            continue;
        }
        out.row(r) /= n;
    }
    return out;
}

Matrix l2_normalize_rows_backward(const Matrix& z, const Matrix& du) {
    Matrix dz(z.rows(), z.cols());
    for (Eigen::Index r = 0; r < z.rows(); ++r) {
        const double n = z.row(r).norm();
        if (n == 0.0) {
            dz.row(r) = du.row(r);
            continue;
        }
        const Eigen::RowVectorXd u = z.row(r) / n;
        dz.row(r) = (du.row(r) - u * u.dot(du.row(r))) / n;
    }
    return dz;
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

Matrix encode(const ModelParameters& p, const ModelConfig& raw, const Matrix& xw, EncoderCache* cache) {
    const ModelConfig c = raw.resolved();
    const auto M = static_cast<Eigen::Index>(c.n_features);
    const auto T = static_cast<Eigen::Index>(c.token_dim);
    const auto S = M + 1;
    const auto B = xw.rows();
    const auto heads = static_cast<Eigen::Index>(c.n_heads);
    const auto dh = T / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    if (xw.cols() != M)
        throw DataError("encoder expects " + std::to_string(M) + " features, got " + std::to_string(xw.cols()));
    if (!xw.allFinite()) throw NumericalError("non-finite encoder input");

    EncoderCache local;
    EncoderCache& cc = cache ? *cache : local;
    cc.weighted_input = xw;
    cc.blocks.assign(c.n_layers, {});

    // Tokens: row b*S is the summary token, rows b*S+1+j are feature tokens.
    Matrix h(B * S, T);
    const Matrix feature_offset = p.token_bias + p.column_embedding;
    for (Eigen::Index b = 0; b < B; ++b) {
        h.row(b * S) = p.summary_token.row(0);
        for (Eigen::Index j = 0; j < M; ++j)
            h.row(b * S + 1 + j) = xw(b, j) * p.token_scale.row(j) + feature_offset.row(j);
    }

    for (std::size_t l = 0; l < c.n_layers; ++l) {
        const auto& w = p.blocks[l];
        auto& bc = cc.blocks[l];
        bc.input = h;
        bc.attn_in = layer_norm(h, w.ln1_gain, w.ln1_bias, bc.ln1);
        bc.q = bc.attn_in.lazyProduct(w.wq);
        bc.q.rowwise() += w.bq.row(0);
        bc.k = bc.attn_in.lazyProduct(w.wk);
        bc.k.rowwise() += w.bk.row(0);
        bc.v = bc.attn_in.lazyProduct(w.wv);
        bc.v.rowwise() += w.bv.row(0);

        bc.context.resize(B * S, T);
        bc.probs.resize(static_cast<std::size_t>(B * heads));
        for (Eigen::Index b = 0; b < B; ++b) {
            for (Eigen::Index hd = 0; hd < heads; ++hd) {
                const auto qh = bc.q.block(b * S, hd * dh, S, dh);
                const auto kh = bc.k.block(b * S, hd * dh, S, dh);
                const auto vh = bc.v.block(b * S, hd * dh, S, dh);
                Matrix scores = (qh * kh.transpose()) * scale;
                Matrix& prob = bc.probs[static_cast<std::size_t>(b * heads + hd)];
                prob = softmax_rows(scores);
                bc.context.block(b * S, hd * dh, S, dh).noalias() = prob * vh;
            }
        }
        bc.mid = h + bc.context.lazyProduct(w.wo);
        bc.mid.rowwise() += w.bo.row(0);

        bc.ff_in = layer_norm(bc.mid, w.ln2_gain, w.ln2_bias, bc.ln2);
        bc.ff_pre = bc.ff_in.lazyProduct(w.ff1_w);
        bc.ff_pre.rowwise() += w.ff1_b.row(0);
        bc.ff_act = bc.ff_pre.unaryExpr([](double v) { return gelu(v); });
        h = bc.mid + bc.ff_act.lazyProduct(w.ff2_w);
        h.rowwise() += w.ff2_b.row(0);
        check_finite(h, "transformer block", l);
    }

    cc.summary.resize(B, T);
    for (Eigen::Index b = 0; b < B; ++b) cc.summary.row(b) = h.row(b * S);
    Matrix z = cc.summary.lazyProduct(p.proj_w);
    z.rowwise() += p.proj_b.row(0);
    check_finite(z, "projection", c.n_layers);
    return z;
}

void encode_backward(const ModelParameters& p, const ModelConfig& raw, const EncoderCache& cc, const Matrix& dz,
                     ModelParameters& g, Matrix* d_weighted_input) {
    const ModelConfig c = raw.resolved();
    const auto M = static_cast<Eigen::Index>(c.n_features);
    const auto T = static_cast<Eigen::Index>(c.token_dim);
    const auto S = M + 1;
    const auto B = dz.rows();
    const auto heads = static_cast<Eigen::Index>(c.n_heads);
    const auto dh = T / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    g.proj_w.noalias() += cc.summary.transpose() * dz;
    g.proj_b.row(0) += dz.colwise().sum();
    const Matrix dsummary = dz * p.proj_w.transpose();

    Matrix dh_out = Matrix::Zero(B * S, T);
    for (Eigen::Index b = 0; b < B; ++b) dh_out.row(b * S) = dsummary.row(b);

    for (std::size_t li = c.n_layers; li-- > 0;) {
        const auto& w = p.blocks[li];
        auto& gw = g.blocks[li];
        const auto& bc = cc.blocks[li];

        // Feed-forward sublayer.
        gw.ff2_w.noalias() += bc.ff_act.transpose() * dh_out;
        gw.ff2_b.row(0) += dh_out.colwise().sum();
        Matrix dpre = dh_out * w.ff2_w.transpose();
        dpre.array() *= bc.ff_pre.unaryExpr([](double v) { return gelu_derivative(v); }).array();
        gw.ff1_w.noalias() += bc.ff_in.transpose() * dpre;
        gw.ff1_b.row(0) += dpre.colwise().sum();
        const Matrix dff_in = dpre * w.ff1_w.transpose();
        Matrix dmid = dh_out + layer_norm_backward(dff_in, w.ln2_gain, bc.ln2, gw.ln2_gain, gw.ln2_bias);

        // Attention sublayer.
        gw.wo.noalias() += bc.context.transpose() * dmid;
        gw.bo.row(0) += dmid.colwise().sum();
        const Matrix dcontext = dmid * w.wo.transpose();
        Matrix dq(B * S, T), dk(B * S, T), dv(B * S, T);
        for (Eigen::Index b = 0; b < B; ++b) {
            for (Eigen::Index hd = 0; hd < heads; ++hd) {
                const Matrix& prob = bc.probs[static_cast<std::size_t>(b * heads + hd)];
                const auto qh = bc.q.block(b * S, hd * dh, S, dh);
                const auto kh = bc.k.block(b * S, hd * dh, S, dh);
                const auto vh = bc.v.block(b * S, hd * dh, S, dh);
                const auto dctx = dcontext.block(b * S, hd * dh, S, dh);
                dv.block(b * S, hd * dh, S, dh).noalias() = prob.transpose() * dctx;
                const Matrix dprob = dctx * vh.transpose();
                Matrix dscores = prob.cwiseProduct(dprob);
                const Eigen::VectorXd row_dot = dscores.rowwise().sum();
                dscores -= prob.cwiseProduct(row_dot.replicate(1, S));
                dscores *= scale;
                dq.block(b * S, hd * dh, S, dh).noalias() = dscores * kh;
                dk.block(b * S, hd * dh, S, dh).noalias() = dscores.transpose() * qh;
            }
        }
        gw.wq.noalias() += bc.attn_in.transpose() * dq;
        gw.wk.noalias() += bc.attn_in.transpose() * dk;
        gw.wv.noalias() += bc.attn_in.transpose() * dv;
        gw.bq.row(0) += dq.colwise().sum();
        gw.bk.row(0) += dk.colwise().sum();
        gw.bv.row(0) += dv.colwise().sum();
        Matrix dattn_in = dq * w.wq.transpose();
        dattn_in.noalias() += dk * w.wk.transpose();
        dattn_in.noalias() += dv * w.wv.transpose();
        dh_out = dmid + layer_norm_backward(dattn_in, w.ln1_gain, bc.ln1, gw.ln1_gain, gw.ln1_bias);
    }

    // Tokenizer.
    const Matrix& xw = cc.weighted_input;
    if (d_weighted_input) d_weighted_input->resize(B, M);
    for (Eigen::Index b = 0; b < B; ++b) {
        g.summary_token.row(0) += dh_out.row(b * S);
        for (Eigen::Index j = 0; j < M; ++j) {
            const auto dtok = dh_out.row(b * S + 1 + j);
            g.token_bias.row(j) += dtok;
            g.column_embedding.row(j) += dtok;
            g.token_scale.row(j) += xw(b, j) * dtok;
            if (d_weighted_input) (*d_weighted_input)(b, j) = dtok.dot(p.token_scale.row(j));
        }
    }
}

// ---------------------------------------------------------------------------
// Heads
// ---------------------------------------------------------------------------

Matrix decode(const ModelParameters& p, const Matrix& z) {
    if (z.cols() != p.dec_w.rows()) throw DataError("decoder expects embeddings of width " + std::to_string(p.dec_w.rows()));
    Matrix pre = z.lazyProduct(p.dec_w);
    pre.rowwise() += p.dec_b.row(0);
    return pre.unaryExpr([](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

Matrix classify(const ModelParameters& p, const Matrix& z, ClassifierCache* cache) {
    if (z.cols() != p.cls_w1.rows())
        throw DataError("classifier expects embeddings of width " + std::to_string(p.cls_w1.rows()));
    ClassifierCache local;
    ClassifierCache& cc = cache ? *cache : local;
    cc.z = z;
    cc.pre = z.lazyProduct(p.cls_w1);
    cc.pre.rowwise() += p.cls_b1.row(0);
    cc.hidden = cc.pre.unaryExpr([](double v) { return gelu(v); });
    Matrix logits = cc.hidden.lazyProduct(p.cls_w2);
    logits.rowwise() += p.cls_b2.row(0);
    return logits;
}

Matrix classify_backward(const ModelParameters& p, const ClassifierCache& cc, const Matrix& dlogits,
                         ModelParameters& g) {
    g.cls_w2.noalias() += cc.hidden.transpose() * dlogits;
    g.cls_b2.row(0) += dlogits.colwise().sum();
    Matrix dpre = dlogits * p.cls_w2.transpose();
    dpre.array() *= cc.pre.unaryExpr([](double v) { return gelu_derivative(v); }).array();
    g.cls_w1.noalias() += cc.z.transpose() * dpre;
    g.cls_b1.row(0) += dpre.colwise().sum();
    return dpre * p.cls_w1.transpose();
}

Matrix finetune_logits(const ModelParameters& p, const Matrix& z) {
    Matrix logits = z.lazyProduct(p.ft_w);
    logits.rowwise() += p.ft_b.row(0);
    return logits;
}

}  // namespace contab
