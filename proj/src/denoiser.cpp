#include "fragdiff/denoiser.hpp"

#include <cmath>
#include <cstring>
#include <numbers>

#include "fragdiff/error.hpp"
#include "fragdiff/kernels.hpp"
#include "fragdiff/parallel.hpp"

namespace fragdiff {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    return cdf + x * pdf;
}

void layer_norm(const Matrix& x, const Matrix& g, const Matrix& b, Matrix& y, LayerNormCache* cache) {
    const std::size_t n = x.rows(), d = x.cols();
    y = Matrix(n, d);
    if (cache) {
        cache->xhat = Matrix(n, d);
        cache->inv_std.assign(n, 0.0);
    }
    for (std::size_t r = 0; r < n; ++r) {
        const auto row = x.row(r);
        double mean = 0.0;
        for (double v : row) mean += v;
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (double v : row) var += (v - mean) * (v - mean);
        var /= static_cast<double>(d);
        const double inv = 1.0 / std::sqrt(var + kLnEps);
        for (std::size_t c = 0; c < d; ++c) {
            const double xh = (row[c] - mean) * inv;
            if (cache) cache->xhat(r, c) = xh;
            y(r, c) = g[c] * xh + b[c];
        }
        if (cache) cache->inv_std[r] = inv;
    }
}

// dx += LN backward of dy; accumulates dg, db.
void layer_norm_backward(const LayerNormCache& cache, const Matrix& g, const Matrix& dy, Matrix& dx, Matrix& dg,
                         Matrix& db) {
    const std::size_t n = dy.rows(), d = dy.cols();
    std::vector<double> dxhat(d);
    for (std::size_t r = 0; r < n; ++r) {
        double mean_dxhat = 0.0, mean_dxhat_xhat = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double xh = cache.xhat(r, c);
            dg[c] += dy(r, c) * xh;
            db[c] += dy(r, c);
            dxhat[c] = dy(r, c) * g[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xh;
        }
        mean_dxhat /= static_cast<double>(d);
        mean_dxhat_xhat /= static_cast<double>(d);
        const double inv = cache.inv_std[r];
        for (std::size_t c = 0; c < d; ++c) {
            dx(r, c) += inv * (dxhat[c] - mean_dxhat - cache.xhat(r, c) * mean_dxhat_xhat);
        }
    }
}

void softmax_rows(Matrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        double mx = row[0];
        for (double v : row) mx = std::max(mx, v);
        double z = 0.0;
        for (double& v : row) {
            v = std::exp(v - mx);
            z += v;
        }
        for (double& v : row) v /= z;
    }
}

void add_into(Matrix& dst, const Matrix& src) {
    kernels::axpy(1.0, src.data(), dst.data(), dst.size());
}

Matrix transpose_times(const Matrix& a, const Matrix& b) {
    Matrix out(a.cols(), b.cols());
    matmul_tn_acc(a, b, out);
    return out;
}

Matrix normal_matrix(std::size_t r, std::size_t c, double stddev, Rng& rng) {
    Matrix m(r, c);
    for (auto& v : m.flat()) v = stddev * rng.normal();
    return m;
}

std::uint64_t content_key(const TrainingExample& ex) {
    std::uint64_t h = 0x6a09e667f3bcc909ULL;
    for (TokenId id : ex.x.ids) h = mix64(h, static_cast<std::uint64_t>(id));
    for (PrefixSlot slot : ex.ctx.slots) h = mix64(h, static_cast<std::uint64_t>(slot));
    return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Parameters

NamedTensors DenoiserParams::tensors() {
    NamedTensors out{{"tok_emb", &tok_emb}, {"pos_emb", &pos_emb}, {"special_emb", &special_emb}};
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        auto& b = blocks[i];
        const std::string p = "block" + std::to_string(i) + ".";
        out.insert(out.end(), {{p + "ln1_g", &b.ln1_g}, {p + "ln1_b", &b.ln1_b}, {p + "wq", &b.wq}, {p + "wk", &b.wk},
                               {p + "wv", &b.wv},       {p + "wo", &b.wo},       {p + "ln2_g", &b.ln2_g},
                               {p + "ln2_b", &b.ln2_b}, {p + "w1", &b.w1},       {p + "b1", &b.b1},
                               {p + "w2", &b.w2},       {p + "b2", &b.b2}});
    }
    out.insert(out.end(), {{"lnf_g", &lnf_g}, {"lnf_b", &lnf_b}, {"w_out", &w_out}, {"b_out", &b_out}});
    return out;
}

ConstNamedTensors DenoiserParams::tensors() const {
    ConstNamedTensors out;
    for (const auto& [n, t] : const_cast<DenoiserParams*>(this)->tensors()) out.emplace_back(n, t);
    return out;
}

std::size_t DenoiserParams::parameter_count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : tensors()) n += t->size();
    return n;
}

void DenoiserParams::set_zero() {
    for (auto& [name, t] : tensors()) t->set_zero();
}

bool DenoiserParams::all_finite() const {
    for (const auto& [name, t] : tensors()) {
        if (!t->all_finite()) return false;
    }
    return true;
}

DenoiserParams zeros_like(const DenoiserParams& params) {
    DenoiserParams out = params;
    out.set_zero();
    return out;
}

DenoiserParams init_params(const DenoiserConfig& config, Rng& rng) {
    if (config.vocab_size < 2 || config.max_len == 0 || config.d_model == 0 || config.n_layers == 0) {
        throw Error(ErrorKind::InvalidArgument, "degenerate denoiser config");
    }
    const std::size_t d = config.d_model, h = config.ffn_mult * d, k = config.vocab_size;
    const double w_std = 1.0 / std::sqrt(static_cast<double>(d));
    DenoiserParams p;
    p.tok_emb = normal_matrix(k, d, 1.0, rng);
    p.pos_emb = normal_matrix(config.total_len(), d, 0.5, rng);
    p.special_emb = normal_matrix(kSpecialRows, d, 1.0, rng);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        BlockParams b;
        b.ln1_g = Matrix(1, d, 1.0);
        b.ln1_b = Matrix(1, d);
        b.wq = normal_matrix(d, d, w_std, rng);
        b.wk = normal_matrix(d, d, w_std, rng);
        b.wv = normal_matrix(d, d, w_std, rng);
        b.wo = normal_matrix(d, d, w_std / std::sqrt(2.0 * config.n_layers), rng);
        b.ln2_g = Matrix(1, d, 1.0);
        b.ln2_b = Matrix(1, d);
        b.w1 = normal_matrix(d, h, w_std, rng);
        b.b1 = Matrix(1, h);
        b.w2 = normal_matrix(h, d, 1.0 / std::sqrt(static_cast<double>(h) * 2.0 * config.n_layers), rng);
        b.b2 = Matrix(1, d);
        p.blocks.push_back(std::move(b));
    }
    p.lnf_g = Matrix(1, d, 1.0);
    p.lnf_b = Matrix(1, d);
    p.w_out = normal_matrix(d, k, 0.02, rng);
    p.b_out = Matrix(1, k);
    return p;
}

std::vector<double> time_embedding(double t, std::size_t width) {
    std::vector<double> e(width, 0.0);
    const std::size_t half = width / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = half > 1 ? std::pow(100.0, static_cast<double>(i) / static_cast<double>(half - 1)) : 1.0;
        e[2 * i] = std::sin(t * freq);
        e[2 * i + 1] = std::cos(t * freq);
    }
    return e;
}

// ---------------------------------------------------------------------------
// Forward

Matrix denoiser_forward(const DenoiserConfig& config, const DenoiserParams& params, const TokenSequence& z, double t,
                        const ConditionContext& ctx, ForwardCache* cache) {
    const std::size_t d = config.d_model;
    const std::size_t prefix = config.prefix_len();
    const std::size_t body = z.length();
    if (body > config.max_len) {
        throw Error(ErrorKind::SequenceTooLong,
                    std::to_string(body) + " body tokens exceed model length " + std::to_string(config.max_len));
    }
    if (ctx.rows.rows() != prefix || ctx.rows.cols() != d) {
        throw Error(ErrorKind::WidthMismatch, "condition prefix must be 8 x d_model");
    }
    const std::size_t n = prefix + body;
    const auto te = time_embedding(t, d);

    Matrix x(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        auto row = x.row(r);
        std::span<const double> src;
        if (r < prefix) {
            src = ctx.rows.row(r);
        } else {
            const TokenId id = z.ids[r - prefix];
            if (id < 0 || static_cast<std::size_t>(id) >= config.vocab_size) {
                throw PositionError(ErrorKind::UnknownSymbol, r - prefix, "token id outside vocabulary");
            }
            src = params.tok_emb.row(static_cast<std::size_t>(id));
        }
        const auto pos = params.pos_emb.row(r);
        for (std::size_t c = 0; c < d; ++c) row[c] = src[c] + pos[c] + te[c];
    }

    if (cache) {
        cache->z = z;
        cache->blocks.assign(params.blocks.size(), BlockCache{});
    }
    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t l = 0; l < params.blocks.size(); ++l) {
        const BlockParams& b = params.blocks[l];
        BlockCache local;
        BlockCache& bc = cache ? cache->blocks[l] : local;
        bc.x_in = x;
        layer_norm(x, b.ln1_g, b.ln1_b, bc.u1, cache ? &bc.ln1 : nullptr);
        matmul(bc.u1, b.wq, bc.q);
        matmul(bc.u1, b.wk, bc.k);
        matmul(bc.u1, b.wv, bc.v);
        matmul_nt(bc.q, bc.k, bc.attn);
        kernels::scale(scale, bc.attn.data(), bc.attn.size());
        softmax_rows(bc.attn);
        matmul(bc.attn, bc.v, bc.heads);
        Matrix o;
        matmul(bc.heads, b.wo, o);
        add_into(x, o);
        bc.x_mid = x;
        layer_norm(x, b.ln2_g, b.ln2_b, bc.u2, cache ? &bc.ln2 : nullptr);
        matmul(bc.u2, b.w1, bc.z1);
        add_row_bias(bc.z1, b.b1);
        bc.act = bc.z1;
        for (auto& v : bc.act.flat()) v = gelu(v);
        Matrix f;
        matmul(bc.act, b.w2, f);
        add_row_bias(f, b.b2);
        add_into(x, f);
    }

    Matrix uf;
    layer_norm(x, params.lnf_g, params.lnf_b, uf, cache ? &cache->lnf : nullptr);
    Matrix body_rows(body, d);
    if (body > 0) std::memcpy(body_rows.data(), uf.row(prefix).data(), body * d * sizeof(double));
    Matrix logits;
    matmul(body_rows, params.w_out, logits);
    add_row_bias(logits, params.b_out);
    if (cache) cache->uf = std::move(uf);
    return logits;
}

// ---------------------------------------------------------------------------
// Backward

Matrix denoiser_backward(const DenoiserConfig& config, const DenoiserParams& params, const ForwardCache& cache,
                         const Matrix& dlogits, DenoiserParams& grads) {
    const std::size_t d = config.d_model;
    const std::size_t prefix = config.prefix_len();
    const std::size_t body = cache.z.length();
    const std::size_t n = prefix + body;
    if (dlogits.rows() != body || dlogits.cols() != config.vocab_size) {
        throw Error(ErrorKind::ShapeMismatch, "dlogits shape");
    }

    // output projection (body rows only)
    Matrix body_rows(body, d);
    if (body > 0) std::memcpy(body_rows.data(), cache.uf.row(prefix).data(), body * d * sizeof(double));
    matmul_tn_acc(body_rows, dlogits, grads.w_out);
    acc_col_sums(dlogits, grads.b_out);
    Matrix duf(n, d);
    {
        Matrix dbody;
        matmul_nt(dlogits, params.w_out, dbody);
        if (body > 0) std::memcpy(duf.row(prefix).data(), dbody.data(), body * d * sizeof(double));
    }
    Matrix dx(n, d);
    layer_norm_backward(cache.lnf, params.lnf_g, duf, dx, grads.lnf_g, grads.lnf_b);

    const double scale = 1.0 / std::sqrt(static_cast<double>(d));
    for (std::size_t li = params.blocks.size(); li-- > 0;) {
        const BlockParams& b = params.blocks[li];
        BlockParams& gb = grads.blocks[li];
        const BlockCache& bc = cache.blocks[li];

        // feed-forward: x_out = x_mid + GELU(u2 W1 + b1) W2 + b2
        matmul_tn_acc(bc.act, dx, gb.w2);
        acc_col_sums(dx, gb.b2);
        Matrix dz1;
        matmul_nt(dx, b.w2, dz1);
        for (std::size_t i = 0; i < dz1.size(); ++i) dz1[i] *= gelu_grad(bc.z1[i]);
        matmul_tn_acc(bc.u2, dz1, gb.w1);
        acc_col_sums(dz1, gb.b1);
        Matrix du2;
        matmul_nt(dz1, b.w1, du2);
        layer_norm_backward(bc.ln2, b.ln2_g, du2, dx, gb.ln2_g, gb.ln2_b);

        // attention: x_mid = x_in + softmax(q k^T * scale) v Wo
        matmul_tn_acc(bc.heads, dx, gb.wo);
        Matrix dheads;
        matmul_nt(dx, b.wo, dheads);
        Matrix dattn;
        matmul_nt(dheads, bc.v, dattn);
        Matrix dv = transpose_times(bc.attn, dheads);
        for (std::size_t r = 0; r < n; ++r) {
            auto a = bc.attn.row(r);
            auto g = dattn.row(r);
            const double inner = kernels::dot(a.data(), g.data(), n);
            for (std::size_t c = 0; c < n; ++c) g[c] = a[c] * (g[c] - inner) * scale;
        }
        Matrix dq;
        matmul(dattn, bc.k, dq);
        Matrix dk = transpose_times(dattn, bc.q);
        matmul_tn_acc(bc.u1, dq, gb.wq);
        matmul_tn_acc(bc.u1, dk, gb.wk);
        matmul_tn_acc(bc.u1, dv, gb.wv);
        Matrix du1;
        matmul_nt(dq, b.wq, du1);
        matmul_nt_acc(dk, b.wk, du1);
        matmul_nt_acc(dv, b.wv, du1);
        layer_norm_backward(bc.ln1, b.ln1_g, du1, dx, gb.ln1_g, gb.ln1_b);
    }

    // embeddings
    Matrix dprefix(prefix, d);
    for (std::size_t r = 0; r < n; ++r) {
        const auto g = dx.row(r);
        kernels::axpy(1.0, g.data(), grads.pos_emb.row(r).data(), d);
        if (r < prefix) {
            std::copy(g.begin(), g.end(), dprefix.row(r).begin());
        } else {
            const auto id = static_cast<std::size_t>(cache.z.ids[r - prefix]);
            kernels::axpy(1.0, g.data(), grads.tok_emb.row(id).data(), d);
        }
    }
    return dprefix;
}

// ---------------------------------------------------------------------------
// Model

DenoiserModel::DenoiserModel(DenoiserConfig config, DenoiserParams params)
    : config_(std::move(config)), params_(std::move(params)) {
    if (params_.tok_emb.rows() != config_.vocab_size || params_.tok_emb.cols() != config_.d_model ||
        params_.pos_emb.rows() != config_.total_len() || params_.blocks.size() != config_.n_layers) {
        throw Error(ErrorKind::ShapeMismatch, "parameters do not match denoiser config");
    }
}

DenoiserModel::DenoiserModel(const DenoiserConfig& config, Rng& rng) : DenoiserModel(config, init_params(config, rng)) {}

Matrix DenoiserModel::predict(const TokenSequence& z, double t, const ConditionContext& ctx) const {
    return denoiser_forward(config_, params_, z, t, ctx, nullptr);
}

// ---------------------------------------------------------------------------
// Training

LossAndGrads loss_and_grads(const DenoiserModel& model, std::span<const TrainingExample> batch,
                            const MaskSchedule& schedule, std::size_t n_mc, std::uint64_t seed, std::size_t workers) {
    if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "empty batch");
    const auto mask = static_cast<TokenId>(model.vocab_size()) - 1;
    const double inv = 1.0 / (static_cast<double>(batch.size()) * static_cast<double>(n_mc));

    std::vector<double> losses(batch.size(), 0.0);
    std::vector<GradientBundle> locals(batch.size());
    std::vector<Matrix> dprefix(batch.size());
    const Rng base(seed);
    parallel_for(batch.size(), workers, [&](std::size_t i) {
        const TrainingExample& ex = batch[i];
        Rng rng = base.child(content_key(ex));
        GradientBundle g = zeros_like(model.params());
        Matrix dp(kPrefixLength, model.config().d_model);
        for (const NelboDraw& draw : nelbo_draws(ex.x, schedule, n_mc, mask, rng)) {
            ForwardCache cache;
            const Matrix logits = denoiser_forward(model.config(), model.params(), draw.z, draw.t, ex.ctx, &cache);
            Matrix dlogits(logits.rows(), logits.cols());
            losses[i] += nelbo_term(logits, draw, ex.x, &dlogits, inv);
            const Matrix d = denoiser_backward(model.config(), model.params(), cache, dlogits, g);
            add_into(dp, d);
        }
        locals[i] = std::move(g);
        dprefix[i] = std::move(dp);
    });

    LossAndGrads out;
    out.grads = zeros_like(model.params());
    auto dst = out.grads.tensors();
    for (std::size_t i = 0; i < batch.size(); ++i) {
        out.loss += losses[i];
        const auto src = locals[i].tensors();
        for (std::size_t k = 0; k < dst.size(); ++k) add_into(*dst[k].second, *src[k].second);
        out.prefix.push_back(route_prefix_gradients(batch[i].ctx, dprefix[i]));
        // special rows belong to the denoiser
        add_into(out.grads.special_emb, out.prefix.back().special);
    }
    out.loss *= inv;
    return out;
}

double batch_nelbo(const DenoiserModel& model, std::span<const TrainingExample> batch, const MaskSchedule& schedule,
                   std::size_t n_mc, std::uint64_t seed) {
    if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "empty batch");
    const auto mask = static_cast<TokenId>(model.vocab_size()) - 1;
    const Rng base(seed);
    double total = 0.0;
    for (const TrainingExample& ex : batch) {
        Rng rng = base.child(content_key(ex));
        for (const NelboDraw& draw : nelbo_draws(ex.x, schedule, n_mc, mask, rng)) {
            total += nelbo_term(model.predict(draw.z, draw.t, ex.ctx), draw, ex.x, nullptr, 0.0);
        }
    }
    return total / (static_cast<double>(batch.size()) * static_cast<double>(n_mc));
}

void apply_update(DenoiserParams& params, const GradientBundle& grads, AdamState& state, const AdamConfig& config) {
    const auto p = params.tensors();
    const auto g = grads.tensors();
    if (p.size() != g.size()) throw Error(ErrorKind::ShapeMismatch, "gradient bundle layout differs");
    adamw_update(p, g, state, config);
}

}  // namespace fragdiff
