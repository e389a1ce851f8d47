#include "fragdiff/adaptor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fragdiff/error.hpp"

namespace fragdiff {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
    const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
    const double pdf = std::exp(-0.5 * x * x) * 0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2;
    return cdf + x * pdf;
}

struct ResidueEntry {
    char code;
    double hydropathy;  // Kyte-Doolittle
    double charge;
    bool polar, acceptor, donor;
};

constexpr std::array<ResidueEntry, 20> kResidues{{
    {'A', 1.8, 0.0, false, false, false},
    {'R', -4.5, 1.0, true, false, true},
    {'N', -3.5, 0.0, true, true, true},
    {'D', -3.5, -1.0, true, true, false},
    {'C', 2.5, 0.0, false, false, false},
    {'Q', -3.5, 0.0, true, true, true},
    {'E', -3.5, -1.0, true, true, false},
    {'G', -0.4, 0.0, false, false, false},
    {'H', -3.2, 0.1, true, true, true},
    {'I', 4.5, 0.0, false, false, false},
    {'L', 3.8, 0.0, false, false, false},
    {'K', -3.9, 1.0, true, false, true},
    {'M', 1.9, 0.0, false, false, false},
    {'F', 2.8, 0.0, false, false, false},
    {'P', -1.6, 0.0, false, false, false},
    {'S', -0.8, 0.0, true, true, true},
    {'T', -0.7, 0.0, true, true, true},
    {'W', -0.9, 0.0, false, false, true},
    {'Y', -1.3, 0.0, true, true, true},
    {'V', 4.2, 0.0, false, false, false},
}};

Matrix row_matrix(std::span<const double> v) {
    Matrix m(1, v.size());
    std::copy(v.begin(), v.end(), m.row(0).begin());
    return m;
}

void add_into(Matrix& dst, const Matrix& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

Matrix phys_or_throw(const PocketInput& pocket) {
    if (pocket.residues.empty()) throw Error(ErrorKind::EmptyPocket, "pocket has no residues");
    return phys_featurize(pocket.residues);
}

Matrix semantic_input(const AdaptorParams& params, const PocketInput& pocket) {
    const std::size_t rows = pocket.residues.size();
    if (!pocket.semantic) return Matrix(rows, params.esm.in_width());
    if (pocket.semantic->rows() != rows) {
        throw Error(ErrorKind::WidthMismatch, "semantic embedding rows differ from residue count");
    }
    if (pocket.semantic->cols() != params.esm.in_width()) {
        throw Error(ErrorKind::WidthMismatch, "semantic embedding width differs from adaptor input width");
    }
    return *pocket.semantic;
}

}  // namespace

// ---------------------------------------------------------------------------
// Residue table

ResiduePhysFeatures residue_features(char residue) {
    for (const auto& e : kResidues) {
        if (e.code == residue) {
            return {e.hydropathy / 5.0, e.charge, e.polar ? 1.0 : 0.0, e.acceptor ? 1.0 : 0.0, e.donor ? 1.0 : 0.0};
        }
    }
    throw Error(ErrorKind::UnknownResidue, std::string("residue '") + residue + "'");
}

Matrix phys_featurize(std::string_view residues) {
    Matrix out(residues.size(), kPhysFeatures);
    for (std::size_t i = 0; i < residues.size(); ++i) {
        ResiduePhysFeatures f;
        try {
            f = residue_features(residues[i]);
        } catch (const Error&) {
            throw PositionError(ErrorKind::UnknownResidue, i, std::string("residue '") + residues[i] + "'");
        }
        std::copy(f.begin(), f.end(), out.row(i).begin());
    }
    return out;
}

// ---------------------------------------------------------------------------
// MLP

Mlp init_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng) {
    Mlp m{Matrix(in, hidden), Matrix(1, hidden), Matrix(hidden, out), Matrix(1, out)};
    const double s1 = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(in, 1)));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (auto& v : m.w1.flat()) v = s1 * rng.normal();
    for (auto& v : m.w2.flat()) v = s2 * rng.normal();
    return m;
}

Matrix mlp_forward(const Mlp& mlp, const Matrix& x, MlpCache* cache) {
    if (x.cols() != mlp.in_width()) throw Error(ErrorKind::WidthMismatch, "MLP input width");
    Matrix z;
    matmul(x, mlp.w1, z);
    add_row_bias(z, mlp.b1);
    Matrix a = z;
    for (auto& v : a.flat()) v = gelu(v);
    Matrix y;
    matmul(a, mlp.w2, y);
    add_row_bias(y, mlp.b2);
    if (cache) {
        cache->x = x;
        cache->z = std::move(z);
        cache->a = std::move(a);
    }
    return y;
}

Matrix mlp_backward(const Mlp& mlp, const MlpCache& cache, const Matrix& dy, Mlp& grads) {
    matmul_tn_acc(cache.a, dy, grads.w2);
    acc_col_sums(dy, grads.b2);
    Matrix dz;
    matmul_nt(dy, mlp.w2, dz);
    for (std::size_t i = 0; i < dz.size(); ++i) dz[i] *= gelu_grad(cache.z[i]);
    matmul_tn_acc(cache.x, dz, grads.w1);
    acc_col_sums(dz, grads.b1);
    Matrix dx;
    matmul_nt(dz, mlp.w1, dx);
    return dx;
}

// ---------------------------------------------------------------------------
// Params

NamedTensors AdaptorParams::tensors() {
    NamedTensors out;
    for (auto [name, m] : {std::pair{"esm", &esm}, {"phys", &phys}, {"attn", &attn}, {"prop", &prop}}) {
        const std::string p = std::string("adaptor.") + name + ".";
        out.insert(out.end(), {{p + "w1", &m->w1}, {p + "b1", &m->b1}, {p + "w2", &m->w2}, {p + "b2", &m->b2}});
    }
    return out;
}

ConstNamedTensors AdaptorParams::tensors() const {
    ConstNamedTensors out;
    for (const auto& [n, t] : const_cast<AdaptorParams*>(this)->tensors()) out.emplace_back(n, t);
    return out;
}

void AdaptorParams::set_zero() {
    for (auto& [n, t] : tensors()) t->set_zero();
}

AdaptorParams init_adaptor(const AdaptorConfig& config, Rng& rng) {
    const std::size_t d = config.d_model;
    if (d == 0 || config.semantic_width == 0 || config.n_props == 0) {
        throw Error(ErrorKind::InvalidArgument, "degenerate adaptor config");
    }
    AdaptorParams p;
    p.esm = init_mlp(config.semantic_width, d, d, rng);
    p.phys = init_mlp(kPhysFeatures, d, d, rng);
    p.attn = init_mlp(d, d, 1, rng);
    p.prop = init_mlp(config.n_props, d, d, rng);
    return p;
}

AdaptorParams zeros_like(const AdaptorParams& params) {
    AdaptorParams out = params;
    out.set_zero();
    return out;
}

// ---------------------------------------------------------------------------
// Extrinsic stream

Matrix fuse_streams(const AdaptorParams& params, const PocketInput& pocket) {
    const Matrix phys = phys_or_throw(pocket);
    Matrix fused = mlp_forward(params.esm, semantic_input(params, pocket), nullptr);
    const Matrix p = mlp_forward(params.phys, phys, nullptr);
    if (!fused.same_shape(p)) throw Error(ErrorKind::WidthMismatch, "stream projections differ in width");
    add_into(fused, p);
    return fused;
}

PoolResult pool_rows(const Matrix& rows, std::span<const double> scores) {
    if (rows.rows() == 0) throw Error(ErrorKind::EmptyPocket, "nothing to pool");
    if (scores.size() != rows.rows()) throw Error(ErrorKind::ShapeMismatch, "one score per row");
    PoolResult out;
    out.weights.assign(scores.size(), 0.0);
    const double mx = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out.weights[i] = std::exp(scores[i] - mx);
        z += out.weights[i];
    }
    for (double& w : out.weights) w /= z;
    out.h_ext.assign(rows.cols(), 0.0);
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        const auto r = rows.row(i);
        for (std::size_t c = 0; c < rows.cols(); ++c) out.h_ext[c] += out.weights[i] * r[c];
    }
    return out;
}

PoolResult attention_pool(const AdaptorParams& params, const Matrix& h_fused) {
    if (h_fused.rows() == 0) throw Error(ErrorKind::EmptyPocket, "pocket has no residues");
    const Matrix scores = mlp_forward(params.attn, h_fused, nullptr);
    return pool_rows(h_fused, scores.flat());
}

std::vector<double> encode_pocket(const AdaptorParams& params, const PocketInput& pocket) {
    return attention_pool(params, fuse_streams(params, pocket)).h_ext;
}

void encode_pocket_backward(const AdaptorParams& params, const PocketInput& pocket, std::span<const double> d_h_ext,
                            AdaptorParams& grads) {
    const Matrix phys = phys_or_throw(pocket);
    MlpCache esm_cache, phys_cache, attn_cache;
    Matrix fused = mlp_forward(params.esm, semantic_input(params, pocket), &esm_cache);
    add_into(fused, mlp_forward(params.phys, phys, &phys_cache));
    const Matrix scores = mlp_forward(params.attn, fused, &attn_cache);
    const PoolResult pool = pool_rows(fused, scores.flat());
    if (d_h_ext.size() != fused.cols()) throw Error(ErrorKind::WidthMismatch, "d_h_ext width");

    const std::size_t n = fused.rows(), d = fused.cols();
    Matrix dfused(n, d);
    Matrix dscores(n, 1);
    double weighted = 0.0;
    std::vector<double> dalpha(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const auto r = fused.row(i);
        for (std::size_t c = 0; c < d; ++c) {
            dfused(i, c) += pool.weights[i] * d_h_ext[c];
            dalpha[i] += d_h_ext[c] * r[c];
        }
        weighted += pool.weights[i] * dalpha[i];
    }
    for (std::size_t i = 0; i < n; ++i) dscores(i, 0) = pool.weights[i] * (dalpha[i] - weighted);
    add_into(dfused, mlp_backward(params.attn, attn_cache, dscores, grads.attn));
    mlp_backward(params.esm, esm_cache, dfused, grads.esm);
    mlp_backward(params.phys, phys_cache, dfused, grads.phys);
}

// ---------------------------------------------------------------------------
// Intrinsic stream

std::vector<double> encode_property(const AdaptorParams& params, std::span<const double> y_target) {
    if (y_target.size() != params.prop.in_width()) {
        throw Error(ErrorKind::DimensionMismatch, "property vector has " + std::to_string(y_target.size()) +
                                                      " entries, adaptor expects " +
                                                      std::to_string(params.prop.in_width()));
    }
    const Matrix y = mlp_forward(params.prop, row_matrix(y_target), nullptr);
    return {y.flat().begin(), y.flat().end()};
}

void encode_property_backward(const AdaptorParams& params, std::span<const double> y_target,
                              std::span<const double> d_h_int, AdaptorParams& grads) {
    if (y_target.size() != params.prop.in_width()) throw Error(ErrorKind::DimensionMismatch, "property vector");
    MlpCache cache;
    mlp_forward(params.prop, row_matrix(y_target), &cache);
    mlp_backward(params.prop, cache, row_matrix(d_h_int), grads.prop);
}

}  // namespace fragdiff
