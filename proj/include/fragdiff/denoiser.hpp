#pragma once

// Tiny bidirectional transformer x_theta(z_t, t, c) with hand-written
// reverse-mode gradients.
//
// Input rows are [prefix (8 condition rows) ; body (L token rows)]. Every
// row gets a learned position embedding and the sinusoidal time embedding.
// Each block is pre-norm: x += Attn(LN(x)); x += FFN(LN(x)), single head,
// GELU feed-forward of width ffn_mult * D. Logits are produced for body rows
// only.

#include <cstddef>
#include <span>
#include <vector>

#include "fragdiff/context.hpp"
#include "fragdiff/diffusion.hpp"
#include "fragdiff/optim.hpp"
#include "fragdiff/rng.hpp"
#include "fragdiff/tensor.hpp"

namespace fragdiff {

struct DenoiserConfig {
    std::size_t vocab_size = 21;  // K, mask = K - 1
    std::size_t max_len = 16;     // body length L
    std::size_t d_model = 32;
    std::size_t n_layers = 2;
    std::size_t ffn_mult = 4;

    std::size_t prefix_len() const noexcept { return kPrefixLength; }
    std::size_t total_len() const noexcept { return kPrefixLength + max_len; }
    bool operator==(const DenoiserConfig&) const = default;
};

struct BlockParams {
    Matrix ln1_g, ln1_b;
    Matrix wq, wk, wv, wo;
    Matrix ln2_g, ln2_b;
    Matrix w1, b1, w2, b2;
};

struct DenoiserParams {
    Matrix tok_emb;      // K x D
    Matrix pos_emb;      // (8 + L) x D
    Matrix special_emb;  // 8 x D, see SpecialRow
    std::vector<BlockParams> blocks;
    Matrix lnf_g, lnf_b;
    Matrix w_out;        // D x K
    Matrix b_out;        // 1 x K

    NamedTensors tensors();
    ConstNamedTensors tensors() const;
    std::size_t parameter_count() const;
    void set_zero();
    bool all_finite() const;
};

// Same shapes as the parameters; gradients accumulate here.
using GradientBundle = DenoiserParams;

DenoiserParams zeros_like(const DenoiserParams& params);
DenoiserParams init_params(const DenoiserConfig& config, Rng& rng);

struct LayerNormCache {
    Matrix xhat;
    std::vector<double> inv_std;
};

struct BlockCache {
    Matrix x_in;
    LayerNormCache ln1;
    Matrix u1, q, k, v, attn, heads;
    Matrix x_mid;
    LayerNormCache ln2;
    Matrix u2, z1, act;
};

struct ForwardCache {
    TokenSequence z;
    std::vector<BlockCache> blocks;
    LayerNormCache lnf;
    Matrix uf;
};

std::vector<double> time_embedding(double t, std::size_t width);

// Body logits (L' x K) for a body of length L' <= max_len.
Matrix denoiser_forward(const DenoiserConfig& config, const DenoiserParams& params, const TokenSequence& z, double t,
                        const ConditionContext& ctx, ForwardCache* cache);

// Accumulates parameter gradients for upstream dlogits into `grads` and
// returns the gradient with respect to the prefix rows (8 x D).
Matrix denoiser_backward(const DenoiserConfig& config, const DenoiserParams& params, const ForwardCache& cache,
                         const Matrix& dlogits, DenoiserParams& grads);

class DenoiserModel : public Denoiser {
public:
    DenoiserModel(DenoiserConfig config, DenoiserParams params);
    DenoiserModel(const DenoiserConfig& config, Rng& rng);

    Matrix predict(const TokenSequence& z, double t, const ConditionContext& ctx) const override;
    std::size_t vocab_size() const override { return config_.vocab_size; }

    const DenoiserConfig& config() const noexcept { return config_; }
    const DenoiserParams& params() const noexcept { return params_; }
    DenoiserParams& params() noexcept { return params_; }

private:
    DenoiserConfig config_;
    DenoiserParams params_;
};

struct TrainingExample {
    TokenSequence x;
    ConditionContext ctx;
};

struct LossAndGrads {
    double loss = 0.0;
    GradientBundle grads;
    std::vector<PrefixGradients> prefix;  // per example, for the condition adaptor
};

// Mean NELBO over the batch and its gradient. Each example draws its noise
// from a stream keyed by `seed`, the tokens and the prefix layout, so duplicated
// examples see identical draws.
LossAndGrads loss_and_grads(const DenoiserModel& model, std::span<const TrainingExample> batch,
                            const MaskSchedule& schedule, std::size_t n_mc, std::uint64_t seed,
                            std::size_t workers = 1);

// Same estimator without gradients.
double batch_nelbo(const DenoiserModel& model, std::span<const TrainingExample> batch, const MaskSchedule& schedule,
                   std::size_t n_mc, std::uint64_t seed);

void apply_update(DenoiserParams& params, const GradientBundle& grads, AdamState& state, const AdamConfig& config);

}  // namespace fragdiff
