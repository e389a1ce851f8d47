#pragma once

// Condition adaptor: turns a pocket (residue string plus optional
// precomputed per-residue embeddings) into h_ext and a target property
// vector into h_int, both of model width D.
//
//   H_fused = MLP_esm(H_semantic) + MLP_phys(H_phys)
//   alpha   = softmax(MLP_attn(H_fused))        over residues
//   h_ext   = sum_i alpha_i H_fused[i]
//   h_int   = MLP_int(y)
//
// Every MLP has one GELU hidden layer of width D.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fragdiff/optim.hpp"
#include "fragdiff/rng.hpp"
#include "fragdiff/tensor.hpp"

namespace fragdiff {

inline constexpr std::size_t kPhysFeatures = 5;

// [hydropathy / 5, charge, polar, h-bond acceptor, h-bond donor]
using ResiduePhysFeatures = std::array<double, kPhysFeatures>;

// Throws UnknownResidue for anything but the 20 standard one-letter codes.
ResiduePhysFeatures residue_features(char residue);
Matrix phys_featurize(std::string_view residues);

struct PocketInput {
    std::string residues;
    std::optional<Matrix> semantic;  // L_pocket x E
};

struct Mlp {
    Matrix w1, b1, w2, b2;

    std::size_t in_width() const noexcept { return w1.rows(); }
    std::size_t out_width() const noexcept { return w2.cols(); }
};

struct MlpCache {
    Matrix x, z, a;
};

Mlp init_mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
Matrix mlp_forward(const Mlp& mlp, const Matrix& x, MlpCache* cache);
// Accumulates parameter gradients; returns dL/dx.
Matrix mlp_backward(const Mlp& mlp, const MlpCache& cache, const Matrix& dy, Mlp& grads);

struct AdaptorConfig {
    std::size_t d_model = 32;
    std::size_t semantic_width = 1280;  // E
    std::size_t n_props = 2;            // K_prop

    bool operator==(const AdaptorConfig&) const = default;
};

struct AdaptorParams {
    Mlp esm;   // E -> D
    Mlp phys;  // 5 -> D
    Mlp attn;  // D -> 1
    Mlp prop;  // K_prop -> D

    NamedTensors tensors();
    ConstNamedTensors tensors() const;
    void set_zero();
};

AdaptorParams init_adaptor(const AdaptorConfig& config, Rng& rng);
AdaptorParams zeros_like(const AdaptorParams& params);

Matrix fuse_streams(const AdaptorParams& params, const PocketInput& pocket);

struct PoolResult {
    std::vector<double> weights;  // alpha, one per residue
    std::vector<double> h_ext;    // D
};

// softmax(scores)-weighted row sum.
PoolResult pool_rows(const Matrix& rows, std::span<const double> scores);
PoolResult attention_pool(const AdaptorParams& params, const Matrix& h_fused);
// fuse_streams followed by attention_pool.
std::vector<double> encode_pocket(const AdaptorParams& params, const PocketInput& pocket);

std::vector<double> encode_property(const AdaptorParams& params, std::span<const double> y_target);

// Backpropagate dL/dh_ext (resp. dL/dh_int) into adaptor gradients.
void encode_pocket_backward(const AdaptorParams& params, const PocketInput& pocket, std::span<const double> d_h_ext,
                            AdaptorParams& grads);
void encode_property_backward(const AdaptorParams& params, std::span<const double> y_target,
                              std::span<const double> d_h_int, AdaptorParams& grads);

}  // namespace fragdiff
