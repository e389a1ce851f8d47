#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>

#include "fragdiff/tensor.hpp"

namespace fragdiff {

// Prefix layout of the condition segment:
//   <boc> <boe> h_ext <eoe> <boi> h_int <eoi> <eoc>
// An absent block keeps its delimiters and gets a learned null row.
enum class PrefixSlot { Boc, Boe, Ext, NullExt, Eoe, Boi, Int, NullInt, Eoi, Eoc };

inline constexpr std::size_t kPrefixLength = 8;

// Rows of the learned special-embedding table owned by the denoiser.
enum class SpecialRow : std::size_t { Boc = 0, Boe, Eoe, Boi, Eoi, Eoc, NullExt, NullInt };
inline constexpr std::size_t kSpecialRows = 8;

struct ConditionContext {
    Matrix rows;  // kPrefixLength x D
    std::array<PrefixSlot, kPrefixLength> slots{};
    bool has_ext = false;
    bool has_int = false;

    std::size_t width() const noexcept { return rows.cols(); }
};

// Assembles the prefix. `special_embeddings` is the kSpecialRows x D table
// (see SpecialRow). Passing neither condition yields the unconditional
// prefix.
ConditionContext build_context(std::optional<std::span<const double>> h_ext,
                               std::optional<std::span<const double>> h_int, const Matrix& special_embeddings);

// Gradient of a loss with respect to the prefix rows, split by source.
struct PrefixGradients {
    Matrix special;                 // kSpecialRows x D, for the special table
    std::optional<Matrix> h_ext;    // 1 x D when the extrinsic block is present
    std::optional<Matrix> h_int;    // 1 x D when the intrinsic block is present
};

PrefixGradients route_prefix_gradients(const ConditionContext& ctx, const Matrix& d_rows);

}  // namespace fragdiff
