#include "fragdiff/context.hpp"

#include <algorithm>

#include "fragdiff/error.hpp"

namespace fragdiff {

namespace {

std::size_t special_row(PrefixSlot slot) {
    switch (slot) {
        case PrefixSlot::Boc: return static_cast<std::size_t>(SpecialRow::Boc);
        case PrefixSlot::Boe: return static_cast<std::size_t>(SpecialRow::Boe);
        case PrefixSlot::Eoe: return static_cast<std::size_t>(SpecialRow::Eoe);
        case PrefixSlot::Boi: return static_cast<std::size_t>(SpecialRow::Boi);
        case PrefixSlot::Eoi: return static_cast<std::size_t>(SpecialRow::Eoi);
        case PrefixSlot::Eoc: return static_cast<std::size_t>(SpecialRow::Eoc);
        case PrefixSlot::NullExt: return static_cast<std::size_t>(SpecialRow::NullExt);
        case PrefixSlot::NullInt: return static_cast<std::size_t>(SpecialRow::NullInt);
        case PrefixSlot::Ext:
        case PrefixSlot::Int: break;
    }
    return kSpecialRows;
}

}  // namespace

ConditionContext build_context(std::optional<std::span<const double>> h_ext,
                               std::optional<std::span<const double>> h_int, const Matrix& special_embeddings) {
    if (special_embeddings.rows() != kSpecialRows) {
        throw Error(ErrorKind::ShapeMismatch, "special embedding table must have 8 rows");
    }
    const std::size_t d = special_embeddings.cols();
    for (const auto& h : {h_ext, h_int}) {
        if (h && h->size() != d) throw Error(ErrorKind::WidthMismatch, "condition vector width differs from model width");
    }
    ConditionContext ctx;
    ctx.has_ext = h_ext.has_value();
    ctx.has_int = h_int.has_value();
    ctx.slots = {PrefixSlot::Boc,
                 PrefixSlot::Boe,
                 ctx.has_ext ? PrefixSlot::Ext : PrefixSlot::NullExt,
                 PrefixSlot::Eoe,
                 PrefixSlot::Boi,
                 ctx.has_int ? PrefixSlot::Int : PrefixSlot::NullInt,
                 PrefixSlot::Eoi,
                 PrefixSlot::Eoc};
    ctx.rows = Matrix(kPrefixLength, d);
    for (std::size_t r = 0; r < kPrefixLength; ++r) {
        std::span<const double> src;
        if (ctx.slots[r] == PrefixSlot::Ext) src = *h_ext;
        else if (ctx.slots[r] == PrefixSlot::Int) src = *h_int;
        else src = special_embeddings.row(special_row(ctx.slots[r]));
        std::copy(src.begin(), src.end(), ctx.rows.row(r).begin());
    }
    return ctx;
}

PrefixGradients route_prefix_gradients(const ConditionContext& ctx, const Matrix& d_rows) {
    if (d_rows.rows() != kPrefixLength || d_rows.cols() != ctx.width()) {
        throw Error(ErrorKind::ShapeMismatch, "prefix gradient shape");
    }
    const std::size_t d = ctx.width();
    PrefixGradients out{Matrix(kSpecialRows, d), std::nullopt, std::nullopt};
    for (std::size_t r = 0; r < kPrefixLength; ++r) {
        const auto src = d_rows.row(r);
        if (ctx.slots[r] == PrefixSlot::Ext) {
            out.h_ext = Matrix(1, d);
            std::copy(src.begin(), src.end(), out.h_ext->row(0).begin());
        } else if (ctx.slots[r] == PrefixSlot::Int) {
            out.h_int = Matrix(1, d);
            std::copy(src.begin(), src.end(), out.h_int->row(0).begin());
        } else {
            auto dst = out.special.row(special_row(ctx.slots[r]));
            for (std::size_t c = 0; c < d; ++c) dst[c] += src[c];
        }
    }
    return out;
}

}  // namespace fragdiff
