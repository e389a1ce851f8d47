#pragma once

// Fragment-sequence grammar: a small SAFE-like linear notation.
//
//   atoms      A..H        fragment building blocks
//   digits     1..4        attachment labels; equal labels pair up in order
//                          of appearance (open, close, open, ...)
//   separator  .           splits fragments
//   pad        _           trailing filler up to the model length
//
// Special context tokens (<boc>, <eoc>, <boe>, <eoe>, <boi>, <eoi>) exist
// in the vocabulary but may never appear in a molecular body. The mask
// token `?` is always the last vocabulary entry.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fragdiff/rng.hpp"

namespace fragdiff {

using TokenId = std::int32_t;

struct TokenSequence {
    std::vector<TokenId> ids;

    std::size_t length() const noexcept { return ids.size(); }
    auto operator<=>(const TokenSequence&) const = default;
};

class Vocabulary {
public:
    static constexpr int kAtomCount = 8;
    static constexpr int kDigitCount = 4;

    // The fragment grammar vocabulary (21 entries).
    static const Vocabulary& standard();

    std::size_t size() const noexcept { return tokens_.size(); }
    TokenId mask_index() const noexcept { return mask_; }
    TokenId separator() const noexcept { return special("separator"); }
    TokenId pad() const noexcept { return special("pad"); }
    TokenId special(std::string_view name) const;
    const std::map<std::string, TokenId, std::less<>>& special_indices() const noexcept { return special_; }
    const std::vector<std::string>& tokens() const noexcept { return tokens_; }
    const std::string& symbol(TokenId id) const { return tokens_.at(static_cast<std::size_t>(id)); }

    TokenId atom(int index) const noexcept { return index; }
    TokenId digit(int label) const noexcept { return kAtomCount + label - 1; }  // label in 1..4
    bool is_atom(TokenId id) const noexcept { return id >= 0 && id < kAtomCount; }
    bool is_digit(TokenId id) const noexcept { return id >= kAtomCount && id < kAtomCount + kDigitCount; }
    int digit_label(TokenId id) const noexcept { return id - kAtomCount + 1; }
    // True for tokens that may not occur inside a molecular body.
    bool is_context_special(TokenId id) const noexcept;

    // FNV-1a over the ordered symbol list; stored in checkpoints.
    std::uint64_t hash() const;

private:
    Vocabulary() = default;

    std::vector<std::string> tokens_;
    std::map<std::string, TokenId, std::less<>> special_;
    TokenId mask_ = 0;
};

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab);
std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab);

struct ValidityReport {
    bool valid = true;
    std::optional<std::size_t> first_violation;
    std::string reason;
};

// Throws MaskPresent if any mask token remains.
ValidityReport validate(const TokenSequence& seq, const Vocabulary& vocab);
inline bool is_valid(const TokenSequence& seq, const Vocabulary& vocab) { return validate(seq, vocab).valid; }
// Convenience for callers that may hold partially masked sequences.
bool is_complete_and_valid(const TokenSequence& seq, const Vocabulary& vocab);

// Index of the first pad token (or length when there is none).
std::size_t body_length(const TokenSequence& seq, const Vocabulary& vocab);
TokenSequence strip_padding(const TokenSequence& seq, const Vocabulary& vocab);
// Appends pads up to `length`; throws SequenceTooLong when the body exceeds it.
TokenSequence pad_to(const TokenSequence& seq, std::size_t length, const Vocabulary& vocab);

// Renumbers attachment bonds in first-occurrence order; each opening takes
// the lowest label not held by a bond that is still open.
TokenSequence canonicalize(const TokenSequence& seq, const Vocabulary& vocab);

struct Fragment {
    std::vector<TokenId> ids;
    std::string key;      // canonical string form of `ids`
    int open_points = 0;  // attachment labels left unpaired inside the fragment

    bool operator==(const Fragment& other) const { return ids == other.ids; }
};

Fragment make_fragment(std::span<const TokenId> ids, const Vocabulary& vocab);
Fragment canonicalize(const Fragment& fragment, const Vocabulary& vocab);
Fragment parse_fragment(std::string_view text, const Vocabulary& vocab);

// Fragments are slices of the canonicalized sequence, in order.
std::vector<Fragment> decompose(const TokenSequence& seq, const Vocabulary& vocab);
// Joins fragments with separators (inverse of decompose).
TokenSequence join_fragments(std::span<const Fragment> fragments, const Vocabulary& vocab);

// Joins two fragments and pairs their open attachment points. When the open
// counts differ (or are both zero) fresh labels are appended to the fragment
// that is short, so every label ends up matched. Labels are assigned by
// lowest-free-digit in reading order.
TokenSequence attach(const Fragment& f1, const Fragment& f2, const Vocabulary& vocab);

enum class RemaskKind { Uniform, Longest };

struct RemaskRule {
    RemaskKind kind = RemaskKind::Uniform;
    bool allow_single_fragment = false;
};

struct RemaskResult {
    TokenSequence seq;
    std::size_t span_begin = 0;     // first mask position in `seq`
    std::size_t mask_len = 0;
    std::size_t removed_len = 0;    // length of the replaced fragment
    std::size_t fragment_index = 0;
};

RemaskResult remask_fragment(const TokenSequence& seq, const RemaskRule& rule, std::size_t mask_len,
                             const Vocabulary& vocab, Rng& rng);

// Random grammar-valid molecule generator (corpora and property tests).
struct MoleculeShape {
    int min_fragments = 1;
    int max_fragments = 3;
    int min_atoms = 1;
    int max_atoms = 4;
    double ring_probability = 0.2;
    std::vector<int> atom_alphabet{0, 1, 2, 3, 4, 5, 6, 7};
    std::size_t max_length = 0;  // 0 = unbounded
};

TokenSequence generate_molecule(const MoleculeShape& shape, const Vocabulary& vocab, Rng& rng);

}  // namespace fragdiff
