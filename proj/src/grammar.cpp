#include "fragdiff/grammar.hpp"

#include <algorithm>
#include <array>

#include "fragdiff/error.hpp"

namespace fragdiff {

namespace {

constexpr std::array<const char*, 6> kContextSpecials{"boc", "eoc", "boe", "eoe", "boi", "eoi"};

// A token slot used while re-labelling: digits carry a bond id instead of a
// concrete label until assign_labels runs.
struct Slot {
    TokenId token = 0;
    int bond = -1;
};

// Pairs digit occurrences by label toggling; returns one bond id per digit
// position (-1 for non-digits) and the number of bonds. Bonds left open at
// the end are reported in `open_bonds` in position order.
struct BondScan {
    std::vector<int> bond_of;
    std::vector<int> open_bonds;
    int bond_count = 0;
};

BondScan scan_bonds(std::span<const TokenId> ids, const Vocabulary& vocab) {
    BondScan out;
    out.bond_of.assign(ids.size(), -1);
    std::array<int, Vocabulary::kDigitCount + 1> open{};
    open.fill(-1);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (!vocab.is_digit(ids[i])) continue;
        const int label = vocab.digit_label(ids[i]);
        if (open[label] < 0) {
            open[label] = out.bond_count++;
            out.bond_of[i] = open[label];
        } else {
            out.bond_of[i] = open[label];
            open[label] = -1;
        }
    }
    // open bonds in order of their opening position
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (out.bond_of[i] < 0) continue;
        const int label = vocab.digit_label(ids[i]);
        if (open[label] == out.bond_of[i]) out.open_bonds.push_back(out.bond_of[i]);
    }
    return out;
}

// Lowest-free-digit labelling in reading order.
std::vector<TokenId> assign_labels(const std::vector<Slot>& slots, const Vocabulary& vocab) {
    std::vector<TokenId> out;
    out.reserve(slots.size());
    std::vector<int> label_of_bond;
    std::array<bool, Vocabulary::kDigitCount + 1> busy{};
    for (const Slot& s : slots) {
        if (s.bond < 0) {
            out.push_back(s.token);
            continue;
        }
        if (static_cast<std::size_t>(s.bond) >= label_of_bond.size()) label_of_bond.resize(s.bond + 1, 0);
        int& label = label_of_bond[s.bond];
        if (label == 0) {
            int free = 0;
            for (int d = 1; d <= Vocabulary::kDigitCount; ++d) {
                if (!busy[d]) {
                    free = d;
                    break;
                }
            }
            if (free == 0) throw Error(ErrorKind::NoAttachmentSite, "more than 4 attachment labels open at once");
            busy[free] = true;
            label = free;
            out.push_back(vocab.digit(free));
        } else {
            busy[label] = false;
            out.push_back(vocab.digit(label));
            label = -1;  // closed; a reused bond id never happens
        }
    }
    return out;
}

std::string render(std::span<const TokenId> ids, const Vocabulary& vocab) {
    std::string out;
    for (TokenId id : ids) out += vocab.symbol(id);
    return out;
}

std::vector<TokenId> renumber_first_occurrence(std::span<const TokenId> ids, const Vocabulary& vocab) {
    // raw label -> canonical label of the bond it currently holds open
    std::array<int, Vocabulary::kDigitCount + 1> mapping{};
    std::array<bool, Vocabulary::kDigitCount + 1> busy{};
    std::vector<TokenId> out(ids.begin(), ids.end());
    for (auto& id : out) {
        if (!vocab.is_digit(id)) continue;
        int& m = mapping[vocab.digit_label(id)];
        if (m == 0) {
            int c = 1;
            while (busy[c]) ++c;
            busy[c] = true;
            m = c;
            id = vocab.digit(c);
        } else {
            id = vocab.digit(m);
            busy[m] = false;
            m = 0;
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Vocabulary

const Vocabulary& Vocabulary::standard() {
    static const Vocabulary vocab = [] {
        Vocabulary v;
        for (int a = 0; a < kAtomCount; ++a) v.tokens_.push_back(std::string(1, static_cast<char>('A' + a)));
        for (int d = 1; d <= kDigitCount; ++d) v.tokens_.push_back(std::string(1, static_cast<char>('0' + d)));
        v.special_["separator"] = static_cast<TokenId>(v.tokens_.size());
        v.tokens_.push_back(".");
        v.special_["pad"] = static_cast<TokenId>(v.tokens_.size());
        v.tokens_.push_back("_");
        for (const char* name : kContextSpecials) {
            v.special_[name] = static_cast<TokenId>(v.tokens_.size());
            v.tokens_.push_back(std::string("<") + name + ">");
        }
        v.mask_ = static_cast<TokenId>(v.tokens_.size());
        v.tokens_.push_back("?");
        return v;
    }();
    return vocab;
}

TokenId Vocabulary::special(std::string_view name) const {
    auto it = special_.find(name);
    if (it == special_.end()) throw Error(ErrorKind::InvalidArgument, "no special token " + std::string(name));
    return it->second;
}

bool Vocabulary::is_context_special(TokenId id) const noexcept {
    for (const char* name : kContextSpecials) {
        auto it = special_.find(std::string_view(name));
        if (it != special_.end() && it->second == id) return true;
    }
    return false;
}

std::uint64_t Vocabulary::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& t : tokens_) {
        for (unsigned char c : t) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
        h ^= 0x1f;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Text form

TokenSequence tokenize(std::string_view text, const Vocabulary& vocab) {
    TokenSequence seq;
    seq.ids.reserve(text.size());
    std::size_t i = 0;
    while (i < text.size()) {
        if (text[i] == '<') {
            const auto close = text.find('>', i);
            if (close == std::string_view::npos) throw PositionError(ErrorKind::UnknownSymbol, i, "unterminated <");
            const std::string_view name = text.substr(i + 1, close - i - 1);
            bool found = false;
            for (const char* s : kContextSpecials) {
                if (name == s) {
                    seq.ids.push_back(vocab.special(name));
                    found = true;
                    break;
                }
            }
            if (!found) throw PositionError(ErrorKind::UnknownSymbol, i, "unknown special <" + std::string(name) + ">");
            i = close + 1;
            continue;
        }
        const char c = text[i];
        if (c >= 'A' && c < 'A' + Vocabulary::kAtomCount) {
            seq.ids.push_back(vocab.atom(c - 'A'));
        } else if (c >= '1' && c < '1' + Vocabulary::kDigitCount) {
            seq.ids.push_back(vocab.digit(c - '0'));
        } else if (c == '.') {
            seq.ids.push_back(vocab.separator());
        } else if (c == '_') {
            seq.ids.push_back(vocab.pad());
        } else if (c == '?') {
            seq.ids.push_back(vocab.mask_index());
        } else {
            throw PositionError(ErrorKind::UnknownSymbol, i, std::string("symbol '") + c + "'");
        }
        ++i;
    }
    return seq;
}

std::string detokenize(const TokenSequence& seq, const Vocabulary& vocab) { return render(seq.ids, vocab); }

// ---------------------------------------------------------------------------
// Validity

ValidityReport validate(const TokenSequence& seq, const Vocabulary& vocab) {
    const auto& ids = seq.ids;
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] == vocab.mask_index()) throw PositionError(ErrorKind::MaskPresent, i, "mask token");
        if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab.size()) {
            throw PositionError(ErrorKind::UnknownSymbol, i, "token id out of range");
        }
    }
    std::optional<std::size_t> first;
    std::string reason;
    auto flag = [&](std::size_t pos, const char* why) {
        if (!first || pos < *first) {
            first = pos;
            reason = why;
        }
    };

    const std::size_t body = body_length(seq, vocab);
    for (std::size_t i = body; i < ids.size(); ++i) {
        if (ids[i] != vocab.pad()) {
            flag(i, "token after padding");
            break;
        }
    }
    if (body == 0) flag(0, "empty molecule");

    const TokenId sep = vocab.separator();
    std::array<std::optional<std::size_t>, Vocabulary::kDigitCount + 1> open{};
    for (std::size_t i = 0; i < body; ++i) {
        const TokenId t = ids[i];
        if (vocab.is_context_special(t)) {
            flag(i, "special token inside molecule");
        } else if (t == sep) {
            if (i == 0 || ids[i - 1] == sep) flag(i, "empty fragment");
            if (i + 1 == body) flag(i, "empty trailing fragment");
        } else if (vocab.is_digit(t)) {
            auto& slot = open[vocab.digit_label(t)];
            if (slot) slot.reset();
            else slot = i;
        }
    }
    for (const auto& slot : open) {
        if (slot) flag(*slot, "unmatched attachment label");
    }
    return {!first.has_value(), first, reason};
}

bool is_complete_and_valid(const TokenSequence& seq, const Vocabulary& vocab) {
    if (std::find(seq.ids.begin(), seq.ids.end(), vocab.mask_index()) != seq.ids.end()) return false;
    return validate(seq, vocab).valid;
}

std::size_t body_length(const TokenSequence& seq, const Vocabulary& vocab) {
    auto it = std::find(seq.ids.begin(), seq.ids.end(), vocab.pad());
    return static_cast<std::size_t>(it - seq.ids.begin());
}

TokenSequence strip_padding(const TokenSequence& seq, const Vocabulary& vocab) {
    return {std::vector<TokenId>(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(body_length(seq, vocab)))};
}

TokenSequence pad_to(const TokenSequence& seq, std::size_t length, const Vocabulary& vocab) {
    if (seq.length() > length) {
        throw Error(ErrorKind::SequenceTooLong,
                    std::to_string(seq.length()) + " tokens exceed length " + std::to_string(length));
    }
    TokenSequence out = seq;
    out.ids.resize(length, vocab.pad());
    return out;
}

TokenSequence canonicalize(const TokenSequence& seq, const Vocabulary& vocab) {
    return {renumber_first_occurrence(seq.ids, vocab)};
}

// ---------------------------------------------------------------------------
// Fragments

Fragment make_fragment(std::span<const TokenId> ids, const Vocabulary& vocab) {
    Fragment f;
    f.ids.assign(ids.begin(), ids.end());
    f.key = render(renumber_first_occurrence(ids, vocab), vocab);
    f.open_points = static_cast<int>(scan_bonds(ids, vocab).open_bonds.size());
    return f;
}

Fragment canonicalize(const Fragment& fragment, const Vocabulary& vocab) {
    const auto ids = renumber_first_occurrence(fragment.ids, vocab);
    return make_fragment(ids, vocab);
}

Fragment parse_fragment(std::string_view text, const Vocabulary& vocab) {
    const TokenSequence seq = tokenize(text, vocab);
    for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        const TokenId t = seq.ids[i];
        if (!vocab.is_atom(t) && !vocab.is_digit(t)) {
            throw PositionError(ErrorKind::InvalidSequence, i, "fragment may hold only atoms and digits");
        }
    }
    if (seq.ids.empty()) throw Error(ErrorKind::InvalidSequence, "empty fragment");
    return make_fragment(seq.ids, vocab);
}

std::vector<Fragment> decompose(const TokenSequence& seq, const Vocabulary& vocab) {
    const ValidityReport report = validate(seq, vocab);
    if (!report.valid) {
        throw PositionError(ErrorKind::InvalidSequence, *report.first_violation, report.reason);
    }
    const TokenSequence canon = canonicalize(strip_padding(seq, vocab), vocab);
    std::vector<Fragment> out;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= canon.ids.size(); ++i) {
        if (i == canon.ids.size() || canon.ids[i] == vocab.separator()) {
            out.push_back(make_fragment(std::span<const TokenId>(canon.ids).subspan(start, i - start), vocab));
            start = i + 1;
        }
    }
    return out;
}

TokenSequence join_fragments(std::span<const Fragment> fragments, const Vocabulary& vocab) {
    TokenSequence out;
    for (std::size_t i = 0; i < fragments.size(); ++i) {
        if (i > 0) out.ids.push_back(vocab.separator());
        out.ids.insert(out.ids.end(), fragments[i].ids.begin(), fragments[i].ids.end());
    }
    return out;
}

TokenSequence attach(const Fragment& f1, const Fragment& f2, const Vocabulary& vocab) {
    for (const Fragment* f : {&f1, &f2}) {
        if (f->ids.empty()) throw Error(ErrorKind::NoAttachmentSite, "empty fragment");
        for (TokenId t : f->ids) {
            if (!vocab.is_atom(t) && !vocab.is_digit(t)) {
                throw Error(ErrorKind::InvalidSequence, "fragment holds a non-fragment token");
            }
        }
    }
    const BondScan s1 = scan_bonds(f1.ids, vocab);
    const BondScan s2 = scan_bonds(f2.ids, vocab);
    const int o1 = static_cast<int>(s1.open_bonds.size());
    const int o2 = static_cast<int>(s2.open_bonds.size());
    const int pairs = std::max({o1, o2, 1});

    // bond ids: [0, pairs) cross bonds, then f1 internals, then f2 internals
    std::vector<Slot> slots;
    auto emit = [&](const Fragment& f, const BondScan& s, int internal_base, int open_count) {
        for (std::size_t i = 0; i < f.ids.size(); ++i) {
            if (s.bond_of[i] < 0) {
                slots.push_back({f.ids[i], -1});
                continue;
            }
            auto it = std::find(s.open_bonds.begin(), s.open_bonds.end(), s.bond_of[i]);
            const int bond = it != s.open_bonds.end() ? static_cast<int>(it - s.open_bonds.begin())
                                                      : internal_base + s.bond_of[i];
            slots.push_back({0, bond});
        }
        for (int c = open_count; c < pairs; ++c) slots.push_back({0, c});
    };
    emit(f1, s1, pairs, o1);
    slots.push_back({vocab.separator(), -1});
    emit(f2, s2, pairs + s1.bond_count, o2);
    return {assign_labels(slots, vocab)};
}

RemaskResult remask_fragment(const TokenSequence& seq, const RemaskRule& rule, std::size_t mask_len,
                             const Vocabulary& vocab, Rng& rng) {
    if (mask_len == 0) throw Error(ErrorKind::InvalidArgument, "mask length must be >= 1");
    const ValidityReport report = validate(seq, vocab);
    if (!report.valid) throw PositionError(ErrorKind::InvalidSequence, *report.first_violation, report.reason);

    const std::size_t body = body_length(seq, vocab);
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::size_t start = 0;
    for (std::size_t i = 0; i <= body; ++i) {
        if (i == body || seq.ids[i] == vocab.separator()) {
            spans.emplace_back(start, i);
            start = i + 1;
        }
    }
    if (spans.size() == 1 && !rule.allow_single_fragment) {
        throw Error(ErrorKind::SingleFragmentUnremovable, "sequence has a single fragment");
    }
    std::size_t pick = 0;
    if (rule.kind == RemaskKind::Uniform) {
        pick = static_cast<std::size_t>(rng.below(spans.size()));
    } else {
        for (std::size_t k = 1; k < spans.size(); ++k) {
            if (spans[k].second - spans[k].first > spans[pick].second - spans[pick].first) pick = k;
        }
    }
    const auto [b, e] = spans[pick];
    RemaskResult out;
    out.seq.ids.assign(seq.ids.begin(), seq.ids.begin() + static_cast<std::ptrdiff_t>(b));
    out.seq.ids.insert(out.seq.ids.end(), mask_len, vocab.mask_index());
    out.seq.ids.insert(out.seq.ids.end(), seq.ids.begin() + static_cast<std::ptrdiff_t>(e), seq.ids.end());
    out.span_begin = b;
    out.mask_len = mask_len;
    out.removed_len = e - b;
    out.fragment_index = pick;
    return out;
}

// ---------------------------------------------------------------------------
// Generator

TokenSequence generate_molecule(const MoleculeShape& shape, const Vocabulary& vocab, Rng& rng) {
    if (shape.atom_alphabet.empty() || shape.min_fragments < 1 || shape.min_atoms < 1 ||
        shape.max_fragments < shape.min_fragments || shape.max_atoms < shape.min_atoms) {
        throw Error(ErrorKind::InvalidArgument, "bad molecule shape");
    }
    for (int attempt = 0; attempt < 1000; ++attempt) {
        const int n_frag = shape.min_fragments +
                           static_cast<int>(rng.below(static_cast<std::uint64_t>(shape.max_fragments - shape.min_fragments + 1)));
        std::vector<Slot> slots;
        int next_bond = 0;
        int link_in = -1;  // bond arriving from the previous fragment
        for (int f = 0; f < n_frag; ++f) {
            if (f > 0) slots.push_back({vocab.separator(), -1});
            const int n_atoms = shape.min_atoms +
                                static_cast<int>(rng.below(static_cast<std::uint64_t>(shape.max_atoms - shape.min_atoms + 1)));
            int ring_a = -1, ring_b = -1;
            if (n_atoms >= 3 && rng.uniform() < shape.ring_probability) {
                ring_a = static_cast<int>(rng.below(static_cast<std::uint64_t>(n_atoms - 1)));
                ring_b = ring_a + 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(n_atoms - ring_a - 1)));
            }
            const int ring_bond = ring_a >= 0 ? next_bond++ : -1;
            const int link_out = f + 1 < n_frag ? next_bond++ : -1;
            for (int a = 0; a < n_atoms; ++a) {
                const int atom = shape.atom_alphabet[rng.below(shape.atom_alphabet.size())];
                slots.push_back({vocab.atom(atom), -1});
                if (a == 0 && link_in >= 0) slots.push_back({0, link_in});
                if (a == ring_a || a == ring_b) slots.push_back({0, ring_bond});
                if (a == n_atoms - 1 && link_out >= 0) slots.push_back({0, link_out});
            }
            link_in = link_out;
        }
        if (shape.max_length != 0 && slots.size() > shape.max_length) continue;
        return {assign_labels(slots, vocab)};
    }
    throw Error(ErrorKind::InvalidArgument, "molecule shape cannot fit max_length");
}

}  // namespace fragdiff
