#include "fragdiff/efo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include "fragdiff/error.hpp"
#include "fragdiff/parallel.hpp"

namespace fragdiff {

namespace {

std::set<std::string> fragment_keys(const TokenSequence& seq, const Vocabulary& vocab) {
    std::set<std::string> keys;
    for (const Fragment& f : decompose(seq, vocab)) keys.insert(f.key);
    return keys;
}

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

double score_fragment(const Fragment& f, std::span<const ScoredMolecule> dataset, const Vocabulary& vocab) {
    if (dataset.empty()) throw Error(ErrorKind::NoSupport, "empty dataset");
    const std::string key = canonicalize(f, vocab).key;
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& m : dataset) {
        if (!is_complete_and_valid(m.seq, vocab)) continue;
        if (fragment_keys(m.seq, vocab).count(key) == 0) continue;
        sum += m.score;
        ++n;
    }
    if (n == 0) throw Error(ErrorKind::NoSupport, "fragment " + key + " occurs in no molecule");
    return sum / static_cast<double>(n);
}

// ---------------------------------------------------------------------------
// Vocabulary

bool ranks_before(const VocabEntry& a, const VocabEntry& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.fragment.key < b.fragment.key;
}

bool FragmentVocab::insert(VocabEntry entry) {
    if (capacity_ == 0) return false;
    auto same = std::find_if(entries_.begin(), entries_.end(),
                             [&](const VocabEntry& e) { return e.fragment.key == entry.fragment.key; });
    if (same != entries_.end()) {
        if (!(entry.score > same->score)) return false;
        entries_.erase(same);
    } else if (full() && !ranks_before(entry, entries_.back())) {
        return false;
    }
    entries_.insert(std::upper_bound(entries_.begin(), entries_.end(), entry, ranks_before), std::move(entry));
    if (entries_.size() > capacity_) entries_.pop_back();
    return true;
}

double FragmentVocab::min_score() const {
    if (entries_.empty()) return -std::numeric_limits<double>::infinity();
    return entries_.back().score;
}

bool FragmentVocab::contains(const std::string& key) const {
    return std::any_of(entries_.begin(), entries_.end(), [&](const VocabEntry& e) { return e.fragment.key == key; });
}

void FragmentVocab::check() const {
    if (entries_.size() > capacity_) throw Error(ErrorKind::InvalidArgument, "vocabulary over capacity");
    std::set<std::string> keys;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (!keys.insert(entries_[i].fragment.key).second) throw Error(ErrorKind::InvalidArgument, "duplicate key");
        if (i > 0 && !ranks_before(entries_[i - 1], entries_[i])) {
            throw Error(ErrorKind::InvalidArgument, "vocabulary out of order");
        }
    }
}

std::string FragmentVocab::to_tsv() const {
    std::string out;
    for (const auto& e : entries_) {
        out += e.fragment.key + "\t" + fmt(e.score) + "\t" + std::to_string(e.support) + "\n";
    }
    return out;
}

FragmentVocab FragmentVocab::from_tsv(const std::string& text, std::size_t capacity, const Vocabulary& vocab) {
    FragmentVocab v(capacity);
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string form, score, support;
        if (!std::getline(fields, form, '\t') || !std::getline(fields, score, '\t') || !std::getline(fields, support)) {
            throw Error(ErrorKind::IoError, "vocab line " + std::to_string(lineno) + ": expected 3 fields");
        }
        try {
            VocabEntry e{canonicalize(parse_fragment(form, vocab), vocab), std::stod(score),
                         static_cast<std::size_t>(std::stoull(support))};
            v.insert(std::move(e));
        } catch (const std::logic_error&) {
            throw Error(ErrorKind::IoError, "vocab line " + std::to_string(lineno) + ": bad number");
        }
    }
    return v;
}

// ---------------------------------------------------------------------------
// Pool statistics

void FragmentPool::add(const ScoredMolecule& molecule, const Vocabulary& vocab) {
    if (!is_complete_and_valid(molecule.seq, vocab)) return;
    std::set<std::string> seen;
    for (const Fragment& f : decompose(molecule.seq, vocab)) {
        if (!seen.insert(f.key).second) continue;
        auto [it, fresh] = stats_.try_emplace(f.key);
        if (fresh) it->second.fragment = canonicalize(f, vocab);
        it->second.sum += molecule.score;
        ++it->second.count;
    }
    ++molecules_;
}

std::vector<VocabEntry> FragmentPool::all_entries() const {
    std::vector<VocabEntry> out;
    for (const auto& [key, s] : stats_) out.push_back({s.fragment, s.sum / static_cast<double>(s.count), s.count});
    return out;
}

std::optional<VocabEntry> FragmentPool::entry(const std::string& key) const {
    auto it = stats_.find(key);
    if (it == stats_.end()) return std::nullopt;
    const Stat& s = it->second;
    return VocabEntry{s.fragment, s.sum / static_cast<double>(s.count), s.count};
}

FragmentVocab init_vocab(std::span<const ScoredMolecule> dataset, std::size_t capacity, const Vocabulary& vocab) {
    FragmentPool pool;
    for (const auto& m : dataset) pool.add(m, vocab);
    auto all = pool.all_entries();
    if (all.empty()) throw Error(ErrorKind::EmptyFragmentPool, "dataset yields no fragment");
    FragmentVocab v(capacity);
    for (auto& e : all) v.insert(std::move(e));
    return v;
}

// ---------------------------------------------------------------------------
// Seeds

TokenSequence seed_molecule(std::span<const VocabEntry> pool, Rng& rng, std::size_t max_length,
                            std::size_t max_retries, const Vocabulary& vocab) {
    if (pool.empty()) throw Error(ErrorKind::EmptyFragmentPool, "no fragments to seed from");
    for (std::size_t attempt = 0; attempt < std::max<std::size_t>(max_retries, 1); ++attempt) {
        const auto& a = pool[rng.below(pool.size())].fragment;
        const auto& b = pool[rng.below(pool.size())].fragment;
        try {
            TokenSequence s = attach(a, b, vocab);
            if (max_length != 0 && s.length() > max_length) continue;
            return s;
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::NoAttachmentSite) throw;
        }
    }
    throw Error(ErrorKind::NoAttachmentSite, "no attachable fragment pair after retries");
}

TokenSequence seed_molecule(const FragmentVocab& fragments, Rng& rng, std::size_t max_length, std::size_t max_retries,
                            const Vocabulary& vocab) {
    return seed_molecule(std::span<const VocabEntry>(fragments.entries()), rng, max_length, max_retries, vocab);
}

std::vector<double> estimate_p_len(std::span<const ScoredMolecule> dataset, std::size_t max_len,
                                   const Vocabulary& vocab) {
    max_len = std::max<std::size_t>(max_len, 1);
    std::vector<double> hist(max_len + 1, 0.0);
    double total = 0.0;
    for (const auto& m : dataset) {
        if (!is_complete_and_valid(m.seq, vocab)) continue;
        for (const Fragment& f : decompose(m.seq, vocab)) {
            hist[std::clamp<std::size_t>(f.ids.size(), 1, max_len)] += 1.0;
            total += 1.0;
        }
    }
    if (total == 0.0) {
        hist[1] = 1.0;
        return hist;
    }
    for (double& h : hist) h /= total;
    return hist;
}

// ---------------------------------------------------------------------------
// Evolution

void EfoConfig::check() const {
    if (generations == 0) throw Error(ErrorKind::InvalidArgument, "generations must be positive");
    if (vocab_size == 0 || batch == 0) throw Error(ErrorKind::InvalidArgument, "vocab size and batch must be positive");
    if (length < 3) throw Error(ErrorKind::InvalidArgument, "length too small for a two-fragment seed");
    if (!p_len.empty()) {
        double total = 0.0;
        for (double p : p_len) {
            if (p < 0.0) throw Error(ErrorKind::InvalidArgument, "p_len must be non-negative");
            total += p;
        }
        if (std::abs(total - 1.0) > 1e-9 || p_len[0] != 0.0) {
            throw Error(ErrorKind::InvalidArgument, "p_len must be a distribution over positive lengths");
        }
    }
}

EfoResult evolve(const Denoiser& policy, const ConditionContext& ctx, const EfoConfig& config,
                 std::span<const ScoredMolecule> dataset_init, const Objective& objective,
                 const MaskSchedule& schedule, const Vocabulary& vocab) {
    config.check();
    const std::vector<double> p_len =
        config.p_len.empty() ? estimate_p_len(dataset_init, config.length / 2, vocab) : config.p_len;
    const DiffusionStepGrid grid = DiffusionStepGrid::uniform(config.steps);

    FragmentPool pool;
    for (const auto& m : dataset_init) pool.add(m, vocab);
    EfoResult result;
    result.vocab = init_vocab(dataset_init, config.vocab_size, vocab);
    double best = -std::numeric_limits<double>::infinity();
    const Rng master(config.seed);

    struct Attempt {
        bool seeded = false;
        bool valid = false;
        bool pinned_ok = true;
        TokenSequence x;
        double score = 0.0;
    };

    for (std::size_t g = 0; g < config.generations; ++g) {
        const std::vector<VocabEntry> snapshot = result.vocab.entries();
        std::vector<Attempt> attempts(config.batch);
        parallel_for(config.batch, config.workers, [&](std::size_t i) {
            Rng rng = master.child(mix64(g, i));
            Attempt& a = attempts[i];
            TokenSequence seed;
            try {
                seed = seed_molecule(std::span<const VocabEntry>(snapshot), rng, config.length, 32, vocab);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::NoAttachmentSite) throw;
                return;
            }
            std::size_t m = rng.categorical(p_len);
            RemaskResult rm;
            try {
                rm = remask_fragment(seed, config.rule, 1, vocab, rng);
            } catch (const Error& e) {
                if (e.kind() != ErrorKind::SingleFragmentUnremovable) throw;
                return;
            }
            const std::size_t kept = seed.length() - rm.removed_len;
            m = std::min(m, config.length - kept);
            if (m == 0) return;
            // rebuild the span with m masks (the rule already chose the fragment)
            TokenSequence masked;
            masked.ids.assign(seed.ids.begin(), seed.ids.begin() + static_cast<std::ptrdiff_t>(rm.span_begin));
            masked.ids.insert(masked.ids.end(), m, vocab.mask_index());
            masked.ids.insert(masked.ids.end(),
                              seed.ids.begin() + static_cast<std::ptrdiff_t>(rm.span_begin + rm.removed_len),
                              seed.ids.end());
            masked = pad_to(masked, config.length, vocab);
            a.seeded = true;

            SampleResult s = sample(policy, ctx, config.length, grid, schedule, config.temperature, rng, masked);
            for (std::size_t p = 0; p < masked.length(); ++p) {
                if (masked.ids[p] != vocab.mask_index() && s.sequence.ids[p] != masked.ids[p]) a.pinned_ok = false;
            }
            a.x = s.sequence;
            a.valid = is_complete_and_valid(a.x, vocab);
            if (a.valid) a.score = objective(a.x);
        });

        GenerationStats st;
        st.generation = g + 1;
        double total = 0.0;
        std::set<std::string> candidates;
        for (const auto& e : result.vocab.entries()) candidates.insert(e.fragment.key);
        for (Attempt& a : attempts) {
            if (!a.seeded) {
                ++result.seed_failures;
                ++st.invalid;
                continue;
            }
            if (!a.pinned_ok) ++result.pinned_violations;
            if (!a.valid) {
                ++st.invalid;
                continue;
            }
            ++st.valid;
            total += a.score;
            best = std::max(best, a.score);
            ScoredMolecule sm{a.x, a.score};
            pool.add(sm, vocab);
            for (const std::string& key : fragment_keys(a.x, vocab)) candidates.insert(key);
            result.generated.push_back(std::move(sm));
            result.generation_of.push_back(g + 1);
        }
        // existing entries only move up; new fragments are scored on the grown pool
        for (const std::string& key : candidates) {
            if (auto e = pool.entry(key)) result.vocab.insert(std::move(*e));
        }
        result.invalid += st.invalid;
        st.mean_score = st.valid > 0 ? total / static_cast<double>(st.valid) : std::numeric_limits<double>::quiet_NaN();
        st.best_score = best;
        st.vocab_min = result.vocab.min_score();
        result.stats.push_back(st);
    }
    return result;
}

std::string efo_stats_csv(const std::vector<GenerationStats>& stats) {
    std::string out = "generation,mean_score,best_score,vocab_min_score,valid,invalid\n";
    for (const auto& s : stats) {
        out += std::to_string(s.generation) + "," + (std::isnan(s.mean_score) ? std::string("nan") : fmt(s.mean_score)) +
               "," + fmt(s.best_score) + "," + fmt(s.vocab_min) + "," + std::to_string(s.valid) + "," +
               std::to_string(s.invalid) + "\n";
    }
    return out;
}

}  // namespace fragdiff
