#pragma once

// Evolutionary fragment optimization: seed molecules from a scored
// fragment vocabulary, remask one fragment, let the diffusion policy
// reconstruct the span, and feed the new fragments back into the
// vocabulary with top-V retention.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fragdiff/diffusion.hpp"
#include "fragdiff/grammar.hpp"

namespace fragdiff {

struct ScoredMolecule {
    TokenSequence seq;
    double score = 0.0;
};

// Mean score of the molecules whose decomposition contains `f` (canonical
// key match). Throws NoSupport when no molecule contains it.
double score_fragment(const Fragment& f, std::span<const ScoredMolecule> dataset,
                      const Vocabulary& vocab = Vocabulary::standard());

struct VocabEntry {
    Fragment fragment;
    double score = 0.0;
    std::size_t support = 0;
};

// Sorted by score (descending), ties broken by canonical key (ascending).
bool ranks_before(const VocabEntry& a, const VocabEntry& b);

class FragmentVocab {
public:
    explicit FragmentVocab(std::size_t capacity = 0) : capacity_(capacity) {}

    // Offers an entry. An existing key is only replaced by a higher score.
    // Returns true when the vocabulary changed.
    bool insert(VocabEntry entry);

    const std::vector<VocabEntry>& entries() const noexcept { return entries_; }
    std::size_t size() const noexcept { return entries_.size(); }
    bool empty() const noexcept { return entries_.empty(); }
    std::size_t capacity() const noexcept { return capacity_; }
    bool full() const noexcept { return entries_.size() >= capacity_; }
    double min_score() const;
    bool contains(const std::string& key) const;
    // Throws InvalidArgument when ordering, capacity or key uniqueness break.
    void check() const;

    // canonical_form \t score \t support_count, one entry per line
    std::string to_tsv() const;
    static FragmentVocab from_tsv(const std::string& text, std::size_t capacity,
                                  const Vocabulary& vocab = Vocabulary::standard());

private:
    std::size_t capacity_;
    std::vector<VocabEntry> entries_;
};

// Running per-fragment score sums over a growing molecule pool.
class FragmentPool {
public:
    void add(const ScoredMolecule& molecule, const Vocabulary& vocab);
    std::vector<VocabEntry> all_entries() const;
    std::optional<VocabEntry> entry(const std::string& key) const;
    std::size_t molecules() const noexcept { return molecules_; }

private:
    struct Stat {
        Fragment fragment;
        double sum = 0.0;
        std::size_t count = 0;
    };
    std::map<std::string, Stat> stats_;
    std::size_t molecules_ = 0;
};

// Top-V fragments of the dataset. Throws EmptyFragmentPool when the
// dataset yields no fragment.
FragmentVocab init_vocab(std::span<const ScoredMolecule> dataset, std::size_t capacity,
                         const Vocabulary& vocab = Vocabulary::standard());

// Attaches two fragments drawn uniformly from `pool` (possibly the same one).
// Draws that fail to attach or exceed `max_length` (0 = unbounded) are
// retried; NoAttachmentSite after `max_retries` failures.
TokenSequence seed_molecule(std::span<const VocabEntry> pool, Rng& rng, std::size_t max_length = 0,
                            std::size_t max_retries = 32, const Vocabulary& vocab = Vocabulary::standard());
TokenSequence seed_molecule(const FragmentVocab& fragments, Rng& rng, std::size_t max_length = 0,
                            std::size_t max_retries = 32, const Vocabulary& vocab = Vocabulary::standard());

// Fragment token-length histogram, clipped to [1, max_len]; index m holds
// P(m) and index 0 is always 0.
std::vector<double> estimate_p_len(std::span<const ScoredMolecule> dataset, std::size_t max_len,
                                   const Vocabulary& vocab = Vocabulary::standard());

struct EfoConfig {
    std::size_t generations = 3;
    std::size_t vocab_size = 32;
    std::size_t batch = 16;  // reconstructions per generation
    RemaskRule rule;
    std::vector<double> p_len;  // empty = estimate from the initial dataset
    std::size_t length = 16;
    std::size_t steps = 16;
    double temperature = 0.5;
    std::uint64_t seed = 0;
    std::size_t workers = 1;

    void check() const;
};

struct GenerationStats {
    std::size_t generation = 0;
    double mean_score = 0.0;   // over this generation's valid reconstructions
    double best_score = 0.0;   // running best over all generations
    double vocab_min = 0.0;
    std::size_t valid = 0;
    std::size_t invalid = 0;
};

struct EfoResult {
    std::vector<ScoredMolecule> generated;
    std::vector<std::size_t> generation_of;  // parallel to `generated`
    FragmentVocab vocab;
    std::vector<GenerationStats> stats;
    std::size_t invalid = 0;
    std::size_t pinned_violations = 0;  // reconstructions that changed a pinned token
    std::size_t seed_failures = 0;
};

using Objective = std::function<double(const TokenSequence&)>;  // higher is better, valid input only

EfoResult evolve(const Denoiser& policy, const ConditionContext& ctx, const EfoConfig& config,
                 std::span<const ScoredMolecule> dataset_init, const Objective& objective,
                 const MaskSchedule& schedule, const Vocabulary& vocab = Vocabulary::standard());

std::string efo_stats_csv(const std::vector<GenerationStats>& stats);

}  // namespace fragdiff
