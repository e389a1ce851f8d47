#pragma once

// Terminal rewards and the oracles behind them.
//
// Oracles are pure functions of a complete molecule. They throw
// InvalidMolecule for grammar-invalid input; callers are expected to mask
// invalid trajectories rather than assign them a sentinel reward.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fragdiff/grammar.hpp"

namespace fragdiff {

using ScalarOracle = std::function<double(const TokenSequence&)>;
using VectorOracle = std::function<std::vector<double>(const TokenSequence&)>;

struct OracleSuite {
    ScalarOracle dock;   // lower is better
    ScalarOracle qed;    // [0, 1]
    ScalarOracle sa;     // [0, 1]
    VectorOracle props;  // n_props entries
    std::size_t n_props = 0;
};

// Deterministic stand-ins built from seeded projections of the molecule's
// token n-gram fingerprint (unigrams, bigrams, trigrams of the canonical
// body). The docking channel additionally rewards a small hidden set of
// "pocket key" n-grams over a subset of atoms so that it carries a
// learnable signal.
class SyntheticOracles {
public:
    SyntheticOracles(std::uint64_t seed, std::size_t n_props, const Vocabulary& vocab = Vocabulary::standard());

    double dock(const TokenSequence& seq) const;
    double qed(const TokenSequence& seq) const;
    double sa(const TokenSequence& seq) const;
    std::vector<double> props(const TokenSequence& seq) const;

    std::size_t n_props() const noexcept { return n_props_; }
    std::uint64_t seed() const noexcept { return seed_; }

    // Atoms taking part in the hidden key and those that never do.
    const std::vector<TokenId>& key_atoms() const noexcept { return key_atoms_; }
    const std::vector<TokenId>& decoy_atoms() const noexcept { return decoy_atoms_; }
    const std::vector<std::vector<TokenId>>& key_ngrams() const noexcept { return key_ngrams_; }

    static constexpr double kDockCenter = -8.5;
    static constexpr double kDockSpan = 4.5;

private:
    std::vector<TokenId> body_or_throw(const TokenSequence& seq) const;
    double projection(std::span<const TokenId> body, std::uint64_t channel) const;

    const Vocabulary* vocab_;
    std::uint64_t seed_;
    std::size_t n_props_;
    std::vector<TokenId> key_atoms_;
    std::vector<TokenId> decoy_atoms_;
    std::vector<std::vector<TokenId>> key_ngrams_;
    std::vector<double> key_weights_;
};

OracleSuite make_oracle_suite(std::shared_ptr<const SyntheticOracles> oracles);

// Scores a molecule by running `command` through /bin/sh: the molecule
// string goes to stdin (one line), a single number is read from stdout.
// Throws OracleError when the process fails or prints no number.
class ExternalOracle {
public:
    explicit ExternalOracle(std::string command, const Vocabulary& vocab = Vocabulary::standard());

    double operator()(const TokenSequence& seq) const;
    double score_text(const std::string& molecule) const;

private:
    std::string command_;
    const Vocabulary* vocab_;
};

struct StructureRewardSpec {
    double s_ref = -9.0;
    double lambda1 = 7.0 / 3.0;
    double lambda2 = 5.0 / 6.0;
};

struct PropertyRewardSpec {
    std::vector<double> y_target;
    std::vector<double> sigma;
    std::vector<double> omega;

    std::size_t size() const noexcept { return y_target.size(); }
    void check() const;
};

// sign(d) * d^2 + lambda1 * qed + lambda2 * sa with d = s_ref - dock.
double structure_reward_value(double dock, double qed, double sa, const StructureRewardSpec& spec);
double structure_reward(const TokenSequence& seq, const StructureRewardSpec& spec, const OracleSuite& oracles);

// sum_k omega_k * exp(-(yhat_k - y_k)^2 / (2 sigma_k^2))
double property_kernel(std::span<const double> y_hat, const PropertyRewardSpec& spec);
double property_reward(const TokenSequence& seq, const PropertyRewardSpec& spec, const OracleSuite& oracles);

inline constexpr double kSigmaFloor = 1e-6;

struct Calibration {
    PropertyRewardSpec spec;
    std::vector<double> epsilon;    // mean absolute error per property
    std::vector<bool> degenerate;   // sigma hit the floor
    std::size_t n_valid = 0;
};

// sigma_k: population std over valid samples (floored), epsilon_k: mean
// absolute error to the target, omega = epsilon / sum(epsilon) (uniform if
// every epsilon is zero). Throws TooFewValid below two valid samples.
Calibration calibrate(std::span<const TokenSequence> samples, std::span<const double> y_target,
                      const OracleSuite& oracles, const Vocabulary& vocab = Vocabulary::standard());

// omega from a vector of per-property errors.
std::vector<double> calibration_weights(std::span<const double> epsilon);

// Probabilities to {0, 1} labels at `threshold`.
std::vector<double> hard_labels(std::span<const double> probabilities, double threshold = 0.5);

struct SuccessThresholds {
    double dock_max = -8.18;
    double qed_min = 0.25;
    double sa_min = 0.59;
};

bool structure_success(const TokenSequence& seq, const SuccessThresholds& thresholds, const OracleSuite& oracles);

}  // namespace fragdiff
