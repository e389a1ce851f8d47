#pragma once

#include <cstddef>
#include <functional>
#include <map>
#include <span>
#include <string>

#include <json.hpp>

#include "fragdiff/grammar.hpp"
#include "fragdiff/rewards.hpp"

namespace fragdiff {

// Mean pairwise Jaccard distance of token 2-gram sets (over the unpadded
// bodies). Two empty sets are at distance 0. Throws TooFew below two
// sequences.
double diversity(std::span<const TokenSequence> seqs, const Vocabulary& vocab = Vocabulary::standard());

// Fraction of all sequences that are valid and pass `passes`.
double success_rate(std::span<const TokenSequence> seqs, const std::function<bool(const TokenSequence&)>& passes,
                    const Vocabulary& vocab = Vocabulary::standard());
double success_rate(std::span<const TokenSequence> seqs, const SuccessThresholds& thresholds,
                    const OracleSuite& oracles, const Vocabulary& vocab = Vocabulary::standard());

struct EvalReport {
    std::size_t n_samples = 0;
    double validity_rate = 0.0;
    double mean_reward = 0.0;
    std::map<std::string, double> metric_means;  // dock, qed, sa over valid samples
    double diversity = 0.0;
    double success_rate = 0.0;
    double wall_time_s = 0.0;
};

EvalReport evaluate(std::span<const TokenSequence> seqs, const OracleSuite& oracles,
                    const std::function<double(const TokenSequence&)>& reward, const SuccessThresholds& thresholds,
                    const Vocabulary& vocab = Vocabulary::standard());

nlohmann::json report_to_json(const EvalReport& report, bool include_wall_time);

}  // namespace fragdiff
