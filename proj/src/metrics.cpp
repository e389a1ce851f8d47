#include "fragdiff/metrics.hpp"

#include <set>
#include <utility>

#include "fragdiff/error.hpp"

namespace fragdiff {

namespace {

using Bigrams = std::set<std::pair<TokenId, TokenId>>;

Bigrams bigrams(const TokenSequence& seq, const Vocabulary& vocab) {
    Bigrams out;
    const std::size_t n = body_length(seq, vocab);
    for (std::size_t i = 0; i + 1 < n; ++i) out.emplace(seq.ids[i], seq.ids[i + 1]);
    return out;
}

}  // namespace

double diversity(std::span<const TokenSequence> seqs, const Vocabulary& vocab) {
    if (seqs.size() < 2) throw Error(ErrorKind::TooFew, "diversity needs at least two sequences");
    std::vector<Bigrams> fps;
    fps.reserve(seqs.size());
    for (const auto& s : seqs) fps.push_back(bigrams(s, vocab));
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < fps.size(); ++i) {
        for (std::size_t j = i + 1; j < fps.size(); ++j) {
            std::size_t inter = 0;
            for (const auto& g : fps[i]) inter += fps[j].count(g);
            const std::size_t uni = fps[i].size() + fps[j].size() - inter;
            total += uni == 0 ? 0.0 : 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
            ++pairs;
        }
    }
    return total / static_cast<double>(pairs);
}

double success_rate(std::span<const TokenSequence> seqs, const std::function<bool(const TokenSequence&)>& passes,
                    const Vocabulary& vocab) {
    if (seqs.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& s : seqs) {
        if (is_complete_and_valid(s, vocab) && passes(s)) ++n;
    }
    return static_cast<double>(n) / static_cast<double>(seqs.size());
}

double success_rate(std::span<const TokenSequence> seqs, const SuccessThresholds& thresholds,
                    const OracleSuite& oracles, const Vocabulary& vocab) {
    return success_rate(
        seqs, [&](const TokenSequence& s) { return structure_success(s, thresholds, oracles); }, vocab);
}

EvalReport evaluate(std::span<const TokenSequence> seqs, const OracleSuite& oracles,
                    const std::function<double(const TokenSequence&)>& reward, const SuccessThresholds& thresholds,
                    const Vocabulary& vocab) {
    EvalReport r;
    r.n_samples = seqs.size();
    std::size_t valid = 0;
    double reward_sum = 0.0, dock = 0.0, qed = 0.0, sa = 0.0;
    for (const auto& s : seqs) {
        if (!is_complete_and_valid(s, vocab)) continue;
        ++valid;
        reward_sum += reward(s);
        dock += oracles.dock(s);
        qed += oracles.qed(s);
        sa += oracles.sa(s);
    }
    if (!seqs.empty()) r.validity_rate = static_cast<double>(valid) / static_cast<double>(seqs.size());
    if (valid > 0) {
        const double n = static_cast<double>(valid);
        r.mean_reward = reward_sum / n;
        r.metric_means = {{"dock", dock / n}, {"qed", qed / n}, {"sa", sa / n}};
    }
    r.diversity = seqs.size() >= 2 ? diversity(seqs, vocab) : 0.0;
    r.success_rate = success_rate(seqs, thresholds, oracles, vocab);
    return r;
}

nlohmann::json report_to_json(const EvalReport& report, bool include_wall_time) {
    nlohmann::json j{{"n_samples", report.n_samples},
                     {"validity_rate", report.validity_rate},
                     {"mean_reward", report.mean_reward},
                     {"metric_means", report.metric_means},
                     {"diversity", report.diversity},
                     {"success_rate", report.success_rate}};
    if (include_wall_time) j["wall_time_s"] = report.wall_time_s;
    return j;
}

}  // namespace fragdiff
