#pragma once

// Masked discrete diffusion over fixed-length token sequences.
//
// The process is vocabulary-agnostic: the mask token is always the last
// category of the denoiser's logits (index K - 1).

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "fragdiff/context.hpp"
#include "fragdiff/grammar.hpp"
#include "fragdiff/rng.hpp"
#include "fragdiff/tensor.hpp"

namespace fragdiff {

enum class ScheduleKind { Linear, LogLinear };

// Keep-probability alpha(t): alpha(0) = 1, alpha(1) = 0, strictly decreasing.
//   linear      alpha = 1 - t
//   log-linear  alpha = ln(1 + (e - 1)(1 - t))
class MaskSchedule {
public:
    explicit MaskSchedule(ScheduleKind kind = ScheduleKind::Linear) : kind_(kind) {}

    ScheduleKind kind() const noexcept { return kind_; }
    double alpha(double t) const;
    double derivative(double t) const;
    // alpha'(t) / (1 - alpha(t)), the NELBO time weight (negative).
    double nelbo_weight(double t) const;

    std::string name() const;
    static MaskSchedule parse(const std::string& name);

private:
    ScheduleKind kind_;
};

// Descending reverse-time grid 1 = t_T > ... > t_0 = 0.
struct DiffusionStepGrid {
    std::vector<double> times;

    static DiffusionStepGrid uniform(std::size_t steps);
    std::size_t steps() const noexcept { return times.empty() ? 0 : times.size() - 1; }
    void check() const;
};

// Anything that maps a (partially masked) body plus a condition prefix to
// per-position logits of shape (L, K).
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Matrix predict(const TokenSequence& z, double t, const ConditionContext& ctx) const = 0;
    virtual std::size_t vocab_size() const = 0;
};

// softmax(logits / temperature) with the mask category (last) forced to 0.
std::vector<double> clean_distribution(std::span<const double> logits, double temperature);

// Resolution probabilities for one masked position going from t to s:
// index K-1 holds the stay-masked mass, the rest the token masses.
std::vector<double> reverse_mixture(std::span<const double> logits, double t, double s, const MaskSchedule& schedule,
                                    double temperature);

TokenSequence forward_mask(const TokenSequence& x, double t, const MaskSchedule& schedule, TokenId mask_id, Rng& rng);

// One unmasking step of a trajectory.
struct StepRecord {
    TokenSequence state;                 // z_t before the step
    double t = 1.0;
    double s = 0.0;
    std::vector<std::size_t> positions;  // positions resolved in this step
    std::vector<TokenId> tokens;         // tokens chosen for them
    double log_prob = 0.0;               // sum of log mixture probs of the resolved tokens

    bool effective() const noexcept { return !positions.empty(); }
};

struct DiffusionTrajectory {
    std::vector<StepRecord> steps;
    TokenSequence final_state;
};

struct ReverseOutcome {
    TokenSequence next;
    StepRecord record;
};

ReverseOutcome reverse_step(const TokenSequence& z_t, double t, double s, const Matrix& logits,
                            const MaskSchedule& schedule, double temperature, Rng& rng);
inline TokenSequence reverse_step_state(const TokenSequence& z_t, double t, double s, const Matrix& logits,
                                        const MaskSchedule& schedule, double temperature, Rng& rng) {
    return reverse_step(z_t, t, s, logits, schedule, temperature, rng).next;
}

// Log-probability of the recorded action under `logits`.
double action_log_prob(const StepRecord& record, const Matrix& logits, const MaskSchedule& schedule,
                       double temperature);

struct SampleResult {
    TokenSequence sequence;
    DiffusionTrajectory trajectory;
};

// Ancestral sampling from the all-mask sequence of `length`, or from
// `initial` when given (its unmasked tokens stay pinned).
SampleResult sample(const Denoiser& denoiser, const ConditionContext& ctx, std::size_t length,
                    const DiffusionStepGrid& grid, const MaskSchedule& schedule, double temperature, Rng& rng,
                    const std::optional<TokenSequence>& initial = std::nullopt);

// One Monte-Carlo draw of the NELBO estimator.
struct NelboDraw {
    double t = 0.0;
    double weight = 0.0;  // alpha'(t) / (1 - alpha(t))
    TokenSequence z;
};

// Stratified draws t_i = (i + u) / n, redrawn when 1 - alpha(t) < 1e-9.
std::vector<NelboDraw> nelbo_draws(const TokenSequence& x, const MaskSchedule& schedule, std::size_t n_mc,
                                   TokenId mask_id, Rng& rng);

// weight * sum over masked positions of log p(x_l); adds d/dlogits of that
// contribution (scaled by `grad_scale`) into `dlogits` when non-null.
double nelbo_term(const Matrix& logits, const NelboDraw& draw, const TokenSequence& x, Matrix* dlogits,
                  double grad_scale);

// Time-weighted masked cross-entropy, averaged over draws (non-negative).
double nelbo_loss(const Denoiser& denoiser, const ConditionContext& ctx, const TokenSequence& x,
                  const MaskSchedule& schedule, std::size_t n_mc, Rng& rng);

nlohmann::json trajectory_to_json(const DiffusionTrajectory& trajectory);
DiffusionTrajectory trajectory_from_json(const nlohmann::json& j);

}  // namespace fragdiff
