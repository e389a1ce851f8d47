#pragma once

// Step-level PPO over the reverse diffusion MDP.
//
// A state is the partially masked sequence at time t, an action is the set
// of tokens resolved on the way to s. Every effective step of a trajectory
// shares the trajectory's batch-standardized terminal advantage.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fragdiff/denoiser.hpp"
#include "fragdiff/diffusion.hpp"
#include "fragdiff/optim.hpp"

namespace fragdiff {

// What the RL loop needs to know about a task.
struct RlTask {
    std::function<bool(const TokenSequence&)> validator;
    std::function<double(const TokenSequence&)> reward;  // only called on valid sequences
    std::function<bool(const TokenSequence&, double reward)> success;
};

struct PPOConfig {
    double clip_eps = 0.2;
    double entropy_beta = 0.01;
    std::size_t epochs = 2;
    double lr = 1e-3;
    double weight_decay = 0.0;
    double max_grad_norm = 1.0;
    double temperature = 0.5;
    std::size_t batch_size = 32;
    double early_stop_success = 0.8;
    std::size_t steps = 16;  // reverse grid size T
    std::size_t length = 16;
    std::uint64_t seed = 0;
    std::size_t workers = 1;

    void check() const;
};

inline constexpr double kAdvantageEps = 1e-8;

struct Rollout {
    DiffusionTrajectory trajectory;
    TokenSequence sequence;
    bool valid = false;
    double reward = 0.0;    // meaningful only when valid
    bool success = false;
    double advantage = 0.0;
};

struct RolloutBatch {
    std::vector<Rollout> items;

    std::size_t size() const noexcept { return items.size(); }
    std::size_t n_valid() const noexcept;
    double validity_rate() const noexcept;
    double success_rate() const noexcept;  // over all members, invalid ones count as failures
    double mean_reward() const;            // over valid members
};

// Samples B trajectories from a frozen policy. Throws AllInvalid when no
// trajectory is valid.
RolloutBatch collect_rollouts(const Denoiser& policy, const ConditionContext& ctx, const RlTask& task, std::size_t B,
                              std::size_t length, const DiffusionStepGrid& grid, const MaskSchedule& schedule,
                              double temperature, Rng& rng, std::size_t workers = 1);

// A = (R - mean) / (std + eps) over valid members, population std. Invalid
// members get A = 0. Throws TooFewValid below two valid members.
void compute_advantages(RolloutBatch& batch);

struct StepLossValue {
    double loss = 0.0;
    double ratio = 1.0;
    double dloss_dlogp = 0.0;  // d loss / d log pi_theta(a|s)
    bool clipped = false;      // clipped branch selected
};

// -min(r A, clip(r, 1 - eps, 1 + eps) A) with r = exp(logp - logp_old).
StepLossValue step_loss(double logp, double logp_old, double advantage, double clip_eps);

// Same, evaluating log pi_theta(a|s) under the current policy.
StepLossValue step_loss(const DenoiserModel& policy, const ConditionContext& ctx, const StepRecord& record,
                        double advantage, const PPOConfig& config, const MaskSchedule& schedule);

// Mean entropy of the tempered clean distribution over the resolved
// positions of a step, with its gradient when `dlogits` is non-null.
double resolved_entropy(const Matrix& logits, const StepRecord& record, double temperature, Matrix* dlogits,
                        double grad_scale);

struct BatchLossResult {
    double loss = 0.0;
    GradientBundle grads;
    Matrix d_prefix;                 // summed over steps, kPrefixLength x D
    double mean_entropy = 0.0;
    double clip_fraction = 0.0;
    double max_ratio_deviation = 0.0;  // max |r - 1| over steps
    double min_step_loss_margin = 0.0; // min over steps of loss + (1 + eps)|A|, never negative
    std::size_t n_steps = 0;
};

// (sum over valid trajectories of sum over effective steps of
//   [step_loss + beta * (-entropy)]) / n_valid
BatchLossResult batch_loss(const DenoiserModel& policy, const ConditionContext& ctx, const RolloutBatch& batch,
                           const PPOConfig& config, const MaskSchedule& schedule, bool with_grads = true);

struct IterationMetrics {
    std::size_t iter = 0;
    double mean_reward = 0.0;
    double validity_rate = 0.0;
    double success_rate = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
    bool skipped = false;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const IterationMetrics& m);

using ContextProvider = std::function<ConditionContext(const DenoiserParams&)>;

struct TrainResult {
    std::vector<IterationMetrics> history;
    bool early_stopped = false;
    std::size_t skipped = 0;
};

// Rollout, advantage and update loop. `on_iteration` (optional) observes
// each metrics row as it is produced.
TrainResult train(DenoiserModel& policy, const ContextProvider& ctx_provider, const RlTask& task,
                  const PPOConfig& config, const MaskSchedule& schedule, std::size_t max_iters,
                  AdamState* optimizer_state = nullptr,
                  const std::function<void(const IterationMetrics&)>& on_iteration = {});

// Toy task over a 6-token vocabulary (plus mask): every sequence is valid,
// the reward is the fraction of positions holding `target`.
RlTask token_preference_task(TokenId target);

}  // namespace fragdiff
