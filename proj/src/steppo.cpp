#include "fragdiff/steppo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <utility>

#include "fragdiff/error.hpp"
#include "fragdiff/parallel.hpp"

namespace fragdiff {

namespace {

void add_into(Matrix& dst, const Matrix& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// d log p_tau(a) / d logits for each resolved position, scaled.
void add_logp_grad(const Matrix& logits, const StepRecord& record, double temperature, double scale, Matrix& dlogits) {
    for (std::size_t k = 0; k < record.positions.size(); ++k) {
        const std::size_t l = record.positions[k];
        const auto a = static_cast<std::size_t>(record.tokens[k]);
        const std::vector<double> p = clean_distribution(logits.row(l), temperature);
        auto row = dlogits.row(l);
        for (std::size_t j = 0; j + 1 < p.size(); ++j) {
            row[j] += scale * ((j == a ? 1.0 : 0.0) - p[j]) / temperature;
        }
    }
}

std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

}  // namespace

void PPOConfig::check() const {
    if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw Error(ErrorKind::InvalidArgument, "clip epsilon must be in (0, 1)");
    if (entropy_beta < 0.0) throw Error(ErrorKind::InvalidArgument, "entropy beta must be non-negative");
    if (epochs == 0) throw Error(ErrorKind::InvalidArgument, "epochs must be positive");
    if (!(temperature > 0.0)) throw Error(ErrorKind::InvalidArgument, "temperature must be positive");
    if (batch_size < 2) throw Error(ErrorKind::InvalidArgument, "batch size must be at least 2");
    if (steps == 0 || length == 0) throw Error(ErrorKind::InvalidArgument, "steps and length must be positive");
}

// ---------------------------------------------------------------------------
// Rollouts

std::size_t RolloutBatch::n_valid() const noexcept {
    return static_cast<std::size_t>(std::count_if(items.begin(), items.end(), [](const Rollout& r) { return r.valid; }));
}

double RolloutBatch::validity_rate() const noexcept {
    return items.empty() ? 0.0 : static_cast<double>(n_valid()) / static_cast<double>(items.size());
}

double RolloutBatch::success_rate() const noexcept {
    if (items.empty()) return 0.0;
    const auto n = std::count_if(items.begin(), items.end(), [](const Rollout& r) { return r.valid && r.success; });
    return static_cast<double>(n) / static_cast<double>(items.size());
}

double RolloutBatch::mean_reward() const {
    double total = 0.0;
    std::size_t n = 0;
    for (const auto& r : items) {
        if (!r.valid) continue;
        total += r.reward;
        ++n;
    }
    return n == 0 ? std::numeric_limits<double>::quiet_NaN() : total / static_cast<double>(n);
}

RolloutBatch collect_rollouts(const Denoiser& policy, const ConditionContext& ctx, const RlTask& task, std::size_t B,
                              std::size_t length, const DiffusionStepGrid& grid, const MaskSchedule& schedule,
                              double temperature, Rng& rng, std::size_t workers) {
    if (B < 2) throw Error(ErrorKind::InvalidArgument, "rollout batch needs at least 2 members");
    const std::uint64_t base = rng.next_u64();
    RolloutBatch batch;
    batch.items.resize(B);
    parallel_for(B, workers, [&](std::size_t i) {
        Rng r(mix64(base, i));
        SampleResult s = sample(policy, ctx, length, grid, schedule, temperature, r);
        Rollout& out = batch.items[i];
        out.sequence = s.sequence;
        out.trajectory = std::move(s.trajectory);
        out.valid = task.validator(out.sequence);
        if (out.valid) {
            out.reward = task.reward(out.sequence);
            out.success = task.success ? task.success(out.sequence, out.reward) : false;
        }
    });
    if (batch.n_valid() == 0) throw Error(ErrorKind::AllInvalid, "no valid trajectory in rollout batch");
    return batch;
}

void compute_advantages(RolloutBatch& batch) {
    const std::size_t n = batch.n_valid();
    if (n < 2) throw Error(ErrorKind::TooFewValid, "advantages need at least two valid trajectories");
    double mean = 0.0;
    for (const auto& r : batch.items) {
        if (r.valid) mean += r.reward;
    }
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& r : batch.items) {
        if (r.valid) var += (r.reward - mean) * (r.reward - mean);
    }
    const double sd = std::sqrt(var / static_cast<double>(n));
    for (auto& r : batch.items) r.advantage = r.valid ? (r.reward - mean) / (sd + kAdvantageEps) : 0.0;
}

// ---------------------------------------------------------------------------
// Losses

StepLossValue step_loss(double logp, double logp_old, double advantage, double clip_eps) {
    StepLossValue out;
    out.ratio = std::exp(logp - logp_old);
    const double clipped_ratio = std::clamp(out.ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    const double unclipped = out.ratio * advantage;
    const double clipped = clipped_ratio * advantage;
    if (unclipped <= clipped) {
        out.loss = -unclipped;
        out.dloss_dlogp = -unclipped;
    } else {
        out.loss = -clipped;
        out.clipped = true;
    }
    return out;
}

StepLossValue step_loss(const DenoiserModel& policy, const ConditionContext& ctx, const StepRecord& record,
                        double advantage, const PPOConfig& config, const MaskSchedule& schedule) {
    const Matrix logits = policy.predict(record.state, record.t, ctx);
    const double logp = action_log_prob(record, logits, schedule, config.temperature);
    return step_loss(logp, record.log_prob, advantage, config.clip_eps);
}

double resolved_entropy(const Matrix& logits, const StepRecord& record, double temperature, Matrix* dlogits,
                        double grad_scale) {
    if (record.positions.empty()) return 0.0;
    const double inv_n = 1.0 / static_cast<double>(record.positions.size());
    double total = 0.0;
    for (std::size_t l : record.positions) {
        const std::vector<double> p = clean_distribution(logits.row(l), temperature);
        double h = 0.0;
        for (std::size_t j = 0; j + 1 < p.size(); ++j) {
            if (p[j] > 0.0) h -= p[j] * std::log(p[j]);
        }
        total += h;
        if (dlogits != nullptr) {
            auto row = dlogits->row(l);
            for (std::size_t j = 0; j + 1 < p.size(); ++j) {
                if (p[j] <= 0.0) continue;
                row[j] += grad_scale * inv_n * (-p[j] * (std::log(p[j]) + h) / temperature);
            }
        }
    }
    return total * inv_n;
}

BatchLossResult batch_loss(const DenoiserModel& policy, const ConditionContext& ctx, const RolloutBatch& batch,
                           const PPOConfig& config, const MaskSchedule& schedule, bool with_grads) {
    const std::size_t n_valid = batch.n_valid();
    if (n_valid == 0) throw Error(ErrorKind::TooFewValid, "batch loss over zero valid trajectories");
    const double inv = 1.0 / static_cast<double>(n_valid);
    const std::size_t d = policy.config().d_model;

    struct Local {
        double loss = 0.0, entropy = 0.0, ratio_dev = 0.0;
        double margin = std::numeric_limits<double>::infinity();
        std::size_t steps = 0, clipped = 0;
        GradientBundle grads;
        Matrix d_prefix;
    };
    std::vector<Local> locals(batch.size());
    parallel_for(batch.size(), config.workers, [&](std::size_t b) {
        const Rollout& r = batch.items[b];
        if (!r.valid) return;
        Local& loc = locals[b];
        if (with_grads) {
            loc.grads = zeros_like(policy.params());
            loc.d_prefix = Matrix(kPrefixLength, d);
        }
        for (const StepRecord& rec : r.trajectory.steps) {
            if (!rec.effective()) continue;
            ForwardCache cache;
            const Matrix logits =
                denoiser_forward(policy.config(), policy.params(), rec.state, rec.t, ctx, with_grads ? &cache : nullptr);
            const double logp = action_log_prob(rec, logits, schedule, config.temperature);
            const StepLossValue sl = step_loss(logp, rec.log_prob, r.advantage, config.clip_eps);
            Matrix dlogits;
            if (with_grads) dlogits = Matrix(logits.rows(), logits.cols());
            const double h = resolved_entropy(logits, rec, config.temperature, with_grads ? &dlogits : nullptr,
                                              -config.entropy_beta * inv);
            loc.loss += sl.loss - config.entropy_beta * h;
            loc.entropy += h;
            loc.ratio_dev = std::max(loc.ratio_dev, std::abs(sl.ratio - 1.0));
            loc.margin = std::min(loc.margin, sl.loss + (1.0 + config.clip_eps) * std::abs(r.advantage));
            loc.clipped += sl.clipped ? 1 : 0;
            ++loc.steps;
            if (with_grads) {
                if (sl.dloss_dlogp != 0.0) add_logp_grad(logits, rec, config.temperature, sl.dloss_dlogp * inv, dlogits);
                add_into(loc.d_prefix, denoiser_backward(policy.config(), policy.params(), cache, dlogits, loc.grads));
            }
        }
    });

    BatchLossResult out;
    out.min_step_loss_margin = std::numeric_limits<double>::infinity();
    if (with_grads) {
        out.grads = zeros_like(policy.params());
        out.d_prefix = Matrix(kPrefixLength, d);
    }
    auto dst = out.grads.tensors();
    double entropy = 0.0;
    std::size_t clipped = 0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (!batch.items[b].valid) continue;
        const Local& loc = locals[b];
        out.loss += loc.loss;
        entropy += loc.entropy;
        clipped += loc.clipped;
        out.n_steps += loc.steps;
        out.max_ratio_deviation = std::max(out.max_ratio_deviation, loc.ratio_dev);
        out.min_step_loss_margin = std::min(out.min_step_loss_margin, loc.margin);
        if (with_grads && loc.steps > 0) {
            const auto src = loc.grads.tensors();
            for (std::size_t k = 0; k < dst.size(); ++k) add_into(*dst[k].second, *src[k].second);
            add_into(out.d_prefix, loc.d_prefix);
        }
    }
    out.loss *= inv;
    if (out.n_steps > 0) {
        out.mean_entropy = entropy / static_cast<double>(out.n_steps);
        out.clip_fraction = static_cast<double>(clipped) / static_cast<double>(out.n_steps);
    }
    if (with_grads) add_into(out.grads.special_emb, route_prefix_gradients(ctx, out.d_prefix).special);
    return out;
}

// ---------------------------------------------------------------------------
// Training loop

std::string metrics_csv_header() { return "iter,mean_reward,validity_rate,success_rate,entropy,clip_fraction"; }

std::string metrics_csv_row(const IterationMetrics& m) {
    return std::to_string(m.iter) + "," + fmt(m.mean_reward) + "," + fmt(m.validity_rate) + "," +
           fmt(m.success_rate) + "," + fmt(m.entropy) + "," + fmt(m.clip_fraction);
}

TrainResult train(DenoiserModel& policy, const ContextProvider& ctx_provider, const RlTask& task,
                  const PPOConfig& config, const MaskSchedule& schedule, std::size_t max_iters,
                  AdamState* optimizer_state, const std::function<void(const IterationMetrics&)>& on_iteration) {
    config.check();
    AdamState local_state;
    AdamState& state = optimizer_state != nullptr ? *optimizer_state : local_state;
    if (state.m.empty()) state.init_like(std::as_const(policy.params()).tensors());
    AdamConfig adam;
    adam.lr = config.lr;
    adam.weight_decay = config.weight_decay;
    adam.max_grad_norm = config.max_grad_norm;

    const DiffusionStepGrid grid = DiffusionStepGrid::uniform(config.steps);
    const Rng master(config.seed);
    TrainResult result;
    for (std::size_t iter = 0; iter < max_iters; ++iter) {
        IterationMetrics m;
        m.iter = iter;
        Rng rng = master.child(iter);
        RolloutBatch batch;
        try {
            batch = collect_rollouts(policy, ctx_provider(policy.params()), task, config.batch_size, config.length,
                                     grid, schedule, config.temperature, rng, config.workers);
            compute_advantages(batch);
        } catch (const Error& e) {
            if (e.kind() != ErrorKind::AllInvalid && e.kind() != ErrorKind::TooFewValid) throw;
            m.skipped = true;
            m.mean_reward = batch.items.empty() ? std::numeric_limits<double>::quiet_NaN() : batch.mean_reward();
            m.validity_rate = batch.validity_rate();
            m.success_rate = batch.success_rate();
            m.entropy = std::numeric_limits<double>::quiet_NaN();
            m.clip_fraction = std::numeric_limits<double>::quiet_NaN();
            ++result.skipped;
            result.history.push_back(m);
            if (on_iteration) on_iteration(m);
            continue;
        }

        double clip_total = 0.0;
        for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
            const ConditionContext ctx = ctx_provider(policy.params());
            const BatchLossResult res = batch_loss(policy, ctx, batch, config, schedule, true);
            if (epoch == 0) m.entropy = res.mean_entropy;
            clip_total += res.clip_fraction;
            apply_update(policy.params(), res.grads, state, adam);
        }
        m.clip_fraction = clip_total / static_cast<double>(config.epochs);
        m.mean_reward = batch.mean_reward();
        m.validity_rate = batch.validity_rate();
        m.success_rate = batch.success_rate();
        result.history.push_back(m);
        if (on_iteration) on_iteration(m);
        if (m.success_rate > config.early_stop_success) {
            result.early_stopped = true;
            break;
        }
    }
    return result;
}

RlTask token_preference_task(TokenId target) {
    RlTask task;
    task.validator = [](const TokenSequence&) { return true; };
    task.reward = [target](const TokenSequence& s) {
        if (s.ids.empty()) return 0.0;
        const auto n = std::count(s.ids.begin(), s.ids.end(), target);
        return static_cast<double>(n) / static_cast<double>(s.ids.size());
    };
    task.success = [](const TokenSequence&, double reward) { return reward > 0.8; };
    return task;
}

}  // namespace fragdiff
