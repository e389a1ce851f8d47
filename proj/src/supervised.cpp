#include "fragdiff/supervised.hpp"

#include <cmath>
#include <numeric>

#include "fragdiff/error.hpp"

namespace fragdiff {

namespace {

std::vector<TrainingExample> materialize(const SupervisedModel& state, std::span<const SupervisedExample> examples,
                                         std::span<const std::size_t> picks, const PocketInput* pocket) {
    std::vector<TrainingExample> batch;
    batch.reserve(picks.size());
    for (std::size_t i : picks) {
        const auto& ex = examples[i];
        batch.push_back({ex.x, make_context(state.model.params(), state.adaptor, {pocket, ex.y})});
    }
    return batch;
}

}  // namespace

ConditionContext make_context(const DenoiserParams& params, const AdaptorParams& adaptor,
                              const ConditionInputs& inputs) {
    std::optional<std::vector<double>> h_ext, h_int;
    if (inputs.pocket != nullptr) h_ext = encode_pocket(adaptor, *inputs.pocket);
    if (inputs.y_target) h_int = encode_property(adaptor, *inputs.y_target);
    std::optional<std::span<const double>> e, n;
    if (h_ext) e = std::span<const double>(*h_ext);
    if (h_int) n = std::span<const double>(*h_int);
    return build_context(e, n, params.special_emb);
}

std::vector<double> train_supervised(SupervisedModel& state, std::span<const SupervisedExample> examples,
                                     const PocketInput* pocket, const MaskSchedule& schedule,
                                     const SupervisedConfig& config,
                                     const std::function<void(std::size_t, double)>& on_iteration) {
    if (examples.empty()) throw Error(ErrorKind::InvalidArgument, "empty training set");
    if (config.batch_size == 0 || config.n_mc == 0) throw Error(ErrorKind::InvalidArgument, "batch and n_mc must be positive");
    if (state.model_opt.m.empty()) state.model_opt.init_like(std::as_const(state.model.params()).tensors());
    if (state.adaptor_opt.m.empty()) state.adaptor_opt.init_like(std::as_const(state.adaptor).tensors());

    const Rng master(config.seed);
    std::vector<std::size_t> order(examples.size());
    std::vector<double> losses;
    losses.reserve(config.iterations);
    for (std::size_t it = 0; it < config.iterations; ++it) {
        std::iota(order.begin(), order.end(), 0);
        Rng rng = master.child(mix64(it, 0x62617463));
        const std::size_t b = std::min(config.batch_size, examples.size());
        for (std::size_t i = 0; i < b; ++i) std::swap(order[i], order[i + rng.below(order.size() - i)]);
        const std::span<const std::size_t> picks(order.data(), b);

        const auto batch = materialize(state, examples, picks, pocket);
        LossAndGrads lg = loss_and_grads(state.model, batch, schedule, config.n_mc, rng.next_u64(), config.workers);
        losses.push_back(lg.loss);

        AdamConfig adam = config.adam;
        if (config.cosine_decay && config.iterations > 1) {
            const double progress = static_cast<double>(it) / static_cast<double>(config.iterations - 1);
            const double f = config.min_lr_fraction + (1.0 - config.min_lr_fraction) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
            adam.lr *= f;
        }
        if (config.train_adaptor) {
            AdaptorParams agrads = zeros_like(state.adaptor);
            for (std::size_t k = 0; k < picks.size(); ++k) {
                const auto& pg = lg.prefix[k];
                if (pg.h_ext && pocket != nullptr) encode_pocket_backward(state.adaptor, *pocket, pg.h_ext->flat(), agrads);
                if (pg.h_int && examples[picks[k]].y) {
                    encode_property_backward(state.adaptor, *examples[picks[k]].y, pg.h_int->flat(), agrads);
                }
            }
            adamw_update(state.adaptor.tensors(), std::as_const(agrads).tensors(), state.adaptor_opt, adam);
        }
        apply_update(state.model.params(), lg.grads, state.model_opt, adam);
        if (on_iteration) on_iteration(it, lg.loss);
    }
    return losses;
}

double corpus_nelbo(const SupervisedModel& state, std::span<const SupervisedExample> examples,
                    const PocketInput* pocket, const MaskSchedule& schedule, std::size_t n_mc, std::uint64_t seed) {
    std::vector<std::size_t> all(examples.size());
    std::iota(all.begin(), all.end(), 0);
    const auto batch = materialize(state, examples, all, pocket);
    return batch_nelbo(state.model, batch, schedule, n_mc, seed);
}

}  // namespace fragdiff
