#pragma once

// Supervised NELBO training of the denoiser together with the condition
// adaptor (the adaptor receives the prefix gradients).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "fragdiff/adaptor.hpp"
#include "fragdiff/denoiser.hpp"
#include "fragdiff/optim.hpp"

namespace fragdiff {

// Condition sources for one example; either may be absent.
struct ConditionInputs {
    const PocketInput* pocket = nullptr;
    std::optional<std::vector<double>> y_target;
};

ConditionContext make_context(const DenoiserParams& params, const AdaptorParams& adaptor,
                              const ConditionInputs& inputs);

struct SupervisedExample {
    TokenSequence x;  // padded to the model length
    std::optional<std::vector<double>> y;  // intrinsic condition
};

struct SupervisedConfig {
    std::size_t iterations = 500;
    std::size_t batch_size = 8;
    std::size_t n_mc = 4;
    AdamConfig adam;
    // cosine decay from adam.lr down to min_lr_fraction * adam.lr
    bool cosine_decay = true;
    double min_lr_fraction = 0.1;
    bool train_adaptor = true;
    std::uint64_t seed = 0;
    std::size_t workers = 1;
};

struct SupervisedModel {
    DenoiserModel model;
    AdaptorParams adaptor;
    AdamState model_opt;
    AdamState adaptor_opt;
};

// Returns the per-iteration minibatch loss (measured before that
// iteration's update). `pocket` (optional) is shared by every example.
std::vector<double> train_supervised(SupervisedModel& state, std::span<const SupervisedExample> examples,
                                     const PocketInput* pocket, const MaskSchedule& schedule,
                                     const SupervisedConfig& config,
                                     const std::function<void(std::size_t, double)>& on_iteration = {});

// Mean NELBO over the whole set with a fixed noise seed.
double corpus_nelbo(const SupervisedModel& state, std::span<const SupervisedExample> examples,
                    const PocketInput* pocket, const MaskSchedule& schedule, std::size_t n_mc, std::uint64_t seed);

}  // namespace fragdiff
