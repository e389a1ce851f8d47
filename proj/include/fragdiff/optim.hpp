#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "fragdiff/tensor.hpp"

namespace fragdiff {

using NamedTensors = std::vector<std::pair<std::string, Matrix*>>;
using ConstNamedTensors = std::vector<std::pair<std::string, const Matrix*>>;

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    // Global gradient-norm clip; 0 disables.
    double max_grad_norm = 0.0;
};

// First/second moment buffers shaped like the parameter list they track.
struct AdamState {
    std::vector<Matrix> m;
    std::vector<Matrix> v;
    long step = 0;

    void init_like(const ConstNamedTensors& params);
};

// AdamW: Adam moments plus decoupled weight decay (p -= lr * wd * p).
void adamw_update(const NamedTensors& params, const ConstNamedTensors& grads, AdamState& state,
                  const AdamConfig& config);

double global_norm(const ConstNamedTensors& tensors);

}  // namespace fragdiff
