#include "fragdiff/optim.hpp"

#include <cmath>

#include "fragdiff/error.hpp"

namespace fragdiff {

void AdamState::init_like(const ConstNamedTensors& params) {
    m.clear();
    v.clear();
    for (const auto& [name, t] : params) {
        m.emplace_back(t->rows(), t->cols());
        v.emplace_back(t->rows(), t->cols());
    }
    step = 0;
}

double global_norm(const ConstNamedTensors& tensors) {
    double sq = 0.0;
    for (const auto& [name, t] : tensors) {
        for (double x : t->flat()) sq += x * x;
    }
    return std::sqrt(sq);
}

void adamw_update(const NamedTensors& params, const ConstNamedTensors& grads, AdamState& state,
                  const AdamConfig& config) {
    if (params.size() != grads.size()) throw Error(ErrorKind::ShapeMismatch, "parameter/gradient count");
    for (std::size_t i = 0; i < params.size(); ++i) require_same_shape(*params[i].second, *grads[i].second, params[i].first);
    if (state.m.size() != params.size()) {
        ConstNamedTensors view;
        for (const auto& [n, p] : params) view.emplace_back(n, p);
        state.init_like(view);
    }
    for (std::size_t i = 0; i < params.size(); ++i) require_same_shape(*params[i].second, state.m[i], "adam state");

    double clip = 1.0;
    if (config.max_grad_norm > 0.0) {
        const double norm = global_norm(grads);
        if (norm > config.max_grad_norm) clip = config.max_grad_norm / norm;
    }

    state.step += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto p = params[i].second->flat();
        const auto g = grads[i].second->flat();
        auto m = state.m[i].flat();
        auto v = state.v[i].flat();
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double gj = g[j] * clip;
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
            const double mhat = m[j] / bc1;
            const double vhat = v[j] / bc2;
            p[j] -= config.lr * (mhat / (std::sqrt(vhat) + config.eps) + config.weight_decay * p[j]);
        }
    }
}

}  // namespace fragdiff
