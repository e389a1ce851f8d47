#include "fragdiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fragdiff/error.hpp"

namespace fragdiff {

namespace {
constexpr double kEm1 = std::numbers::e - 1.0;
constexpr double kMinMaskedMass = 1e-9;
}  // namespace

// ---------------------------------------------------------------------------
// Schedule

double MaskSchedule::alpha(double t) const {
    if (t <= 0.0) return 1.0;
    if (t >= 1.0) return 0.0;
    switch (kind_) {
        case ScheduleKind::Linear: return 1.0 - t;
        case ScheduleKind::LogLinear: return std::log1p(kEm1 * (1.0 - t));
    }
    return 1.0 - t;
}

double MaskSchedule::derivative(double t) const {
    switch (kind_) {
        case ScheduleKind::Linear: return -1.0;
        case ScheduleKind::LogLinear: return -kEm1 / (1.0 + kEm1 * (1.0 - t));
    }
    return -1.0;
}

double MaskSchedule::nelbo_weight(double t) const { return derivative(t) / (1.0 - alpha(t)); }

std::string MaskSchedule::name() const { return kind_ == ScheduleKind::Linear ? "linear" : "log-linear"; }

MaskSchedule MaskSchedule::parse(const std::string& name) {
    if (name == "linear") return MaskSchedule(ScheduleKind::Linear);
    if (name == "log-linear" || name == "loglinear") return MaskSchedule(ScheduleKind::LogLinear);
    throw Error(ErrorKind::ConfigError, "unknown schedule '" + name + "'");
}

DiffusionStepGrid DiffusionStepGrid::uniform(std::size_t steps) {
    if (steps == 0) throw Error(ErrorKind::InvalidArgument, "grid needs at least one step");
    DiffusionStepGrid grid;
    grid.times.resize(steps + 1);
    for (std::size_t k = 0; k <= steps; ++k) {
        grid.times[k] = static_cast<double>(steps - k) / static_cast<double>(steps);
    }
    return grid;
}

void DiffusionStepGrid::check() const {
    if (times.size() < 2 || times.front() != 1.0 || times.back() != 0.0) {
        throw Error(ErrorKind::InvalidArgument, "grid must run from exactly 1 down to exactly 0");
    }
    for (std::size_t k = 1; k < times.size(); ++k) {
        if (!(times[k] < times[k - 1])) throw Error(ErrorKind::ScheduleOrder, "grid times must strictly decrease");
    }
}

// ---------------------------------------------------------------------------
// Distributions

std::vector<double> clean_distribution(std::span<const double> logits, double temperature) {
    if (!(temperature > 0.0)) throw Error(ErrorKind::InvalidArgument, "temperature must be positive");
    const std::size_t k = logits.size();
    std::vector<double> p(k, 0.0);
    if (k < 2) return p;
    double mx = logits[0];
    for (std::size_t j = 1; j + 1 < k; ++j) mx = std::max(mx, logits[j]);
    double z = 0.0;
    for (std::size_t j = 0; j + 1 < k; ++j) {
        p[j] = std::exp((logits[j] - mx) / temperature);
        z += p[j];
    }
    for (std::size_t j = 0; j + 1 < k; ++j) p[j] /= z;
    return p;
}

std::vector<double> reverse_mixture(std::span<const double> logits, double t, double s, const MaskSchedule& schedule,
                                    double temperature) {
    if (!(s < t)) throw Error(ErrorKind::ScheduleOrder, "reverse step needs s < t");
    const double a_t = schedule.alpha(t);
    const double a_s = schedule.alpha(s);
    const double denom = 1.0 - a_t;
    std::vector<double> mix = clean_distribution(logits, temperature);
    const double unmask = (a_s - a_t) / denom;
    for (std::size_t j = 0; j + 1 < mix.size(); ++j) mix[j] *= unmask;
    mix.back() = (1.0 - a_s) / denom;
    return mix;
}

TokenSequence forward_mask(const TokenSequence& x, double t, const MaskSchedule& schedule, TokenId mask_id, Rng& rng) {
    if (t < 0.0 || t > 1.0) throw Error(ErrorKind::InvalidArgument, "t outside [0, 1]");
    const double keep = schedule.alpha(t);
    TokenSequence z = x;
    for (auto& id : z.ids) {
        if (id == mask_id) throw Error(ErrorKind::MaskPresent, "forward_mask input already masked");
        if (rng.uniform() >= keep) id = mask_id;
    }
    return z;
}

// ---------------------------------------------------------------------------
// Reverse process

ReverseOutcome reverse_step(const TokenSequence& z_t, double t, double s, const Matrix& logits,
                            const MaskSchedule& schedule, double temperature, Rng& rng) {
    if (!(s < t)) throw Error(ErrorKind::ScheduleOrder, "reverse step needs s < t");
    if (logits.rows() != z_t.length()) throw Error(ErrorKind::ShapeMismatch, "logits rows != sequence length");
    const TokenId mask = static_cast<TokenId>(logits.cols()) - 1;
    ReverseOutcome out{z_t, StepRecord{z_t, t, s, {}, {}, 0.0}};
    for (std::size_t i = 0; i < z_t.length(); ++i) {
        if (z_t.ids[i] != mask) continue;
        const std::vector<double> mix = reverse_mixture(logits.row(i), t, s, schedule, temperature);
        const auto choice = static_cast<TokenId>(rng.categorical(mix));
        if (choice == mask) continue;
        out.next.ids[i] = choice;
        out.record.positions.push_back(i);
        out.record.tokens.push_back(choice);
        out.record.log_prob += std::log(mix[static_cast<std::size_t>(choice)]);
    }
    return out;
}

double action_log_prob(const StepRecord& record, const Matrix& logits, const MaskSchedule& schedule,
                       double temperature) {
    double lp = 0.0;
    for (std::size_t k = 0; k < record.positions.size(); ++k) {
        const std::vector<double> mix =
            reverse_mixture(logits.row(record.positions[k]), record.t, record.s, schedule, temperature);
        lp += std::log(mix[static_cast<std::size_t>(record.tokens[k])]);
    }
    return lp;
}

SampleResult sample(const Denoiser& denoiser, const ConditionContext& ctx, std::size_t length,
                    const DiffusionStepGrid& grid, const MaskSchedule& schedule, double temperature, Rng& rng,
                    const std::optional<TokenSequence>& initial) {
    grid.check();
    const TokenId mask = static_cast<TokenId>(denoiser.vocab_size()) - 1;
    TokenSequence z;
    if (initial) {
        if (initial->length() != length) throw Error(ErrorKind::ShapeMismatch, "initial state length");
        z = *initial;
    } else {
        z.ids.assign(length, mask);
    }
    SampleResult result;
    result.trajectory.steps.reserve(grid.steps());
    for (std::size_t k = 0; k + 1 < grid.times.size(); ++k) {
        const double t = grid.times[k];
        const double s = grid.times[k + 1];
        const bool any_masked = std::find(z.ids.begin(), z.ids.end(), mask) != z.ids.end();
        if (!any_masked) {
            result.trajectory.steps.push_back(StepRecord{z, t, s, {}, {}, 0.0});
            continue;
        }
        const Matrix logits = denoiser.predict(z, t, ctx);
        ReverseOutcome step = reverse_step(z, t, s, logits, schedule, temperature, rng);
        result.trajectory.steps.push_back(std::move(step.record));
        z = std::move(step.next);
    }
    result.trajectory.final_state = z;
    result.sequence = std::move(z);
    return result;
}

// ---------------------------------------------------------------------------
// NELBO

std::vector<NelboDraw> nelbo_draws(const TokenSequence& x, const MaskSchedule& schedule, std::size_t n_mc,
                                   TokenId mask_id, Rng& rng) {
    if (n_mc == 0) throw Error(ErrorKind::InvalidArgument, "n_mc must be positive");
    std::vector<NelboDraw> draws;
    draws.reserve(n_mc);
    const double u = rng.uniform();
    for (std::size_t i = 0; i < n_mc; ++i) {
        double t = (static_cast<double>(i) + u) / static_cast<double>(n_mc);
        // redraw inside the same stratum while the mask mass is degenerate
        while (1.0 - schedule.alpha(t) < kMinMaskedMass) {
            t = (static_cast<double>(i) + rng.uniform()) / static_cast<double>(n_mc);
        }
        NelboDraw d;
        d.t = t;
        d.weight = schedule.nelbo_weight(t);
        d.z = forward_mask(x, t, schedule, mask_id, rng);
        draws.push_back(std::move(d));
    }
    return draws;
}

double nelbo_term(const Matrix& logits, const NelboDraw& draw, const TokenSequence& x, Matrix* dlogits,
                  double grad_scale) {
    const TokenId mask = static_cast<TokenId>(logits.cols()) - 1;
    double total = 0.0;
    for (std::size_t l = 0; l < x.length(); ++l) {
        if (draw.z.ids[l] != mask) continue;
        const std::vector<double> p = clean_distribution(logits.row(l), 1.0);
        const auto target = static_cast<std::size_t>(x.ids[l]);
        total += draw.weight * std::log(p[target]);
        if (dlogits != nullptr) {
            auto row = dlogits->row(l);
            const double g = draw.weight * grad_scale;
            for (std::size_t j = 0; j + 1 < p.size(); ++j) row[j] += g * ((j == target ? 1.0 : 0.0) - p[j]);
        }
    }
    return total;
}

double nelbo_loss(const Denoiser& denoiser, const ConditionContext& ctx, const TokenSequence& x,
                  const MaskSchedule& schedule, std::size_t n_mc, Rng& rng) {
    const TokenId mask = static_cast<TokenId>(denoiser.vocab_size()) - 1;
    const auto draws = nelbo_draws(x, schedule, n_mc, mask, rng);
    double total = 0.0;
    for (const auto& d : draws) total += nelbo_term(denoiser.predict(d.z, d.t, ctx), d, x, nullptr, 0.0);
    return total / static_cast<double>(draws.size());
}

// ---------------------------------------------------------------------------
// Serialization

nlohmann::json trajectory_to_json(const DiffusionTrajectory& trajectory) {
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& r : trajectory.steps) {
        steps.push_back({{"state", r.state.ids},
                         {"t", r.t},
                         {"s", r.s},
                         {"positions", r.positions},
                         {"tokens", r.tokens},
                         {"log_prob", r.log_prob}});
    }
    return {{"version", 1}, {"final", trajectory.final_state.ids}, {"steps", steps}};
}

DiffusionTrajectory trajectory_from_json(const nlohmann::json& j) {
    if (j.value("version", 0) != 1) throw Error(ErrorKind::IoError, "unsupported trajectory record version");
    DiffusionTrajectory out;
    out.final_state.ids = j.at("final").get<std::vector<TokenId>>();
    for (const auto& s : j.at("steps")) {
        StepRecord r;
        r.state.ids = s.at("state").get<std::vector<TokenId>>();
        r.t = s.at("t").get<double>();
        r.s = s.at("s").get<double>();
        r.positions = s.at("positions").get<std::vector<std::size_t>>();
        r.tokens = s.at("tokens").get<std::vector<TokenId>>();
        r.log_prob = s.at("log_prob").get<double>();
        out.steps.push_back(std::move(r));
    }
    return out;
}

}  // namespace fragdiff
