#include <doctest.h>

#include <cmath>
#include <map>

#include "fragdiff/context.hpp"
#include "fragdiff/diffusion.hpp"
#include "fragdiff/error.hpp"
#include "support/oracles.hpp"

using namespace fragdiff;

namespace {

// Fixed logits for every position, independent of the input.
class ConstantDenoiser : public Denoiser {
public:
    ConstantDenoiser(std::size_t k, std::vector<double> row) : k_(k), row_(std::move(row)) {}
    Matrix predict(const TokenSequence& z, double, const ConditionContext&) const override {
        Matrix m(z.length(), k_);
        for (std::size_t i = 0; i < z.length(); ++i)
            for (std::size_t j = 0; j < k_; ++j) m(i, j) = row_[j];
        return m;
    }
    std::size_t vocab_size() const override { return k_; }

private:
    std::size_t k_;
    std::vector<double> row_;
};

// All mass on a fixed target at every position.
class TargetDenoiser : public Denoiser {
public:
    TargetDenoiser(std::size_t k, TokenSequence target) : k_(k), target_(std::move(target)) {}
    Matrix predict(const TokenSequence& z, double, const ConditionContext&) const override {
        Matrix m(z.length(), k_, -1e4);
        for (std::size_t i = 0; i < z.length(); ++i) m(i, target_.ids[i]) = 40.0;
        return m;
    }
    std::size_t vocab_size() const override { return k_; }

private:
    std::size_t k_;
    TokenSequence target_;
};

// Input-dependent logits so replayed log-probabilities are non-trivial.
class HashDenoiser : public Denoiser {
public:
    explicit HashDenoiser(std::size_t k) : k_(k) {}
    Matrix predict(const TokenSequence& z, double t, const ConditionContext&) const override {
        Matrix m(z.length(), k_);
        std::uint64_t h = 0;
        for (TokenId id : z.ids) h = mix64(h, static_cast<std::uint64_t>(id));
        for (std::size_t i = 0; i < z.length(); ++i)
            for (std::size_t j = 0; j < k_; ++j)
                m(i, j) = static_cast<double>(mix64(h, i * 131 + j) % 1000) / 250.0 - 2.0 + t;
        return m;
    }
    std::size_t vocab_size() const override { return k_; }

private:
    std::size_t k_;
};

ConditionContext empty_ctx() { return build_context(std::nullopt, std::nullopt, Matrix(kSpecialRows, 4)); }

double ref_alpha(ScheduleKind k, double t) {
    return k == ScheduleKind::Linear ? 1.0 - t : std::log(1.0 + (std::exp(1.0) - 1.0) * (1.0 - t));
}

}  // namespace

TEST_CASE("schedules: endpoints, monotonicity, derivative") {
    for (auto kind : {ScheduleKind::Linear, ScheduleKind::LogLinear}) {
        const MaskSchedule s(kind);
        CHECK(s.alpha(0.0) == 1.0);
        CHECK(s.alpha(1.0) == 0.0);
        double prev = 1.0;
        for (int i = 1; i <= 100; ++i) {
            const double t = i / 101.0;
            CHECK(s.alpha(t) < prev);
            prev = s.alpha(t);
            CHECK(s.alpha(t) == doctest::Approx(ref_alpha(kind, t)).epsilon(1e-14));
            const double h = 1e-6;
            const double fd = (s.alpha(t + h) - s.alpha(t - h)) / (2 * h);
            CHECK(std::abs(fd - s.derivative(t)) < 1e-6);
        }
        CHECK(MaskSchedule::parse(s.name()).kind() == kind);
    }
    const MaskSchedule lin;
    for (double t : {0.1, 0.5, 0.9}) CHECK(lin.nelbo_weight(t) == doctest::Approx(-1.0 / t));
    CHECK_THROWS_AS(MaskSchedule::parse("cosine"), Error);
}

TEST_CASE("step grid") {
    const auto g = DiffusionStepGrid::uniform(4);
    CHECK(g.steps() == 4);
    CHECK(g.times.front() == 1.0);
    CHECK(g.times.back() == 0.0);
    DiffusionStepGrid bad{{1.0, 0.5, 0.5, 0.0}};
    CHECK_THROWS_AS(bad.check(), Error);
}

TEST_CASE("forward marginal matches 1 - alpha") {
    const MaskSchedule s;
    TokenSequence x;
    x.ids.assign(50, 0);
    Rng rng(21);
    CHECK(forward_mask(x, 0.0, s, 5, rng) == x);
    const auto all = forward_mask(x, 1.0, s, 5, rng);
    CHECK(std::count(all.ids.begin(), all.ids.end(), 5) == 50);
    for (double t : {0.25, 0.5, 0.75}) {
        std::size_t masked = 0;
        for (int n = 0; n < 20000; ++n) {
            const auto z = forward_mask(x, t, s, 5, rng);
            masked += static_cast<std::size_t>(std::count(z.ids.begin(), z.ids.end(), 5));
        }
        const double frac = static_cast<double>(masked) / (20000.0 * 50.0);
        CHECK(std::abs(frac - t) < 0.01);
    }
    Rng a(3), b(3);
    CHECK(forward_mask(x, 0.4, s, 5, a) == forward_mask(x, 0.4, s, 5, b));
}

TEST_CASE("reverse mixture equals the hand formula") {
    const MaskSchedule s;
    const std::vector<double> logits{0.3, -1.0, 2.0, 7.0};  // last entry is the mask logit
    const auto mix = reverse_mixture(logits, 0.75, 0.5, s, 0.5);
    const auto want = oracle::hand_mixture({0.3, -1.0, 2.0}, 0.25, 0.5, 0.5);
    REQUIRE(mix.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(mix[i] == doctest::Approx(want[i]).epsilon(1e-12));
    const auto clean = clean_distribution(logits, 1.0);
    CHECK(clean[3] == 0.0);
    CHECK(clean[0] + clean[1] + clean[2] == doctest::Approx(1.0));
}

TEST_CASE("reverse step frequencies for one masked position") {
    const MaskSchedule s;
    const std::vector<double> row{0.0, 0.0, 0.0, 0.0};  // 3 tokens plus mask, uniform
    Matrix logits(1, 4);
    TokenSequence z{{3}};
    Rng rng(22);
    std::map<TokenId, int> counts;
    const int n = 50000;
    for (int i = 0; i < n; ++i) counts[reverse_step_state(z, 0.6, 0.3, logits, s, 1.0, rng).ids[0]]++;
    const auto want = oracle::hand_mixture({0.0, 0.0, 0.0}, 0.4, 0.7, 1.0);
    for (TokenId k = 0; k < 4; ++k) CHECK(std::abs(counts[k] / double(n) - want[k]) < 0.01);
}

TEST_CASE("reverse step carry-over, s = 0 and order errors") {
    const MaskSchedule s;
    Matrix logits(3, 4);
    Rng rng(23);
    const TokenSequence full{{0, 1, 2}};
    CHECK(reverse_step_state(full, 0.5, 0.2, logits, s, 1.0, rng) == full);
    const TokenSequence part{{3, 1, 3}};
    for (int i = 0; i < 100; ++i) {
        const auto z = reverse_step_state(part, 0.5, 0.0, logits, s, 1.0, rng);
        CHECK(z.ids[1] == 1);
        CHECK(z.ids[0] != 3);
        CHECK(z.ids[2] != 3);
    }
    CHECK_THROWS_AS(reverse_step(part, 0.3, 0.3, logits, s, 1.0, rng), Error);
    CHECK_THROWS_AS(reverse_step(part, 0.3, 0.5, logits, s, 1.0, rng), Error);
}

TEST_CASE("sampling: carry-over, no masks, one-shot grid, oracle denoiser") {
    const MaskSchedule s;
    const HashDenoiser d(6);
    const auto ctx = empty_ctx();
    const auto grid = DiffusionStepGrid::uniform(8);
    for (int i = 0; i < 200; ++i) {
        Rng rng(1000 + i);
        const auto r = sample(d, ctx, 10, grid, s, 0.7, rng);
        CHECK(std::count(r.sequence.ids.begin(), r.sequence.ids.end(), 5) == 0);
        const auto& steps = r.trajectory.steps;
        for (std::size_t k = 0; k < steps.size(); ++k) {
            const auto& next = k + 1 < steps.size() ? steps[k + 1].state : r.trajectory.final_state;
            for (std::size_t p = 0; p < 10; ++p)
                if (steps[k].state.ids[p] != 5) CHECK(next.ids[p] == steps[k].state.ids[p]);
        }
    }
    Rng one(5);
    CHECK(sample(d, ctx, 4, DiffusionStepGrid::uniform(1), s, 1.0, one).trajectory.steps.size() == 1);

    const TokenSequence target{{2, 0, 4, 1, 3}};
    const TargetDenoiser oracle_d(6, target);
    for (int seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        CHECK(sample(oracle_d, ctx, 5, grid, s, 0.5, rng).sequence == target);
    }
}

TEST_CASE("sampling from a partially masked initial state pins the given tokens") {
    const MaskSchedule s;
    const HashDenoiser d(6);
    const TokenSequence init{{0, 5, 5, 3, 5}};
    for (int i = 0; i < 50; ++i) {
        Rng rng(i);
        const auto r = sample(d, empty_ctx(), 5, DiffusionStepGrid::uniform(4), s, 1.0, rng, init);
        CHECK(r.sequence.ids[0] == 0);
        CHECK(r.sequence.ids[3] == 3);
    }
}

TEST_CASE("recorded action log-probabilities replay from JSON") {
    const MaskSchedule s(ScheduleKind::LogLinear);
    const HashDenoiser d(7);
    const auto ctx = empty_ctx();
    Rng rng(24);
    const auto r = sample(d, ctx, 9, DiffusionStepGrid::uniform(6), s, 0.8, rng);
    const auto replay = trajectory_from_json(nlohmann::json::parse(trajectory_to_json(r.trajectory).dump()));
    REQUIRE(replay.steps.size() == r.trajectory.steps.size());
    CHECK(replay.final_state == r.trajectory.final_state);
    for (std::size_t k = 0; k < replay.steps.size(); ++k) {
        const auto& st = replay.steps[k];
        CHECK(st.positions == r.trajectory.steps[k].positions);
        if (!st.effective()) continue;
        const Matrix logits = d.predict(st.state, st.t, ctx);
        const double lp = action_log_prob(st, logits, s, 0.8);
        CHECK(std::abs(lp - r.trajectory.steps[k].log_prob) < 1e-10);
        // independent recomputation from the hand mixture
        double manual = 0.0;
        for (std::size_t j = 0; j < st.positions.size(); ++j) {
            const auto row = logits.row(st.positions[j]);
            const auto mix = oracle::hand_mixture(std::vector<double>(row.begin(), row.end() - 1), s.alpha(st.t),
                                                  s.alpha(st.s), 0.8);
            manual += std::log(mix[st.tokens[j]]);
        }
        CHECK(std::abs(manual - st.log_prob) < 1e-10);
    }
}

TEST_CASE("nelbo: one-hot truth gives zero, non-negative otherwise") {
    const MaskSchedule s;
    const TokenSequence x{{1, 0, 2}};
    const TargetDenoiser perfect(4, x);
    Rng rng(25);
    CHECK(nelbo_loss(perfect, empty_ctx(), x, s, 8, rng) == doctest::Approx(0.0).epsilon(1e-12));
    const HashDenoiser d(4);
    for (int i = 0; i < 20; ++i) CHECK(nelbo_loss(d, empty_ctx(), x, s, 4, rng) >= 0.0);
    const auto draws = nelbo_draws(x, s, 4, 3, rng);
    REQUIRE(draws.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(draws[i].t >= i / 4.0);
        CHECK(draws[i].t < (i + 1) / 4.0);
        CHECK(draws[i].weight == doctest::Approx(s.nelbo_weight(draws[i].t)));
    }
}

TEST_CASE("nelbo: two-token vocabulary, L = 1, uniform denoiser converges to quadrature") {
    for (auto kind : {ScheduleKind::Linear, ScheduleKind::LogLinear}) {
        const MaskSchedule s(kind);
        // integral over t of P(masked) * (-weight) * (-log 1/2) by Simpson's rule
        const int n = 20000;
        double integral = 0.0;
        for (int i = 0; i <= n; ++i) {
            double t = static_cast<double>(i) / n;
            t = std::clamp(t, 1e-9, 1.0 - 1e-12);
            const double a = ref_alpha(kind, t);
            const double h = 1e-6;
            const double da = (ref_alpha(kind, std::min(t + h, 1.0)) - ref_alpha(kind, std::max(t - h, 0.0))) /
                              (std::min(t + h, 1.0) - std::max(t - h, 0.0));
            const double f = (1.0 - a) * (da / (1.0 - a)) * std::log(0.5);
            const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
            integral += w * f;
        }
        integral /= 3.0 * n;
        const ConstantDenoiser uniform(3, {0.0, 0.0, 0.0});
        const TokenSequence x{{1}};
        Rng rng(26);
        double total = 0.0;
        const int reps = 4000;
        for (int r = 0; r < reps; ++r) total += nelbo_loss(uniform, empty_ctx(), x, s, 16, rng);
        CHECK(std::abs(total / reps - integral) < 0.01);
    }
}
