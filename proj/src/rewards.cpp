#include "fragdiff/rewards.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstdlib>
#include <numeric>

#include <pthread.h>
#include <sys/wait.h>
#include <unistd.h>

#include "fragdiff/error.hpp"
#include "fragdiff/rng.hpp"

namespace fragdiff {

namespace {

constexpr std::uint64_t kDockChannel = 1;
constexpr std::uint64_t kQedChannel = 2;
constexpr std::uint64_t kSaChannel = 3;
constexpr std::uint64_t kPropChannelBase = 100;
constexpr double kDockNoise = 0.15;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Standard normal value determined by a 64-bit hash.
double hashed_normal(std::uint64_t h) {
    const double u1 = (static_cast<double>(mix64(h) >> 11) + 0.5) * 0x1.0p-53;
    const double u2 = static_cast<double>(mix64(h ^ 0x5851f42d4c957f2dULL) >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
}

std::uint64_t ngram_hash(std::uint64_t seed, std::uint64_t channel, std::span<const TokenId> gram) {
    std::uint64_t h = mix64(seed, channel * 0x100 + gram.size());
    for (TokenId t : gram) h = mix64(h, static_cast<std::uint64_t>(t) + 1);
    return h;
}

std::size_t count_occurrences(std::span<const TokenId> body, std::span<const TokenId> gram) {
    if (gram.empty() || gram.size() > body.size()) return 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i + gram.size() <= body.size(); ++i) {
        if (std::equal(gram.begin(), gram.end(), body.begin() + static_cast<std::ptrdiff_t>(i))) ++n;
    }
    return n;
}

}  // namespace

// ---------------------------------------------------------------------------
// Synthetic oracles

SyntheticOracles::SyntheticOracles(std::uint64_t seed, std::size_t n_props, const Vocabulary& vocab)
    : vocab_(&vocab), seed_(seed), n_props_(n_props) {
    Rng rng(mix64(seed, 0x6b6579));
    std::vector<TokenId> atoms(Vocabulary::kAtomCount);
    std::iota(atoms.begin(), atoms.end(), 0);
    for (std::size_t i = atoms.size() - 1; i > 0; --i) std::swap(atoms[i], atoms[rng.below(i + 1)]);
    key_atoms_.assign(atoms.begin(), atoms.begin() + 4);
    decoy_atoms_.assign(atoms.begin() + 4, atoms.end());
    std::sort(decoy_atoms_.begin(), decoy_atoms_.end());

    auto pick = [&] { return key_atoms_[rng.below(key_atoms_.size())]; };
    key_ngrams_.push_back({key_atoms_[0]});
    key_weights_.push_back(0.4);
    key_ngrams_.push_back({key_atoms_[1]});
    key_weights_.push_back(0.4);
    while (key_ngrams_.size() < 5) {
        std::vector<TokenId> g{pick(), pick()};
        if (std::find(key_ngrams_.begin(), key_ngrams_.end(), g) != key_ngrams_.end()) continue;
        key_ngrams_.push_back(g);
        key_weights_.push_back(0.8);
    }
    key_ngrams_.push_back({key_atoms_[2], key_atoms_[0], key_atoms_[3]});
    key_weights_.push_back(1.2);
}

std::vector<TokenId> SyntheticOracles::body_or_throw(const TokenSequence& seq) const {
    if (!is_complete_and_valid(seq, *vocab_)) throw Error(ErrorKind::InvalidMolecule, "oracle called on invalid molecule");
    return canonicalize(strip_padding(seq, *vocab_), *vocab_).ids;
}

double SyntheticOracles::projection(std::span<const TokenId> body, std::uint64_t channel) const {
    double sum = 0.0;
    for (std::size_t n = 1; n <= 3; ++n) {
        for (std::size_t i = 0; i + n <= body.size(); ++i) {
            sum += hashed_normal(ngram_hash(seed_, channel, body.subspan(i, n)));
        }
    }
    return sum / std::sqrt(static_cast<double>(std::max<std::size_t>(body.size(), 1)));
}

double SyntheticOracles::dock(const TokenSequence& seq) const {
    const auto body = body_or_throw(seq);
    double key = 0.0;
    for (std::size_t k = 0; k < key_ngrams_.size(); ++k) {
        key += key_weights_[k] * static_cast<double>(count_occurrences(body, key_ngrams_[k]));
    }
    const double score = key / std::sqrt(static_cast<double>(body.size())) + kDockNoise * projection(body, kDockChannel);
    return kDockCenter - kDockSpan * std::tanh(0.5 * score);
}

double SyntheticOracles::qed(const TokenSequence& seq) const {
    const auto body = body_or_throw(seq);
    return sigmoid(0.8 * projection(body, kQedChannel) + 0.5);
}

double SyntheticOracles::sa(const TokenSequence& seq) const {
    const auto body = body_or_throw(seq);
    return sigmoid(0.7 * projection(body, kSaChannel) + 0.3);
}

std::vector<double> SyntheticOracles::props(const TokenSequence& seq) const {
    const auto body = body_or_throw(seq);
    std::vector<double> out(n_props_);
    for (std::size_t k = 0; k < n_props_; ++k) out[k] = sigmoid(projection(body, kPropChannelBase + k));
    return out;
}

OracleSuite make_oracle_suite(std::shared_ptr<const SyntheticOracles> o) {
    OracleSuite s;
    s.dock = [o](const TokenSequence& x) { return o->dock(x); };
    s.qed = [o](const TokenSequence& x) { return o->qed(x); };
    s.sa = [o](const TokenSequence& x) { return o->sa(x); };
    s.props = [o](const TokenSequence& x) { return o->props(x); };
    s.n_props = o->n_props();
    return s;
}

// ---------------------------------------------------------------------------
// External oracle

ExternalOracle::ExternalOracle(std::string command, const Vocabulary& vocab)
    : command_(std::move(command)), vocab_(&vocab) {
    if (command_.empty()) throw Error(ErrorKind::InvalidArgument, "empty oracle command");
}

double ExternalOracle::operator()(const TokenSequence& seq) const {
    if (!is_complete_and_valid(seq, *vocab_)) throw Error(ErrorKind::InvalidMolecule, "oracle called on invalid molecule");
    return score_text(detokenize(strip_padding(seq, *vocab_), *vocab_));
}

double ExternalOracle::score_text(const std::string& molecule) const {
    int in_pipe[2], out_pipe[2];
    if (pipe(in_pipe) != 0) throw Error(ErrorKind::OracleError, "pipe failed");
    if (pipe(out_pipe) != 0) {
        close(in_pipe[0]);
        close(in_pipe[1]);
        throw Error(ErrorKind::OracleError, "pipe failed");
    }
    const pid_t pid = fork();
    if (pid < 0) throw Error(ErrorKind::OracleError, "fork failed");
    if (pid == 0) {
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        close(in_pipe[0]);
        close(in_pipe[1]);
        close(out_pipe[0]);
        close(out_pipe[1]);
        execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(in_pipe[0]);
    close(out_pipe[1]);

    // a child that exits without reading stdin must not kill us with SIGPIPE
    sigset_t pipe_set, old_set;
    sigemptyset(&pipe_set);
    sigaddset(&pipe_set, SIGPIPE);
    pthread_sigmask(SIG_BLOCK, &pipe_set, &old_set);
    const std::string line = molecule + "\n";
    std::size_t written = 0;
    while (written < line.size()) {
        const ssize_t w = write(in_pipe[1], line.data() + written, line.size() - written);
        if (w <= 0) break;
        written += static_cast<std::size_t>(w);
    }
    close(in_pipe[1]);
    timespec zero{0, 0};
    while (sigtimedwait(&pipe_set, nullptr, &zero) > 0) {
    }
    pthread_sigmask(SIG_SETMASK, &old_set, nullptr);

    std::string output;
    char buf[256];
    for (;;) {
        const ssize_t r = read(out_pipe[0], buf, sizeof buf);
        if (r > 0) {
            output.append(buf, static_cast<std::size_t>(r));
        } else if (r < 0 && errno == EINTR) {
            continue;
        } else {
            break;
        }
    }
    close(out_pipe[0]);
    int status = 0;
    while (waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
    if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
        throw Error(ErrorKind::OracleError, "oracle command failed: " + command_);
    }
    char* end = nullptr;
    const double value = std::strtod(output.c_str(), &end);
    if (end == output.c_str() || !std::isfinite(value)) {
        throw Error(ErrorKind::OracleError, "oracle printed no number: '" + output + "'");
    }
    return value;
}

// ---------------------------------------------------------------------------
// Reward kernels

void PropertyRewardSpec::check() const {
    if (sigma.size() != y_target.size() || omega.size() != y_target.size()) {
        throw Error(ErrorKind::DimensionMismatch, "property spec vectors differ in length");
    }
    double total = 0.0;
    for (std::size_t k = 0; k < size(); ++k) {
        if (!(sigma[k] > 0.0)) throw Error(ErrorKind::InvalidArgument, "sigma must be positive");
        if (omega[k] < 0.0) throw Error(ErrorKind::InvalidArgument, "omega must be non-negative");
        total += omega[k];
    }
    if (std::abs(total - 1.0) > 1e-9) throw Error(ErrorKind::InvalidArgument, "omega must sum to 1");
}

double structure_reward_value(double dock, double qed, double sa, const StructureRewardSpec& spec) {
    if (spec.lambda1 < 0.0 || spec.lambda2 < 0.0) throw Error(ErrorKind::InvalidArgument, "negative lambda");
    const double delta = spec.s_ref - dock;
    const double affinity = delta >= 0.0 ? delta * delta : -delta * delta;
    return affinity + spec.lambda1 * qed + spec.lambda2 * sa;
}

double structure_reward(const TokenSequence& seq, const StructureRewardSpec& spec, const OracleSuite& oracles) {
    return structure_reward_value(oracles.dock(seq), oracles.qed(seq), oracles.sa(seq), spec);
}

double property_kernel(std::span<const double> y_hat, const PropertyRewardSpec& spec) {
    if (y_hat.size() != spec.size()) throw Error(ErrorKind::DimensionMismatch, "prediction vs target length");
    double r = 0.0;
    for (std::size_t k = 0; k < spec.size(); ++k) {
        const double e = y_hat[k] - spec.y_target[k];
        r += spec.omega[k] * std::exp(-(e * e) / (2.0 * spec.sigma[k] * spec.sigma[k]));
    }
    return r;
}

double property_reward(const TokenSequence& seq, const PropertyRewardSpec& spec, const OracleSuite& oracles) {
    return property_kernel(oracles.props(seq), spec);
}

std::vector<double> calibration_weights(std::span<const double> epsilon) {
    const double total = std::accumulate(epsilon.begin(), epsilon.end(), 0.0);
    std::vector<double> w(epsilon.size());
    if (epsilon.empty()) return w;
    if (!(total > 0.0)) {
        std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(w.size()));
        return w;
    }
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = epsilon[k] / total;
    return w;
}

Calibration calibrate(std::span<const TokenSequence> samples, std::span<const double> y_target,
                      const OracleSuite& oracles, const Vocabulary& vocab) {
    const std::size_t k_prop = y_target.size();
    if (k_prop == 0) throw Error(ErrorKind::InvalidArgument, "empty target");
    std::vector<std::vector<double>> preds;
    for (const auto& s : samples) {
        if (!is_complete_and_valid(s, vocab)) continue;
        auto y = oracles.props(s);
        if (y.size() != k_prop) throw Error(ErrorKind::DimensionMismatch, "oracle property count vs target");
        preds.push_back(std::move(y));
    }
    if (preds.size() < 2) throw Error(ErrorKind::TooFewValid, "calibration needs at least two valid samples");

    Calibration c;
    c.n_valid = preds.size();
    c.spec.y_target.assign(y_target.begin(), y_target.end());
    c.spec.sigma.resize(k_prop);
    c.epsilon.resize(k_prop);
    c.degenerate.resize(k_prop);
    const double n = static_cast<double>(preds.size());
    for (std::size_t k = 0; k < k_prop; ++k) {
        double mean = 0.0, mae = 0.0;
        for (const auto& y : preds) {
            mean += y[k];
            mae += std::abs(y[k] - y_target[k]);
        }
        mean /= n;
        double var = 0.0;
        for (const auto& y : preds) var += (y[k] - mean) * (y[k] - mean);
        const double sd = std::sqrt(var / n);
        c.degenerate[k] = sd < 1e-9;
        c.spec.sigma[k] = std::max(sd, kSigmaFloor);
        c.epsilon[k] = mae / n;
    }
    c.spec.omega = calibration_weights(c.epsilon);
    return c;
}

std::vector<double> hard_labels(std::span<const double> probabilities, double threshold) {
    std::vector<double> out(probabilities.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = probabilities[i] >= threshold ? 1.0 : 0.0;
    return out;
}

bool structure_success(const TokenSequence& seq, const SuccessThresholds& thresholds, const OracleSuite& oracles) {
    return oracles.dock(seq) < thresholds.dock_max && oracles.qed(seq) > thresholds.qed_min &&
           oracles.sa(seq) > thresholds.sa_min;
}

}  // namespace fragdiff
