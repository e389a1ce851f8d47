#include <doctest.h>

#include <algorithm>
#include <map>
#include <set>

#include "fragdiff/efo.hpp"
#include "fragdiff/error.hpp"
#include "support/oracles.hpp"

using namespace fragdiff;

namespace {

const Vocabulary& V = Vocabulary::standard();

TokenSequence T(const char* s) { return tokenize(s, V); }

ScoredMolecule M(const char* s, double score) { return {T(s), score}; }

std::vector<ScoredMolecule> random_dataset(Rng& rng, std::size_t n, int max_fragments = 3) {
    MoleculeShape shape;
    shape.max_fragments = max_fragments;
    shape.min_fragments = std::min(2, max_fragments);
    shape.max_length = 14;
    std::vector<ScoredMolecule> out;
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back({generate_molecule(shape, V, rng), static_cast<double>(rng.below(7)) - 2.0});
    }
    return out;
}

// Fills masked positions deterministically: the trailing masked positions
// receive the digits left unmatched by the unmasked tokens, the rest get 'C'.
class RepairDenoiser : public Denoiser {
public:
    Matrix predict(const TokenSequence& z, double, const ConditionContext&) const override {
        std::map<int, int> parity;
        std::vector<std::size_t> masked;
        for (std::size_t i = 0; i < z.length(); ++i) {
            if (z.ids[i] == V.mask_index()) masked.push_back(i);
            else if (V.is_digit(z.ids[i])) parity[V.digit_label(z.ids[i])] ^= 1;
        }
        std::vector<int> unmatched;
        for (auto [d, p] : parity) {
            if (p) unmatched.push_back(d);
        }
        Matrix m(z.length(), V.size(), -50.0);
        for (std::size_t i = 0; i < z.length(); ++i) m(i, 2) = 50.0;
        const std::size_t k = std::min(unmatched.size(), masked.size());
        for (std::size_t j = 0; j < k; ++j) {
            const std::size_t pos = masked[masked.size() - k + j];
            m(pos, 2) = -50.0;
            m(pos, V.digit(unmatched[j])) = 50.0;
        }
        return m;
    }
    std::size_t vocab_size() const override { return V.size(); }
};

double body_len(const TokenSequence& s) { return static_cast<double>(body_length(s, V)); }

}  // namespace

TEST_CASE("fragment score is the mean over supporting molecules") {
    const std::vector<ScoredMolecule> data{M("AB.C", 2.0), M("AB.D", 4.0), M("E.F", 10.0), M("AB.AB", 6.0)};
    CHECK(score_fragment(parse_fragment("AB", V), data) == doctest::Approx(4.0));
    CHECK(score_fragment(parse_fragment("E", V), data) == doctest::Approx(10.0));
    CHECK_THROWS_AS(score_fragment(parse_fragment("G", V), data), Error);
    // labels are matched up to renumbering
    const std::vector<ScoredMolecule> ring{M("A3B.C3", 1.0), M("A1B.D1", 5.0)};
    CHECK(score_fragment(parse_fragment("A2B", V), ring) == doctest::Approx(3.0));
}

TEST_CASE("initial vocabulary equals an exhaustive top-V") {
    Rng rng(21);
    for (int trial = 0; trial < 200; ++trial) {
        const auto data = random_dataset(rng, 1 + rng.below(12));
        const std::size_t cap = 1 + rng.below(10);
        std::map<std::string, std::pair<double, std::size_t>> stats;
        for (const auto& m : data) {
            for (const auto& key : oracle::fragment_keys_text(detokenize(m.seq, V))) {
                stats[key].first += m.score;
                stats[key].second += 1;
            }
        }
        std::vector<oracle::Scored> items;
        for (const auto& [k, s] : stats) items.push_back({k, s.first / static_cast<double>(s.second)});
        const auto expect = oracle::top_v(items, cap);
        const FragmentVocab got = init_vocab(data, cap);
        REQUIRE(got.size() == expect.size());
        for (std::size_t i = 0; i < expect.size(); ++i) {
            CHECK(got.entries()[i].fragment.key == expect[i].key);
            CHECK(got.entries()[i].score == doctest::Approx(expect[i].score).epsilon(1e-12));
            CHECK(got.entries()[i].support == stats[expect[i].key].second);
        }
        CHECK_NOTHROW(got.check());
    }
    CHECK_THROWS_AS(init_vocab(std::vector<ScoredMolecule>{M("A1", 1.0)}, 4), Error);
}

TEST_CASE("top-V retention keeps the best entries and a non-decreasing floor") {
    Rng rng(22);
    std::vector<Fragment> frags;
    for (const char* s : {"A", "B", "C", "AB", "BA", "A1", "B1C", "CC", "D", "E", "F", "GH", "H1", "AD", "DA"}) {
        frags.push_back(parse_fragment(s, V));
    }
    FragmentVocab vocab(6);
    std::vector<oracle::Scored> offered;
    double floor = -1e300;
    for (int i = 0; i < 100; ++i) {
        const Fragment& f = frags[rng.below(frags.size())];
        const double score = static_cast<double>(rng.below(20));
        vocab.insert({f, score, 1});
        offered.push_back({f.key, score});
        CHECK(vocab.size() <= 6);
        CHECK_NOTHROW(vocab.check());
        if (vocab.full()) {
            CHECK(vocab.min_score() >= floor);
            floor = vocab.min_score();
        }
    }
    const auto expect = oracle::top_v(offered, 6);
    REQUIRE(vocab.size() == expect.size());
    for (std::size_t i = 0; i < expect.size(); ++i) {
        CHECK(vocab.entries()[i].fragment.key == expect[i].key);
        CHECK(vocab.entries()[i].score == expect[i].score);
    }
    FragmentVocab none(0);
    CHECK_FALSE(none.insert({frags[0], 1.0, 1}));
}

TEST_CASE("vocabulary TSV round-trip") {
    FragmentVocab v(4);
    v.insert({parse_fragment("AB", V), 2.5, 3});
    v.insert({parse_fragment("C1D", V), -1.25, 1});
    v.insert({parse_fragment("E", V), 2.5, 7});
    const std::string tsv = v.to_tsv();
    CHECK(tsv == "AB\t2.5\t3\nE\t2.5\t7\nC1D\t-1.25\t1\n");
    const FragmentVocab back = FragmentVocab::from_tsv(tsv, 4);
    CHECK(back.to_tsv() == tsv);
    CHECK(back.contains("C1D"));
    CHECK_THROWS_AS(FragmentVocab::from_tsv("AB\t1.0\n", 4), Error);
    CHECK_THROWS_AS(FragmentVocab::from_tsv("AB\tx\t1\n", 4), Error);
}

TEST_CASE("seed molecules are valid") {
    Rng rng(23);
    const auto data = random_dataset(rng, 40);
    const FragmentVocab vocab = init_vocab(data, 12);
    for (int i = 0; i < 1000; ++i) {
        const TokenSequence s = seed_molecule(vocab, rng);
        REQUIRE(oracle::valid_text(detokenize(s, V)));
        CHECK(decompose(s, V).size() == 2);
    }
    // a singleton pool attaches to itself
    FragmentVocab single(1);
    single.insert({parse_fragment("AB", V), 1.0, 1});
    const TokenSequence self = seed_molecule(single, rng);
    CHECK(detokenize(self, V) == "AB1.AB1");
    // same rng state, same seed
    Rng a(5), b(5);
    CHECK(seed_molecule(vocab, a) == seed_molecule(vocab, b));
    // a length bound that no pair satisfies
    CHECK_THROWS_AS(seed_molecule(single, rng, 4), Error);
    CHECK_THROWS_AS(seed_molecule(std::span<const VocabEntry>{}, rng), Error);
}

TEST_CASE("fragment length distribution") {
    const std::vector<ScoredMolecule> data{M("AB.CDE", 0.0), M("A1B1", 0.0), M("A1B?", 0.0)};
    const auto p = estimate_p_len(data, 3);
    REQUIRE(p.size() == 4);
    CHECK(p[0] == 0.0);
    CHECK(p[1] == 0.0);
    CHECK(p[2] == doctest::Approx(1.0 / 3.0));
    CHECK(p[3] == doctest::Approx(2.0 / 3.0));
    const auto empty = estimate_p_len(std::vector<ScoredMolecule>{}, 5);
    CHECK(empty[1] == 1.0);
}

TEST_CASE("config checks") {
    EfoConfig c;
    CHECK_NOTHROW(c.check());
    c.p_len = {0.0, 0.5, 0.4};
    CHECK_THROWS_AS(c.check(), Error);
    c.p_len = {0.5, 0.5};
    CHECK_THROWS_AS(c.check(), Error);
    c = EfoConfig{};
    c.generations = 0;
    CHECK_THROWS_AS(c.check(), Error);
}

TEST_CASE("evolution with a repairing denoiser") {
    Rng rng(24);
    const auto data = random_dataset(rng, 30, 2);
    RepairDenoiser policy;
    const ConditionContext ctx = build_context(std::nullopt, std::nullopt, Matrix(kSpecialRows, 4));
    EfoConfig cfg;
    cfg.generations = 1;
    cfg.vocab_size = 10;
    cfg.batch = 24;
    cfg.length = 20;
    cfg.rule.allow_single_fragment = true;
    cfg.p_len = {0.0, 0.0, 0.0, 0.0, 1.0};
    cfg.seed = 9;

    const EfoResult one = evolve(policy, ctx, cfg, data, body_len, MaskSchedule{});
    CHECK(one.generated.size() == cfg.batch);
    CHECK(one.invalid == 0);
    CHECK(one.pinned_violations == 0);
    for (const auto& m : one.generated) {
        CHECK(oracle::valid_text(detokenize(m.seq, V)));
        CHECK(m.score == body_len(m.seq));
    }

    cfg.generations = 3;
    cfg.p_len = {};
    cfg.workers = 1;
    const EfoResult serial = evolve(policy, ctx, cfg, data, body_len, MaskSchedule{});
    cfg.workers = 4;
    const EfoResult threaded = evolve(policy, ctx, cfg, data, body_len, MaskSchedule{});
    REQUIRE(serial.generated.size() == threaded.generated.size());
    for (std::size_t i = 0; i < serial.generated.size(); ++i) CHECK(serial.generated[i].seq == threaded.generated[i].seq);
    CHECK(serial.vocab.to_tsv() == threaded.vocab.to_tsv());
    CHECK(efo_stats_csv(serial.stats) == efo_stats_csv(threaded.stats));

    REQUIRE(serial.stats.size() == 3);
    CHECK(serial.pinned_violations == 0);
    CHECK_NOTHROW(serial.vocab.check());
    std::size_t counted = 0;
    for (const auto& st : serial.stats) {
        double total = 0.0;
        std::size_t n = 0;
        for (std::size_t i = 0; i < serial.generated.size(); ++i) {
            if (serial.generation_of[i] != st.generation) continue;
            total += serial.generated[i].score;
            ++n;
        }
        CHECK(n == st.valid);
        CHECK(st.valid + st.invalid == cfg.batch);
        if (n > 0) CHECK(st.mean_score == doctest::Approx(total / static_cast<double>(n)));
        counted += n;
    }
    CHECK(counted == serial.generated.size());

    const std::string csv = efo_stats_csv(serial.stats);
    CHECK(csv.rfind("generation,mean_score,best_score,vocab_min_score,valid,invalid\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}
