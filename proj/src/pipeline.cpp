#include "fragdiff/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <sstream>

#include "fragdiff/checkpoint.hpp"
#include "fragdiff/efo.hpp"
#include "fragdiff/error.hpp"
#include "fragdiff/io.hpp"
#include "fragdiff/metrics.hpp"

namespace fragdiff {

namespace {

const Vocabulary& vocab() { return Vocabulary::standard(); }

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

std::string out_path(const RunConfig& c, const std::string& name) {
    return (std::filesystem::path(c.run.out_dir) / name).string();
}

MaskSchedule schedule_of(const RunConfig& c) { return MaskSchedule::parse(c.model.schedule); }

std::vector<double> parse_numbers(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stod(item));
        } catch (const std::logic_error&) {
            throw Error(ErrorKind::InvalidArgument, "bad number '" + item + "' in corpus label");
        }
    }
    return out;
}

// "MOLECULE" or "MOLECULE<TAB>y1,y2,..."
std::vector<SupervisedExample> load_corpus(const RunConfig& c) {
    std::vector<SupervisedExample> out;
    for (const std::string& line : read_lines(c.data.corpus)) {
        const auto tab = line.find('\t');
        SupervisedExample ex;
        const TokenSequence body = tokenize(line.substr(0, tab), vocab());
        const ValidityReport report = validate(body, vocab());
        if (!report.valid) {
            throw Error(ErrorKind::InvalidSequence, c.data.corpus + ": invalid molecule '" + line + "': " + report.reason);
        }
        ex.x = pad_to(body, c.model.length, vocab());
        if (tab != std::string::npos) {
            ex.y = parse_numbers(line.substr(tab + 1));
            if (ex.y->size() != c.model.n_props) {
                throw Error(ErrorKind::DimensionMismatch, "corpus label width differs from model.n_props");
            }
        }
        out.push_back(std::move(ex));
    }
    if (out.empty()) throw Error(ErrorKind::InvalidArgument, c.data.corpus + ": empty corpus");
    return out;
}

std::optional<PocketInput> load_pocket(const RunConfig& c) {
    if (c.data.pocket_fasta.empty()) return std::nullopt;
    PocketInput p;
    p.residues = read_fasta(c.data.pocket_fasta);
    if (!c.data.pocket_embeddings.empty()) p.semantic = read_embedding_file(c.data.pocket_embeddings);
    return p;
}

ConditionInputs run_conditions(const RunConfig& c, const std::optional<PocketInput>& pocket) {
    ConditionInputs in;
    if (pocket) in.pocket = &*pocket;
    if (!c.data.property_target.empty()) in.y_target = c.data.property_target;
    return in;
}

std::string checkpoint_path(const RunConfig& c) { return out_path(c, "checkpoint.ckpt"); }

SupervisedModel from_checkpoint(const Checkpoint& ck) {
    return SupervisedModel{DenoiserModel(ck.model, ck.params), ck.adaptor, ck.model_opt, ck.adaptor_opt};
}

Checkpoint load_run_checkpoint(const RunConfig& c) {
    if (!std::filesystem::exists(checkpoint_path(c))) {
        throw Error(ErrorKind::IoError, "no checkpoint at " + checkpoint_path(c) + " (run the supervised stage first)");
    }
    Checkpoint ck = load_checkpoint(checkpoint_path(c), vocab());
    const DenoiserConfig want{vocab().size(), c.model.length, c.model.d_model, c.model.n_layers, c.model.ffn_mult};
    if (!(ck.model == want)) throw Error(ErrorKind::CheckpointMismatch, "checkpoint model shape differs from config");
    return ck;
}

void store_checkpoint(const RunConfig& c, const std::string& stage, const SupervisedModel& m) {
    Checkpoint ck;
    ck.stage = stage;
    ck.vocab_hash = vocab().hash();
    ck.schedule = schedule_of(c).name();
    ck.model = m.model.config();
    ck.adaptor_config = {c.model.d_model, c.model.semantic_width, c.model.n_props};
    ck.params = m.model.params();
    ck.adaptor = m.adaptor;
    ck.model_opt = m.model_opt;
    ck.adaptor_opt = m.adaptor_opt;
    save_checkpoint(checkpoint_path(c), ck);
}

struct Task {
    RlTask rl;
    Objective objective;
};

std::vector<TokenSequence> draw_samples(const SupervisedModel& m, const ConditionContext& ctx, const RunConfig& c,
                                        std::size_t n, double temperature, std::uint64_t key) {
    const DiffusionStepGrid grid = DiffusionStepGrid::uniform(c.model.steps);
    const MaskSchedule schedule = schedule_of(c);
    const Rng base(mix64(c.run.seed, key));
    std::vector<TokenSequence> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = base.child(i);
        out[i] = sample(m.model, ctx, c.model.length, grid, schedule, temperature, rng).sequence;
    }
    return out;
}

Task make_task(const RunConfig& c, const OracleSuite& oracles, const SupervisedModel& m, const ConditionContext& ctx,
               std::ostream& log) {
    Task task;
    task.rl.validator = [](const TokenSequence& s) { return is_complete_and_valid(s, vocab()); };
    if (c.reward.mode == "structure") {
        const StructureRewardSpec spec{c.reward.s_ref, c.reward.lambda1, c.reward.lambda2};
        task.objective = [spec, oracles](const TokenSequence& s) { return structure_reward(s, spec, oracles); };
        const RewardSection r = c.reward;
        task.rl.success = [r, oracles](const TokenSequence& s, double) {
            return oracles.dock(s) <= r.s_ref && oracles.qed(s) > r.qed_min && oracles.sa(s) > r.sa_min;
        };
    } else {
        const auto samples = draw_samples(m, ctx, c, c.reward.calibration_samples, c.ppo.temperature, 0x63616c);
        const Calibration cal = calibrate(samples, c.reward.y_target, oracles, vocab());
        for (std::size_t k = 0; k < cal.degenerate.size(); ++k) {
            if (cal.degenerate[k]) log << "warning: property " << k << " has near-zero spread; sigma floored\n";
        }
        const PropertyRewardSpec spec = cal.spec;
        task.objective = [spec, oracles](const TokenSequence& s) { return property_reward(s, spec, oracles); };
        task.rl.success = [](const TokenSequence&, double reward) { return reward > 0.8; };
    }
    task.rl.reward = task.objective;
    return task;
}

void reset_csv(const std::string& path, const std::string& header) { write_file_atomic(path, header + "\n"); }

// ---------------------------------------------------------------------------
// Stages

void stage_supervised(const RunConfig& c, std::ostream& log) {
    const auto corpus = load_corpus(c);
    const auto pocket = load_pocket(c);
    Rng init(mix64(c.run.seed, 0x696e6974));
    const DenoiserConfig dc{vocab().size(), c.model.length, c.model.d_model, c.model.n_layers, c.model.ffn_mult};
    SupervisedModel m{DenoiserModel(dc, init), init_adaptor({c.model.d_model, c.model.semantic_width, c.model.n_props}, init),
                      {}, {}};
    SupervisedConfig sc;
    sc.iterations = c.supervised.iterations;
    sc.batch_size = c.supervised.batch_size;
    sc.n_mc = c.supervised.n_mc;
    sc.adam.lr = c.supervised.lr;
    sc.adam.weight_decay = c.supervised.weight_decay;
    sc.adam.max_grad_norm = c.supervised.max_grad_norm;
    sc.seed = mix64(c.run.seed, 0x73757076);
    sc.workers = c.run.workers;

    const std::string csv = out_path(c, "supervised_metrics.csv");
    reset_csv(csv, "iter,loss");
    const PocketInput* pp = pocket ? &*pocket : nullptr;
    const auto losses = train_supervised(m, corpus, pp, schedule_of(c), sc, [&](std::size_t it, double loss) {
        append_line(csv, std::to_string(it) + "," + num(loss));
    });
    store_checkpoint(c, "supervised", m);
    log << "supervised: " << losses.size() << " updates, loss " << num(losses.empty() ? 0.0 : losses.front()) << " -> "
        << num(losses.empty() ? 0.0 : losses.back()) << "\n";
}

void stage_rl(const RunConfig& c, std::ostream& log) {
    const Checkpoint ck = load_run_checkpoint(c);
    SupervisedModel m = from_checkpoint(ck);
    const auto pocket = load_pocket(c);
    const ConditionInputs cond = run_conditions(c, pocket);
    const OracleSuite oracles = make_oracles(c);
    const Task task = make_task(c, oracles, m, make_context(m.model.params(), m.adaptor, cond), log);

    PPOConfig pc;
    pc.clip_eps = c.ppo.clip_eps;
    pc.entropy_beta = c.ppo.entropy_beta;
    pc.epochs = c.ppo.epochs;
    pc.lr = c.ppo.lr;
    pc.weight_decay = c.ppo.weight_decay;
    pc.max_grad_norm = c.ppo.max_grad_norm;
    pc.temperature = c.ppo.temperature;
    pc.batch_size = c.ppo.batch_size;
    pc.early_stop_success = c.ppo.early_stop;
    pc.steps = c.model.steps;
    pc.length = c.model.length;
    pc.seed = mix64(c.run.seed, 0x726c);
    pc.workers = c.run.workers;

    const std::string csv = out_path(c, "rl_metrics.csv");
    reset_csv(csv, metrics_csv_header());
    const AdaptorParams adaptor = m.adaptor;
    const ContextProvider provider = [&](const DenoiserParams& p) { return make_context(p, adaptor, cond); };
    // a fresh optimizer: the supervised moments belong to a different objective
    AdamState opt;
    const TrainResult tr = train(m.model, provider, task.rl, pc, schedule_of(c), c.ppo.max_iters, &opt,
                                 [&](const IterationMetrics& im) { append_line(csv, metrics_csv_row(im)); });
    store_checkpoint(c, "rl", m);
    log << "rl: " << tr.history.size() << " iterations" << (tr.early_stopped ? " (early stop)" : "") << ", "
        << tr.skipped << " skipped\n";
}

void stage_efo(const RunConfig& c, std::ostream& log) {
    const Checkpoint ck = load_run_checkpoint(c);
    const SupervisedModel m = from_checkpoint(ck);
    const auto pocket = load_pocket(c);
    const ConditionContext ctx = make_context(m.model.params(), m.adaptor, run_conditions(c, pocket));
    const OracleSuite oracles = make_oracles(c);
    const Task task = make_task(c, oracles, m, ctx, log);

    std::vector<ScoredMolecule> dataset;
    for (const auto& ex : load_corpus(c)) dataset.push_back({ex.x, task.objective(ex.x)});

    EfoConfig ec;
    ec.generations = c.efo.generations;
    ec.vocab_size = c.efo.vocab_size;
    ec.batch = c.efo.batch;
    ec.rule.kind = c.efo.remask_rule == "longest" ? RemaskKind::Longest : RemaskKind::Uniform;
    ec.rule.allow_single_fragment = c.efo.allow_single_fragment;
    ec.length = c.model.length;
    ec.steps = c.model.steps;
    ec.temperature = c.efo.temperature;
    ec.seed = mix64(c.run.seed, 0x65666f);
    ec.workers = c.run.workers;
    const EfoResult r = evolve(m.model, ctx, ec, dataset, task.objective, schedule_of(c), vocab());

    write_file_atomic(out_path(c, "efo_stats.csv"), efo_stats_csv(r.stats));
    write_file_atomic(out_path(c, "vocab.tsv"), r.vocab.to_tsv());
    std::string mols;
    for (std::size_t i = 0; i < r.generated.size(); ++i) {
        mols += detokenize(strip_padding(r.generated[i].seq, vocab()), vocab()) + "\t" + num(r.generated[i].score) +
                "\t" + std::to_string(r.generation_of[i]) + "\n";
    }
    write_file_atomic(out_path(c, "efo_molecules.txt"), mols);
    log << "efo: " << r.generated.size() << " valid molecules, " << r.invalid << " discarded (" << r.seed_failures
        << " seed failures), " << r.pinned_violations << " pinned violations\n";
}

void stage_sample(const RunConfig& c, std::ostream& log) {
    const Checkpoint ck = load_run_checkpoint(c);
    const SupervisedModel m = from_checkpoint(ck);
    const auto pocket = load_pocket(c);
    const ConditionContext ctx = make_context(m.model.params(), m.adaptor, run_conditions(c, pocket));
    std::string text;
    for (const auto& s : draw_samples(m, ctx, c, c.sample.n_samples, c.sample.temperature, 0x73616d)) {
        text += detokenize(strip_padding(s, vocab()), vocab()) + "\n";
    }
    write_file_atomic(out_path(c, "samples.txt"), text);
    log << "sample: " << c.sample.n_samples << " sequences\n";
}

void stage_eval(const RunConfig& c, std::ostream& log) {
    const auto start = std::chrono::steady_clock::now();
    const Checkpoint ck = load_run_checkpoint(c);
    const SupervisedModel m = from_checkpoint(ck);
    const auto pocket = load_pocket(c);
    const ConditionContext ctx = make_context(m.model.params(), m.adaptor, run_conditions(c, pocket));
    const OracleSuite oracles = make_oracles(c);
    const Task task = make_task(c, oracles, m, ctx, log);
    const auto seqs = draw_samples(m, ctx, c, c.sample.n_samples, c.sample.temperature, 0x6576616c);
    const SuccessThresholds thr{c.reward.dock_max, c.reward.qed_min, c.reward.sa_min};
    EvalReport rep = evaluate(seqs, oracles, task.objective, thr, vocab());
    rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    write_file_atomic(out_path(c, "report.json"), report_to_json(rep, c.run.include_wall_time).dump(2) + "\n");
    write_file_atomic(out_path(c, "eval_metrics.csv"),
                      "n_samples,validity_rate,mean_reward,diversity,success_rate\n" + std::to_string(rep.n_samples) +
                          "," + num(rep.validity_rate) + "," + num(rep.mean_reward) + "," + num(rep.diversity) + "," +
                          num(rep.success_rate) + "\n");
    log << "eval: validity " << num(rep.validity_rate) << ", mean reward " << num(rep.mean_reward) << ", success "
        << num(rep.success_rate) << "\n";
}

}  // namespace

OracleSuite make_oracles(const RunConfig& c) {
    OracleSuite s = make_oracle_suite(std::make_shared<SyntheticOracles>(c.oracle.seed, c.model.n_props, vocab()));
    if (!c.oracle.dock_command.empty()) s.dock = ExternalOracle(c.oracle.dock_command, vocab());
    return s;
}

void run_stage(const RunConfig& c, const std::string& stage, std::ostream& log) {
    ensure_directory(c.run.out_dir);
    if (stage == "supervised") return stage_supervised(c, log);
    if (stage == "rl") return stage_rl(c, log);
    if (stage == "efo") return stage_efo(c, log);
    if (stage == "sample") return stage_sample(c, log);
    if (stage == "eval") return stage_eval(c, log);
    throw Error(ErrorKind::ConfigError, "unknown stage '" + stage + "'");
}

void run_pipeline(const RunConfig& c, std::ostream& log) {
    c.validate();
    if (c.run.stage != "all") return run_stage(c, c.run.stage, log);
    for (const char* s : {"supervised", "rl", "efo", "eval"}) run_stage(c, s, log);
}

}  // namespace fragdiff
