#pragma once

// Run configuration. The file is a JSON object of sections; every key has
// a default, unknown sections or keys are rejected, and every key can be
// overridden through the environment as FRAGDIFF_<SECTION>_<KEY>
// (upper-case, value parsed as JSON, falling back to a plain string).

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace fragdiff {

struct RunSection {
    std::string stage = "all";  // supervised | rl | efo | sample | eval | all
    std::uint64_t seed = 7;
    std::string out_dir = "out";
    std::size_t workers = 1;
    bool include_wall_time = false;
};

struct DataSection {
    std::string corpus = "data/toy_corpus.txt";
    std::string pocket_fasta;       // empty = no extrinsic condition
    std::string pocket_embeddings;  // empty = zero semantic stream
    std::vector<double> property_target;  // empty = no intrinsic condition
};

struct ModelSection {
    std::size_t length = 16;
    std::size_t d_model = 32;
    std::size_t n_layers = 2;
    std::size_t ffn_mult = 4;
    std::size_t semantic_width = 1280;
    std::size_t n_props = 2;
    std::string schedule = "linear";
    std::size_t steps = 16;
};

struct SupervisedSection {
    std::size_t iterations = 500;
    std::size_t batch_size = 8;
    std::size_t n_mc = 4;
    double lr = 3e-3;
    double weight_decay = 0.0;
    double max_grad_norm = 1.0;
};

struct PpoSection {
    double clip_eps = 0.2;
    double entropy_beta = 0.01;
    std::size_t epochs = 2;
    double lr = 1e-3;
    double weight_decay = 0.0;
    double max_grad_norm = 1.0;
    double temperature = 0.5;
    std::size_t batch_size = 32;
    double early_stop = 0.8;
    std::size_t max_iters = 200;
};

struct EfoSection {
    std::size_t generations = 3;
    std::size_t vocab_size = 32;
    std::size_t batch = 16;
    std::string remask_rule = "uniform";  // uniform | longest
    bool allow_single_fragment = false;
    double temperature = 0.5;
};

struct RewardSection {
    std::string mode = "structure";  // structure | property
    double s_ref = -9.0;
    double lambda1 = 7.0 / 3.0;
    double lambda2 = 5.0 / 6.0;
    std::vector<double> y_target{0.8, 0.8};
    std::size_t calibration_samples = 256;
    double dock_max = -8.18;
    double qed_min = 0.25;
    double sa_min = 0.59;
};

struct OracleSection {
    std::uint64_t seed = 11;
    std::string dock_command;  // non-empty = external docking oracle
};

struct SampleSection {
    std::size_t n_samples = 64;
    double temperature = 0.5;
};

struct RunConfig {
    RunSection run;
    DataSection data;
    ModelSection model;
    SupervisedSection supervised;
    PpoSection ppo;
    EfoSection efo;
    RewardSection reward;
    OracleSection oracle;
    SampleSection sample;

    void validate() const;
};

nlohmann::json config_to_json(const RunConfig& config);
// Throws ConfigError on unknown keys, wrong types or invalid values.
RunConfig config_from_json(const nlohmann::json& j);

// Reads the file (relative data paths resolve against its directory), then
// applies the environment overrides.
RunConfig load_config(const std::string& path, const std::map<std::string, std::string>& env);
std::map<std::string, std::string> environment_overrides();  // FRAGDIFF_* variables of this process

inline constexpr const char* kEnvPrefix = "FRAGDIFF_";

}  // namespace fragdiff
