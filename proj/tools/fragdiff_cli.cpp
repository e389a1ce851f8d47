#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fragdiff/config.hpp"
#include "fragdiff/error.hpp"
#include "fragdiff/kernels.hpp"
#include "fragdiff/pipeline.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fragdiff: masked fragment diffusion with step-level PPO and fragment evolution"};
    app.require_subcommand(1);

    std::string config_path, stage, out_dir;
    std::uint64_t seed = 0;
    CLI::App* run = app.add_subcommand("run", "run a pipeline stage");
    run->add_option("--config", config_path, "run configuration (JSON)")->required();
    auto* stage_opt = run->add_option("--stage", stage, "supervised | rl | efo | sample | eval | all");
    auto* seed_opt = run->add_option("--seed", seed, "master seed");
    auto* out_opt = run->add_option("--out", out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kConfigError;
    }

    fragdiff::RunConfig config;
    try {
        config = fragdiff::load_config(config_path, fragdiff::environment_overrides());
        if (*stage_opt) config.run.stage = stage;
        if (*seed_opt) config.run.seed = seed;
        if (*out_opt) config.run.out_dir = out_dir;
        config.validate();
    } catch (const fragdiff::Error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kConfigError;
    }

    try {
        std::cerr << "kernels: " << fragdiff::kernels::isa_name(fragdiff::kernels::active().isa) << "\n";
        fragdiff::run_pipeline(config, std::cout);
    } catch (const fragdiff::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.kind() == fragdiff::ErrorKind::ConfigError ? kConfigError : kRuntimeError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kRuntimeError;
    }
    return kOk;
}
