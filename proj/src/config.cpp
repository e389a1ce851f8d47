#include "fragdiff/config.hpp"

#include <algorithm>
#include <cctype>
#include <filesystem>

#include "fragdiff/error.hpp"
#include "fragdiff/io.hpp"

extern char** environ;

namespace fragdiff {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& msg) { throw Error(ErrorKind::ConfigError, msg); }

bool same_kind(const json& def, const json& v) {
    if (def.is_boolean()) return v.is_boolean();
    if (def.is_number_unsigned()) return v.is_number_unsigned();
    if (def.is_number()) return v.is_number();
    if (def.is_string()) return v.is_string();
    if (def.is_array()) {
        return v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number(); });
    }
    return false;
}

std::string kind_name(const json& def) {
    if (def.is_boolean()) return "a boolean";
    if (def.is_number_unsigned()) return "a non-negative integer";
    if (def.is_number()) return "a number";
    if (def.is_string()) return "a string";
    return "an array of numbers";
}

// Overlays `patch` onto `base`, which must already hold every legal key.
void merge_checked(json& base, const json& patch, const std::string& origin) {
    if (!patch.is_object()) fail(origin + ": top level must be an object");
    for (const auto& [section, body] : patch.items()) {
        if (!base.contains(section)) fail(origin + ": unknown section '" + section + "'");
        if (!body.is_object()) fail(origin + ": section '" + section + "' must be an object");
        for (const auto& [key, value] : body.items()) {
            json& slot = base[section];
            if (!slot.contains(key)) fail(origin + ": unknown key '" + section + "." + key + "'");
            if (!same_kind(slot[key], value)) {
                fail(origin + ": '" + section + "." + key + "' must be " + kind_name(slot[key]));
            }
            slot[key] = value;
        }
    }
}

template <class T>
void read(const json& s, const char* key, T& out) {
    out = s.at(key).get<T>();
}

std::string resolve(const std::string& path, const std::filesystem::path& base) {
    if (path.empty()) return path;
    const std::filesystem::path p(path);
    return p.is_absolute() ? path : (base / p).lexically_normal().string();
}

}  // namespace

json config_to_json(const RunConfig& c) {
    return json{
        {"run",
         {{"stage", c.run.stage},
          {"seed", c.run.seed},
          {"out_dir", c.run.out_dir},
          {"workers", c.run.workers},
          {"include_wall_time", c.run.include_wall_time}}},
        {"data",
         {{"corpus", c.data.corpus},
          {"pocket_fasta", c.data.pocket_fasta},
          {"pocket_embeddings", c.data.pocket_embeddings},
          {"property_target", c.data.property_target}}},
        {"model",
         {{"length", c.model.length},
          {"d_model", c.model.d_model},
          {"n_layers", c.model.n_layers},
          {"ffn_mult", c.model.ffn_mult},
          {"semantic_width", c.model.semantic_width},
          {"n_props", c.model.n_props},
          {"schedule", c.model.schedule},
          {"steps", c.model.steps}}},
        {"supervised",
         {{"iterations", c.supervised.iterations},
          {"batch_size", c.supervised.batch_size},
          {"n_mc", c.supervised.n_mc},
          {"lr", c.supervised.lr},
          {"weight_decay", c.supervised.weight_decay},
          {"max_grad_norm", c.supervised.max_grad_norm}}},
        {"ppo",
         {{"clip_eps", c.ppo.clip_eps},
          {"entropy_beta", c.ppo.entropy_beta},
          {"epochs", c.ppo.epochs},
          {"lr", c.ppo.lr},
          {"weight_decay", c.ppo.weight_decay},
          {"max_grad_norm", c.ppo.max_grad_norm},
          {"temperature", c.ppo.temperature},
          {"batch_size", c.ppo.batch_size},
          {"early_stop", c.ppo.early_stop},
          {"max_iters", c.ppo.max_iters}}},
        {"efo",
         {{"generations", c.efo.generations},
          {"vocab_size", c.efo.vocab_size},
          {"batch", c.efo.batch},
          {"remask_rule", c.efo.remask_rule},
          {"allow_single_fragment", c.efo.allow_single_fragment},
          {"temperature", c.efo.temperature}}},
        {"reward",
         {{"mode", c.reward.mode},
          {"s_ref", c.reward.s_ref},
          {"lambda1", c.reward.lambda1},
          {"lambda2", c.reward.lambda2},
          {"y_target", c.reward.y_target},
          {"calibration_samples", c.reward.calibration_samples},
          {"dock_max", c.reward.dock_max},
          {"qed_min", c.reward.qed_min},
          {"sa_min", c.reward.sa_min}}},
        {"oracle", {{"seed", c.oracle.seed}, {"dock_command", c.oracle.dock_command}}},
        {"sample", {{"n_samples", c.sample.n_samples}, {"temperature", c.sample.temperature}}},
    };
}

RunConfig config_from_json(const json& j) {
    json merged = config_to_json(RunConfig{});
    merge_checked(merged, j, "config");
    RunConfig c;
    const json& r = merged["run"];
    read(r, "stage", c.run.stage);
    read(r, "seed", c.run.seed);
    read(r, "out_dir", c.run.out_dir);
    read(r, "workers", c.run.workers);
    read(r, "include_wall_time", c.run.include_wall_time);
    const json& d = merged["data"];
    read(d, "corpus", c.data.corpus);
    read(d, "pocket_fasta", c.data.pocket_fasta);
    read(d, "pocket_embeddings", c.data.pocket_embeddings);
    read(d, "property_target", c.data.property_target);
    const json& m = merged["model"];
    read(m, "length", c.model.length);
    read(m, "d_model", c.model.d_model);
    read(m, "n_layers", c.model.n_layers);
    read(m, "ffn_mult", c.model.ffn_mult);
    read(m, "semantic_width", c.model.semantic_width);
    read(m, "n_props", c.model.n_props);
    read(m, "schedule", c.model.schedule);
    read(m, "steps", c.model.steps);
    const json& s = merged["supervised"];
    read(s, "iterations", c.supervised.iterations);
    read(s, "batch_size", c.supervised.batch_size);
    read(s, "n_mc", c.supervised.n_mc);
    read(s, "lr", c.supervised.lr);
    read(s, "weight_decay", c.supervised.weight_decay);
    read(s, "max_grad_norm", c.supervised.max_grad_norm);
    const json& p = merged["ppo"];
    read(p, "clip_eps", c.ppo.clip_eps);
    read(p, "entropy_beta", c.ppo.entropy_beta);
    read(p, "epochs", c.ppo.epochs);
    read(p, "lr", c.ppo.lr);
    read(p, "weight_decay", c.ppo.weight_decay);
    read(p, "max_grad_norm", c.ppo.max_grad_norm);
    read(p, "temperature", c.ppo.temperature);
    read(p, "batch_size", c.ppo.batch_size);
    read(p, "early_stop", c.ppo.early_stop);
    read(p, "max_iters", c.ppo.max_iters);
    const json& e = merged["efo"];
    read(e, "generations", c.efo.generations);
    read(e, "vocab_size", c.efo.vocab_size);
    read(e, "batch", c.efo.batch);
    read(e, "remask_rule", c.efo.remask_rule);
    read(e, "allow_single_fragment", c.efo.allow_single_fragment);
    read(e, "temperature", c.efo.temperature);
    const json& w = merged["reward"];
    read(w, "mode", c.reward.mode);
    read(w, "s_ref", c.reward.s_ref);
    read(w, "lambda1", c.reward.lambda1);
    read(w, "lambda2", c.reward.lambda2);
    read(w, "y_target", c.reward.y_target);
    read(w, "calibration_samples", c.reward.calibration_samples);
    read(w, "dock_max", c.reward.dock_max);
    read(w, "qed_min", c.reward.qed_min);
    read(w, "sa_min", c.reward.sa_min);
    const json& o = merged["oracle"];
    read(o, "seed", c.oracle.seed);
    read(o, "dock_command", c.oracle.dock_command);
    const json& q = merged["sample"];
    read(q, "n_samples", c.sample.n_samples);
    read(q, "temperature", c.sample.temperature);
    c.validate();
    return c;
}

void RunConfig::validate() const {
    static const std::vector<std::string> stages{"supervised", "rl", "efo", "sample", "eval", "all"};
    if (std::find(stages.begin(), stages.end(), run.stage) == stages.end()) fail("unknown stage '" + run.stage + "'");
    if (model.schedule != "linear" && model.schedule != "log-linear" && model.schedule != "loglinear") {
        fail("unknown schedule '" + model.schedule + "'");
    }
    if (model.length < 3 || model.d_model == 0 || model.n_layers == 0 || model.ffn_mult == 0 || model.steps == 0) {
        fail("model dimensions must be positive (length >= 3)");
    }
    if (model.semantic_width == 0 || model.n_props == 0) fail("adaptor widths must be positive");
    if (supervised.batch_size == 0 || supervised.n_mc == 0) fail("supervised batch_size and n_mc must be positive");
    if (!(ppo.clip_eps > 0.0 && ppo.clip_eps < 1.0)) fail("ppo.clip_eps must lie in (0, 1)");
    if (ppo.entropy_beta < 0.0) fail("ppo.entropy_beta must be non-negative");
    if (ppo.epochs == 0 || ppo.batch_size < 2) fail("ppo.epochs >= 1 and ppo.batch_size >= 2 required");
    if (!(ppo.temperature > 0.0) || !(sample.temperature > 0.0) || !(efo.temperature > 0.0)) {
        fail("temperatures must be positive");
    }
    if (efo.generations == 0 || efo.vocab_size == 0 || efo.batch == 0) fail("efo sizes must be positive");
    if (efo.remask_rule != "uniform" && efo.remask_rule != "longest") fail("efo.remask_rule must be uniform or longest");
    if (reward.mode != "structure" && reward.mode != "property") fail("reward.mode must be structure or property");
    if (reward.lambda1 < 0.0 || reward.lambda2 < 0.0) fail("reward lambdas must be non-negative");
    if (reward.mode == "property" && reward.y_target.size() != model.n_props) {
        fail("reward.y_target must have model.n_props entries");
    }
    if (!data.property_target.empty() && data.property_target.size() != model.n_props) {
        fail("data.property_target must have model.n_props entries");
    }
}

std::map<std::string, std::string> environment_overrides() {
    std::map<std::string, std::string> out;
    const std::string prefix = kEnvPrefix;
    for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
        const std::string entry(*e);
        if (entry.rfind(prefix, 0) != 0) continue;
        const auto eq = entry.find('=');
        if (eq == std::string::npos) continue;
        out[entry.substr(0, eq)] = entry.substr(eq + 1);
    }
    return out;
}

RunConfig load_config(const std::string& path, const std::map<std::string, std::string>& env) {
    json file;
    try {
        file = json::parse(read_file(path));
    } catch (const json::parse_error& ex) {
        fail(path + ": " + ex.what());
    } catch (const Error& ex) {
        fail(ex.what());
    }
    json merged = config_to_json(RunConfig{});
    merge_checked(merged, file, path);

    const std::string prefix = kEnvPrefix;
    json patch = json::object();
    for (const auto& [name, raw] : env) {
        if (name.rfind(prefix, 0) != 0) continue;
        std::string rest = name.substr(prefix.size());
        std::transform(rest.begin(), rest.end(), rest.begin(), [](unsigned char ch) { return std::tolower(ch); });
        const auto us = rest.find('_');
        const std::string section = rest.substr(0, us);
        if (!merged.contains(section)) continue;  // not a config variable
        if (us == std::string::npos) fail(name + ": missing key");
        const std::string key = rest.substr(us + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::parse_error&) {
            value = raw;
        }
        if (merged[section].contains(key) && merged[section][key].is_string() && !value.is_string()) value = raw;
        patch[section][key] = value;
    }
    merge_checked(merged, patch, "environment");

    RunConfig c = config_from_json(merged);
    const auto base = std::filesystem::path(path).parent_path();
    c.data.corpus = resolve(c.data.corpus, base);
    c.data.pocket_fasta = resolve(c.data.pocket_fasta, base);
    c.data.pocket_embeddings = resolve(c.data.pocket_embeddings, base);
    return c;
}

}  // namespace fragdiff
