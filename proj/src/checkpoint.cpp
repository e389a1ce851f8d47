#include "fragdiff/checkpoint.hpp"

#include <json.hpp>

#include "fragdiff/error.hpp"
#include "fragdiff/io.hpp"

namespace fragdiff {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "fragdiff-checkpoint";
constexpr int kVersion = 1;
constexpr const char* kFooter = "#fnv1a:";

json matrix_json(const Matrix& m) {
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::vector<double>(m.flat().begin(), m.flat().end())}};
}

void fill_matrix(const json& j, Matrix& m, const std::string& name) {
    const auto rows = j.at("rows").get<std::size_t>();
    const auto cols = j.at("cols").get<std::size_t>();
    if (rows != m.rows() || cols != m.cols()) throw Error(ErrorKind::CheckpointMismatch, "shape of " + name);
    const auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != m.size()) throw Error(ErrorKind::IoError, "truncated tensor " + name);
    std::copy(data.begin(), data.end(), m.flat().begin());
}

json tensors_json(const ConstNamedTensors& tensors) {
    json out = json::object();
    for (const auto& [name, t] : tensors) out[name] = matrix_json(*t);
    return out;
}

void fill_tensors(const json& j, const NamedTensors& tensors) {
    if (j.size() != tensors.size()) throw Error(ErrorKind::CheckpointMismatch, "tensor count differs");
    for (const auto& [name, t] : tensors) {
        if (!j.contains(name)) throw Error(ErrorKind::CheckpointMismatch, "missing tensor " + name);
        fill_matrix(j.at(name), *t, name);
    }
}

json adam_json(const AdamState& s) {
    json m = json::array(), v = json::array();
    for (const auto& x : s.m) m.push_back(matrix_json(x));
    for (const auto& x : s.v) v.push_back(matrix_json(x));
    return json{{"step", s.step}, {"m", m}, {"v", v}};
}

AdamState adam_from_json(const json& j, const ConstNamedTensors& like) {
    AdamState s;
    const long step = j.at("step").get<long>();
    if (j.at("m").empty()) {
        s.step = step;
        return s;
    }
    s.init_like(like);
    s.step = step;
    if (j.at("m").size() != s.m.size() || j.at("v").size() != s.v.size()) {
        throw Error(ErrorKind::CheckpointMismatch, "optimizer state layout differs");
    }
    for (std::size_t i = 0; i < s.m.size(); ++i) {
        fill_matrix(j.at("m")[i], s.m[i], "adam.m");
        fill_matrix(j.at("v")[i], s.v[i], "adam.v");
    }
    return s;
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& c) {
    json j{{"format", kFormat},
           {"version", kVersion},
           {"stage", c.stage},
           {"vocab_hash", hex64(c.vocab_hash)},
           {"schedule", c.schedule},
           {"model",
            {{"vocab_size", c.model.vocab_size},
             {"max_len", c.model.max_len},
             {"d_model", c.model.d_model},
             {"n_layers", c.model.n_layers},
             {"ffn_mult", c.model.ffn_mult}}},
           {"adaptor_config",
            {{"d_model", c.adaptor_config.d_model},
             {"semantic_width", c.adaptor_config.semantic_width},
             {"n_props", c.adaptor_config.n_props}}},
           {"params", tensors_json(c.params.tensors())},
           {"adaptor", tensors_json(c.adaptor.tensors())},
           {"model_opt", adam_json(c.model_opt)},
           {"adaptor_opt", adam_json(c.adaptor_opt)}};
    std::string body = j.dump() + "\n";
    return body + kFooter + hex64(fnv1a(body)) + "\n";
}

Checkpoint parse_checkpoint(const std::string& bytes, const Vocabulary& vocab) {
    const auto footer = bytes.rfind(kFooter);
    if (footer == std::string::npos || footer == 0 || bytes[footer - 1] != '\n') {
        throw Error(ErrorKind::IoError, "checkpoint has no hash footer");
    }
    const std::string body = bytes.substr(0, footer);
    std::string stored = bytes.substr(footer + std::char_traits<char>::length(kFooter));
    while (!stored.empty() && (stored.back() == '\n' || stored.back() == '\r')) stored.pop_back();
    if (stored != hex64(fnv1a(body))) throw Error(ErrorKind::IoError, "checkpoint hash mismatch (damaged file)");

    Checkpoint c;
    try {
        const json j = json::parse(body);
        if (j.at("format") != kFormat || j.at("version") != kVersion) {
            throw Error(ErrorKind::IoError, "unsupported checkpoint format");
        }
        if (j.at("vocab_hash").get<std::string>() != hex64(vocab.hash())) {
            throw Error(ErrorKind::CheckpointMismatch, "vocabulary hash differs from the running vocabulary");
        }
        c.vocab_hash = vocab.hash();
        c.stage = j.at("stage").get<std::string>();
        c.schedule = j.at("schedule").get<std::string>();
        const json& m = j.at("model");
        c.model.vocab_size = m.at("vocab_size");
        c.model.max_len = m.at("max_len");
        c.model.d_model = m.at("d_model");
        c.model.n_layers = m.at("n_layers");
        c.model.ffn_mult = m.at("ffn_mult");
        const json& a = j.at("adaptor_config");
        c.adaptor_config.d_model = a.at("d_model");
        c.adaptor_config.semantic_width = a.at("semantic_width");
        c.adaptor_config.n_props = a.at("n_props");

        Rng shape_only(0);
        c.params = init_params(c.model, shape_only);
        c.adaptor = init_adaptor(c.adaptor_config, shape_only);
        fill_tensors(j.at("params"), c.params.tensors());
        fill_tensors(j.at("adaptor"), c.adaptor.tensors());
        c.model_opt = adam_from_json(j.at("model_opt"), std::as_const(c.params).tensors());
        c.adaptor_opt = adam_from_json(j.at("adaptor_opt"), std::as_const(c.adaptor).tensors());
    } catch (const json::exception& ex) {
        throw Error(ErrorKind::IoError, std::string("malformed checkpoint: ") + ex.what());
    }
    return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    write_file_atomic(path, serialize_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::string& path, const Vocabulary& vocab) {
    return parse_checkpoint(read_file(path), vocab);
}

}  // namespace fragdiff
