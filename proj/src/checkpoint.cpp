#include "attrsim/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

namespace attrsim {

using nlohmann::json;

namespace {
constexpr int kVersion = 1;
constexpr const char* kFormat = "attrsim-checkpoint";
}  // namespace

void save_checkpoint(const Model& model, const std::string& path) {
    json j;
    j["format"] = kFormat;
    j["version"] = kVersion;
    const ModelConfig& c = model.config();
    j["config"] = {{"layers", c.layers},
                   {"heads", c.heads},
                   {"hidden", c.hidden},
                   {"max_seq", c.max_seq}};
    j["vocab"] = model.vocab().words();
    json params = json::object();
    for (const auto& name : model.param_names()) {
        const Tensor& t = model.param(name);
        json entry;
        entry["shape"] = t.shape();
        entry["data"] = std::vector<double>(t.data(), t.data() + t.size());
        params[name] = std::move(entry);
    }
    j["params"] = std::move(params);

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("save_checkpoint: cannot open " + path);
    out << j.dump() << "\n";
    if (!out) throw Error("save_checkpoint: write failed for " + path);
}

Model load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("load_checkpoint: cannot open " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw Error("load_checkpoint: " + path + ": " + e.what());
    }
    if (j.value("format", "") != kFormat)
        throw Error("load_checkpoint: " + path + " is not a checkpoint file");
    if (j.value("version", -1) != kVersion)
        throw Error("load_checkpoint: unsupported version in " + path);

    ModelConfig cfg;
    const json& c = j.at("config");
    cfg.layers = c.at("layers").get<int>();
    cfg.heads = c.at("heads").get<int>();
    cfg.hidden = c.at("hidden").get<int>();
    cfg.max_seq = c.at("max_seq").get<int>();

    auto words = j.at("vocab").get<std::vector<std::string>>();
    const Vocabulary& builtin = Vocabulary::builtin();
    if (words != builtin.words())
        throw Error("load_checkpoint: vocabulary does not match the built-in word list");

    Model model(cfg, builtin, 0);
    const json& params = j.at("params");
    for (const auto& name : model.param_names()) {
        if (!params.contains(name))
            throw Error("load_checkpoint: missing parameter '" + name + "'");
        const json& entry = params.at(name);
        Tensor& t = model.param(name);
        auto shape = entry.at("shape").get<std::vector<int>>();
        if (shape != t.shape())
            throw Error("load_checkpoint: shape mismatch for '" + name + "'");
        auto data = entry.at("data").get<std::vector<double>>();
        if (static_cast<int64_t>(data.size()) != t.size())
            throw Error("load_checkpoint: size mismatch for '" + name + "'");
        for (int64_t i = 0; i < t.size(); ++i) t[i] = data[static_cast<size_t>(i)];
    }
    return model;
}

}  // namespace attrsim
