#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "afc/importance.hpp"
#include "afc/io.hpp"
#include "afc/network.hpp"

namespace afc {

// Stage checkpoint layout (documented in docs/file_formats.md):
//   bytes 0..7    magic "AFCCKPT1"
//   bytes 8..15   u64 little-endian JSON header length H
//   bytes 16..16+H-1   UTF-8 JSON header: config_hash, stage, n_t, model
//                      config, parameter manifest (name + shape, in blob
//                      order), importance table
//   remainder     parameter values as little-endian float64, row-major,
//                 concatenated in manifest order

inline constexpr char kCheckpointMagic[8] = {'A', 'F', 'C', 'C', 'K', 'P', 'T', '1'};

namespace detail {

inline nlohmann::json model_config_to_json(const ModelConfig& cfg) {
    return nlohmann::json{{"in_channels", cfg.in_channels},
                          {"image_size", cfg.image_size},
                          {"channels", cfg.channels},
                          {"tap_blocks", cfg.tap_blocks},
                          {"proxies_per_class", cfg.proxies_per_class},
                          {"delta", cfg.delta},
                          {"eta_init", cfg.eta_init},
                          {"eta_floor", cfg.eta_floor},
                          {"bn_momentum", cfg.bn_momentum},
                          {"bn_eps", cfg.bn_eps}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
    ModelConfig cfg;
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.image_size = j.at("image_size").get<int>();
    cfg.channels = j.at("channels").get<std::vector<int>>();
    cfg.tap_blocks = j.at("tap_blocks").get<std::vector<int>>();
    cfg.proxies_per_class = j.at("proxies_per_class").get<int>();
    cfg.delta = j.at("delta").get<double>();
    cfg.eta_init = j.at("eta_init").get<double>();
    cfg.eta_floor = j.at("eta_floor").get<double>();
    cfg.bn_momentum = j.at("bn_momentum").get<double>();
    cfg.bn_eps = j.at("bn_eps").get<double>();
    return cfg;
}

inline nlohmann::json importance_to_json(const ImportanceTable& t) {
    return nlohmann::json{{"stage", t.stage},
                          {"sample_count", t.sample_count},
                          {"finalized", t.finalized},
                          {"raw", t.raw},
                          {"normalized", t.normalized}};
}

inline ImportanceTable importance_from_json(const nlohmann::json& j) {
    ImportanceTable t;
    t.stage = j.at("stage").get<int>();
    t.sample_count = j.at("sample_count").get<std::size_t>();
    t.finalized = j.at("finalized").get<bool>();
    t.raw = j.at("raw").get<std::vector<std::vector<double>>>();
    t.normalized = j.at("normalized").get<std::vector<std::vector<double>>>();
    return t;
}

inline void write_u64_le(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline std::uint64_t read_u64_le(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw config_error("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
}

}  // namespace detail

struct Checkpoint {
    std::string config_hash;
    int stage = 0;
    int n_t = 0;
    ModelConfig model_config;
    Model model;
    ImportanceTable importance;
};

inline void save_checkpoint(const std::filesystem::path& path, Model& model,
                            const ImportanceTable& importance, int stage, int n_t,
                            const std::string& config_hash) {
    nlohmann::json params = nlohmann::json::array();
    std::vector<double> blob;
    model.visit_parameters([&](const std::string& name, Tensor& t) {
        params.push_back({{"name", name}, {"shape", t.shape}});
        blob.insert(blob.end(), t.data.begin(), t.data.end());
    });
    nlohmann::json header{{"config_hash", config_hash},
                          {"stage", stage},
                          {"n_t", n_t},
                          {"model", detail::model_config_to_json(model.config())},
                          {"params", params},
                          {"importance", detail::importance_to_json(importance)}};
    const std::string hs = header.dump();

    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw runtime_failure("cannot write checkpoint " + path.string());
    out.write(kCheckpointMagic, 8);
    detail::write_u64_le(out, hs.size());
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    // assumes a little-endian host, as documented
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(double)));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read checkpoint " + path.string());
    char magic[8];
    if (!in.read(magic, 8) || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw config_error("bad checkpoint magic in " + path.string());
    const std::uint64_t hlen = detail::read_u64_le(in);
    std::string hs(hlen, '\0');
    if (!in.read(hs.data(), static_cast<std::streamsize>(hlen)))
        throw config_error("truncated checkpoint header in " + path.string());
    const nlohmann::json header = nlohmann::json::parse(hs);

    Checkpoint ck;
    ck.config_hash = header.at("config_hash").get<std::string>();
    ck.stage = header.at("stage").get<int>();
    ck.n_t = header.at("n_t").get<int>();
    ck.model_config = detail::model_config_from_json(header.at("model"));
    ck.importance = detail::importance_from_json(header.at("importance"));

    Rng scratch(0);
    ck.model = Model::init(ck.model_config, ck.n_t, scratch);
    for (const auto& p : header.at("params")) {
        const std::string name = p.at("name").get<std::string>();
        const Shape shape = p.at("shape").get<Shape>();
        bool found = false;
        ck.model.visit_parameters([&](const std::string& n, Tensor& t) {
            if (n != name) return;
            found = true;
            if (t.shape != shape)
                throw config_error("checkpoint parameter " + name + " has shape " + shape_str(shape) +
                                   ", model expects " + shape_str(t.shape));
            if (!in.read(reinterpret_cast<char*>(t.data.data()),
                         static_cast<std::streamsize>(t.data.size() * sizeof(double))))
                throw config_error("truncated checkpoint blob in " + path.string());
        });
        if (!found) throw config_error("checkpoint parameter " + name + " not present in model");
    }
    return ck;
}

}  // namespace afc
