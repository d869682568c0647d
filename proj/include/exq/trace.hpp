#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "exq/error.hpp"
#include "exq/exq_io.hpp"
#include "exq/tensor.hpp"

namespace exq {

// Trace directory layout:
//   <dir>/manifest.json
//   <dir>/<layer>/weights.npy
//   <dir>/<layer>/act_<sample_id>.npy     (layer *inputs*, one file per sample)

struct TraceLayer {
    std::string name;
    std::string kind; // "fc" | "conv"
    std::string weights_file;
    std::vector<std::string> activation_files;
};

struct TraceManifest {
    std::vector<TraceLayer> layers;
};

inline void save_manifest(const TraceManifest& m, const std::string& dir) {
    nlohmann::json j;
    j["layers"] = nlohmann::json::array();
    for (const TraceLayer& l : m.layers) {
        nlohmann::json jl;
        jl["name"] = l.name;
        jl["kind"] = l.kind;
        jl["weights"] = l.weights_file;
        jl["activations"] = l.activation_files;
        j["layers"].push_back(jl);
    }
    std::ofstream out(dir + "/manifest.json", std::ios::trunc);
    if (!out) fail(errc::io_error, "cannot write manifest in " + dir);
    out << j.dump(2) << "\n";
}

inline TraceManifest load_manifest(const std::string& dir) {
    std::ifstream in(dir + "/manifest.json");
    if (!in) fail(errc::io_error, "cannot open " + dir + "/manifest.json");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(errc::malformed_header, std::string("manifest.json: ") + e.what());
    }
    TraceManifest m;
    if (!j.contains("layers") || !j["layers"].is_array())
        fail(errc::malformed_header, "manifest.json missing layers array");
    for (const auto& jl : j["layers"]) {
        TraceLayer l;
        l.name = jl.at("name").get<std::string>();
        l.kind = jl.at("kind").get<std::string>();
        if (l.kind != "fc" && l.kind != "conv")
            fail(errc::malformed_header, "layer kind must be fc or conv: " + l.name);
        l.weights_file = jl.at("weights").get<std::string>();
        for (const auto& a : jl.at("activations")) l.activation_files.push_back(a.get<std::string>());
        m.layers.push_back(std::move(l));
    }
    return m;
}

inline Tensor load_trace_weights(const std::string& dir, const TraceLayer& l) {
    Tensor w = load_tensor(dir + "/" + l.name + "/" + l.weights_file);
    w.name = l.name + "/weights";
    return w;
}

/// Pools every captured activation sample of the layer into one flat tensor;
/// calibration statistics are computed over this concatenation.
inline Tensor load_trace_activations(const std::string& dir, const TraceLayer& l) {
    std::vector<Tensor> parts;
    parts.reserve(l.activation_files.size());
    for (const std::string& f : l.activation_files)
        parts.push_back(load_tensor(dir + "/" + l.name + "/" + f));
    if (parts.empty()) fail(errc::empty_split, "layer " + l.name + " has no activation traces");
    return concat_flat(parts, l.name + "/activations");
}

} // namespace exq
