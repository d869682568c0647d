#pragma once

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <string>

#include <json.hpp>

#include "exq/error.hpp"
#include "exq/search.hpp"

namespace exq {

// All report floats are rounded to 9 significant digits before serialization
// so that repeated runs produce byte-identical, diffable files.
inline double round9(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return std::strtod(buf, nullptr);
}

inline nlohmann::json layer_result_json(const LayerQuantResult& r) {
    nlohmann::json j;
    j["layer"] = r.layer;
    j["base"] = round9(r.base);
    j["bitwidth"] = r.bitwidth;
    j["start_tensor"] = start_tensor_name(r.start);
    j["threshold_unmet"] = r.threshold_unmet;
    j["weight_count"] = r.weight_count;
    j["activations"] = {{"alpha", round9(r.act.alpha)},
                        {"beta", round9(r.act.beta)},
                        {"rmae", round9(r.act.rmae)},
                        {"prescale_exp", r.act.prescale_exp}};
    j["weights"] = {{"alpha", round9(r.weights.alpha)},
                    {"beta", round9(r.weights.beta)},
                    {"rmae", round9(r.weights.rmae)},
                    {"prescale_exp", r.weights.prescale_exp}};
    return j;
}

inline LayerQuantResult layer_result_from_json(const nlohmann::json& j) {
    LayerQuantResult r;
    r.layer = j.at("layer").get<std::string>();
    r.base = j.at("base").get<double>();
    r.bitwidth = j.at("bitwidth").get<int>();
    r.start = j.at("start_tensor").get<std::string>() == "weights" ? StartTensor::weights
                                                                   : StartTensor::activations;
    r.threshold_unmet = j.at("threshold_unmet").get<bool>();
    r.weight_count = j.value("weight_count", int64_t{0});
    const auto& a = j.at("activations");
    r.act = {a.at("alpha").get<double>(), a.at("beta").get<double>(), a.at("rmae").get<double>(),
             a.value("prescale_exp", 0)};
    const auto& w = j.at("weights");
    r.weights = {w.at("alpha").get<double>(), w.at("beta").get<double>(),
                 w.at("rmae").get<double>(), w.value("prescale_exp", 0)};
    return r;
}

inline nlohmann::json report_json(const NetworkQuantReport& rep) {
    nlohmann::json j;
    j["feasible"] = rep.feasible;
    j["thr_w_final"] = round9(rep.thr_w_final);
    j["baseline_acc"] = round9(rep.baseline_acc);
    j["quant_acc"] = round9(rep.quant_acc);
    j["avg_bitwidth"] = round9(rep.avg_bitwidth);
    j["compression_ratio_exponent"] = round9(rep.compression_ratio_exponent);
    j["compression_ratio_stored"] = round9(rep.compression_ratio_stored);
    j["per_layer"] = nlohmann::json::array();
    for (const LayerQuantResult& r : rep.per_layer) j["per_layer"].push_back(layer_result_json(r));
    j["sweep"] = nlohmann::json::array();
    for (const SweepPoint& p : rep.sweep)
        j["sweep"].push_back({{"thr_w", round9(p.thr_w)},
                              {"avg_bitwidth", round9(p.avg_bitwidth)},
                              {"accuracy", round9(p.accuracy)},
                              {"loss", round9(p.loss)}});
    if (!rep.counter_peaks.empty()) {
        nlohmann::json cp;
        for (const auto& [name, peak] : rep.counter_peaks) cp[name] = peak;
        j["counter_peaks"] = cp;
    }
    return j;
}

inline NetworkQuantReport report_from_json(const nlohmann::json& j) {
    NetworkQuantReport rep;
    rep.feasible = j.at("feasible").get<bool>();
    rep.thr_w_final = j.at("thr_w_final").get<double>();
    rep.baseline_acc = j.at("baseline_acc").get<double>();
    rep.quant_acc = j.at("quant_acc").get<double>();
    rep.avg_bitwidth = j.at("avg_bitwidth").get<double>();
    rep.compression_ratio_exponent = j.at("compression_ratio_exponent").get<double>();
    rep.compression_ratio_stored = j.at("compression_ratio_stored").get<double>();
    for (const auto& r : j.at("per_layer")) rep.per_layer.push_back(layer_result_from_json(r));
    for (const auto& p : j.at("sweep"))
        rep.sweep.push_back({p.at("thr_w").get<double>(), p.at("avg_bitwidth").get<double>(),
                             p.at("accuracy").get<double>(), p.at("loss").get<double>()});
    if (j.contains("counter_peaks"))
        for (const auto& [name, peak] : j.at("counter_peaks").items())
            rep.counter_peaks[name] = peak.get<int64_t>();
    return rep;
}

inline void save_report(const NetworkQuantReport& rep, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(errc::io_error, "cannot write " + path);
    out << report_json(rep).dump(2) << "\n";
}

inline NetworkQuantReport load_report(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(errc::io_error, "cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(errc::malformed_header, std::string("report json: ") + e.what());
    }
    return report_from_json(j);
}

/// Threshold-sweep CSV: one row per probed weight threshold with the resulting
/// average bitwidth and accuracy loss (the sensitivity-plot axes).
inline std::string sweep_csv(const std::vector<SweepPoint>& rows) {
    std::string out = "thr_w,avg_bitwidth,accuracy,loss\n";
    char buf[160];
    for (const SweepPoint& p : rows) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g\n", round9(p.thr_w),
                      round9(p.avg_bitwidth), round9(p.accuracy), round9(p.loss));
        out += buf;
    }
    return out;
}

/// Plain-text table for terminals.
inline std::string report_table(const NetworkQuantReport& rep) {
    char buf[256];
    std::string out;
    out += "layer        n  base      start        rmae_act    rmae_w      unmet\n";
    for (const LayerQuantResult& r : rep.per_layer) {
        std::snprintf(buf, sizeof buf, "%-12s %d  %-8.5g  %-11s  %-10.4g  %-10.4g  %s\n",
                      r.layer.c_str(), r.bitwidth, r.base, start_tensor_name(r.start), r.act.rmae,
                      r.weights.rmae, r.threshold_unmet ? "yes" : "no");
        out += buf;
    }
    std::snprintf(buf, sizeof buf,
                  "avg bitwidth       : %.4g\n"
                  "compression (exp)  : %.4g%%\n"
                  "compression (n+1)  : %.4g%%\n"
                  "baseline accuracy  : %.4g\n"
                  "quantized accuracy : %.4g\n"
                  "final thr_w        : %.4g\n",
                  rep.avg_bitwidth, 100.0 * rep.compression_ratio_exponent,
                  100.0 * rep.compression_ratio_stored, rep.baseline_acc, rep.quant_acc,
                  rep.thr_w_final);
    out += buf;
    return out;
}

} // namespace exq
