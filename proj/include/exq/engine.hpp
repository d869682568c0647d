#pragma once

#include <atomic>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "exq/dataset.hpp"
#include "exq/error.hpp"
#include "exq/model.hpp"
#include "exq/npy.hpp"
#include "exq/search.hpp"
#include "exq/trace.hpp"

namespace exq {

/// Chunked parallel_for over sample indices. Results must be written to
/// disjoint slots so any schedule yields identical output.
inline void parallel_samples(int64_t count, int threads, const std::function<void(int64_t)>& fn) {
    if (threads < 1) threads = 1;
    if (threads == 1 || count < 2) {
        for (int64_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<int64_t> next{0};
    std::vector<std::thread> pool;
    int nt = static_cast<int>(std::min<int64_t>(threads, count));
    pool.reserve(static_cast<size_t>(nt));
    std::atomic<bool> failed{false};
    std::exception_ptr first_error;
    std::mutex error_mu;
    for (int t = 0; t < nt; ++t) {
        pool.emplace_back([&] {
            while (true) {
                int64_t i = next.fetch_add(1);
                if (i >= count || failed.load()) break;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(error_mu);
                    if (!first_error) first_error = std::current_exception();
                    failed.store(true);
                    break;
                }
            }
        });
    }
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

inline int predicted_class(const Tensor& out) {
    if (out.data.empty()) fail(errc::shape_mismatch, "empty model output");
    if (out.data.size() == 1) return static_cast<int>(out.data[0]);
    size_t best = 0;
    for (size_t i = 1; i < out.data.size(); ++i)
        if (out.data[i] > out.data[best]) best = i;
    return static_cast<int>(best);
}

inline double evaluate_accuracy_f32(const ModelGraph& m, const std::vector<Sample>& split,
                                    int threads = 1) {
    if (split.empty()) fail(errc::empty_split, "empty evaluation split");
    std::vector<uint8_t> hit(split.size(), 0);
    parallel_samples(static_cast<int64_t>(split.size()), threads, [&](int64_t i) {
        Tensor out = forward_f32(m, split[static_cast<size_t>(i)].input);
        hit[static_cast<size_t>(i)] = predicted_class(out) == split[static_cast<size_t>(i)].label;
    });
    int64_t correct = 0;
    for (uint8_t h : hit) correct += h;
    return static_cast<double>(correct) / static_cast<double>(split.size());
}

inline double evaluate_accuracy_quantized(const ModelGraph& m, const std::vector<Sample>& split,
                                          const std::vector<LayerQuantResult>& results,
                                          int threads = 1, CounterAudit* audit = nullptr) {
    if (split.empty()) fail(errc::empty_split, "empty evaluation split");
    QuantizedModelState st = prepare_quantized(m, results);
    std::vector<uint8_t> hit(split.size(), 0);
    std::vector<CounterAudit> audits(audit ? split.size() : 0);
    parallel_samples(static_cast<int64_t>(split.size()), threads, [&](int64_t i) {
        CounterAudit* a = audit ? &audits[static_cast<size_t>(i)] : nullptr;
        Tensor out = forward_quantized(m, split[static_cast<size_t>(i)].input, st, a);
        hit[static_cast<size_t>(i)] = predicted_class(out) == split[static_cast<size_t>(i)].label;
    });
    if (audit)
        for (const CounterAudit& a : audits)
            for (const auto& [name, peak] : a) {
                int32_t& slot = (*audit)[name];
                if (peak > slot) slot = peak;
            }
    int64_t correct = 0;
    for (uint8_t h : hit) correct += h;
    return static_cast<double>(correct) / static_cast<double>(split.size());
}

/// Writes the trace layout consumed by analyze/search: per quantizable layer a
/// directory holding weights.npy and one act_<id>.npy per calibration sample.
inline TraceManifest capture_traces(const ModelGraph& m, const std::vector<Sample>& samples,
                                    const std::string& out_dir) {
    namespace fs = std::filesystem;
    if (samples.empty()) fail(errc::empty_split, "empty calibration split");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) fail(errc::io_error, "cannot create " + out_dir);

    TraceManifest manifest;
    std::vector<std::map<std::string, Tensor>> captures(samples.size());
    for (size_t i = 0; i < samples.size(); ++i) forward_f32(m, samples[i].input, &captures[i]);

    for (const Layer& l : m.layers) {
        if (!l.quantizable()) continue;
        TraceLayer tl;
        tl.name = l.name;
        tl.kind = l.kind == LayerKind::fc ? "fc" : "conv";
        tl.weights_file = "weights.npy";
        std::string ldir = out_dir + "/" + l.name;
        fs::create_directories(ldir, ec);
        if (ec) fail(errc::io_error, "cannot create " + ldir);
        save_tensor(l.weights, ldir + "/weights.npy");
        for (size_t i = 0; i < samples.size(); ++i) {
            Tensor act = captures[i].at(l.name);
            if (act.shape.size() == 3) // conv inputs gain a unit batch dim on disk
                act.shape.insert(act.shape.begin(), 1);
            char buf[32];
            std::snprintf(buf, sizeof buf, "act_%04zu.npy", i);
            save_tensor(act, ldir + "/" + buf);
            tl.activation_files.emplace_back(buf);
        }
        manifest.layers.push_back(std::move(tl));
    }
    save_manifest(manifest, out_dir);
    return manifest;
}

/// Pools the captured traces into the per-layer calibration bundles the search
/// consumes. Layer order follows the manifest.
inline std::vector<LayerCalibration> build_calibration(const std::string& trace_dir) {
    TraceManifest m = load_manifest(trace_dir);
    std::vector<LayerCalibration> out;
    out.reserve(m.layers.size());
    for (const TraceLayer& tl : m.layers) {
        LayerCalibration lc;
        lc.name = tl.name;
        lc.kind = tl.kind;
        lc.weights = load_trace_weights(trace_dir, tl);
        lc.acts = load_trace_activations(trace_dir, tl);
        lc.weight_count = lc.weights.numel();
        out.push_back(std::move(lc));
    }
    return out;
}

} // namespace exq
