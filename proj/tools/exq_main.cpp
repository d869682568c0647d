// Command-line front end for the exponential-quantization toolkit.
//
// Subcommands: analyze, capture, search, quantize, dot, run, report.
// Errors print a machine-readable JSON object on stderr; the exit code is
// 10 + the error class, so scripts can tell fault types apart.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "exq/exq.hpp"

using namespace exq;
namespace fs = std::filesystem;

namespace {

int error_exit_code(errc c) { return 10 + static_cast<int>(c); }

std::string default_out_dir() {
    const char* env = std::getenv("EXQ_OUT_DIR");
    return env && *env ? env : ".";
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(errc::io_error, "cannot write " + path);
    out << text;
    if (!out) fail(errc::io_error, "write failed: " + path);
}

SearchConfig load_search_config(const std::string& path) {
    SearchConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) fail(errc::io_error, "cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(errc::invalid_config, std::string("config json: ") + e.what());
    }
    for (const auto& [key, value] : j.items()) {
        if (key == "thr_w_init") cfg.thr_w_init = value.get<double>();
        else if (key == "thr_w_step") cfg.thr_w_step = value.get<double>();
        else if (key == "thr_w_cap") cfg.thr_w_cap = value.get<double>();
        else if (key == "max_accuracy_loss") cfg.max_accuracy_loss = value.get<double>();
        else if (key == "epsilon") cfg.epsilon = value.get<double>();
        else if (key == "n_min") cfg.n_min = value.get<int>();
        else if (key == "n_max") cfg.n_max = value.get<int>();
        else if (key == "first_layer_factor") cfg.first_layer_factor = value.get<double>();
        else if (key == "histogram_bins") cfg.histogram_bins = value.get<int>();
        else fail(errc::invalid_config, "unknown config key: " + key);
    }
    validate_config(cfg);
    return cfg;
}

std::vector<Sample> pick_samples(const std::vector<Sample>& split, int count, uint64_t seed) {
    if (split.empty()) fail(errc::empty_split, "requested split is empty");
    if (count <= 0 || static_cast<size_t>(count) >= split.size()) return split;
    if (seed == 0) // default: the leading samples, same subset every run
        return std::vector<Sample>(split.begin(), split.begin() + count);
    std::vector<size_t> idx(split.size());
    for (size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    Rng rng(seed);
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.below(i)]);
    idx.resize(static_cast<size_t>(count));
    std::sort(idx.begin(), idx.end());
    std::vector<Sample> out;
    out.reserve(idx.size());
    for (size_t i : idx) out.push_back(split[i]);
    return out;
}

const std::vector<Sample>& split_by_name(const EvalDataset& ds, const std::string& name) {
    if (name == "calibration") return ds.calibration;
    if (name == "heldout") return ds.heldout;
    fail(errc::invalid_config, "split must be calibration or heldout, got " + name);
}

struct GlobalOpts {
    uint64_t seed = 0;
    int threads = static_cast<int>(std::thread::hardware_concurrency());
    std::string out_dir = default_out_dir();
};

int cmd_analyze(const std::string& trace_dir, int bins, const std::string& out_path) {
    std::vector<LayerCalibration> layers = build_calibration(trace_dir);
    nlohmann::json report = nlohmann::json::array();
    for (const LayerCalibration& lc : layers) {
        nlohmann::json jl;
        jl["layer"] = lc.name;
        jl["kind"] = lc.kind;
        double rss_exp_act = 0.0, rss_exp_w = 0.0;
        for (auto [tensor, tag] : {std::pair{&lc.acts, "activations"}, {&lc.weights, "weights"}}) {
            HistogramFit h = analyze_tensor(*tensor, bins);
            nlohmann::json jt;
            for (const auto& [name, fit] : h.fitted) jt[name] = round9(fit.rss);
            jl[tag] = jt;
            if (std::string(tag) == "activations") rss_exp_act = h.fitted.at("exponential").rss;
            else rss_exp_w = h.fitted.at("exponential").rss;
        }
        jl["chosen_start"] = start_tensor_name(pick_start(rss_exp_act, rss_exp_w));
        report.push_back(jl);
    }
    std::string text = report.dump(2) + "\n";
    if (out_path.empty()) std::cout << text;
    else write_text(out_path, text);
    return 0;
}

int cmd_capture(const std::string& model_path, const std::string& dataset_path,
                const std::string& out_dir, int samples, const std::string& split,
                const GlobalOpts& g) {
    ModelGraph model = load_model(model_path);
    EvalDataset ds = load_dataset(dataset_path);
    std::vector<Sample> subset = pick_samples(split_by_name(ds, split), samples, g.seed);
    TraceManifest m = capture_traces(model, subset, out_dir);
    std::printf("captured %zu layers x %zu samples into %s\n", m.layers.size(), subset.size(),
                out_dir.c_str());
    return 0;
}

int cmd_search(const std::string& trace_dir, const std::string& model_path,
               const std::string& dataset_path, const std::string& config_path,
               const std::string& eval_split, double sweep_cap, const GlobalOpts& g) {
    SearchConfig cfg = load_search_config(config_path);
    ModelGraph model = load_model(model_path);
    EvalDataset ds = load_dataset(dataset_path);
    const std::vector<Sample>& eval_set = split_by_name(ds, eval_split);
    std::vector<LayerCalibration> layers = build_calibration(trace_dir);

    double baseline = evaluate_accuracy_f32(model, eval_set, g.threads);
    Evaluator evaluator = [&](const std::vector<LayerQuantResult>& results) {
        return evaluate_accuracy_quantized(model, eval_set, results, g.threads);
    };
    NetworkSearch ns(layers, cfg, evaluator, baseline);
    NetworkQuantReport rep = ns.run();
    if (sweep_cap > 0.0)
        rep.sweep = ns.sweep(cfg.thr_w_init, sweep_cap, cfg.thr_w_step);

    fs::create_directories(g.out_dir);
    if (rep.feasible) {
        CounterAudit audit;
        evaluate_accuracy_quantized(model, eval_set, rep.per_layer, g.threads, &audit);
        for (const auto& [name, peak] : audit) rep.counter_peaks[name] = peak;

        fs::create_directories(g.out_dir + "/params");
        std::map<std::string, const LayerCalibration*> by_name;
        for (const LayerCalibration& lc : layers) by_name[lc.name] = &lc;
        for (const LayerQuantResult& r : rep.per_layer) {
            QuantizedTensor wq = quantize_tensor(by_name.at(r.layer)->weights, r.weight_params());
            save_quantized(wq, g.out_dir + "/params/" + r.layer + "_weights.exq");
            QuantizedTensor act_only; // parameter-only container: header, no payload
            act_only.params = r.act_params();
            act_only.shape = {0};
            save_quantized(act_only, g.out_dir + "/params/" + r.layer + "_act.exq");
        }
    } else {
        std::fprintf(stderr, "warning: no threshold step kept the accuracy loss under %.4g\n",
                     cfg.max_accuracy_loss);
    }
    int unmet = 0;
    for (const LayerQuantResult& r : rep.per_layer) unmet += r.threshold_unmet;
    if (unmet > 0)
        std::fprintf(stderr, "warning: %d layer(s) ended at n=%d with thresholds unmet\n", unmet,
                     cfg.n_max);
    save_report(rep, g.out_dir + "/report.json");
    std::cout << report_table(rep);
    return 0;
}

int cmd_quantize(const std::string& input, const std::string& out_path, int bitwidth, double base,
                 double alpha, double beta, bool fit) {
    Tensor t = load_tensor(input);
    QuantParams p;
    if (fit) {
        SobResult r = search_optimal_base(t, bitwidth, SearchConfig{});
        p = r.params;
        std::printf("fitted: base=%.9g alpha=%.9g beta=%.9g rmae=%.9g\n", p.base, p.alpha, p.beta,
                    r.rmae);
    } else {
        if (base == 0.0 && alpha == 0.0)
            fail(errc::invalid_config, "give --base/--alpha/--beta explicitly or pass --fit");
        p = QuantParams{base, bitwidth, alpha, beta};
        validate_params(p);
    }
    save_quantized(quantize_tensor(t, p), out_path);
    std::printf("wrote %s (%lld codes at %d+1 bits)\n", out_path.c_str(),
                static_cast<long long>(t.numel()), p.bitwidth);
    return 0;
}

int cmd_dot(const std::string& a_path, const std::string& w_path) {
    QuantizedTensor a = load_quantized(a_path);
    QuantizedTensor w = load_quantized(w_path);
    if (a.numel() != w.numel()) fail(errc::shape_mismatch, "operand lengths differ");
    TermCoefficients co = make_coefficients(a.params, w.params);
    PowerTable tbl(co.base, co.bitwidth);
    CounterSet cs(co.bitwidth);
    for (size_t i = 0; i < a.codes.size(); ++i) cs.accumulate(a.codes[i], w.codes[i]);
    double counted = finalize(cs, co, tbl);
    double reference = oracle_dot(a, w);
    double rel = std::fabs(counted - reference) / (1.0 + std::fabs(reference));
    nlohmann::json j;
    j["counting"] = round9(counted);
    j["oracle"] = round9(reference);
    j["relative_difference"] = round9(rel);
    j["counter_peak"] = cs.peak;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_run(const std::string& model_path, const std::string& dataset_path,
            const std::string& split, const std::string& params_path, const GlobalOpts& g) {
    ModelGraph model = load_model(model_path);
    EvalDataset ds = load_dataset(dataset_path);
    const std::vector<Sample>& eval_set = split_by_name(ds, split);
    nlohmann::json j;
    j["split"] = split;
    j["samples"] = eval_set.size();
    if (params_path.empty()) {
        j["mode"] = "f32";
        j["accuracy"] = round9(evaluate_accuracy_f32(model, eval_set, g.threads));
    } else {
        NetworkQuantReport rep = load_report(params_path);
        if (!rep.feasible) fail(errc::missing_params, "report has no feasible configuration");
        CounterAudit audit;
        j["mode"] = "quantized";
        j["accuracy"] =
            round9(evaluate_accuracy_quantized(model, eval_set, rep.per_layer, g.threads, &audit));
        nlohmann::json peaks;
        for (const auto& [name, peak] : audit) peaks[name] = peak;
        j["counter_peaks"] = peaks;
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_report(const std::string& input, const std::string& format,
               const std::string& sweep_csv_path) {
    NetworkQuantReport rep = load_report(input);
    if (format == "json") {
        std::cout << report_json(rep).dump(2) << "\n";
    } else if (format == "csv") {
        std::cout << sweep_csv(rep.sweep);
    } else {
        std::cout << report_table(rep);
    }
    if (!sweep_csv_path.empty()) write_text(sweep_csv_path, sweep_csv(rep.sweep));
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"adaptive exponential tensor quantization toolkit"};
    app.require_subcommand(1);
    GlobalOpts g;
    app.add_option("--seed", g.seed, "seed for any sample selection")->capture_default_str();
    app.add_option("--threads", g.threads, "worker thread cap")->capture_default_str();
    app.add_option("--out-dir", g.out_dir,
                   "output directory (default: $EXQ_OUT_DIR or current directory)");

    auto* analyze = app.add_subcommand("analyze", "per-layer distribution fits and start choice");
    std::string trace_dir, out_path;
    int bins = kDefaultBins;
    analyze->add_option("--traces", trace_dir, "trace directory")->required();
    analyze->add_option("--bins", bins, "histogram bins")->capture_default_str();
    analyze->add_option("--out", out_path, "report file (default: stdout)");

    auto* capture = app.add_subcommand("capture", "run inference and write activation traces");
    std::string model_path, dataset_path, cap_out, cap_split = "calibration";
    int cap_samples = 16;
    capture->add_option("--model", model_path, "model json")->required();
    capture->add_option("--dataset", dataset_path, "dataset json")->required();
    capture->add_option("--out", cap_out, "trace output directory")->required();
    capture->add_option("--samples", cap_samples, "calibration sample count")
        ->capture_default_str();
    capture->add_option("--split", cap_split, "dataset split to trace")->capture_default_str();

    auto* search = app.add_subcommand("search", "full offline parameter search");
    std::string s_traces, s_model, s_dataset, s_config, s_eval = "heldout";
    double sweep_cap = 0.0;
    search->add_option("--traces", s_traces, "trace directory")->required();
    search->add_option("--model", s_model, "model json")->required();
    search->add_option("--dataset", s_dataset, "dataset json")->required();
    search->add_option("--config", s_config, "search config json");
    search->add_option("--eval-split", s_eval, "accuracy evaluation split")
        ->capture_default_str();
    search->add_option("--sweep-cap", sweep_cap,
                       "extend the recorded threshold sweep up to this Thr_w");

    auto* quantize = app.add_subcommand("quantize", "quantize one tensor to a packed file");
    std::string q_in, q_out;
    int q_n = 4;
    double q_base = 0.0, q_alpha = 0.0, q_beta = 0.0;
    bool q_fit = false;
    quantize->add_option("--input", q_in, "input tensor (npy)")->required();
    quantize->add_option("--out", q_out, "output .exq path")->required();
    quantize->add_option("--bitwidth", q_n, "exponent bitwidth in [3,7]")->capture_default_str();
    quantize->add_option("--base", q_base, "codec base");
    quantize->add_option("--alpha", q_alpha, "codec scale");
    quantize->add_option("--beta", q_beta, "codec offset");
    quantize->add_flag("--fit", q_fit, "derive parameters with the base search");

    auto* dot = app.add_subcommand("dot", "counting dot product vs brute-force oracle");
    std::string d_a, d_w;
    dot->add_option("--a", d_a, "activation .exq")->required();
    dot->add_option("--w", d_w, "weight .exq")->required();

    auto* run = app.add_subcommand("run", "evaluate accuracy, float32 or quantized");
    std::string r_model, r_dataset, r_split = "heldout", r_params;
    run->add_option("--model", r_model, "model json")->required();
    run->add_option("--dataset", r_dataset, "dataset json")->required();
    run->add_option("--split", r_split, "evaluation split")->capture_default_str();
    run->add_option("--params", r_params, "report.json with quantization parameters");

    auto* report = app.add_subcommand("report", "render a search report");
    std::string rep_in, rep_format = "table", rep_sweep;
    report->add_option("--input", rep_in, "report.json")->required();
    report->add_option("--format", rep_format, "table | json | csv")->capture_default_str();
    report->add_option("--sweep-csv", rep_sweep, "also write the threshold sweep CSV here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(analyze)) return cmd_analyze(trace_dir, bins, out_path);
        if (app.got_subcommand(capture))
            return cmd_capture(model_path, dataset_path, cap_out, cap_samples, cap_split, g);
        if (app.got_subcommand(search))
            return cmd_search(s_traces, s_model, s_dataset, s_config, s_eval, sweep_cap, g);
        if (app.got_subcommand(quantize))
            return cmd_quantize(q_in, q_out, q_n, q_base, q_alpha, q_beta, q_fit);
        if (app.got_subcommand(dot)) return cmd_dot(d_a, d_w);
        if (app.got_subcommand(run)) return cmd_run(r_model, r_dataset, r_split, r_params, g);
        if (app.got_subcommand(report)) return cmd_report(rep_in, rep_format, rep_sweep);
    } catch (const Error& e) {
        nlohmann::json j;
        j["error"] = {{"class", errc_name(e.code())}, {"message", e.what()}};
        std::cerr << j.dump() << "\n";
        return error_exit_code(e.code());
    } catch (const std::exception& e) {
        nlohmann::json j;
        j["error"] = {{"class", "Internal"}, {"message", e.what()}};
        std::cerr << j.dump() << "\n";
        return 1;
    }
    return 0;
}
