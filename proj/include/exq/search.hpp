#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "exq/distfit.hpp"
#include "exq/error.hpp"
#include "exq/quant.hpp"
#include "exq/tensor.hpp"

namespace exq {

struct SearchConfig {
    double thr_w_init = 0.01;
    double thr_w_step = 0.01;
    double thr_w_cap = 0.50; // hard stop for the network loop
    double max_accuracy_loss = 0.01;
    double epsilon = 0.01; // base step of the hill climb, never annealed
    int n_min = kMinBitwidth;
    int n_max = kMaxBitwidth;
    double first_layer_factor = 0.1;
    int histogram_bins = kDefaultBins;
};

inline void validate_config(const SearchConfig& c) {
    if (!(c.thr_w_init > 0.0 && c.thr_w_step > 0.0 && c.thr_w_cap > 0.0))
        fail(errc::invalid_config, "thresholds must be positive");
    if (!(c.max_accuracy_loss > 0.0)) fail(errc::invalid_config, "max_accuracy_loss must be positive");
    if (!(c.epsilon > 0.0)) fail(errc::invalid_config, "epsilon must be positive");
    if (c.n_min < kMinBitwidth || c.n_max > kMaxBitwidth || c.n_min > c.n_max)
        fail(errc::invalid_config, "n_range must lie within [3,7]");
    if (!(c.first_layer_factor > 0.0)) fail(errc::invalid_config, "first_layer_factor must be positive");
}

struct SobResult {
    QuantParams params; // valid for the original (unscaled) tensor
    double rmae = 0.0;
    double init_rmae = 0.0;
    int accepted_steps = 0;
    int prescale_exp = 0; // power-of-two pre-scaling applied when max|t| <= 1
};

namespace detail {

struct MagStats {
    double max_abs, min_pos;
};

inline MagStats mag_stats_checked(const Tensor& t) {
    AbsStats s = abs_stats(t);
    if (s.nonzero == 0) fail(errc::degenerate_tensor, "all-zero tensor");
    return {s.max_abs, s.min_pos};
}

// Full-scale-range update: alpha pins the top code to max|t|, beta pins the
// bottom interval half a step below the smallest magnitude.
inline QuantParams params_at_base(const MagStats& s, double base, int bitwidth) {
    QuantParams p;
    p.bitwidth = bitwidth;
    p.base = base;
    p.alpha = s.max_abs / std::pow(base, static_cast<double>(p.r_max()));
    p.beta = offset_for(s.min_pos, p.alpha, base, p.r_min());
    return p;
}

inline double error_at_base(const Tensor& t, const MagStats& s, double base, int bitwidth) {
    if (!(base > 1.0)) return std::numeric_limits<double>::infinity();
    return quantization_rmae(t, params_at_base(s, base, bitwidth));
}

} // namespace detail

/// Hill climb over the base in fixed steps of epsilon, re-deriving scale and
/// offset at each probe, accepting only strict RMAE improvements. Starts from
/// the full-scale-range initialization; the first move direction is whichever
/// of {stay, up, down} probes lowest.
inline SobResult search_optimal_base(const Tensor& t, int bitwidth, const SearchConfig& cfg) {
    validate_config(cfg);
    detail::MagStats raw = detail::mag_stats_checked(t);

    // power-of-two pre-scale keeps the initial base above 1; folded back below
    int prescale_exp = 0;
    const Tensor* work = &t;
    Tensor scaled;
    if (raw.max_abs <= 1.0) {
        double m = raw.max_abs;
        while (m <= 1.0) {
            m *= 2.0;
            ++prescale_exp;
        }
        double f = std::pow(2.0, prescale_exp);
        scaled = t;
        for (float& v : scaled.data) v = static_cast<float>(static_cast<double>(v) * f);
        work = &scaled;
    }
    detail::MagStats s = detail::mag_stats_checked(*work);

    double b = std::pow(s.max_abs, 1.0 / static_cast<double>((1 << (bitwidth - 1)) - 1));
    double init_err = detail::error_at_base(*work, s, b, bitwidth);
    double inc_err = detail::error_at_base(*work, s, b + cfg.epsilon, bitwidth);
    double dec_err = detail::error_at_base(*work, s, b - cfg.epsilon, bitwidth);

    double step, current_err;
    int accepted = 0;
    if (init_err <= inc_err && init_err <= dec_err) {
        step = 0.0;
        current_err = init_err;
    } else if (inc_err <= dec_err) {
        step = cfg.epsilon;
        b += cfg.epsilon;
        current_err = inc_err;
        accepted = 1;
    } else {
        step = -cfg.epsilon;
        b -= cfg.epsilon;
        current_err = dec_err;
        accepted = 1;
    }

    if (step != 0.0) {
        // hill climb cannot cycle (strict decrease), cap is a tripwire only
        constexpr int kStepCap = 200000;
        while (true) {
            double nb = b + step;
            double ne = detail::error_at_base(*work, s, nb, bitwidth);
            if (!(ne < current_err)) break;
            b = nb;
            current_err = ne;
            if (++accepted > kStepCap)
                fail(errc::invalid_config, "base search exceeded step cap; tensor pathological");
        }
    }

    SobResult r;
    r.params = detail::params_at_base(s, b, bitwidth);
    r.rmae = current_err;
    r.init_rmae = init_err;
    r.accepted_steps = accepted;
    r.prescale_exp = prescale_exp;
    if (prescale_exp != 0) {
        // exact power-of-two fold: params become valid for the original tensor
        double f = std::pow(2.0, prescale_exp);
        r.params.alpha /= f;
        r.params.beta /= f;
    }
    if (r.rmae > r.init_rmae)
        fail(errc::invalid_config, "search invariant violated: result worse than init");
    return r;
}

struct PartnerParams {
    double alpha = 0.0, beta = 0.0, rmae = 0.0;
};

/// Same base as the searched tensor; scale and offset re-derived from this
/// tensor's own magnitudes.
inline PartnerParams derive_partner_params(const Tensor& t, double base, int bitwidth) {
    if (!(base > 1.0)) fail(errc::base_out_of_range, "partner derivation needs base > 1");
    detail::MagStats s = detail::mag_stats_checked(t);
    QuantParams p = detail::params_at_base(s, base, bitwidth);
    PartnerParams out;
    out.alpha = p.alpha;
    out.beta = p.beta;
    out.rmae = quantization_rmae(t, p);
    return out;
}

struct TensorSideResult {
    double alpha = 0.0, beta = 0.0, rmae = 0.0;
    int prescale_exp = 0;
};

struct LayerQuantResult {
    std::string layer;
    double base = 0.0;
    int bitwidth = 0; // shared by activations and weights
    StartTensor start = StartTensor::activations;
    TensorSideResult act, weights;
    bool threshold_unmet = false;
    int64_t weight_count = 0;

    QuantParams act_params() const { return QuantParams{base, bitwidth, act.alpha, act.beta}; }
    QuantParams weight_params() const {
        return QuantParams{base, bitwidth, weights.alpha, weights.beta};
    }
};

/// Eq.-8-style widening of the activation threshold by the log magnitude
/// ratio, clamped so activations are never held tighter than weights.
inline double scale_activation_threshold(double thr_w, double mean_act, double mean_w) {
    if (!(mean_act > 0.0) || !(mean_w > 0.0))
        fail(errc::non_positive_mean, "magnitude means must be positive");
    double factor = std::log(mean_act / mean_w);
    if (factor < 1.0) factor = 1.0;
    return thr_w * factor;
}

namespace detail {

/// Per-layer search state: the start-tensor choice is made once, per-bitwidth
/// results are cached (they do not depend on thresholds).
class LayerSearch {
public:
    LayerSearch(std::string name, const Tensor& acts, const Tensor& weights,
                const SearchConfig& cfg)
        : name_(std::move(name)), acts_(&acts), weights_(&weights), cfg_(cfg) {
        start_ = select_start_tensor(acts, weights, cfg.histogram_bins);
    }

    StartTensor start() const { return start_; }

    const LayerQuantResult& at_bitwidth(int n) {
        auto it = cache_.find(n);
        if (it != cache_.end()) return it->second;

        const Tensor& lead = start_ == StartTensor::activations ? *acts_ : *weights_;
        const Tensor& other = start_ == StartTensor::activations ? *weights_ : *acts_;
        SobResult sob = search_optimal_base(lead, n, cfg_);
        PartnerParams partner = derive_partner_params(other, sob.params.base, n);

        LayerQuantResult r;
        r.layer = name_;
        r.base = sob.params.base;
        r.bitwidth = n;
        r.start = start_;
        TensorSideResult lead_side{sob.params.alpha, sob.params.beta, sob.rmae, sob.prescale_exp};
        TensorSideResult other_side{partner.alpha, partner.beta, partner.rmae, 0};
        if (start_ == StartTensor::activations) {
            r.act = lead_side;
            r.weights = other_side;
        } else {
            r.weights = lead_side;
            r.act = other_side;
        }
        return cache_.emplace(n, std::move(r)).first->second;
    }

    /// Smallest bitwidth meeting both thresholds; n_max flagged unmet otherwise.
    LayerQuantResult smallest_feasible(double thr_act, double thr_w) {
        for (int n = cfg_.n_min; n <= cfg_.n_max; ++n) {
            const LayerQuantResult& r = at_bitwidth(n);
            if (r.act.rmae <= thr_act && r.weights.rmae <= thr_w) return r;
        }
        LayerQuantResult r = at_bitwidth(cfg_.n_max);
        r.threshold_unmet = true;
        return r;
    }

private:
    std::string name_;
    const Tensor* acts_;
    const Tensor* weights_;
    SearchConfig cfg_;
    StartTensor start_;
    std::map<int, LayerQuantResult> cache_;
};

} // namespace detail

/// One layer: pick the start tensor, then the smallest bitwidth in range whose
/// searched parameters meet both error thresholds.
inline LayerQuantResult search_layer(const Tensor& acts, const Tensor& weights, double thr_act,
                                     double thr_w, const SearchConfig& cfg) {
    validate_config(cfg);
    detail::LayerSearch ls("", acts, weights, cfg);
    return ls.smallest_feasible(thr_act, thr_w);
}

inline double average_bitwidth(const std::vector<int>& bits, const std::vector<int64_t>& sizes) {
    if (bits.empty() || bits.size() != sizes.size())
        fail(errc::shape_mismatch, "bitwidth/size lists disagree");
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < bits.size(); ++i) {
        num += static_cast<double>(bits[i]) * static_cast<double>(sizes[i]);
        den += static_cast<double>(sizes[i]);
    }
    return num / den;
}

/// Fraction saved versus an 8-bit linear baseline. stored_extra_bits=1 accounts
/// for the sign bit the packed format actually stores.
inline double compression_ratio(const std::vector<int>& bits, const std::vector<int64_t>& sizes,
                                int stored_extra_bits = 0) {
    if (bits.empty() || bits.size() != sizes.size())
        fail(errc::shape_mismatch, "bitwidth/size lists disagree");
    double stored = 0.0, baseline = 0.0;
    for (size_t i = 0; i < bits.size(); ++i) {
        stored += static_cast<double>(bits[i] + stored_extra_bits) * static_cast<double>(sizes[i]);
        baseline += 8.0 * static_cast<double>(sizes[i]);
    }
    return 1.0 - stored / baseline;
}

struct SweepPoint {
    double thr_w = 0.0;
    double avg_bitwidth = 0.0;
    double accuracy = 0.0;
    double loss = 0.0;
};

struct NetworkQuantReport {
    bool feasible = false;
    double thr_w_final = 0.0;
    double baseline_acc = 0.0;
    double quant_acc = 0.0;
    double avg_bitwidth = 0.0;
    double compression_ratio_exponent = 0.0; // exponent bits vs INT8
    double compression_ratio_stored = 0.0;   // exponent+sign bits vs INT8
    std::vector<LayerQuantResult> per_layer;
    std::vector<SweepPoint> sweep;
    std::map<std::string, int64_t> counter_peaks; // filled by the inference engine
};

struct LayerCalibration {
    std::string name;
    std::string kind; // "fc" | "conv"
    Tensor acts;      // pooled calibration activations
    Tensor weights;
    int64_t weight_count = 0;
};

using Evaluator = std::function<double(const std::vector<LayerQuantResult>&)>;

/// Threshold-loop driver. Layer results per bitwidth and accuracy per chosen
/// configuration are memoized, so walking the threshold axis is cheap.
class NetworkSearch {
public:
    NetworkSearch(const std::vector<LayerCalibration>& layers, const SearchConfig& cfg,
                  Evaluator evaluator, double baseline_acc)
        : layers_(&layers), cfg_(cfg), evaluator_(std::move(evaluator)),
          baseline_acc_(baseline_acc) {
        validate_config(cfg_);
        if (layers.empty()) fail(errc::empty_split, "no quantizable layers");
        searches_.reserve(layers.size());
        for (const LayerCalibration& lc : layers) {
            searches_.emplace_back(lc.name, lc.acts, lc.weights, cfg_);
            AbsStats sa = abs_stats(lc.acts);
            AbsStats sw = abs_stats(lc.weights);
            mean_act_.push_back(sa.mean_abs);
            mean_w_.push_back(sw.mean_abs);
        }
    }

    /// Per-layer configuration at one weight threshold (first layer tightened).
    std::vector<LayerQuantResult> config_at(double thr_w) {
        std::vector<LayerQuantResult> out;
        out.reserve(searches_.size());
        for (size_t i = 0; i < searches_.size(); ++i) {
            double layer_thr_w = thr_w * (i == 0 ? cfg_.first_layer_factor : 1.0);
            double thr_act = scale_activation_threshold(layer_thr_w, mean_act_[i], mean_w_[i]);
            LayerQuantResult r = searches_[i].smallest_feasible(thr_act, layer_thr_w);
            r.weight_count = (*layers_)[i].weight_count;
            out.push_back(std::move(r));
        }
        return out;
    }

    double evaluate(const std::vector<LayerQuantResult>& results) {
        std::vector<int> key;
        key.reserve(results.size());
        for (const LayerQuantResult& r : results) key.push_back(r.bitwidth);
        auto it = acc_memo_.find(key);
        if (it != acc_memo_.end()) return it->second;
        double acc;
        try {
            acc = evaluator_(results);
        } catch (const Error&) {
            throw;
        } catch (const std::exception& e) {
            fail(errc::evaluator_failure, e.what());
        }
        if (!(acc >= 0.0 && acc <= 1.0))
            fail(errc::evaluator_failure, "accuracy outside [0,1]");
        acc_memo_.emplace(std::move(key), acc);
        return acc;
    }

    SweepPoint probe(double thr_w) {
        std::vector<LayerQuantResult> results = config_at(thr_w);
        SweepPoint p;
        p.thr_w = thr_w;
        p.avg_bitwidth = average_bitwidth(bit_list(results), size_list(results));
        p.accuracy = evaluate(results);
        p.loss = baseline_acc_ - p.accuracy;
        return p;
    }

    /// Fixed-step walk of the threshold axis, no stopping rule (sensitivity runs).
    std::vector<SweepPoint> sweep(double thr_lo, double thr_hi, double step) {
        std::vector<SweepPoint> rows;
        double prev_bits = std::numeric_limits<double>::infinity();
        for (double thr = thr_lo; thr <= thr_hi + 1e-12; thr += step) {
            SweepPoint p = probe(thr);
            if (p.avg_bitwidth > prev_bits + 1e-12)
                fail(errc::invalid_config, "average bitwidth rose as thresholds loosened");
            prev_bits = p.avg_bitwidth;
            rows.push_back(p);
        }
        return rows;
    }

    /// The full offline loop: step the weight threshold while the accuracy loss
    /// stays under the bound, return the last configuration that satisfied it.
    NetworkQuantReport run() {
        NetworkQuantReport rep;
        rep.baseline_acc = baseline_acc_;
        std::optional<double> good_thr;
        double prev_bits = std::numeric_limits<double>::infinity();
        for (double thr = cfg_.thr_w_init; thr <= cfg_.thr_w_cap + 1e-12;
             thr += cfg_.thr_w_step) {
            SweepPoint p = probe(thr);
            if (p.avg_bitwidth > prev_bits + 1e-12)
                fail(errc::invalid_config, "average bitwidth rose as thresholds loosened");
            prev_bits = p.avg_bitwidth;
            rep.sweep.push_back(p);
            if (p.loss < cfg_.max_accuracy_loss)
                good_thr = thr;
            else
                break;
        }
        if (!good_thr) {
            rep.feasible = false;
            return rep;
        }
        rep.feasible = true;
        rep.thr_w_final = *good_thr;
        rep.per_layer = config_at(*good_thr);
        rep.quant_acc = evaluate(rep.per_layer);
        rep.avg_bitwidth = average_bitwidth(bit_list(rep.per_layer), size_list(rep.per_layer));
        rep.compression_ratio_exponent =
            compression_ratio(bit_list(rep.per_layer), size_list(rep.per_layer), 0);
        rep.compression_ratio_stored =
            compression_ratio(bit_list(rep.per_layer), size_list(rep.per_layer), 1);
        return rep;
    }

private:
    static std::vector<int> bit_list(const std::vector<LayerQuantResult>& rs) {
        std::vector<int> v;
        v.reserve(rs.size());
        for (const auto& r : rs) v.push_back(r.bitwidth);
        return v;
    }
    static std::vector<int64_t> size_list(const std::vector<LayerQuantResult>& rs) {
        std::vector<int64_t> v;
        v.reserve(rs.size());
        for (const auto& r : rs) v.push_back(r.weight_count);
        return v;
    }

    const std::vector<LayerCalibration>* layers_;
    SearchConfig cfg_;
    Evaluator evaluator_;
    double baseline_acc_;
    std::vector<detail::LayerSearch> searches_;
    std::vector<double> mean_act_, mean_w_;
    std::map<std::vector<int>, double> acc_memo_;
};

inline NetworkQuantReport search_network(const std::vector<LayerCalibration>& layers,
                                         const SearchConfig& cfg, const Evaluator& evaluator,
                                         double baseline_acc) {
    NetworkSearch ns(layers, cfg, evaluator, baseline_acc);
    return ns.run();
}

} // namespace exq
