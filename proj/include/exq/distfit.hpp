#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "exq/error.hpp"
#include "exq/tensor.hpp"

namespace exq {

enum class Dist { normal, exponential, pareto, uniform };

inline const char* dist_name(Dist d) {
    switch (d) {
        case Dist::normal: return "normal";
        case Dist::exponential: return "exponential";
        case Dist::pareto: return "pareto";
        case Dist::uniform: return "uniform";
    }
    return "?";
}

inline constexpr Dist kAllDists[] = {Dist::normal, Dist::exponential, Dist::pareto,
                                     Dist::uniform};

inline constexpr int kDefaultBins = 100;

struct DistFit {
    Dist dist;
    std::vector<double> params; // normal: {mu, sigma}; exponential: {rate};
                                // pareto: {x_m, shape}; uniform: {lo, hi}
    double rss = 0.0;
};

struct HistogramFit {
    std::vector<double> bin_edges; // bins+1 ascending edges over [min(|t|>0), max|t|]
    std::vector<double> density;   // area-normalized heights
    std::map<std::string, DistFit> fitted;
};

namespace detail {

// nonzero magnitudes; degenerate unless at least two distinct values
inline std::vector<double> abs_nonzero(const Tensor& t) {
    std::vector<double> v;
    v.reserve(t.data.size());
    for (float x : t.data) {
        double a = std::fabs(static_cast<double>(x));
        if (a > 0.0) v.push_back(a);
    }
    if (v.size() < 2) fail(errc::degenerate_tensor, "fewer than two nonzero magnitudes");
    auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    if (*lo == *hi) fail(errc::degenerate_tensor, "constant magnitudes");
    return v;
}

inline double pdf_at(const DistFit& f, double x) {
    switch (f.dist) {
        case Dist::normal: {
            double mu = f.params[0], sigma = f.params[1];
            double z = (x - mu) / sigma;
            return std::exp(-0.5 * z * z) / (sigma * 2.5066282746310005024);
        }
        case Dist::exponential: {
            double rate = f.params[0];
            return x < 0.0 ? 0.0 : rate * std::exp(-rate * x);
        }
        case Dist::pareto: {
            double xm = f.params[0], a = f.params[1];
            return x < xm ? 0.0 : a * std::pow(xm, a) / std::pow(x, a + 1.0);
        }
        case Dist::uniform: {
            double lo = f.params[0], hi = f.params[1];
            return (x < lo || x > hi) ? 0.0 : 1.0 / (hi - lo);
        }
    }
    return 0.0;
}

// maximum likelihood on the magnitudes
inline DistFit mle_fit(Dist d, const std::vector<double>& v) {
    DistFit f;
    f.dist = d;
    double n = static_cast<double>(v.size());
    switch (d) {
        case Dist::normal: {
            double mu = 0.0;
            for (double x : v) mu += x;
            mu /= n;
            double var = 0.0;
            for (double x : v) var += (x - mu) * (x - mu);
            var /= n;
            f.params = {mu, std::sqrt(var)};
            break;
        }
        case Dist::exponential: {
            double mean = 0.0;
            for (double x : v) mean += x;
            mean /= n;
            f.params = {1.0 / mean};
            break;
        }
        case Dist::pareto: {
            double xm = *std::min_element(v.begin(), v.end());
            double s = 0.0;
            for (double x : v) s += std::log(x / xm);
            f.params = {xm, n / s};
            break;
        }
        case Dist::uniform: {
            auto [lo, hi] = std::minmax_element(v.begin(), v.end());
            f.params = {*lo, *hi};
            break;
        }
    }
    return f;
}

} // namespace detail

/// Histogram of |t| (nonzero entries), equal-width bins, area-normalized.
inline HistogramFit build_histogram(const Tensor& t, int bins = kDefaultBins) {
    if (bins < 1) fail(errc::invalid_config, "bins must be positive");
    std::vector<double> v = detail::abs_nonzero(t);
    auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    double lo = *lo_it, hi = *hi_it;
    double width = (hi - lo) / static_cast<double>(bins);

    HistogramFit h;
    h.bin_edges.resize(static_cast<size_t>(bins) + 1);
    for (int i = 0; i <= bins; ++i) h.bin_edges[static_cast<size_t>(i)] = lo + width * i;
    h.bin_edges.back() = hi;

    std::vector<int64_t> counts(static_cast<size_t>(bins), 0);
    for (double x : v) {
        int idx = static_cast<int>((x - lo) / width);
        if (idx >= bins) idx = bins - 1;
        if (idx < 0) idx = 0;
        ++counts[static_cast<size_t>(idx)];
    }
    h.density.resize(static_cast<size_t>(bins));
    double total = static_cast<double>(v.size());
    for (int i = 0; i < bins; ++i)
        h.density[static_cast<size_t>(i)] = static_cast<double>(counts[static_cast<size_t>(i)]) / (total * width);
    return h;
}

/// Fits one distribution to |t| by MLE and scores it: RSS between the histogram
/// density at bin centers and the fitted pdf there.
inline DistFit fit_rss(const Tensor& t, Dist dist, int bins = kDefaultBins) {
    std::vector<double> v = detail::abs_nonzero(t);
    HistogramFit h = build_histogram(t, bins);
    DistFit f = detail::mle_fit(dist, v);
    double rss = 0.0;
    for (size_t i = 0; i + 1 < h.bin_edges.size(); ++i) {
        double center = 0.5 * (h.bin_edges[i] + h.bin_edges[i + 1]);
        double d = h.density[i] - detail::pdf_at(f, center);
        rss += d * d;
    }
    f.rss = rss;
    return f;
}

/// All four candidate fits plus the histogram, for reports.
inline HistogramFit analyze_tensor(const Tensor& t, int bins = kDefaultBins) {
    HistogramFit h = build_histogram(t, bins);
    for (Dist d : kAllDists) {
        DistFit f = fit_rss(t, d, bins);
        h.fitted[dist_name(d)] = f;
    }
    return h;
}

enum class StartTensor { activations, weights };

inline const char* start_tensor_name(StartTensor s) {
    return s == StartTensor::activations ? "activations" : "weights";
}

/// Tie-break rule on the two exponential-fit RSS scores; ties go to activations.
inline StartTensor pick_start(double rss_act, double rss_w) {
    return rss_w < rss_act ? StartTensor::weights : StartTensor::activations;
}

/// The tensor more similar to an exponential (smaller exponential-fit RSS)
/// seeds the base search.
inline StartTensor select_start_tensor(const Tensor& acts, const Tensor& weights,
                                       int bins = kDefaultBins) {
    double rss_act = fit_rss(acts, Dist::exponential, bins).rss;
    double rss_w = fit_rss(weights, Dist::exponential, bins).rss;
    return pick_start(rss_act, rss_w);
}

} // namespace exq
