#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <string>
#include <vector>

#include "exq/error.hpp"
#include "exq/quant.hpp"
#include "exq/tensor.hpp"

namespace exq {

/// Constant factors of the four-term expansion of the exponential-domain dot
/// product; both operand tensors must share base and bitwidth.
struct TermCoefficients {
    double base = 2.0;
    int bitwidth = 4;
    double c1 = 0.0; // alpha_a * alpha_w, weighs the exponent-sum table
    double c2 = 0.0; // alpha_w * beta_a,  weighs the weight-exponent table
    double c3 = 0.0; // alpha_a * beta_w,  weighs the activation-exponent table
    double c4 = 0.0; // beta_a * beta_w,   weighs the sign accumulator
};

inline TermCoefficients make_coefficients(const QuantParams& act, const QuantParams& w) {
    if (act.bitwidth != w.bitwidth)
        fail(errc::bitwidth_mismatch, "operand bitwidths differ: " + std::to_string(act.bitwidth) +
                                          " vs " + std::to_string(w.bitwidth));
    if (act.base != w.base)
        fail(errc::bitwidth_mismatch, "operand bases differ (shared-base constraint)");
    TermCoefficients c;
    c.base = act.base;
    c.bitwidth = act.bitwidth;
    c.c1 = act.alpha * w.alpha;
    c.c2 = w.alpha * act.beta;
    c.c3 = act.alpha * w.beta;
    c.c4 = act.beta * w.beta;
    return c;
}

/// Precomputed base powers over the reachable exponent-sum range
/// [2*R_min, 2*R_max]; single exponents index into the same table.
struct PowerTable {
    int bitwidth = 0;
    int r_min = 0;
    std::vector<double> pow2r; // b^s for s in [2*r_min, 2*r_max]

    PowerTable() = default;
    PowerTable(double base, int bitwidth_) : bitwidth(bitwidth_) {
        r_min = -((1 << (bitwidth - 1)) - 1);
        int span = -4 * r_min + 1;
        pow2r.resize(static_cast<size_t>(span));
        for (int s = 2 * r_min; s <= -2 * r_min; ++s)
            pow2r[static_cast<size_t>(s - 2 * r_min)] = std::pow(base, static_cast<double>(s));
    }

    double at(int s) const { return pow2r[static_cast<size_t>(s - 2 * r_min)]; }
};

/// The per-output-neuron counting state: one signed counter per reachable
/// exponent sum (term 1), per weight exponent (term 2), per activation
/// exponent (term 3), plus the sign-product accumulator (term 4).
struct CounterSet {
    int bitwidth = 0;
    int r_min = 0;
    std::vector<int32_t> ac1; // exponent sums, 2^(n+1)-3 reachable entries
    std::vector<int32_t> ac2; // weight exponents, 2^n-1 entries
    std::vector<int32_t> ac3; // activation exponents, 2^n-1 entries
    int64_t sign_acc = 0;
    int32_t peak = 0; // largest |counter| ever held, for the sizing audit

    explicit CounterSet(int bitwidth_) : bitwidth(bitwidth_) {
        r_min = -((1 << (bitwidth - 1)) - 1);
        ac1.assign(static_cast<size_t>((1 << (bitwidth + 1)) - 3), 0);
        ac2.assign(static_cast<size_t>((1 << bitwidth) - 1), 0);
        ac3.assign(static_cast<size_t>((1 << bitwidth) - 1), 0);
    }

    void reset() {
        std::fill(ac1.begin(), ac1.end(), 0);
        std::fill(ac2.begin(), ac2.end(), 0);
        std::fill(ac3.begin(), ac3.end(), 0);
        sign_acc = 0;
        peak = 0;
    }

    void accumulate(Code a, Code w) {
        if (code_is_zero(a, bitwidth) || code_is_zero(w, bitwidth)) return;
        int ia = code_exponent(a, bitwidth);
        int iw = code_exponent(w, bitwidth);
        int32_t sigma =
            (code_sign_negative(a, bitwidth) != code_sign_negative(w, bitwidth)) ? -1 : 1;
        bump(ac1[static_cast<size_t>(ia + iw - 2 * r_min)], sigma);
        bump(ac2[static_cast<size_t>(iw - r_min)], sigma);
        bump(ac3[static_cast<size_t>(ia - r_min)], sigma);
        sign_acc += sigma;
        int32_t sa = static_cast<int32_t>(sign_acc < 0 ? -sign_acc : sign_acc);
        if (sa > peak) peak = sa;
    }

    /// Term 1 and 3 only; terms 2 and 4 come precomputed from the weights
    /// (valid only for dense, nonnegative activations).
    void accumulate_act_terms(Code a, Code w) {
        if (code_is_zero(a, bitwidth) || code_is_zero(w, bitwidth)) return;
        int ia = code_exponent(a, bitwidth);
        int iw = code_exponent(w, bitwidth);
        int32_t sigma =
            (code_sign_negative(a, bitwidth) != code_sign_negative(w, bitwidth)) ? -1 : 1;
        bump(ac1[static_cast<size_t>(ia + iw - 2 * r_min)], sigma);
        bump(ac3[static_cast<size_t>(ia - r_min)], sigma);
    }

private:
    void bump(int32_t& c, int32_t sigma) {
        c += sigma;
        int32_t a = c < 0 ? -c : c;
        if (a > peak) peak = a;
    }
};

/// Folds the counters into the dot-product value: each count times its base
/// power, each table times its constant coefficient.
inline double finalize(const CounterSet& cs, const TermCoefficients& co, const PowerTable& pw) {
    if (cs.bitwidth != co.bitwidth || pw.bitwidth != co.bitwidth)
        fail(errc::bitwidth_mismatch, "counter set / coefficients / power table disagree");
    double t1 = 0.0, t2 = 0.0, t3 = 0.0;
    for (size_t k = 0; k < cs.ac1.size(); ++k)
        if (cs.ac1[k] != 0) t1 += static_cast<double>(cs.ac1[k]) * pw.at(static_cast<int>(k) + 2 * cs.r_min);
    for (size_t k = 0; k < cs.ac2.size(); ++k)
        if (cs.ac2[k] != 0) t2 += static_cast<double>(cs.ac2[k]) * pw.at(static_cast<int>(k) + cs.r_min);
    for (size_t k = 0; k < cs.ac3.size(); ++k)
        if (cs.ac3[k] != 0) t3 += static_cast<double>(cs.ac3[k]) * pw.at(static_cast<int>(k) + cs.r_min);
    return co.c1 * t1 + co.c2 * t2 + co.c3 * t3 + co.c4 * static_cast<double>(cs.sign_acc);
}

/// Brute-force reference: dequantize both operands and multiply-accumulate in
/// doubles. Kept independent of the counting path on purpose.
inline double oracle_dot(const QuantizedTensor& a, const QuantizedTensor& w) {
    if (a.codes.size() != w.codes.size())
        fail(errc::shape_mismatch, "operand lengths differ");
    if (a.params.bitwidth != w.params.bitwidth || a.params.base != w.params.base)
        fail(errc::bitwidth_mismatch, "operands must share base and bitwidth");
    double acc = 0.0;
    for (size_t i = 0; i < a.codes.size(); ++i)
        acc += dequantize_value(a.codes[i], a.params) * dequantize_value(w.codes[i], w.params);
    return acc;
}

struct WeightTerms {
    double term2 = 0.0; // c2 * sum of signed weight base powers
    double term4 = 0.0; // c4 * sum of weight signs
};

/// Weight-only halves of terms 2 and 4, computable offline. Only valid when
/// every paired activation is nonzero with a nonnegative sign.
inline WeightTerms precompute_weight_terms(const Code* w, size_t count,
                                           const TermCoefficients& co, const PowerTable& pw) {
    double p2 = 0.0;
    int64_t p4 = 0;
    for (size_t i = 0; i < count; ++i) {
        if (code_is_zero(w[i], co.bitwidth)) continue;
        double b = pw.at(code_exponent(w[i], co.bitwidth));
        if (code_sign_negative(w[i], co.bitwidth)) {
            p2 -= b;
            --p4;
        } else {
            p2 += b;
            ++p4;
        }
    }
    return {co.c2 * p2, co.c4 * static_cast<double>(p4)};
}

inline WeightTerms precompute_weight_terms(const QuantizedTensor& w, const TermCoefficients& co,
                                           const PowerTable& pw) {
    return precompute_weight_terms(w.codes.data(), w.codes.size(), co, pw);
}

/// Guard for the precomputed path: no zero codes, no negative signs.
inline bool activations_allow_precompute(const QuantizedTensor& a) {
    for (Code c : a.codes) {
        if (code_is_zero(c, a.params.bitwidth)) return false;
        if (code_sign_negative(c, a.params.bitwidth)) return false;
    }
    return true;
}

inline double counting_dot(const Code* a, const Code* w, size_t count,
                           const TermCoefficients& co, const PowerTable& pw,
                           int32_t* peak_out = nullptr) {
    CounterSet cs(co.bitwidth);
    for (size_t i = 0; i < count; ++i) cs.accumulate(a[i], w[i]);
    if (peak_out && cs.peak > *peak_out) *peak_out = cs.peak;
    return finalize(cs, co, pw);
}

/// Row-major 2-D weights times 1-D activations, one counter set per output
/// neuron. Rows with precomputable weight terms use them when the activation
/// vector qualifies; otherwise each pair is counted in full.
inline Tensor quantized_matvec(const QuantizedTensor& w, const QuantizedTensor& a,
                               int32_t* peak_out = nullptr) {
    if (w.shape.size() != 2) fail(errc::shape_mismatch, "weights must be 2-D");
    if (a.shape.size() != 1) fail(errc::shape_mismatch, "activations must be 1-D");
    int64_t rows = w.shape[0], cols = w.shape[1];
    if (cols != a.numel())
        fail(errc::shape_mismatch, "inner dimensions disagree: " + std::to_string(cols) + " vs " +
                                       std::to_string(a.numel()));
    TermCoefficients co = make_coefficients(a.params, w.params);
    PowerTable pw(co.base, co.bitwidth);
    bool fast = activations_allow_precompute(a);

    Tensor out;
    out.shape = {rows};
    out.data.resize(static_cast<size_t>(rows));
    CounterSet cs(co.bitwidth);
    for (int64_t r = 0; r < rows; ++r) {
        const Code* wrow = w.codes.data() + static_cast<size_t>(r * cols);
        cs.reset();
        double v;
        if (fast) {
            WeightTerms wt = precompute_weight_terms(wrow, static_cast<size_t>(cols), co, pw);
            for (int64_t k = 0; k < cols; ++k)
                cs.accumulate_act_terms(a.codes[static_cast<size_t>(k)],
                                        wrow[static_cast<size_t>(k)]);
            TermCoefficients partial = co;
            partial.c2 = 0.0;
            partial.c4 = 0.0;
            v = finalize(cs, partial, pw) + wt.term2 + wt.term4;
        } else {
            for (int64_t k = 0; k < cols; ++k)
                cs.accumulate(a.codes[static_cast<size_t>(k)], wrow[static_cast<size_t>(k)]);
            v = finalize(cs, co, pw);
        }
        if (peak_out && cs.peak > *peak_out) *peak_out = cs.peak;
        out.data[static_cast<size_t>(r)] = static_cast<float>(v);
    }
    return out;
}

} // namespace exq
