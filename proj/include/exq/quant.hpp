#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "exq/error.hpp"
#include "exq/tensor.hpp"

namespace exq {

inline constexpr int kMinBitwidth = 3;
inline constexpr int kMaxBitwidth = 7;

/// Per-tensor exponential codec parameters: value = sign * (alpha * base^i + beta),
/// i a signed integer exponent stored in n bits.
struct QuantParams {
    double base = 2.0;   // > 0 and != 1; the pipeline only ever produces base > 1
    int bitwidth = 4;    // n, in [3, 7]
    double alpha = 1.0;  // scale, > 0
    double beta = 0.0;   // offset

    int r_min() const { return -((1 << (bitwidth - 1)) - 1); }
    int r_max() const { return (1 << (bitwidth - 1)) - 1; }
    // count of representable nonzero magnitudes: 2^n - 1
    int level_count() const { return (1 << bitwidth) - 1; }
};

inline void validate_params(const QuantParams& p) {
    if (p.bitwidth < kMinBitwidth || p.bitwidth > kMaxBitwidth)
        fail(errc::invalid_config, "bitwidth " + std::to_string(p.bitwidth) + " outside [3,7]");
    if (!(p.base > 0.0) || p.base == 1.0)
        fail(errc::base_out_of_range, "base must be positive and != 1");
    if (!(p.alpha > 0.0)) fail(errc::invalid_config, "alpha must be positive");
    if (!std::isfinite(p.base) || !std::isfinite(p.alpha) || !std::isfinite(p.beta))
        fail(errc::invalid_config, "non-finite codec parameter");
}

// Element code layout: low n bits hold the exponent field f, bit n holds the sign.
// f == 0 is the reserved zero code (sign bit must be 0); f in [1, 2^n-1] encodes
// exponent i = f - 2^(n-1).
using Code = uint8_t;

inline Code make_code(bool negative, int exponent, int bitwidth) {
    int f = exponent + (1 << (bitwidth - 1));
    return static_cast<Code>((negative ? (1u << bitwidth) : 0u) | static_cast<unsigned>(f));
}

inline Code zero_code() { return 0; }

inline bool code_is_zero(Code c, int bitwidth) {
    return (c & ((1u << bitwidth) - 1u)) == 0;
}

inline bool code_sign_negative(Code c, int bitwidth) { return (c >> bitwidth) & 1u; }

inline int code_exponent(Code c, int bitwidth) {
    return static_cast<int>(c & ((1u << bitwidth) - 1u)) - (1 << (bitwidth - 1));
}

inline int clip(int i, int r_min, int r_max) {
    if (i <= r_min) return r_min;
    if (i >= r_max) return r_max;
    return i;
}

// round to nearest, halves away from zero (std::round semantics)
inline double round_half_away(double x) { return std::round(x); }

/// Maps a finite float to its code. Total: a non-positive log argument
/// saturates the exponent to R_min instead of failing.
inline Code quantize_value(double x, const QuantParams& p) {
    if (x == 0.0) return zero_code();
    bool neg = std::signbit(x);
    double u = (std::fabs(x) - p.beta) / p.alpha;
    int i;
    if (u <= 0.0) {
        i = p.r_min();
    } else {
        double e = round_half_away(std::log(u) / std::log(p.base));
        if (e <= static_cast<double>(p.r_min()))
            i = p.r_min();
        else if (e >= static_cast<double>(p.r_max()))
            i = p.r_max();
        else
            i = static_cast<int>(e);
    }
    return make_code(neg, i, p.bitwidth);
}

inline double dequantize_value(Code c, const QuantParams& p) {
    if (code_is_zero(c, p.bitwidth)) return 0.0;
    double v = p.alpha * std::pow(p.base, static_cast<double>(code_exponent(c, p.bitwidth))) + p.beta;
    return code_sign_negative(c, p.bitwidth) ? -v : v;
}

/// Full-scale-range initialization: the top code lands on max|t| and the offset
/// shifts the bottom interval onto the smallest nonzero magnitude, half a step down
/// to absorb rounding.
inline QuantParams init_params(const Tensor& t, int bitwidth) {
    if (bitwidth < kMinBitwidth || bitwidth > kMaxBitwidth)
        fail(errc::invalid_config, "bitwidth " + std::to_string(bitwidth) + " outside [3,7]");
    AbsStats s = abs_stats(t);
    if (s.nonzero == 0) fail(errc::degenerate_tensor, "all-zero tensor");
    if (s.max_abs <= 1.0)
        fail(errc::base_out_of_range,
             "max|t| <= 1 gives base <= 1; pre-scale the tensor (the search does this)");

    QuantParams p;
    p.bitwidth = bitwidth;
    p.base = std::pow(s.max_abs, 1.0 / static_cast<double>(p.r_max()));
    p.alpha = s.max_abs / std::pow(p.base, static_cast<double>(p.r_max()));
    p.beta = s.min_pos - p.alpha * std::pow(p.base, static_cast<double>(p.r_min()) - 0.5);
    return p;
}

/// Offset for a given (base, alpha) pair and tensor magnitude stats.
inline double offset_for(double min_pos, double alpha, double base, int r_min) {
    return min_pos - alpha * std::pow(base, static_cast<double>(r_min) - 0.5);
}

/// Relative mean absolute error: sum|approx - ref| / sum|ref|.
inline double rmae(const Tensor& approx, const Tensor& ref) {
    if (approx.shape != ref.shape)
        fail(errc::shape_mismatch, "rmae operands have different shapes");
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < ref.data.size(); ++i) {
        num += std::fabs(static_cast<double>(approx.data[i]) - static_cast<double>(ref.data[i]));
        den += std::fabs(static_cast<double>(ref.data[i]));
    }
    if (den == 0.0) fail(errc::zero_reference, "reference tensor has zero magnitude sum");
    return num / den;
}

struct QuantizedTensor {
    QuantParams params;
    std::vector<int64_t> shape;
    std::vector<Code> codes;

    int64_t numel() const { return static_cast<int64_t>(codes.size()); }
};

inline QuantizedTensor quantize_tensor(const Tensor& t, const QuantParams& p) {
    validate_params(p);
    QuantizedTensor q;
    q.params = p;
    q.shape = t.shape;
    q.codes.resize(t.data.size());
    for (size_t i = 0; i < t.data.size(); ++i)
        q.codes[i] = quantize_value(static_cast<double>(t.data[i]), p);
    return q;
}

inline Tensor dequantize_tensor(const QuantizedTensor& q, std::string name = {}) {
    Tensor t;
    t.name = std::move(name);
    t.shape = q.shape;
    t.data.resize(q.codes.size());
    for (size_t i = 0; i < q.codes.size(); ++i)
        t.data[i] = static_cast<float>(dequantize_value(q.codes[i], q.params));
    return t;
}

/// One quantize/dequantize pass scored by RMAE, in doubles end to end so the
/// search never rounds through float32.
inline double quantization_rmae(const Tensor& t, const QuantParams& p) {
    double num = 0.0, den = 0.0;
    for (float vf : t.data) {
        double v = static_cast<double>(vf);
        double back = dequantize_value(quantize_value(v, p), p);
        num += std::fabs(back - v);
        den += std::fabs(v);
    }
    if (den == 0.0) fail(errc::zero_reference, "reference tensor has zero magnitude sum");
    return num / den;
}

} // namespace exq
