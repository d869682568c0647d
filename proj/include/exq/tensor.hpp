#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "exq/error.hpp"

namespace exq {

/// Dense row-major float32 tensor with shape metadata.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<float> data;
    std::string name;

    Tensor() = default;
    Tensor(std::vector<int64_t> shape_, std::vector<float> data_, std::string name_ = {})
        : shape(std::move(shape_)), data(std::move(data_)), name(std::move(name_)) {}

    int64_t numel() const {
        int64_t n = 1;
        for (int64_t d : shape) n *= d;
        return n;
    }
};

inline int64_t numel_of(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) n *= d;
    return n;
}

inline void validate_shape(const std::vector<int64_t>& shape, int64_t count) {
    for (int64_t d : shape)
        if (d < 0) fail(errc::malformed_header, "negative dimension " + std::to_string(d));
    if (numel_of(shape) != count)
        fail(errc::shape_mismatch, "shape product " + std::to_string(numel_of(shape)) +
                                       " != element count " + std::to_string(count));
}

// Scans for the first NaN/Inf; index reported flat, row-major.
inline void validate_finite(const Tensor& t) {
    for (size_t i = 0; i < t.data.size(); ++i)
        if (!std::isfinite(t.data[i]))
            fail(errc::non_finite_value,
                 "non-finite value at flat index " + std::to_string(i) +
                     (t.name.empty() ? "" : " in " + t.name));
}

inline Tensor zeros(std::vector<int64_t> shape, std::string name = {}) {
    int64_t n = numel_of(shape);
    return Tensor(std::move(shape), std::vector<float>(static_cast<size_t>(n), 0.0f),
                  std::move(name));
}

/// Magnitude statistics used by the quantizer: max|t|, smallest nonzero |t|, mean|t|.
struct AbsStats {
    double max_abs = 0.0;
    double min_pos = std::numeric_limits<double>::infinity();
    double mean_abs = 0.0;
    int64_t nonzero = 0;
};

inline AbsStats abs_stats(const Tensor& t) {
    AbsStats s;
    double sum = 0.0;
    for (float v : t.data) {
        double a = std::fabs(static_cast<double>(v));
        sum += a;
        if (a > s.max_abs) s.max_abs = a;
        if (a > 0.0) {
            ++s.nonzero;
            if (a < s.min_pos) s.min_pos = a;
        }
    }
    s.mean_abs = t.data.empty() ? 0.0 : sum / static_cast<double>(t.data.size());
    return s;
}

inline Tensor concat_flat(const std::vector<Tensor>& parts, std::string name = {}) {
    Tensor out;
    out.name = std::move(name);
    int64_t total = 0;
    for (const Tensor& p : parts) total += p.numel();
    out.shape = {total};
    out.data.reserve(static_cast<size_t>(total));
    for (const Tensor& p : parts) out.data.insert(out.data.end(), p.data.begin(), p.data.end());
    return out;
}

} // namespace exq
