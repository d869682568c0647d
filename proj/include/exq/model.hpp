#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "exq/counting_dot.hpp"
#include "exq/error.hpp"
#include "exq/exq_io.hpp"
#include "exq/quant.hpp"
#include "exq/search.hpp"
#include "exq/tensor.hpp"

namespace exq {

enum class LayerKind { fc, conv, relu, flatten, argmax };

struct Layer {
    LayerKind kind;
    std::string name; // set for fc/conv
    // fc
    int64_t in = 0, out = 0;
    // conv
    int kh = 0, kw = 0, cin = 0, cout = 0, stride = 1, pad = 0;
    Tensor weights; // fc: [out,in]; conv: [cout,cin,kh,kw]
    Tensor bias;    // [out] / [cout]; may be empty

    bool quantizable() const { return kind == LayerKind::fc || kind == LayerKind::conv; }
};

struct ModelGraph {
    std::string name;
    std::vector<int64_t> input_shape;
    std::vector<Layer> layers;

    std::vector<const Layer*> quantizable_layers() const {
        std::vector<const Layer*> out;
        for (const Layer& l : layers)
            if (l.quantizable()) out.push_back(&l);
        return out;
    }
};

inline ModelGraph load_model(const std::string& json_path) {
    std::ifstream in(json_path);
    if (!in) fail(errc::io_error, "cannot open " + json_path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        fail(errc::malformed_header, std::string("model json: ") + e.what());
    }
    std::filesystem::path dir = std::filesystem::path(json_path).parent_path();

    ModelGraph m;
    m.name = j.value("name", "model");
    for (const auto& d : j.at("input_shape")) m.input_shape.push_back(d.get<int64_t>());
    for (const auto& jl : j.at("layers")) {
        Layer l;
        std::string kind = jl.at("kind").get<std::string>();
        if (kind == "fc") {
            l.kind = LayerKind::fc;
            l.name = jl.at("name").get<std::string>();
            l.in = jl.at("in").get<int64_t>();
            l.out = jl.at("out").get<int64_t>();
            l.weights = load_tensor((dir / jl.at("weights").get<std::string>()).string());
            if (l.weights.shape != std::vector<int64_t>{l.out, l.in})
                fail(errc::shape_mismatch, "fc weights shape mismatch in " + l.name);
        } else if (kind == "conv") {
            l.kind = LayerKind::conv;
            l.name = jl.at("name").get<std::string>();
            l.kh = jl.at("kh").get<int>();
            l.kw = jl.at("kw").get<int>();
            l.cin = jl.at("cin").get<int>();
            l.cout = jl.at("cout").get<int>();
            l.stride = jl.value("stride", 1);
            l.pad = jl.value("pad", 0);
            l.weights = load_tensor((dir / jl.at("weights").get<std::string>()).string());
            if (l.weights.shape != std::vector<int64_t>{l.cout, l.cin, l.kh, l.kw})
                fail(errc::shape_mismatch, "conv weights shape mismatch in " + l.name);
        } else if (kind == "relu") {
            l.kind = LayerKind::relu;
        } else if (kind == "flatten") {
            l.kind = LayerKind::flatten;
        } else if (kind == "argmax") {
            l.kind = LayerKind::argmax;
        } else {
            fail(errc::malformed_header, "unknown layer kind " + kind);
        }
        if (l.quantizable() && jl.contains("bias"))
            l.bias = load_tensor((dir / jl.at("bias").get<std::string>()).string());
        m.layers.push_back(std::move(l));
    }
    return m;
}

namespace detail {

inline void expect_shape(const std::vector<int64_t>& got, const std::vector<int64_t>& want,
                         const std::string& where) {
    if (got != want) fail(errc::shape_mismatch, "unexpected input shape at " + where);
}

inline Tensor fc_f32(const Layer& l, const Tensor& x) {
    expect_shape(x.shape, {l.in}, l.name);
    Tensor y = zeros({l.out});
    for (int64_t o = 0; o < l.out; ++o) {
        double acc = 0.0;
        const float* wr = l.weights.data.data() + static_cast<size_t>(o * l.in);
        for (int64_t k = 0; k < l.in; ++k)
            acc += static_cast<double>(wr[k]) * static_cast<double>(x.data[static_cast<size_t>(k)]);
        if (!l.bias.data.empty()) acc += static_cast<double>(l.bias.data[static_cast<size_t>(o)]);
        y.data[static_cast<size_t>(o)] = static_cast<float>(acc);
    }
    return y;
}

inline int64_t conv_out_dim(int64_t in, int k, int stride, int pad) {
    return (in + 2 * pad - k) / stride + 1;
}

inline Tensor conv_f32(const Layer& l, const Tensor& x) {
    if (x.shape.size() != 3 || x.shape[0] != l.cin)
        fail(errc::shape_mismatch, "conv input must be [cin,h,w] at " + l.name);
    int64_t h = x.shape[1], w = x.shape[2];
    int64_t oh = conv_out_dim(h, l.kh, l.stride, l.pad);
    int64_t ow = conv_out_dim(w, l.kw, l.stride, l.pad);
    Tensor y = zeros({l.cout, oh, ow});
    for (int f = 0; f < l.cout; ++f) {
        for (int64_t oy = 0; oy < oh; ++oy) {
            for (int64_t ox = 0; ox < ow; ++ox) {
                double acc = 0.0;
                for (int c = 0; c < l.cin; ++c) {
                    for (int ky = 0; ky < l.kh; ++ky) {
                        for (int kx = 0; kx < l.kw; ++kx) {
                            int64_t iy = oy * l.stride + ky - l.pad;
                            int64_t ix = ox * l.stride + kx - l.pad;
                            if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
                            double xv = x.data[static_cast<size_t>((c * h + iy) * w + ix)];
                            double wv = l.weights.data[static_cast<size_t>(
                                ((f * l.cin + c) * l.kh + ky) * l.kw + kx)];
                            acc += xv * wv;
                        }
                    }
                }
                if (!l.bias.data.empty()) acc += static_cast<double>(l.bias.data[static_cast<size_t>(f)]);
                y.data[static_cast<size_t>((f * oh + oy) * ow + ox)] = static_cast<float>(acc);
            }
        }
    }
    return y;
}

} // namespace detail

/// Patch matrix for the conv-as-matmul lowering: one row per output position,
/// cin*kh*kw columns, zero padding materialized. Works on any element type.
template <typename T>
inline std::vector<T> im2col(const T* x, int cin, int64_t h, int64_t w, int kh, int kw, int stride,
                             int pad, T zero) {
    int64_t oh = detail::conv_out_dim(h, kh, stride, pad);
    int64_t ow = detail::conv_out_dim(w, kw, stride, pad);
    int64_t patch = static_cast<int64_t>(cin) * kh * kw;
    std::vector<T> out(static_cast<size_t>(oh * ow * patch), zero);
    for (int64_t oy = 0; oy < oh; ++oy) {
        for (int64_t ox = 0; ox < ow; ++ox) {
            T* row = out.data() + static_cast<size_t>((oy * ow + ox) * patch);
            int64_t col = 0;
            for (int c = 0; c < cin; ++c) {
                for (int ky = 0; ky < kh; ++ky) {
                    for (int kx = 0; kx < kw; ++kx, ++col) {
                        int64_t iy = oy * stride + ky - pad;
                        int64_t ix = ox * stride + kx - pad;
                        if (iy < 0 || ix < 0 || iy >= h || ix >= w) continue;
                        row[col] = x[static_cast<size_t>((c * h + iy) * w + ix)];
                    }
                }
            }
        }
    }
    return out;
}

/// Reference conv through the same lowering the quantized path uses; the unit
/// tests pin it against the direct convolution.
inline Tensor conv_via_matmul_f32(const Layer& l, const Tensor& x) {
    int64_t h = x.shape[1], w = x.shape[2];
    int64_t oh = detail::conv_out_dim(h, l.kh, l.stride, l.pad);
    int64_t ow = detail::conv_out_dim(w, l.kw, l.stride, l.pad);
    int64_t patch = static_cast<int64_t>(l.cin) * l.kh * l.kw;
    std::vector<float> cols =
        im2col<float>(x.data.data(), l.cin, h, w, l.kh, l.kw, l.stride, l.pad, 0.0f);
    Tensor y = zeros({l.cout, oh, ow});
    for (int f = 0; f < l.cout; ++f) {
        const float* wrow = l.weights.data.data() + static_cast<size_t>(f) * patch;
        for (int64_t p = 0; p < oh * ow; ++p) {
            const float* col = cols.data() + static_cast<size_t>(p * patch);
            double acc = 0.0;
            for (int64_t k = 0; k < patch; ++k)
                acc += static_cast<double>(wrow[k]) * static_cast<double>(col[k]);
            if (!l.bias.data.empty()) acc += static_cast<double>(l.bias.data[static_cast<size_t>(f)]);
            y.data[static_cast<size_t>(f * oh * ow + p)] = static_cast<float>(acc);
        }
    }
    return y;
}

/// Float32 reference pass. When `captures` is given, the *input* of every
/// quantizable layer is recorded under the layer's name.
inline Tensor forward_f32(const ModelGraph& m, const Tensor& input,
                          std::map<std::string, Tensor>* captures = nullptr) {
    detail::expect_shape(input.shape, m.input_shape, "model input");
    Tensor x = input;
    for (const Layer& l : m.layers) {
        switch (l.kind) {
            case LayerKind::fc:
                if (captures) (*captures)[l.name] = x;
                x = detail::fc_f32(l, x);
                break;
            case LayerKind::conv:
                if (captures) (*captures)[l.name] = x;
                x = detail::conv_f32(l, x);
                break;
            case LayerKind::relu:
                for (float& v : x.data) v = v < 0.0f ? 0.0f : v;
                break;
            case LayerKind::flatten:
                x.shape = {x.numel()};
                break;
            case LayerKind::argmax: {
                int64_t best = 0;
                for (size_t i = 1; i < x.data.size(); ++i)
                    if (x.data[i] > x.data[static_cast<size_t>(best)]) best = static_cast<int64_t>(i);
                x = Tensor({1}, {static_cast<float>(best)});
                break;
            }
        }
    }
    return x;
}

/// Weights quantized once per configuration; activations are quantized at
/// layer entry on every forward.
struct QuantizedLayerState {
    QuantParams act_params;
    QuantizedTensor weights_q;
};

struct QuantizedModelState {
    std::map<std::string, QuantizedLayerState> layers;
};

inline QuantizedModelState prepare_quantized(const ModelGraph& m,
                                             const std::vector<LayerQuantResult>& results) {
    QuantizedModelState st;
    std::map<std::string, const LayerQuantResult*> by_name;
    for (const LayerQuantResult& r : results) by_name[r.layer] = &r;
    for (const Layer& l : m.layers) {
        if (!l.quantizable()) continue;
        auto it = by_name.find(l.name);
        if (it == by_name.end())
            fail(errc::missing_params, "no quantization parameters for layer " + l.name);
        const LayerQuantResult& r = *it->second;
        QuantizedLayerState ls;
        ls.act_params = r.act_params();
        Tensor wflat = l.weights;
        if (l.kind == LayerKind::conv)
            wflat.shape = {l.cout, static_cast<int64_t>(l.cin) * l.kh * l.kw};
        ls.weights_q = quantize_tensor(wflat, r.weight_params());
        st.layers.emplace(l.name, std::move(ls));
    }
    return st;
}

/// Largest live counter magnitude observed per layer, for the sizing audit.
using CounterAudit = std::map<std::string, int32_t>;

inline Tensor forward_quantized(const ModelGraph& m, const Tensor& input,
                                const QuantizedModelState& st, CounterAudit* audit = nullptr) {
    detail::expect_shape(input.shape, m.input_shape, "model input");
    Tensor x = input;
    for (const Layer& l : m.layers) {
        switch (l.kind) {
            case LayerKind::fc: {
                const QuantizedLayerState& ls = st.layers.at(l.name);
                detail::expect_shape(x.shape, {l.in}, l.name);
                QuantizedTensor aq = quantize_tensor(x, ls.act_params);
                int32_t peak = 0;
                Tensor y = quantized_matvec(ls.weights_q, aq, &peak);
                if (audit) {
                    int32_t& slot = (*audit)[l.name];
                    if (peak > slot) slot = peak;
                }
                if (!l.bias.data.empty())
                    for (int64_t o = 0; o < l.out; ++o)
                        y.data[static_cast<size_t>(o)] += l.bias.data[static_cast<size_t>(o)];
                x = std::move(y);
                break;
            }
            case LayerKind::conv: {
                const QuantizedLayerState& ls = st.layers.at(l.name);
                if (x.shape.size() != 3 || x.shape[0] != l.cin)
                    fail(errc::shape_mismatch, "conv input must be [cin,h,w] at " + l.name);
                int64_t h = x.shape[1], w = x.shape[2];
                int64_t oh = detail::conv_out_dim(h, l.kh, l.stride, l.pad);
                int64_t ow = detail::conv_out_dim(w, l.kw, l.stride, l.pad);
                int64_t patch = static_cast<int64_t>(l.cin) * l.kh * l.kw;

                QuantizedTensor aq = quantize_tensor(x, ls.act_params);
                std::vector<Code> cols = im2col<Code>(aq.codes.data(), l.cin, h, w, l.kh, l.kw,
                                                      l.stride, l.pad, zero_code());
                Tensor y = zeros({l.cout, oh, ow});
                int32_t peak = 0;
                QuantizedTensor patch_q;
                patch_q.params = ls.act_params;
                patch_q.shape = {patch};
                for (int64_t p = 0; p < oh * ow; ++p) {
                    patch_q.codes.assign(cols.begin() + p * patch, cols.begin() + (p + 1) * patch);
                    Tensor col_out = quantized_matvec(ls.weights_q, patch_q, &peak);
                    for (int f = 0; f < l.cout; ++f) {
                        float v = col_out.data[static_cast<size_t>(f)];
                        if (!l.bias.data.empty()) v += l.bias.data[static_cast<size_t>(f)];
                        y.data[static_cast<size_t>(f * oh * ow + p)] = v;
                    }
                }
                if (audit) {
                    int32_t& slot = (*audit)[l.name];
                    if (peak > slot) slot = peak;
                }
                x = std::move(y);
                break;
            }
            case LayerKind::relu:
                for (float& v : x.data) v = v < 0.0f ? 0.0f : v;
                break;
            case LayerKind::flatten:
                x.shape = {x.numel()};
                break;
            case LayerKind::argmax: {
                int64_t best = 0;
                for (size_t i = 1; i < x.data.size(); ++i)
                    if (x.data[i] > x.data[static_cast<size_t>(best)]) best = static_cast<int64_t>(i);
                x = Tensor({1}, {static_cast<float>(best)});
                break;
            }
        }
    }
    return x;
}

} // namespace exq
