#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "exq/error.hpp"
#include "exq/npy.hpp"
#include "exq/quant.hpp"

namespace exq {

// .exq container, all fields little-endian:
//   magic   "EXQT"            4 bytes
//   version u16               = 1
//   n       u8                bitwidth, in [3,7]
//   flags   u8                reserved, 0
//   base    f64
//   alpha   f64
//   beta    f64
//   ndim    u32
//   dims    u64 * ndim
//   payload ceil(count*(n+1)/8) bytes, element codes packed LSB-first,
//           final byte zero-padded in its high bits
//
// Each element code is (sign << n) | f with f the biased exponent field.

inline constexpr char kExqMagic[4] = {'E', 'X', 'Q', 'T'};
inline constexpr uint16_t kExqVersion = 1;

namespace detail {

struct BitWriter {
    std::vector<uint8_t> bytes;
    uint32_t acc = 0;
    int nbits = 0;

    void put(uint32_t value, int width) {
        acc |= value << nbits;
        nbits += width;
        while (nbits >= 8) {
            bytes.push_back(static_cast<uint8_t>(acc & 0xff));
            acc >>= 8;
            nbits -= 8;
        }
    }
    void flush() {
        if (nbits > 0) {
            bytes.push_back(static_cast<uint8_t>(acc & 0xff));
            acc = 0;
            nbits = 0;
        }
    }
};

struct BitReader {
    const uint8_t* data;
    size_t size;
    size_t pos = 0;
    uint32_t acc = 0;
    int nbits = 0;

    uint32_t take(int width) {
        while (nbits < width) {
            if (pos >= size) fail(errc::truncated_payload, "exq payload exhausted");
            acc |= static_cast<uint32_t>(data[pos++]) << nbits;
            nbits += 8;
        }
        uint32_t v = acc & ((1u << width) - 1u);
        acc >>= width;
        nbits -= width;
        return v;
    }
};

template <typename T>
inline void write_le(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
inline T read_le(const std::string& bytes, size_t& off) {
    if (bytes.size() < off + sizeof(T)) fail(errc::malformed_header, "exq header truncated");
    T v;
    std::memcpy(&v, bytes.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

} // namespace detail

inline size_t exq_payload_bytes(int64_t count, int bitwidth) {
    return static_cast<size_t>((count * (bitwidth + 1) + 7) / 8);
}

inline std::string serialize_quantized(const QuantizedTensor& q) {
    validate_params(q.params);
    validate_shape(q.shape, q.numel());
    std::string out;
    out.append(kExqMagic, 4);
    detail::write_le<uint16_t>(out, kExqVersion);
    out.push_back(static_cast<char>(q.params.bitwidth));
    out.push_back(0);
    detail::write_le<double>(out, q.params.base);
    detail::write_le<double>(out, q.params.alpha);
    detail::write_le<double>(out, q.params.beta);
    detail::write_le<uint32_t>(out, static_cast<uint32_t>(q.shape.size()));
    for (int64_t d : q.shape) detail::write_le<uint64_t>(out, static_cast<uint64_t>(d));

    detail::BitWriter bw;
    int width = q.params.bitwidth + 1;
    for (Code c : q.codes) bw.put(c, width);
    bw.flush();
    out.append(reinterpret_cast<const char*>(bw.bytes.data()), bw.bytes.size());
    return out;
}

inline void save_quantized(const QuantizedTensor& q, const std::string& path) {
    std::string bytes = serialize_quantized(q);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(errc::io_error, "cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(errc::io_error, "write failed: " + path);
}

inline bool is_exq_file(const std::string& bytes) {
    return bytes.size() >= 4 && std::memcmp(bytes.data(), kExqMagic, 4) == 0;
}

inline QuantizedTensor parse_quantized(const std::string& bytes, const std::string& name) {
    if (!is_exq_file(bytes)) fail(errc::malformed_header, "not an exq file: " + name);
    size_t off = 4;
    uint16_t version = detail::read_le<uint16_t>(bytes, off);
    if (version != kExqVersion)
        fail(errc::version_mismatch,
             "exq version " + std::to_string(version) + " unsupported: " + name);
    int bitwidth = detail::read_le<uint8_t>(bytes, off);
    detail::read_le<uint8_t>(bytes, off); // flags
    QuantizedTensor q;
    q.params.bitwidth = bitwidth;
    q.params.base = detail::read_le<double>(bytes, off);
    q.params.alpha = detail::read_le<double>(bytes, off);
    q.params.beta = detail::read_le<double>(bytes, off);
    validate_params(q.params);
    uint32_t ndim = detail::read_le<uint32_t>(bytes, off);
    if (ndim > 8) fail(errc::malformed_header, "exq ndim " + std::to_string(ndim) + " implausible");
    q.shape.resize(ndim);
    for (uint32_t i = 0; i < ndim; ++i)
        q.shape[i] = static_cast<int64_t>(detail::read_le<uint64_t>(bytes, off));
    int64_t count = numel_of(q.shape);
    if (count < 0) fail(errc::malformed_header, "exq shape overflow");

    size_t need = exq_payload_bytes(count, bitwidth);
    if (bytes.size() - off < need)
        fail(errc::truncated_payload, "exq payload short: have " +
                                          std::to_string(bytes.size() - off) + " bytes, need " +
                                          std::to_string(need));
    detail::BitReader br{reinterpret_cast<const uint8_t*>(bytes.data()) + off, need};
    q.codes.resize(static_cast<size_t>(count));
    int width = bitwidth + 1;
    for (int64_t i = 0; i < count; ++i) {
        Code c = static_cast<Code>(br.take(width));
        if (code_is_zero(c, bitwidth) && c != 0)
            fail(errc::malformed_header, "signed zero code at element " + std::to_string(i));
        q.codes[static_cast<size_t>(i)] = c;
    }
    return q;
}

inline QuantizedTensor load_quantized(const std::string& path) {
    return parse_quantized(detail::read_file_bytes(path), path);
}

/// Loads a float tensor from either supported container: NPY subset, or .exq
/// (dequantized on the fly).
inline Tensor load_tensor(const std::string& path) {
    std::string bytes = detail::read_file_bytes(path);
    if (is_npy_file(bytes)) return parse_npy(bytes, path);
    if (is_exq_file(bytes)) return dequantize_tensor(parse_quantized(bytes, path), path);
    fail(errc::malformed_header, "unrecognized tensor container: " + path);
}

inline void save_tensor(const Tensor& t, const std::string& path) { save_npy(t, path); }

} // namespace exq
