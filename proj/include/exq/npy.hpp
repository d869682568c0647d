#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "exq/error.hpp"
#include "exq/tensor.hpp"

namespace exq {

// Deliberately small NPY subset: little-endian float32, C order, 1-D/2-D/4-D,
// format versions 1.0 and 2.0. Anything else is rejected loudly.

namespace detail {

inline constexpr char kNpyMagic[6] = {'\x93', 'N', 'U', 'M', 'P', 'Y'};

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(errc::io_error, "cannot open " + path);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

// Pulls the value of a python-dict key out of the header text. Tolerates both
// quote styles and arbitrary spacing; this is not a general parser.
inline std::string dict_value(const std::string& header, const std::string& key) {
    size_t k = header.find("'" + key + "'");
    if (k == std::string::npos) k = header.find("\"" + key + "\"");
    if (k == std::string::npos)
        fail(errc::malformed_header, "npy header missing key " + key);
    size_t colon = header.find(':', k);
    if (colon == std::string::npos) fail(errc::malformed_header, "npy header truncated after " + key);
    size_t v = header.find_first_not_of(" \t", colon + 1);
    if (v == std::string::npos) fail(errc::malformed_header, "npy header truncated after " + key);
    size_t end;
    if (header[v] == '(') {
        end = header.find(')', v);
        if (end == std::string::npos) fail(errc::malformed_header, "unterminated shape tuple");
        ++end;
    } else if (header[v] == '\'' || header[v] == '"') {
        end = header.find(header[v], v + 1);
        if (end == std::string::npos) fail(errc::malformed_header, "unterminated string value");
        ++end;
    } else {
        end = header.find_first_of(",}", v);
        if (end == std::string::npos) fail(errc::malformed_header, "npy header truncated");
    }
    return header.substr(v, end - v);
}

inline std::vector<int64_t> parse_shape_tuple(const std::string& tup) {
    std::vector<int64_t> dims;
    std::string digits;
    for (char c : tup) {
        if (c >= '0' && c <= '9') {
            digits += c;
        } else if (!digits.empty()) {
            dims.push_back(std::stoll(digits));
            digits.clear();
        }
    }
    if (!digits.empty()) dims.push_back(std::stoll(digits));
    return dims;
}

} // namespace detail

inline bool is_npy_file(const std::string& bytes) {
    return bytes.size() >= 6 && std::memcmp(bytes.data(), detail::kNpyMagic, 6) == 0;
}

inline Tensor parse_npy(const std::string& bytes, const std::string& name) {
    using namespace detail;
    if (!is_npy_file(bytes)) fail(errc::malformed_header, "not an npy file: " + name);
    if (bytes.size() < 10) fail(errc::malformed_header, "npy preamble truncated: " + name);
    uint8_t major = static_cast<uint8_t>(bytes[6]);
    uint8_t minor = static_cast<uint8_t>(bytes[7]);
    if (!((major == 1 || major == 2) && minor == 0))
        fail(errc::version_mismatch, "npy format version " + std::to_string(major) + "." +
                                         std::to_string(minor) + " unsupported");
    size_t header_len, header_off;
    if (major == 1) {
        header_len = static_cast<uint8_t>(bytes[8]) | (static_cast<uint8_t>(bytes[9]) << 8);
        header_off = 10;
    } else {
        if (bytes.size() < 12) fail(errc::malformed_header, "npy preamble truncated: " + name);
        header_len = static_cast<uint8_t>(bytes[8]) | (static_cast<uint8_t>(bytes[9]) << 8) |
                     (static_cast<uint8_t>(bytes[10]) << 16) |
                     (static_cast<size_t>(static_cast<uint8_t>(bytes[11])) << 24);
        header_off = 12;
    }
    if (bytes.size() < header_off + header_len)
        fail(errc::malformed_header, "npy header truncated: " + name);
    std::string header = bytes.substr(header_off, header_len);

    std::string descr = dict_value(header, "descr");
    if (descr != "'<f4'" && descr != "\"<f4\"")
        fail(errc::unsupported_dtype, "dtype " + descr + " unsupported (only '<f4'): " + name);
    std::string order = dict_value(header, "fortran_order");
    if (order.find("True") != std::string::npos)
        fail(errc::unsupported_dtype, "fortran_order=True unsupported: " + name);
    if (order.find("False") == std::string::npos)
        fail(errc::malformed_header, "unparseable fortran_order: " + name);

    std::vector<int64_t> shape = parse_shape_tuple(dict_value(header, "shape"));
    size_t ndim = shape.size();
    if (ndim != 1 && ndim != 2 && ndim != 4)
        fail(errc::unsupported_dtype,
             std::to_string(ndim) + "-D arrays unsupported (only 1-D/2-D/4-D): " + name);

    int64_t count = numel_of(shape);
    size_t payload_off = header_off + header_len;
    size_t need = static_cast<size_t>(count) * 4;
    if (bytes.size() - payload_off < need)
        fail(errc::truncated_payload, "npy payload short: " + name);

    Tensor t;
    t.name = name;
    t.shape = std::move(shape);
    t.data.resize(static_cast<size_t>(count));
    std::memcpy(t.data.data(), bytes.data() + payload_off, need);
    validate_finite(t);
    return t;
}

inline void save_npy(const Tensor& t, const std::string& path) {
    size_t ndim = t.shape.size();
    if (ndim != 1 && ndim != 2 && ndim != 4)
        fail(errc::unsupported_dtype, "save_npy supports 1-D/2-D/4-D only");
    validate_shape(t.shape, static_cast<int64_t>(t.data.size()));

    std::string shape_str = "(";
    for (size_t i = 0; i < ndim; ++i) {
        shape_str += std::to_string(t.shape[i]);
        if (ndim == 1 || i + 1 < ndim) shape_str += ",";
        if (i + 1 < ndim) shape_str += " ";
    }
    shape_str += ")";
    std::string header =
        "{'descr': '<f4', 'fortran_order': False, 'shape': " + shape_str + ", }";
    size_t unpadded = 10 + header.size() + 1;
    size_t pad = (64 - unpadded % 64) % 64;
    header += std::string(pad, ' ');
    header += '\n';

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(errc::io_error, "cannot write " + path);
    out.write(detail::kNpyMagic, 6);
    out.put('\x01');
    out.put('\x00');
    uint16_t hlen = static_cast<uint16_t>(header.size());
    out.put(static_cast<char>(hlen & 0xff));
    out.put(static_cast<char>(hlen >> 8));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * 4));
    if (!out) fail(errc::io_error, "write failed: " + path);
}

} // namespace exq
