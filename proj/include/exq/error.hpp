#pragma once

#include <stdexcept>
#include <string>

namespace exq {

enum class errc {
    malformed_header = 1,
    unsupported_dtype,
    non_finite_value,
    version_mismatch,
    truncated_payload,
    degenerate_tensor,
    base_out_of_range,
    zero_reference,
    bitwidth_mismatch,
    shape_mismatch,
    non_positive_mean,
    missing_params,
    empty_split,
    io_error,
    evaluator_failure,
    invalid_config,
};

inline const char* errc_name(errc c) {
    switch (c) {
        case errc::malformed_header: return "MalformedHeader";
        case errc::unsupported_dtype: return "UnsupportedDtype";
        case errc::non_finite_value: return "NonFiniteValue";
        case errc::version_mismatch: return "VersionMismatch";
        case errc::truncated_payload: return "TruncatedPayload";
        case errc::degenerate_tensor: return "DegenerateTensor";
        case errc::base_out_of_range: return "BaseOutOfRange";
        case errc::zero_reference: return "ZeroReference";
        case errc::bitwidth_mismatch: return "BitwidthMismatch";
        case errc::shape_mismatch: return "ShapeMismatch";
        case errc::non_positive_mean: return "NonPositiveMean";
        case errc::missing_params: return "MissingParams";
        case errc::empty_split: return "EmptySplit";
        case errc::io_error: return "IoError";
        case errc::evaluator_failure: return "EvaluatorFailure";
        case errc::invalid_config: return "InvalidConfig";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    errc code() const noexcept { return code_; }

private:
    errc code_;
};

[[noreturn]] inline void fail(errc code, const std::string& what) { throw Error(code, what); }

} // namespace exq
