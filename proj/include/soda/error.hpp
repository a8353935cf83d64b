#pragma once

#include <stdexcept>
#include <string>

namespace soda {

// Fine-grained error codes; the coarse category drives CLI exit codes.
enum class ErrorCode {
    invalid_config,
    range,
    shape,
    invalid_argument,
    absent_cell,
    schedule,
    infeasible,
    constrained_infeasible,
    resource_limit,
    numeric_overflow,
    validation,
    version_mismatch,
    corruption,
    missing_data,
    saturation,
    io,
};

enum class ErrorCategory {
    config,      // bad parameters, absent cells, validation-style misuse
    infeasible,  // no schedule satisfies the requested budget
    corruption,  // file integrity, version, fingerprint problems
    numeric,     // non-finite values
    resource,    // enumeration / memory limits
};

constexpr ErrorCategory category_of(ErrorCode code) {
    switch (code) {
        case ErrorCode::infeasible:
        case ErrorCode::constrained_infeasible:
            return ErrorCategory::infeasible;
        case ErrorCode::corruption:
        case ErrorCode::version_mismatch:
        case ErrorCode::io:
            return ErrorCategory::corruption;
        case ErrorCode::numeric_overflow:
            return ErrorCategory::numeric;
        case ErrorCode::resource_limit:
            return ErrorCategory::resource;
        default:
            return ErrorCategory::config;
    }
}

const char* error_code_name(ErrorCode code);
const char* error_category_name(ErrorCategory category);

class SodaError : public std::runtime_error {
public:
    SodaError(ErrorCode code, const std::string& message)
        : std::runtime_error(message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }
    ErrorCategory category() const noexcept { return category_of(code_); }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw SodaError(code, message);
}

}  // namespace soda
