#include "soda/error.hpp"

namespace soda {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::invalid_config: return "invalid_config";
        case ErrorCode::range: return "range";
        case ErrorCode::shape: return "shape";
        case ErrorCode::invalid_argument: return "invalid_argument";
        case ErrorCode::absent_cell: return "absent_cell";
        case ErrorCode::schedule: return "schedule";
        case ErrorCode::infeasible: return "infeasible";
        case ErrorCode::constrained_infeasible: return "constrained_infeasible";
        case ErrorCode::resource_limit: return "resource_limit";
        case ErrorCode::numeric_overflow: return "numeric_overflow";
        case ErrorCode::validation: return "validation";
        case ErrorCode::version_mismatch: return "version_mismatch";
        case ErrorCode::corruption: return "corruption";
        case ErrorCode::missing_data: return "missing_data";
        case ErrorCode::saturation: return "saturation";
        case ErrorCode::io: return "io";
    }
    return "unknown";
}

const char* error_category_name(ErrorCategory category) {
    switch (category) {
        case ErrorCategory::config: return "config";
        case ErrorCategory::infeasible: return "infeasible";
        case ErrorCategory::corruption: return "corruption";
        case ErrorCategory::numeric: return "numeric";
        case ErrorCategory::resource: return "resource";
    }
    return "unknown";
}

}  // namespace soda
