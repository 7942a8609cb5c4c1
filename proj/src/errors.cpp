#include "sensitrim/errors.hpp"

namespace sensitrim {

std::string_view error_tag(ErrorCategory category) noexcept {
    switch (category) {
        case ErrorCategory::Io: return "E_IO";
        case ErrorCategory::Format: return "E_FORMAT";
        case ErrorCategory::Shape: return "E_SHAPE";
        case ErrorCategory::Input:
        case ErrorCategory::Usage: return "E_ARGS";
    }
    return "E_ARGS";
}

int exit_code(ErrorCategory category) noexcept {
    switch (category) {
        case ErrorCategory::Input:
        case ErrorCategory::Usage: return 2;
        case ErrorCategory::Io: return 3;
        case ErrorCategory::Format: return 4;
        case ErrorCategory::Shape: return 5;
    }
    return 1;
}

}  // namespace sensitrim
