#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sensitrim {

/// Error categories; the CLI maps each one to a distinct exit code.
enum class ErrorCategory {
    Input,   // bad argument values, out-of-range ids/labels (E_ARGS)
    Shape,   // dimension mismatch (E_SHAPE)
    Format,  // unparseable file content (E_FORMAT)
    Io,      // file cannot be opened/read/written (E_IO)
    Usage,   // API misuse, e.g. backward on a non-scalar (E_ARGS)
};

class Error : public std::runtime_error {
public:
    Error(ErrorCategory category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    ErrorCategory category() const noexcept { return category_; }

private:
    ErrorCategory category_;
};

struct InputError : Error {
    explicit InputError(const std::string& what) : Error(ErrorCategory::Input, what) {}
};
struct ShapeError : Error {
    explicit ShapeError(const std::string& what) : Error(ErrorCategory::Shape, what) {}
};
struct FormatError : Error {
    explicit FormatError(const std::string& what) : Error(ErrorCategory::Format, what) {}
};
struct IoError : Error {
    explicit IoError(const std::string& what) : Error(ErrorCategory::Io, what) {}
};
struct UsageError : Error {
    explicit UsageError(const std::string& what) : Error(ErrorCategory::Usage, what) {}
};

/// Machine-parseable tag used on the CLI error line.
std::string_view error_tag(ErrorCategory category) noexcept;
int exit_code(ErrorCategory category) noexcept;

}  // namespace sensitrim
