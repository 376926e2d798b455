#ifndef LAYERPROBE_ERROR_HPP
#define LAYERPROBE_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace layerprobe {

/// Broad failure category. The CLI maps each category to a process exit code.
enum class ErrorKind {
    Io,          ///< file missing, unreadable, short, or unwritable
    Validation,  ///< malformed input, contract violation, bad arguments
    Degenerate,  ///< statistics undefined (zero target variance, singular scatter, ...)
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, std::string code, const std::string& message)
        : std::runtime_error(message), kind_(kind), code_(std::move(code)) {}

    [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }
    /// Short machine-readable identifier, e.g. "DegenerateTarget".
    [[nodiscard]] const std::string& code() const noexcept { return code_; }

private:
    ErrorKind kind_;
    std::string code_;
};

inline int exit_code(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::Io: return 1;
    case ErrorKind::Validation: return 2;
    case ErrorKind::Degenerate: return 3;
    }
    return 1;
}

inline std::string_view kind_name(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::Io: return "io";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::Degenerate: return "degenerate";
    }
    return "unknown";
}

[[noreturn]] inline void fail_io(const std::string& message) {
    throw Error(ErrorKind::Io, "IoError", message);
}

[[noreturn]] inline void fail_validation(const std::string& code, const std::string& message) {
    throw Error(ErrorKind::Validation, code, message);
}

[[noreturn]] inline void fail_degenerate(const std::string& code, const std::string& message) {
    throw Error(ErrorKind::Degenerate, code, message);
}

/// Re-throws `e` with a prefix on its message, keeping kind and code.
[[noreturn]] inline void rethrow_annotated(const Error& e, const std::string& prefix) {
    throw Error(e.kind(), e.code(), prefix + e.what());
}

} // namespace layerprobe

#endif
