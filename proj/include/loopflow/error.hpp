#pragma once

#include <stdexcept>
#include <string>

namespace loopflow {

// Exit-code families used by the CLI.
enum class ErrorKind { usage, numerical, invariant };

/// Error carrying a stable, machine-readable code such as "far-from-manifold".
class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what, ErrorKind kind = ErrorKind::numerical)
        : std::runtime_error(code + ": " + what), code_(std::move(code)), kind_(kind) {}

    const std::string& code() const noexcept { return code_; }
    ErrorKind kind() const noexcept { return kind_; }

private:
    std::string code_;
    ErrorKind kind_;
};

inline void require(bool cond, const char* code, const std::string& what,
                    ErrorKind kind = ErrorKind::numerical) {
    if (!cond) throw Error(code, what, kind);
}

} // namespace loopflow
