#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tvmerge {

// Error taxonomy. The numeric class drives the CLI exit code:
// config errors -> 2, compatibility -> 3, numerical -> 4, I/O -> 5.
enum class ErrorKind {
    // config / argument validation
    ConfigError,
    InvalidArgument,
    InvalidFractions,
    LengthMismatch,
    RankOutOfRange,
    // compatibility between checkpoints
    ShapeMismatch,
    MissingTensor,
    DtypeMismatch,
    // numerical
    EmptyMatrix,
    NonFiniteInput,
    ConvergenceFailure,
    RankDeficient,
    TooManyColumns,
    AllZeroSpectrum,
    DegenerateLayer,
    // container I/O
    MalformedHeader,
    UnsupportedDtype,
    TruncatedFile,
    IoFailure,
};

const char* to_string(ErrorKind kind);

// 2 = config, 3 = compat, 4 = numerical, 5 = I/O
int exit_class(ErrorKind kind);

class MergeError : public std::runtime_error {
public:
    MergeError(ErrorKind kind, std::string message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    // Re-throw helper that prefixes layer/tensor context.
    [[noreturn]] static void rethrow_with_context(const MergeError& e, std::string_view context) {
        throw MergeError(e.kind(), std::string(context) + ": " + e.what());
    }

private:
    ErrorKind kind_;
};

}  // namespace tvmerge
