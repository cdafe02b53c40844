#include "tvmerge/errors.hpp"

namespace tvmerge {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::InvalidFractions: return "InvalidFractions";
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::RankOutOfRange: return "RankOutOfRange";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::MissingTensor: return "MissingTensor";
        case ErrorKind::DtypeMismatch: return "DtypeMismatch";
        case ErrorKind::EmptyMatrix: return "EmptyMatrix";
        case ErrorKind::NonFiniteInput: return "NonFiniteInput";
        case ErrorKind::ConvergenceFailure: return "ConvergenceFailure";
        case ErrorKind::RankDeficient: return "RankDeficient";
        case ErrorKind::TooManyColumns: return "TooManyColumns";
        case ErrorKind::AllZeroSpectrum: return "AllZeroSpectrum";
        case ErrorKind::DegenerateLayer: return "DegenerateLayer";
        case ErrorKind::MalformedHeader: return "MalformedHeader";
        case ErrorKind::UnsupportedDtype: return "UnsupportedDtype";
        case ErrorKind::TruncatedFile: return "TruncatedFile";
        case ErrorKind::IoFailure: return "IoFailure";
    }
    return "UnknownError";
}

int exit_class(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::ConfigError:
        case ErrorKind::InvalidArgument:
        case ErrorKind::InvalidFractions:
        case ErrorKind::LengthMismatch:
        case ErrorKind::RankOutOfRange:
            return 2;
        case ErrorKind::ShapeMismatch:
        case ErrorKind::MissingTensor:
        case ErrorKind::DtypeMismatch:
            return 3;
        case ErrorKind::EmptyMatrix:
        case ErrorKind::NonFiniteInput:
        case ErrorKind::ConvergenceFailure:
        case ErrorKind::RankDeficient:
        case ErrorKind::TooManyColumns:
        case ErrorKind::AllZeroSpectrum:
        case ErrorKind::DegenerateLayer:
            return 4;
        case ErrorKind::MalformedHeader:
        case ErrorKind::UnsupportedDtype:
        case ErrorKind::TruncatedFile:
        case ErrorKind::IoFailure:
            return 5;
    }
    return 1;
}

}  // namespace tvmerge
