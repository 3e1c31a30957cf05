#ifndef MODESWITCH_ERROR_HPP
#define MODESWITCH_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

/**
 * @file error.hpp
 *
 * @brief Exception type shared by every module.
 */

namespace modeswitch {

/**
 * Failure categories. Each maps to one documented error of an operation.
 */
enum class ErrorKind {
    InvalidArgument,
    StepOnTerminalState,
    NonDifferentiablePoint,
    InvalidInitialState,
    SchemaMismatch,
    ShapeMismatch,
    NonFiniteParameter,
    TrainingDiverged,
    DegenerateScale,
    InsufficientData,
    NonFiniteLoss,
    EmptyModel,
    NonFiniteState,
    AllRestartsFailed,
    NoCandidates,
    DimensionMismatch,
    IoFailure,
    NotFound,
    UsageError
};

inline std::string_view to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::StepOnTerminalState: return "StepOnTerminalState";
    case ErrorKind::NonDifferentiablePoint: return "NonDifferentiablePoint";
    case ErrorKind::InvalidInitialState: return "InvalidInitialState";
    case ErrorKind::SchemaMismatch: return "SchemaMismatch";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::NonFiniteParameter: return "NonFiniteParameter";
    case ErrorKind::TrainingDiverged: return "TrainingDiverged";
    case ErrorKind::DegenerateScale: return "DegenerateScale";
    case ErrorKind::InsufficientData: return "InsufficientData";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::EmptyModel: return "EmptyModel";
    case ErrorKind::NonFiniteState: return "NonFiniteState";
    case ErrorKind::AllRestartsFailed: return "AllRestartsFailed";
    case ErrorKind::NoCandidates: return "NoCandidates";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::IoFailure: return "IoFailure";
    case ErrorKind::NotFound: return "NotFound";
    case ErrorKind::UsageError: return "UsageError";
    }
    return "Unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw Error(kind, message);
}

} // namespace modeswitch

#endif
