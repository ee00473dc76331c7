#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace csf {

/// Every failure the library reports is one of these kinds.
enum class ErrorKind {
    // flowgraph
    UnknownStation,
    CycleDetected,
    MultipleDownstream,
    AllFlat,
    InconsistentHierarchy,
    // numcore
    ShapeMismatch,
    NonFinite,
    NotScalarLoss,
    // basin model
    WindowTooShort,
    LambdaOutOfRange,
    EmptyTargets,
    // pipeline
    MissingData,
    DegenerateSeries,
    TooShort,
    HistoryTooShort,
    ConfigInvalid,
    // metrics
    ConstantObserved,
    LengthMismatch,
    ZeroMeanObserved,
    ConstantSeries,
    ZeroVolume,
    KTooLarge,
    IndexMismatch,
    // io
    ParseError,
    IoError,
    Internal,
};

std::string_view to_string(ErrorKind kind) noexcept;

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

}  // namespace csf
