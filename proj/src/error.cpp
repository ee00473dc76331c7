#include "csf/error.hpp"

namespace csf {

std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::UnknownStation: return "UnknownStation";
        case ErrorKind::CycleDetected: return "CycleDetected";
        case ErrorKind::MultipleDownstream: return "MultipleDownstream";
        case ErrorKind::AllFlat: return "AllFlat";
        case ErrorKind::InconsistentHierarchy: return "InconsistentHierarchy";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::NonFinite: return "NonFinite";
        case ErrorKind::NotScalarLoss: return "NotScalarLoss";
        case ErrorKind::WindowTooShort: return "WindowTooShort";
        case ErrorKind::LambdaOutOfRange: return "LambdaOutOfRange";
        case ErrorKind::EmptyTargets: return "EmptyTargets";
        case ErrorKind::MissingData: return "MissingData";
        case ErrorKind::DegenerateSeries: return "DegenerateSeries";
        case ErrorKind::TooShort: return "TooShort";
        case ErrorKind::HistoryTooShort: return "HistoryTooShort";
        case ErrorKind::ConfigInvalid: return "ConfigInvalid";
        case ErrorKind::ConstantObserved: return "ConstantObserved";
        case ErrorKind::LengthMismatch: return "LengthMismatch";
        case ErrorKind::ZeroMeanObserved: return "ZeroMeanObserved";
        case ErrorKind::ConstantSeries: return "ConstantSeries";
        case ErrorKind::ZeroVolume: return "ZeroVolume";
        case ErrorKind::KTooLarge: return "KTooLarge";
        case ErrorKind::IndexMismatch: return "IndexMismatch";
        case ErrorKind::ParseError: return "ParseError";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::Internal: return "Internal";
    }
    return "Unknown";
}

}  // namespace csf
