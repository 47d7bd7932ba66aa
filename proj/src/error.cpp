#include "ocd/error.hpp"

namespace ocd {

const char* to_string(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::DuplicateNode: return "DuplicateNode";
    case ErrorCode::MissingParent: return "MissingParent";
    case ErrorCode::CycleDetected: return "CycleDetected";
    case ErrorCode::MultipleRoots: return "MultipleRoots";
    case ErrorCode::EmptyOntology: return "EmptyOntology";
    case ErrorCode::UnknownCode: return "UnknownCode";
    case ErrorCode::EmptySet: return "EmptySet";
    case ErrorCode::OutOfRangeSimilarity: return "OutOfRangeSimilarity";
    case ErrorCode::BudgetExceeded: return "BudgetExceeded";
    case ErrorCode::CacheCorrupt: return "CacheCorrupt";
    case ErrorCode::ZeroBins: return "ZeroBins";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFiniteInput: return "NonFiniteInput";
    case ErrorCode::NonScalarLoss: return "NonScalarLoss";
    case ErrorCode::NormViolation: return "NormViolation";
    case ErrorCode::AsymmetricWeights: return "AsymmetricWeights";
    case ErrorCode::LabelOutOfRange: return "LabelOutOfRange";
    case ErrorCode::TaskMismatch: return "TaskMismatch";
    case ErrorCode::SingleClass: return "SingleClass";
    case ErrorCode::NoPositives: return "NoPositives";
    case ErrorCode::MissingClass: return "MissingClass";
    case ErrorCode::InsufficientLabels: return "InsufficientLabels";
    case ErrorCode::KTooLarge: return "KTooLarge";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::OffsetOutOfRange: return "OffsetOutOfRange";
    case ErrorCode::UnknownChannel: return "UnknownChannel";
    case ErrorCode::FormatError: return "FormatError";
    case ErrorCode::EmptyCohort: return "EmptyCohort";
    case ErrorCode::DegenerateConfig: return "DegenerateConfig";
    case ErrorCode::InvalidFractions: return "InvalidFractions";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::MissingInput: return "MissingInput";
    case ErrorCode::NumericFailure: return "NumericFailure";
    }
    return "Unknown";
}

} // namespace ocd
