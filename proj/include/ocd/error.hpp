#pragma once

#include <stdexcept>
#include <string>

namespace ocd {

enum class ErrorCode {
    // ontology
    DuplicateNode,
    MissingParent,
    CycleDetected,
    MultipleRoots,
    EmptyOntology,
    UnknownCode,
    // patient similarity and weight cache
    EmptySet,
    OutOfRangeSimilarity,
    BudgetExceeded,
    CacheCorrupt,
    ZeroBins,
    // numerics
    ShapeMismatch,
    NonFiniteInput,
    NonScalarLoss,
    // training objectives
    NormViolation,
    AsymmetricWeights,
    LabelOutOfRange,
    TaskMismatch,
    // metrics
    SingleClass,
    NoPositives,
    MissingClass,
    InsufficientLabels,
    KTooLarge,
    EmptySample,
    // data io
    OffsetOutOfRange,
    UnknownChannel,
    FormatError,
    EmptyCohort,
    DegenerateConfig,
    InvalidFractions,
    // cli
    ConfigError,
    MissingInput,
    NumericFailure,
};

const char* to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

} // namespace ocd
