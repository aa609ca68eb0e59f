#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ask {

enum class ErrorCode {
    ZeroNorm,
    DimensionMismatch,
    EmptyBatch,
    NonPositiveTemperature,
    NonFiniteInput,
    SupportViolation,
    NonFiniteEvaluation,
    InvalidStep,
    EmptyCorpus,
    EncoderDimensionMismatch,
    TooManyClusters,
    KTooLarge,
    NonPositivePeriod,
    IndexOutOfRange,
    RhoOutOfRange,
    LengthMismatch,
    NonPositiveEpsilon,
    BetaOutOfRange,
    NonPositiveTau,
    ShapeMismatch,
    NonPositivePotential,
    EmptyOutOfBatchSet,
    EmptyKB,
    IndexMisalignment,
    InvalidCounts,
    KExceedsPoolSize,
    InvalidArgument,
    IOError,
    ConfigError,
};

std::string_view to_string(ErrorCode code);

// Single exception type for the library; callers switch on code().
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

}  // namespace ask
