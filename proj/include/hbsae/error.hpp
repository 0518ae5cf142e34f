#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hbsae {

enum class ErrorCode {
    EmptyData,
    RankDeficientDesign,
    TooFewAreas,
    TooFewUnits,
    AreaMismatch,
    AreaScaleMismatch,
    NonFiniteValue,
    NonPositiveValue,
    NonPositiveTruth,
    InvalidParameter,
    InvalidConfig,
    SingularPrecision,
    DegenerateState,
    SliceFailure,
    VariantMismatch,
    InvariantViolation,
    ZeroPosteriorVariance,
    SampleTooLarge,
    ChainFailure,
    StudyFailure,
    IoError,
    ParseError,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::EmptyData: return "EmptyData";
    case ErrorCode::RankDeficientDesign: return "RankDeficientDesign";
    case ErrorCode::TooFewAreas: return "TooFewAreas";
    case ErrorCode::TooFewUnits: return "TooFewUnits";
    case ErrorCode::AreaMismatch: return "AreaMismatch";
    case ErrorCode::AreaScaleMismatch: return "AreaScaleMismatch";
    case ErrorCode::NonFiniteValue: return "NonFiniteValue";
    case ErrorCode::NonPositiveValue: return "NonPositiveValue";
    case ErrorCode::NonPositiveTruth: return "NonPositiveTruth";
    case ErrorCode::InvalidParameter: return "InvalidParameter";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::SingularPrecision: return "SingularPrecision";
    case ErrorCode::DegenerateState: return "DegenerateState";
    case ErrorCode::SliceFailure: return "SliceFailure";
    case ErrorCode::VariantMismatch: return "VariantMismatch";
    case ErrorCode::InvariantViolation: return "InvariantViolation";
    case ErrorCode::ZeroPosteriorVariance: return "ZeroPosteriorVariance";
    case ErrorCode::SampleTooLarge: return "SampleTooLarge";
    case ErrorCode::ChainFailure: return "ChainFailure";
    case ErrorCode::StudyFailure: return "StudyFailure";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::ParseError: return "ParseError";
    }
    return "Unknown";
}

/// Sampler-side failures map to CLI exit code 3; everything else is an input problem.
constexpr bool is_sampler_failure(ErrorCode code) {
    switch (code) {
    case ErrorCode::SingularPrecision:
    case ErrorCode::DegenerateState:
    case ErrorCode::SliceFailure:
    case ErrorCode::InvariantViolation:
    case ErrorCode::ChainFailure:
    case ErrorCode::StudyFailure:
        return true;
    default:
        return false;
    }
}

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code), detail_(message) {}

    ErrorCode code() const noexcept { return code_; }
    /// Message without the code prefix.
    const std::string& detail() const noexcept { return detail_; }

private:
    ErrorCode code_;
    std::string detail_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

} // namespace hbsae
