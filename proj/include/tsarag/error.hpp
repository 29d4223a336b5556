#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tsarag {

enum class ErrorKind {
    InvalidArgument,
    ShapeMismatch,
    // core data
    RangeTooShort,
    DegenerateSeries,
    MissingStats,
    InvalidRatio,
    // prompt pool / predictor
    ZeroVector,
    KOutOfRange,
    NonFiniteGradient,
    EmptyWindowSet,
    NonFiniteLoss,
    WrongHeadKind,
    // remote model boundary
    Timeout,
    BadStatus,
    MalformedResponse,
    // agents
    AmbiguousRequest,
    UnknownTask,
    NoMissingValues,
    // anomaly
    EmptyValidation,
    NoFaults,
    InvalidWindow,
    // missingness
    InvalidRate,
    BlockTooLong,
    // clustering
    InvalidK,
    EmptyCluster,
    SingleCluster,
    RangeTooSmall,
    // metrics
    AllTargetsNearZero,
    NonBinary,
    // io
    ParseError,
    RaggedRows,
    IoError,
    InvalidSpec,
    InvalidConfig,
};

constexpr std::string_view to_string(ErrorKind kind) noexcept {
    switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::ShapeMismatch: return "ShapeMismatch";
    case ErrorKind::RangeTooShort: return "RangeTooShort";
    case ErrorKind::DegenerateSeries: return "DegenerateSeries";
    case ErrorKind::MissingStats: return "MissingStats";
    case ErrorKind::InvalidRatio: return "InvalidRatio";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::KOutOfRange: return "KOutOfRange";
    case ErrorKind::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorKind::EmptyWindowSet: return "EmptyWindowSet";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::WrongHeadKind: return "WrongHeadKind";
    case ErrorKind::Timeout: return "Timeout";
    case ErrorKind::BadStatus: return "BadStatus";
    case ErrorKind::MalformedResponse: return "MalformedResponse";
    case ErrorKind::AmbiguousRequest: return "AmbiguousRequest";
    case ErrorKind::UnknownTask: return "UnknownTask";
    case ErrorKind::NoMissingValues: return "NoMissingValues";
    case ErrorKind::EmptyValidation: return "EmptyValidation";
    case ErrorKind::NoFaults: return "NoFaults";
    case ErrorKind::InvalidWindow: return "InvalidWindow";
    case ErrorKind::InvalidRate: return "InvalidRate";
    case ErrorKind::BlockTooLong: return "BlockTooLong";
    case ErrorKind::InvalidK: return "InvalidK";
    case ErrorKind::EmptyCluster: return "EmptyCluster";
    case ErrorKind::SingleCluster: return "SingleCluster";
    case ErrorKind::RangeTooSmall: return "RangeTooSmall";
    case ErrorKind::AllTargetsNearZero: return "AllTargetsNearZero";
    case ErrorKind::NonBinary: return "NonBinary";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::RaggedRows: return "RaggedRows";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::InvalidSpec: return "InvalidSpec";
    case ErrorKind::InvalidConfig: return "InvalidConfig";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the ErrorKind tags so
/// callers (and the CLI exit-code mapping) can dispatch without string matching.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

/// CSV parse failure with a 1-based line and column.
class ParseError : public Error {
public:
    ParseError(ErrorKind kind, std::size_t line, std::size_t column, const std::string& message)
        : Error(kind, "line " + std::to_string(line) + ", column " + std::to_string(column) + ": " + message),
          line_(line),
          column_(column) {}

    std::size_t line() const noexcept { return line_; }
    std::size_t column() const noexcept { return column_; }

private:
    std::size_t line_;
    std::size_t column_;
};

namespace detail {

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) { throw Error(kind, message); }

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) {
        throw Error(kind, message);
    }
}

}  // namespace detail

}  // namespace tsarag
