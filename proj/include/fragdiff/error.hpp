#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace fragdiff {

// Every recoverable failure in the library is a fragdiff::Error carrying a
// stable kind tag, so callers (and tests) can branch on the kind without
// parsing messages.
enum class ErrorKind {
    UnknownSymbol,
    MaskPresent,
    InvalidSequence,
    NoAttachmentSite,
    SingleFragmentUnremovable,
    InvalidArgument,
    ScheduleOrder,
    DegenerateTime,
    SequenceTooLong,
    ShapeMismatch,
    UnknownResidue,
    WidthMismatch,
    EmptyPocket,
    DimensionMismatch,
    InvalidMolecule,
    DegenerateProperty,
    AllInvalid,
    TooFewValid,
    NoSupport,
    EmptyFragmentPool,
    TooFew,
    ConfigError,
    CheckpointMismatch,
    IoError,
    OracleError,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

// Error that points at a position inside a sequence or string.
class PositionError : public Error {
public:
    PositionError(ErrorKind kind, std::size_t position, const std::string& message)
        : Error(kind, message + " at position " + std::to_string(position)), position_(position) {}

    std::size_t position() const noexcept { return position_; }

private:
    std::size_t position_;
};

}  // namespace fragdiff
