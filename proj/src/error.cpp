#include "fragdiff/error.hpp"

namespace fragdiff {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::UnknownSymbol: return "UnknownSymbol";
        case ErrorKind::MaskPresent: return "MaskPresent";
        case ErrorKind::InvalidSequence: return "InvalidSequence";
        case ErrorKind::NoAttachmentSite: return "NoAttachmentSite";
        case ErrorKind::SingleFragmentUnremovable: return "SingleFragmentUnremovable";
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::ScheduleOrder: return "ScheduleOrder";
        case ErrorKind::DegenerateTime: return "DegenerateTime";
        case ErrorKind::SequenceTooLong: return "SequenceTooLong";
        case ErrorKind::ShapeMismatch: return "ShapeMismatch";
        case ErrorKind::UnknownResidue: return "UnknownResidue";
        case ErrorKind::WidthMismatch: return "WidthMismatch";
        case ErrorKind::EmptyPocket: return "EmptyPocket";
        case ErrorKind::DimensionMismatch: return "DimensionMismatch";
        case ErrorKind::InvalidMolecule: return "InvalidMolecule";
        case ErrorKind::DegenerateProperty: return "DegenerateProperty";
        case ErrorKind::AllInvalid: return "AllInvalid";
        case ErrorKind::TooFewValid: return "TooFewValid";
        case ErrorKind::NoSupport: return "NoSupport";
        case ErrorKind::EmptyFragmentPool: return "EmptyFragmentPool";
        case ErrorKind::TooFew: return "TooFew";
        case ErrorKind::ConfigError: return "ConfigError";
        case ErrorKind::CheckpointMismatch: return "CheckpointMismatch";
        case ErrorKind::IoError: return "IoError";
        case ErrorKind::OracleError: return "OracleError";
    }
    return "Unknown";
}

}  // namespace fragdiff
