#include "neuropipe/errors.hpp"

namespace neuropipe {

const char* error_code_name(ErrorCode code) {
    switch (code) {
        case ErrorCode::IoError: return "IoError";
        case ErrorCode::MalformedHeader: return "MalformedHeader";
        case ErrorCode::UnsupportedDatatype: return "UnsupportedDatatype";
        case ErrorCode::TruncatedPayload: return "TruncatedPayload";
        case ErrorCode::MissingChannel: return "MissingChannel";
        case ErrorCode::AmbiguousPattern: return "AmbiguousPattern";
        case ErrorCode::EmptyRoot: return "EmptyRoot";
        case ErrorCode::BadHeader: return "BadHeader";
        case ErrorCode::MissingPath: return "MissingPath";
        case ErrorCode::ShapeMismatch: return "ShapeMismatch";
        case ErrorCode::ChecksumMismatch: return "ChecksumMismatch";
        case ErrorCode::BadMagic: return "BadMagic";
        case ErrorCode::VersionUnsupported: return "VersionUnsupported";
        case ErrorCode::EmptyCollection: return "EmptyCollection";
        case ErrorCode::MaskShapeMismatch: return "MaskShapeMismatch";
        case ErrorCode::EmptyMask: return "EmptyMask";
        case ErrorCode::BadPercentileRange: return "BadPercentileRange";
        case ErrorCode::NonBinaryMask: return "NonBinaryMask";
        case ErrorCode::CommandFailed: return "CommandFailed";
        case ErrorCode::OutputMissing: return "OutputMissing";
        case ErrorCode::CommandTimeout: return "CommandTimeout";
        case ErrorCode::PatchLargerThanVolume: return "PatchLargerThanVolume";
        case ErrorCode::SingleChannelDropout: return "SingleChannelDropout";
        case ErrorCode::InvalidArgument: return "InvalidArgument";
        case ErrorCode::InvalidConfig: return "InvalidConfig";
        case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
        case ErrorCode::PatchExceedsVolume: return "PatchExceedsVolume";
        case ErrorCode::BadOverlap: return "BadOverlap";
        case ErrorCode::NotInManifest: return "NotInManifest";
        case ErrorCode::NetworkError: return "NetworkError";
    }
    return "UnknownError";
}

}  // namespace neuropipe
