#pragma once

#include <stdexcept>
#include <string>

namespace neuropipe {

// Every structured failure in the engine carries one of these codes so
// callers can branch without parsing messages.
enum class ErrorCode {
    IoError,
    MalformedHeader,
    UnsupportedDatatype,
    TruncatedPayload,
    MissingChannel,
    AmbiguousPattern,
    EmptyRoot,
    BadHeader,
    MissingPath,
    ShapeMismatch,
    ChecksumMismatch,
    BadMagic,
    VersionUnsupported,
    EmptyCollection,
    MaskShapeMismatch,
    EmptyMask,
    BadPercentileRange,
    NonBinaryMask,
    CommandFailed,
    OutputMissing,
    CommandTimeout,
    PatchLargerThanVolume,
    SingleChannelDropout,
    InvalidArgument,
    InvalidConfig,
    NonFiniteLoss,
    PatchExceedsVolume,
    BadOverlap,
    NotInManifest,
    NetworkError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
          code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void raise(ErrorCode code, const std::string& message) {
    throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) {
        throw Error(code, message);
    }
}

}  // namespace neuropipe
