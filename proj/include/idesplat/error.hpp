#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace idesplat {

enum class ErrorCode {
    InvalidArgument,
    ShapeMismatch,
    NonFinite,
    // file formats
    Io,
    BadMagic,
    UnsupportedVersion,
    Truncated,
    TooManyDims,
    MalformedHeader,
    UnsupportedChannels,
    // geometry
    InvalidIntrinsics,
    NonOrthonormal,
    NonPositiveNear,
    EmptyRange,
    MissingBaseDepth,
    NonPositiveDepth,
    UpsampleOnly,
    // epipolar / boosting
    ChannelMismatch,
    EmptySources,
    FewerThanTwoViews,
    // gfm
    Indivisible,
    IndexOutOfWindow,
    ZeroRetain,
    RetainExceedsSupport,
    ScheduleExceedsWindow,
    InvalidSchedule,
    // splat
    TooFewRawChannels,
    // scenes / cli
    GeometryOutOfRange,
    MissingPoses,
    MissingImage,
    MissingDepth,
    UnknownView,
    NoTrials,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::Io: return "Io";
    case ErrorCode::BadMagic: return "BadMagic";
    case ErrorCode::UnsupportedVersion: return "UnsupportedVersion";
    case ErrorCode::Truncated: return "Truncated";
    case ErrorCode::TooManyDims: return "TooManyDims";
    case ErrorCode::MalformedHeader: return "MalformedHeader";
    case ErrorCode::UnsupportedChannels: return "UnsupportedChannels";
    case ErrorCode::InvalidIntrinsics: return "InvalidIntrinsics";
    case ErrorCode::NonOrthonormal: return "NonOrthonormal";
    case ErrorCode::NonPositiveNear: return "NonPositiveNear";
    case ErrorCode::EmptyRange: return "EmptyRange";
    case ErrorCode::MissingBaseDepth: return "MissingBaseDepth";
    case ErrorCode::NonPositiveDepth: return "NonPositiveDepth";
    case ErrorCode::UpsampleOnly: return "UpsampleOnly";
    case ErrorCode::ChannelMismatch: return "ChannelMismatch";
    case ErrorCode::EmptySources: return "EmptySources";
    case ErrorCode::FewerThanTwoViews: return "FewerThanTwoViews";
    case ErrorCode::Indivisible: return "Indivisible";
    case ErrorCode::IndexOutOfWindow: return "IndexOutOfWindow";
    case ErrorCode::ZeroRetain: return "ZeroRetain";
    case ErrorCode::RetainExceedsSupport: return "RetainExceedsSupport";
    case ErrorCode::ScheduleExceedsWindow: return "ScheduleExceedsWindow";
    case ErrorCode::InvalidSchedule: return "InvalidSchedule";
    case ErrorCode::TooFewRawChannels: return "TooFewRawChannels";
    case ErrorCode::GeometryOutOfRange: return "GeometryOutOfRange";
    case ErrorCode::MissingPoses: return "MissingPoses";
    case ErrorCode::MissingImage: return "MissingImage";
    case ErrorCode::MissingDepth: return "MissingDepth";
    case ErrorCode::UnknownView: return "UnknownView";
    case ErrorCode::NoTrials: return "NoTrials";
    }
    return "Unknown";
}

/// Exception carrying a stable error code so callers and tests can branch on the
/// failure kind instead of parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, ErrorCode code, const std::string& message) {
    if (!condition) {
        fail(code, message);
    }
}

} // namespace idesplat
