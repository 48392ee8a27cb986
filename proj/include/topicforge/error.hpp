#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace topicforge {

enum class ErrorCode {
    InvalidArgument,
    InvalidConfig,
    EmptyCorpus,
    EmptyDocument,
    ProviderUnavailable,
    DimensionMismatch,
    ZeroVector,
    EmptyCandidates,
    RankDeficient,
    TooFewPoints,
    KExceedsClusters,
    EmptyTopic,
    NoCandidates,
    InvalidTopicIndex,
    NeedAtLeastTwo,
    LastTopic,
    TooFewDocuments,
    EmptyKeyword,
    MalformedResponse,
    SameTopic,
    CorruptState,
    SchemaVersionMismatch,
    Conflict,
    NotFound,
};

inline constexpr std::string_view error_code_name(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::EmptyDocument: return "EmptyDocument";
    case ErrorCode::ProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::ZeroVector: return "ZeroVector";
    case ErrorCode::EmptyCandidates: return "EmptyCandidates";
    case ErrorCode::RankDeficient: return "RankDeficient";
    case ErrorCode::TooFewPoints: return "TooFewPoints";
    case ErrorCode::KExceedsClusters: return "KExceedsClusters";
    case ErrorCode::EmptyTopic: return "EmptyTopic";
    case ErrorCode::NoCandidates: return "NoCandidates";
    case ErrorCode::InvalidTopicIndex: return "InvalidTopicIndex";
    case ErrorCode::NeedAtLeastTwo: return "NeedAtLeastTwo";
    case ErrorCode::LastTopic: return "LastTopic";
    case ErrorCode::TooFewDocuments: return "TooFewDocuments";
    case ErrorCode::EmptyKeyword: return "EmptyKeyword";
    case ErrorCode::MalformedResponse: return "MalformedResponse";
    case ErrorCode::SameTopic: return "SameTopic";
    case ErrorCode::CorruptState: return "CorruptState";
    case ErrorCode::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorCode::Conflict: return "Conflict";
    case ErrorCode::NotFound: return "NotFound";
    }
    return "Unknown";
}

/// Every failure the library reports carries a machine-readable code; the
/// message is for humans.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& message)
        : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

    ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

/// Pipeline failures re-thrown with the stage that produced them.
class StageError : public Error {
public:
    StageError(std::string stage, const Error& cause)
        : Error(cause.code(), "[" + stage + "] " + cause.what()), stage_(std::move(stage)) {}

    const std::string& stage() const noexcept { return stage_; }

private:
    std::string stage_;
};

}  // namespace topicforge
