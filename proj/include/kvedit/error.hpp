#pragma once

#include <stdexcept>
#include <string>

namespace kvedit {

enum class ErrorKind {
    Config,
    Io,
    Parse,
    Format,
    Version,
    UnknownToken,
    SequenceLength,
    Shape,
    Causality,
    Probe,
    Capacity,
    Arity,
    Compatibility,
    Numeric,
    Singular,
    Training,
};

const char* error_kind_name(ErrorKind kind);

class KvError : public std::runtime_error {
public:
    KvError(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(error_kind_name(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

[[noreturn]] inline void fail(ErrorKind kind, const std::string& message) {
    throw KvError(kind, message);
}

inline const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Config: return "config error";
        case ErrorKind::Io: return "io error";
        case ErrorKind::Parse: return "parse error";
        case ErrorKind::Format: return "format error";
        case ErrorKind::Version: return "version error";
        case ErrorKind::UnknownToken: return "unknown token";
        case ErrorKind::SequenceLength: return "sequence length error";
        case ErrorKind::Shape: return "shape error";
        case ErrorKind::Causality: return "causality error";
        case ErrorKind::Probe: return "probe error";
        case ErrorKind::Capacity: return "capacity error";
        case ErrorKind::Arity: return "arity error";
        case ErrorKind::Compatibility: return "compatibility error";
        case ErrorKind::Numeric: return "numeric error";
        case ErrorKind::Singular: return "singular system";
        case ErrorKind::Training: return "training error";
    }
    return "error";
}

} // namespace kvedit
