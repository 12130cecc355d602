#pragma once

#include <stdexcept>
#include <string>

namespace kicrank {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Missing files, malformed lines, unknown split names.
class DatasetError : public Error {
public:
    using Error::Error;
};

class CheckpointError : public Error {
public:
    enum class Kind { Io, VersionMismatch, Corrupt };

    CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

// Stages 1, 2 and 4 of a conversation do not fit the token budget.
class BudgetError : public Error {
public:
    using Error::Error;
};

class GatewayError : public Error {
public:
    using Error::Error;
};

// Retryable transport failure (HTTP 429, 5xx, connection errors).
class TransientGatewayError : public GatewayError {
public:
    using GatewayError::GatewayError;
};

class ContractViolation : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

}  // namespace kicrank
