#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace grmfilter {

/// Base for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke an operation's precondition (horizon overflow, step after finish, ...).
class ContractError : public Error {
public:
    using Error::Error;
};

/// An actor (policy backend, environment) failed unrecoverably; the task rollout is dropped.
class RolloutAbort : public Error {
public:
    using Error::Error;
};

/// The environment lacks a capability the requested strategy needs.
class CapabilityError : public Error {
public:
    using Error::Error;
};

/// The verifiable-reward harness could not evaluate a trajectory.
class RewardEvaluationError : public Error {
public:
    using Error::Error;
};

class VerdictError : public Error {
public:
    enum class Kind { unparseable, out_of_range };

    VerdictError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}

    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

/// Aggregated configuration validation failure. what() lists every violation.
class ConfigError : public Error {
public:
    explicit ConfigError(std::vector<std::string> violations)
        : Error(join(violations)), violations_(std::move(violations)) {}

    const std::vector<std::string>& violations() const noexcept { return violations_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string out = "invalid configuration:";
        for (const auto& s : v) out += "\n  - " + s;
        return out;
    }

    std::vector<std::string> violations_;
};

class DatasetError : public Error {
public:
    explicit DatasetError(const std::string& what, std::size_t line = 0)
        : Error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

    /// 1-based line number of the offending record, 0 when not line-specific.
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

}  // namespace grmfilter
