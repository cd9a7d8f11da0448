#pragma once

#include <stdexcept>
#include <string>

namespace killchain {

// Bad batch config, bad setup order, duplicate tool registration, etc.
// The CLI maps this to exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Infrastructure failure (transport errors after retries, trace I/O failure
// mid-run). Runs hit by this are marked infra_failed and excluded from metrics.
class InfraError : public std::runtime_error {
public:
    explicit InfraError(const std::string& what) : std::runtime_error(what) {}
};

// Malformed trace file; carries the 1-based line number of the first violation.
class TraceParseError : public std::runtime_error {
public:
    TraceParseError(const std::string& what, std::size_t line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

}  // namespace killchain
