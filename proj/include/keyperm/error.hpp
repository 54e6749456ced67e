#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace keyperm {

// Base for every error raised by the library. The CLI maps the concrete
// subclass onto a process exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Bad arguments, inconsistent shapes, invalid configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Filesystem problems: missing files, unreadable paths, short writes.
class IoError : public Error {
public:
    using Error::Error;
};

// Malformed binary payloads. Carries the byte offset where parsing stopped.
class FormatError : public IoError {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : IoError(what + " (at byte offset " + std::to_string(offset) + ")"), offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

// A numeric or protocol invariant was violated at run time.
class InvariantError : public Error {
public:
    using Error::Error;
};

// Attacker-side code touched defender-only secrets.
class ProtocolViolation : public InvariantError {
public:
    using InvariantError::InvariantError;
};

}  // namespace keyperm
