#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace ontoprobe {

/// Input failed validation (malformed file, dangling reference, cycle, bad
/// argument). Maps to CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed line in a line-oriented input. `line()` is 1-based.
class ParseError : public ValidationError {
public:
    ParseError(std::string source, std::size_t line, const std::string& what)
        : ValidationError(source + ":" + std::to_string(line) + ": " + what),
          source_(std::move(source)), line_(line) {}

    const std::string& source() const noexcept { return source_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string source_;
    std::size_t line_;
};

/// Failure reported by or while talking to an inference backend. Maps to CLI
/// exit code 3.
class BackendError : public std::runtime_error {
public:
    BackendError(const std::string& what, std::string request_id = {}, bool retryable = false)
        : std::runtime_error(request_id.empty() ? what : what + " (request " + request_id + ")"),
          request_id_(std::move(request_id)), retryable_(retryable) {}

    const std::string& request_id() const noexcept { return request_id_; }
    bool retryable() const noexcept { return retryable_; }

private:
    std::string request_id_;
    bool retryable_;
};

/// The connection to the backend is gone; nothing further can be sent.
class TransportError : public BackendError {
public:
    explicit TransportError(const std::string& what) : BackendError(what, {}, false) {}
};

} // namespace ontoprobe
