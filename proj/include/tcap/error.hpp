#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace tcap {

// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input or configuration rejected before any analysis ran. The CLI maps
// this family to exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

class IoError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class MalformedRecord : public ValidationError {
public:
    MalformedRecord(const std::string& where, std::size_t line, const std::string& what)
        : ValidationError(where + ":" + std::to_string(line) + ": malformed record: " + what),
          line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class IncompleteDump : public ValidationError {
public:
    explicit IncompleteDump(std::size_t missing)
        : ValidationError("incomplete dump: " + std::to_string(missing) +
                          " (sample, layer, head) records missing"),
          missing_(missing) {}

    std::size_t missing() const noexcept { return missing_; }

private:
    std::size_t missing_;
};

class DuplicateRecord : public ValidationError {
public:
    DuplicateRecord(const std::string& where, std::size_t line, const std::string& key)
        : ValidationError(where + ":" + std::to_string(line) + ": duplicate record " + key) {}
};

class ManifestMismatch : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class NonFiniteInput : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class LabelMismatch : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class SpecInvalid : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class FitFailure : public Error {
public:
    using Error::Error;
};

// Every candidate head in the sensitive layers was degenerate.
class EmptyCandidateSet : public Error {
public:
    using Error::Error;
};

}  // namespace tcap
