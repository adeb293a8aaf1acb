#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lapsynth {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ArgumentError : public Error {
public:
    using Error::Error;
};

class VocabularyError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class ConflictError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Numerical failure (non-finite loss, NaN trajectory, degenerate covariance).
class NumericError : public Error {
public:
    using Error::Error;
};

class CalibrationError : public NumericError {
public:
    using NumericError::NumericError;
};

class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class SamplerError : public NumericError {
public:
    SamplerError(std::size_t step, const std::string& what)
        : NumericError("step " + std::to_string(step) + ": " + what), step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

/// Per-item failures of a batch operation, keyed by item index.
class BatchError : public Error {
public:
    explicit BatchError(std::vector<std::pair<std::size_t, std::string>> failures)
        : Error(describe(failures)), failures_(std::move(failures)) {}

    const std::vector<std::pair<std::size_t, std::string>>& failures() const noexcept { return failures_; }

private:
    static std::string describe(const std::vector<std::pair<std::size_t, std::string>>& failures) {
        std::string out = std::to_string(failures.size()) + " item(s) failed";
        for (const auto& [index, what] : failures) out += "; [" + std::to_string(index) + "] " + what;
        return out;
    }

    std::vector<std::pair<std::size_t, std::string>> failures_;
};

class ScoringError : public Error {
public:
    using Error::Error;
};

}  // namespace lapsynth
