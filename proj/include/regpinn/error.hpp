// Error types shared by every regpinn module.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

namespace regpinn {

/// Raised when an argument falls outside the domain of a model or operation.
class DomainError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// Raised by the CSV readers; carries the 1-based line number (0 = whole file).
class ParseError : public std::runtime_error {
public:
    ParseError(std::string path, std::size_t line, const std::string& what)
        : std::runtime_error(path + (line ? ":" + std::to_string(line) : std::string{}) + ": " + what),
          path_(std::move(path)), line_(line) {}

    const std::string& path() const noexcept { return path_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string path_;
    std::size_t line_;
};

/// Training produced a non-finite loss or a fit diverged.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace regpinn
