#pragma once

#include <stdexcept>
#include <string>

namespace scm {

// Error taxonomy. The CLI maps each category to a distinct exit code.

/// Tensor extents do not line up (matmul, concat, loss alignment, ...).
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// NaN/Inf encountered where all values must stay finite.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration value (divisibility, ranges, missing fields).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Input outside an operation's mathematical domain (degenerate box, zero-variance CKA input).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed on-disk artifact; message carries file and line where known.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace scm
