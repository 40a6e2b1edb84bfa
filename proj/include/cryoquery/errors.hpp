#pragma once

#include <stdexcept>
#include <string>

// Error taxonomy shared across the library. Each class maps to a distinct
// CLI exit code (see tools/cryoquery.cpp).

namespace cq {

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

struct DegenerateCodeError : std::runtime_error {
    explicit DegenerateCodeError(const std::string& what) : std::runtime_error(what) {}
};

struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

struct UnsupportedFormatError : std::runtime_error {
    explicit UnsupportedFormatError(const std::string& what) : std::runtime_error(what) {}
};

struct CorruptFileError : std::runtime_error {
    explicit CorruptFileError(const std::string& what) : std::runtime_error(what) {}
};

// Carries the 1-based line number of the offending row.
struct ParseError : std::runtime_error {
    ParseError(const std::string& what, long line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line(line) {}
    long line;
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Loss went NaN/Inf mid-training; the trainer writes the last good
// checkpoint before throwing this.
struct DivergenceError : std::runtime_error {
    explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cq
