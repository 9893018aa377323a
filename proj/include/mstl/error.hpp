#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mstl {

// Error taxonomy shared across the library. Every failure carries a stable
// machine-readable kind string; the CLI maps each kind to a distinct exit
// code and prints "<kind>: <message>" on a single line.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& msg)
        : std::runtime_error(msg), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

// Shape/arity mismatch between tensors or layers.
struct DimensionError : Error {
    explicit DimensionError(const std::string& m) : Error("dimension-error", m) {}
};

// NaN/Inf or other numeric breakdown during computation.
struct NumericError : Error {
    explicit NumericError(const std::string& m) : Error("numeric-error", m) {}
};

// Caller passed an argument outside the documented domain.
struct InputError : Error {
    explicit InputError(const std::string& m) : Error("input-error", m) {}
};

// Problem with dataset contents (unreadable image, bad label, empty split).
struct DataError : Error {
    explicit DataError(const std::string& m) : Error("data-error", m) {}
};

// Invalid experiment configuration or spec invariant violation.
struct ConfigError : Error {
    explicit ConfigError(const std::string& m) : Error("config-error", m) {}
};

// Dangling cross-reference (dataset name, checkpoint path) in a config.
struct ResolutionError : Error {
    explicit ResolutionError(const std::string& m) : Error("resolution-error", m) {}
};

// Malformed serialized artifact (checkpoint, manifest, report).
struct FormatError : Error {
    explicit FormatError(const std::string& m) : Error("format-error", m) {}
};

// Reports that cannot be compared (mismatched split or manifest hash).
struct ComparisonError : Error {
    explicit ComparisonError(const std::string& m) : Error("comparison-error", m) {}
};

// Filesystem failure surfaced with the offending path.
struct IoError : Error {
    explicit IoError(const std::string& m) : Error("io-error", m) {}
};

} // namespace mstl
