#pragma once

#include <stdexcept>
#include <string>

namespace stpp {

/// Invalid configuration or construction arguments (bad layer dims, ranks,
/// grid sizes, malformed config files).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Input tensor/vector shape does not match what the callee expects.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Arguments outside the mathematical domain of an operation (t < t_prev,
/// negative displacement, point outside the observation window).
struct DomainError : std::runtime_error {
    explicit DomainError(const std::string& what) : std::runtime_error(what) {}
};

/// A logarithm argument went non-positive: intensity <= 0 at an event, or
/// intensity <= barrier bound on the penalty grid.
struct InfeasibilityError : std::runtime_error {
    InfeasibilityError(const std::string& what, long index, double value)
        : std::runtime_error(what), index(index), value(value) {}
    long index;    // offending event / grid point index
    double value;  // the non-positive log argument
};

/// A loss or gradient evaluated to NaN/Inf.
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

/// Thinning sampler observed an intensity above its dominating rate.
struct DominationError : std::runtime_error {
    DominationError(const std::string& what, double sup_seen)
        : std::runtime_error(what), sup_seen(sup_seen) {}
    double sup_seen;
};

}  // namespace stpp
