#pragma once

#include <stdexcept>
#include <string>

namespace arb {

/// Bad user-supplied configuration (flags, parameter ranges, split fractions).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed or missing input data (CSV parse failures, schema mismatches).
struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A solve or training run failed in a way the caller may want to handle.
struct SolverError : std::runtime_error {
    explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

/// The reduced KKT system at the reported active set is singular, so the
/// solution map is not differentiable there.
struct DegenerateActiveSet : SolverError {
    explicit DegenerateActiveSet(const std::string& msg) : SolverError(msg) {}
};

/// No stopping time admits a terminal SoC inside the target band.
struct InfeasibleChanceConstraint : SolverError {
    explicit InfeasibleChanceConstraint(const std::string& msg) : SolverError(msg) {}
};

/// Training loss exceeded the divergence guard.
struct TrainingDiverged : SolverError {
    explicit TrainingDiverged(const std::string& msg) : SolverError(msg) {}
};

}  // namespace arb
