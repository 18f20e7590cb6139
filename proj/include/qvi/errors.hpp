#pragma once

#include <stdexcept>
#include <string>

namespace qvi {

// Direct sparse factorization failed or the factored solve missed the
// residual contract.
struct LinearSolverFailure : std::runtime_error {
    explicit LinearSolverFailure(const std::string& what) : std::runtime_error(what) {}
};

// An inner Newton loop (temperature solve, Moreau-Yosida subproblem) ran out
// of iterations; carries the last residual norm for diagnostics.
struct InnerSolverFailure : std::runtime_error {
    InnerSolverFailure(const std::string& what, double last_residual_)
        : std::runtime_error(what + " (last residual " + std::to_string(last_residual_) + ")"),
          last_residual(last_residual_) {}
    double last_residual;
};

// The primal-dual active set loop cycled past its iteration cap.
struct RestorationFailure : std::runtime_error {
    explicit RestorationFailure(const std::string& what) : std::runtime_error(what) {}
};

// Malformed or contradictory run configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

} // namespace qvi
