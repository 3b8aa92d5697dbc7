#pragma once

#include <stdexcept>
#include <string>

namespace gesched {

/// Invalid parameters or configuration (maps to CLI exit code 2).
class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

/// Assumption M_d * mu1 > E[A] violated and no override given.
class StabilityError : public ConfigError {
public:
    explicit StabilityError(const std::string& what) : ConfigError(what) {}
};

/// Non-finite parameters or solver non-convergence (maps to exit code 3).
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class ConvergenceError : public NumericError {
public:
    ConvergenceError(const std::string& what, long iterations, double residual)
        : NumericError(what), iterations_(iterations), residual_(residual) {}

    long iterations() const noexcept { return iterations_; }
    double residual() const noexcept { return residual_; }

private:
    long iterations_;
    double residual_;
};

} // namespace gesched
