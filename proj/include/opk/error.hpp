#pragma once

#include <stdexcept>
#include <string>

namespace opk {

/// Raised when a parameter or configuration value violates a model constraint.
/// The CLI maps this to exit status 2.
class ParamError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a computation cannot proceed (CFL violation, supercritical
/// noise, underflowing denominators carrying mass, ...). CLI exit status 3.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// No Gaussian equilibrium exists for the requested noise level.
class SupercriticalError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Requested time step exceeds the stability (or acceptance) bound.
class CflError : public NumericalError {
public:
    CflError(const std::string& what, double max_dt) : NumericalError(what), max_dt_(max_dt) {}
    double max_dt() const noexcept { return max_dt_; }

private:
    double max_dt_;
};

} // namespace opk
