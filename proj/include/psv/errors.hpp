#pragma once

#include <stdexcept>
#include <string>

namespace psv {

enum class ErrorKind {
    Model,
    Numeric,
    Islanding,
    Domain,
    Stall,
    Mode,
    Validation,
    InfeasibleProblem,
};

const char* to_string(ErrorKind kind);

/// Base error for every recoverable failure raised by the simulator.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(what), kind_(kind) {}

    ErrorKind kind() const { return kind_; }

private:
    ErrorKind kind_;
};

/// Power flow did not converge; carries the best mismatch reached (kW).
class NumericError : public Error {
public:
    NumericError(const std::string& what, double best_residual_kw)
        : Error(ErrorKind::Numeric, what), residual_kw(best_residual_kw) {}
    double residual_kw;
};

}  // namespace psv
