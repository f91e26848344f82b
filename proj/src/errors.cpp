#include "psv/errors.hpp"

namespace psv {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::Model: return "model-error";
        case ErrorKind::Numeric: return "numeric-error";
        case ErrorKind::Islanding: return "islanding-error";
        case ErrorKind::Domain: return "domain-error";
        case ErrorKind::Stall: return "stall-error";
        case ErrorKind::Mode: return "mode-error";
        case ErrorKind::Validation: return "validation-error";
        case ErrorKind::InfeasibleProblem: return "infeasible-problem";
    }
    return "error";
}

}  // namespace psv
