#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace osd {

enum class ErrorKind {
    InvalidInput,
    NotPSD,
    SingularMatrix,
    OutOfDomain,
    BudgetMismatch,
    InvalidBudget,
    InvalidWeights,
    InvalidData,
    SingularHessian,
    NoConvergence,
    EmptySample,
    Unsupported,
    NotDifferentiable,
    Infeasible,
    DegenerateCriterion,
    UnreliableEstimate,
    Schema,
};

inline std::string_view to_string(ErrorKind k) {
    switch (k) {
        case ErrorKind::InvalidInput: return "InvalidInput";
        case ErrorKind::NotPSD: return "NotPSD";
        case ErrorKind::SingularMatrix: return "SingularMatrix";
        case ErrorKind::OutOfDomain: return "OutOfDomain";
        case ErrorKind::BudgetMismatch: return "BudgetMismatch";
        case ErrorKind::InvalidBudget: return "InvalidBudget";
        case ErrorKind::InvalidWeights: return "InvalidWeights";
        case ErrorKind::InvalidData: return "InvalidData";
        case ErrorKind::SingularHessian: return "SingularHessian";
        case ErrorKind::NoConvergence: return "NoConvergence";
        case ErrorKind::EmptySample: return "EmptySample";
        case ErrorKind::Unsupported: return "Unsupported";
        case ErrorKind::NotDifferentiable: return "NotDifferentiable";
        case ErrorKind::Infeasible: return "Infeasible";
        case ErrorKind::DegenerateCriterion: return "DegenerateCriterion";
        case ErrorKind::UnreliableEstimate: return "UnreliableEstimate";
        case ErrorKind::Schema: return "Schema";
    }
    return "Unknown";
}

/// Library error. `kind()` identifies the failure class; `value()` carries an
/// optional numeric diagnostic (e.g. the offending eigenvalue).
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what, double value = 0.0)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind), value_(value) {}

    ErrorKind kind() const noexcept { return kind_; }
    double value() const noexcept { return value_; }

private:
    ErrorKind kind_;
    double value_;
};

}  // namespace osd
