#pragma once

#include <charconv>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace parafreq {

/// Per-vertex real values. Length always equals the owning domain's vertex count.
using ScalarField = Eigen::VectorXd;

/// Shortest decimal text that round-trips to the same double.
inline std::string format_number(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), x);
    return std::string(buf, res.ptr);
}

enum class ErrorKind {
    invalid_spec,
    construction_failure,
    shape,
    parameter,
    capacity,
    convergence,
    step_size,
    undefined_frequency,
    input,
    hypothesis_violation,
    precondition,
    underflow,
    parse,
    validation,
    io,
};

inline const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::invalid_spec: return "invalid-spec";
        case ErrorKind::construction_failure: return "construction-failure";
        case ErrorKind::shape: return "shape";
        case ErrorKind::parameter: return "parameter";
        case ErrorKind::capacity: return "capacity";
        case ErrorKind::convergence: return "convergence";
        case ErrorKind::step_size: return "step-size";
        case ErrorKind::undefined_frequency: return "undefined-frequency";
        case ErrorKind::input: return "input";
        case ErrorKind::hypothesis_violation: return "hypothesis-violation";
        case ErrorKind::precondition: return "precondition";
        case ErrorKind::underflow: return "underflow";
        case ErrorKind::parse: return "parse";
        case ErrorKind::validation: return "validation";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + " error: " + message), kind_(kind), message_(message) {}

    ErrorKind kind() const noexcept { return kind_; }
    /// Text without the kind prefix.
    const std::string& message() const noexcept { return message_; }

private:
    ErrorKind kind_;
    std::string message_;
};

/// Raised by iterative solvers; keeps the best iterate they reached.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& message, ScalarField best_iterate, double residual)
        : Error(ErrorKind::convergence, message),
          best_iterate_(std::move(best_iterate)),
          residual_(residual) {}

    const ScalarField& best_iterate() const noexcept { return best_iterate_; }
    double residual() const noexcept { return residual_; }

private:
    ScalarField best_iterate_;
    double residual_;
};

inline void require_length(const ScalarField& u, std::size_t n, const char* what) {
    if (static_cast<std::size_t>(u.size()) != n) {
        throw Error(ErrorKind::shape, std::string(what) + ": field has " + std::to_string(u.size()) +
                                          " entries, domain has " + std::to_string(n) + " vertices");
    }
}

} // namespace parafreq
