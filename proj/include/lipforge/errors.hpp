#pragma once

#include <stdexcept>
#include <string>

namespace lipforge {

// Base for every typed error raised by the library. The CLI maps subclasses
// onto its exit-code taxonomy (parse=2, infeasible=3, convergence=4).
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct DimensionError : Error {
    explicit DimensionError(const std::string& msg) : Error(msg) {}
};

struct SymmetryError : Error {
    explicit SymmetryError(const std::string& msg) : Error(msg) {}
};

// Iteration budget exhausted; carries the best estimate reached so far.
struct ConvergenceError : Error {
    ConvergenceError(const std::string& msg, double estimate)
        : Error(msg), last_estimate(estimate) {}
    double last_estimate;
};

struct ZeroWeightError : Error {
    explicit ZeroWeightError(const std::string& msg) : Error(msg) {}
};

// W has an all-zero column; the AOL/SLL diagonal is undefined there.
// Callers should switch to the singular-Gamma scaling instead.
struct ZeroColumnError : Error {
    explicit ZeroColumnError(const std::string& msg) : Error(msg) {}
};

struct DomainError : Error {
    explicit DomainError(const std::string& msg) : Error(msg) {}
};

struct FeasibilityError : Error {
    explicit FeasibilityError(const std::string& msg) : Error(msg) {}
};

struct ScaleError : Error {
    explicit ScaleError(const std::string& msg) : Error(msg) {}
};

struct LMIInfeasibleError : Error {
    explicit LMIInfeasibleError(const std::string& msg) : Error(msg) {}
};

struct CertificateError : Error {
    explicit CertificateError(const std::string& msg) : Error(msg) {}
};

struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

}  // namespace lipforge
