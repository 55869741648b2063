#pragma once

#include <stdexcept>
#include <string>

namespace decomp {

// Base class for every error raised by the library. The CLI maps the
// subclasses onto its exit-code table.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Malformed input documents: schema, mask, case tables, request bodies.
class ParseError : public Error {
public:
    using Error::Error;
};

// A value is well-formed but violates a domain invariant.
class ValidationError : public Error {
public:
    using Error::Error;
};

// Sampler output failed the convergence gates, or a refit did.
class DiagnosticsError : public Error {
public:
    using Error::Error;
};

// A requested Monte-Carlo budget or enumeration exceeds a hard cap.
class BudgetError : public Error {
public:
    using Error::Error;
};

// Numerical failure: non-finite log density, grid too coarse, non-PSD matrix.
class NumericalError : public Error {
public:
    using Error::Error;
};

}  // namespace decomp
