#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace stclt {

// Base of every error thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand shapes or lengths do not agree.
class DimensionError : public Error {
public:
    using Error::Error;
};

// Argument outside the operation's domain (empty set, k <= l, ...).
class DomainError : public Error {
public:
    using Error::Error;
};

// Cholesky hit a non-positive pivot.
class NotSpdError : public Error {
public:
    NotSpdError(std::size_t pivot, double value)
        : Error("matrix not positive definite: pivot " + std::to_string(pivot) +
                " has value " + std::to_string(value)),
          pivot_(pivot), value_(value) {}

    std::size_t pivot() const noexcept { return pivot_; }
    double value() const noexcept { return value_; }

private:
    std::size_t pivot_;
    double value_;
};

// Matrix numerically singular; carries the offending direction when known.
class SingularError : public Error {
public:
    explicit SingularError(const std::string& what, std::vector<double> direction = {})
        : Error(what), direction_(std::move(direction)) {}

    const std::vector<double>& direction() const noexcept { return direction_; }

private:
    std::vector<double> direction_;
};

class ConvergenceError : public Error {
public:
    using Error::Error;
};

// Invalid experiment configuration or input file.
class ConfigError : public Error {
public:
    using Error::Error;
};

// Statistical routine cannot run on the given data (too few samples, ...).
class InputError : public Error {
public:
    using Error::Error;
};

// A model specification violates one or more structural invariants.
class ModelError : public Error {
public:
    explicit ModelError(const std::string& what, std::vector<std::string> issues = {})
        : Error(what), issues_(std::move(issues)) {}

    const std::vector<std::string>& issues() const noexcept { return issues_; }

private:
    std::vector<std::string> issues_;
};

// Root finding failed; the message names the reason.
class SolverError : public Error {
public:
    using Error::Error;
};

}  // namespace stclt
