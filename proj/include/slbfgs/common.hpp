#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>

namespace slbfgs {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

/// Raised when a caller breaks a documented precondition (dimension mismatch,
/// non-positive curvature reaching a recursion, ...).
class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class UnsupportedLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss/gradient or blow-up past the divergence guard.
class DivergedError : public std::runtime_error {
public:
    DivergedError(const std::string& what, long step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

    long step() const noexcept { return step_; }

private:
    long step_;
};

inline void require_same_dim(const Vector& a, const Vector& b, const char* where) {
    if (a.size() != b.size()) {
        throw ContractViolation(std::string(where) + ": dimension mismatch (" +
                                std::to_string(a.size()) + " vs " + std::to_string(b.size()) + ")");
    }
}

/// Dot product accumulated in long double.
inline double wide_dot(const Vector& a, const Vector& b) {
    long double acc = 0.0L;
    for (Index i = 0; i < a.size(); ++i) acc += static_cast<long double>(a[i]) * b[i];
    return static_cast<double>(acc);
}

inline bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace slbfgs
