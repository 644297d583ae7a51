#pragma once

#include "slbfgs/common.hpp"
#include "slbfgs/curvature_memory.hpp"

#include <cstdint>
#include <vector>

namespace slbfgs {

/// Symmetric positive-definite initial scaling H_k^0, applied as an operator.
/// Identity, a positive scalar multiple of identity, or a positive diagonal.
class InitialScaling {
public:
    enum class Kind { Identity, Scalar, Diagonal };

    static InitialScaling identity() { return InitialScaling(Kind::Identity, 1.0, {}); }
    static InitialScaling scalar(double gamma);
    static InitialScaling diagonal(Vector diag);

    Vector apply(const Vector& q) const;

    Kind kind() const noexcept { return kind_; }
    double gamma() const noexcept { return gamma_; }
    const Vector& diag() const noexcept { return diag_; }

    /// Extremal eigenvalues (sigma, Sigma). For Identity/Scalar both equal gamma.
    double min_eigenvalue() const;
    double max_eigenvalue() const;

    /// Dense d x d representation (tests and theory checks only).
    Matrix dense(Index d) const;

private:
    InitialScaling(Kind k, double g, Vector d) : kind_(k), gamma_(g), diag_(std::move(d)) {}

    Kind kind_;
    double gamma_;
    Vector diag_;
};

/// Counters of full-length (R^d) vector work done inside a recursion.
struct VectorOpCounter {
    std::int64_t dots = 0;
    std::int64_t axpys = 0;
    std::int64_t h0_applications = 0;
};

/// (m+1) x m matrix of inner products: rows 0..m-1 are y_p's_q, row m is g's_q.
struct DotMatrix {
    Matrix entries;
    std::size_t m = 0;

    double operator()(std::size_t p, std::size_t q) const {
        return entries(static_cast<Index>(p), static_cast<Index>(q));
    }
};

struct DirectionResult {
    Vector direction;
    /// delta_0 .. delta_{2m+1}.
    std::vector<double> deltas;
    /// alpha for pair j (oldest = 0).
    std::vector<double> alphas;
};

/// r = -H_k g with the textbook two-loop recursion.
Vector classic_two_loop(const LbfgsMemory& memory, const Vector& g, const InitialScaling& h0);

DotMatrix dot_matrix(const LbfgsMemory& memory, const Vector& g, VectorOpCounter* counter = nullptr);

/// Vector-free recursion: only the dot matrix, one h0 application, the m products
/// y_j' r0 and the final linear combination touch R^d vectors.
DirectionResult vector_free_two_loop(const LbfgsMemory& memory, const Vector& g,
                                     const InitialScaling& h0, VectorOpCounter* counter = nullptr);

namespace detail {

/// Coefficient state between the two loops of the vector-free recursion.
struct CoefficientState {
    std::vector<long double> delta;  // size 2m+2
    std::vector<long double> alpha;  // size m
};

/// First loop over the dot matrix. Throws ContractViolation on a non-positive diagonal.
CoefficientState vector_free_first_loop(const DotMatrix& M);

/// q = sum_{l=m+1}^{2m+1} delta_l b_l.
Vector combine_q(const LbfgsMemory& memory, const Vector& g, const CoefficientState& st,
                 VectorOpCounter* counter);

/// Second loop given Y_j = y_j' r0.
void vector_free_second_loop(const DotMatrix& M, const std::vector<double>& Y, CoefficientState& st);

/// delta_0 r0 + sum_{l=1}^m delta_l s_l.
Vector combine_direction(const LbfgsMemory& memory, const Vector& r0, const CoefficientState& st,
                         VectorOpCounter* counter);

DirectionResult to_result(Vector direction, const CoefficientState& st);

}  // namespace detail

}  // namespace slbfgs
