#pragma once

// Independent oracles and random instance generators shared by the test suites.

#include "slbfgs/common.hpp"
#include "slbfgs/curvature_memory.hpp"
#include "slbfgs/dataset.hpp"
#include "slbfgs/two_loop.hpp"

#include <algorithm>
#include <random>
#include <vector>

namespace slbfgs::testing {

using slbfgs::uniform_below;

inline double rel_err(const Vector& a, const Vector& b) {
    const double scale = std::max({a.norm(), b.norm(), 1e-300});
    return (a - b).norm() / scale;
}

inline Vector random_vector(Rng& rng, Index d, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Vector v(d);
    for (Index i = 0; i < d; ++i) v[i] = g(rng);
    return v;
}

inline Matrix random_spd(Rng& rng, Index d, double shift = 0.1) {
    Matrix Q(d, d);
    std::normal_distribution<double> g(0.0, 1.0);
    for (Index i = 0; i < d; ++i)
        for (Index j = 0; j < d; ++j) Q(i, j) = g(rng);
    return Q.transpose() * Q / static_cast<double>(d) + shift * Matrix::Identity(d, d);
}

inline Vector random_positive(Rng& rng, Index d, double lo, double hi) {
    std::uniform_real_distribution<double> u(std::log(lo), std::log(hi));
    Vector v(d);
    for (Index i = 0; i < d; ++i) v[i] = std::exp(u(rng));
    return v;
}

/// Memory filled with m pairs y = B s for random SPD B (one B per pair).
inline LbfgsMemory random_memory(Rng& rng, Index d, std::size_t m) {
    LbfgsMemory mem(m);
    while (mem.size() < m) {
        const Vector s = random_vector(rng, d);
        const Vector y = random_spd(rng, d) * s;
        mem.push_pair(s, y);
    }
    return mem;
}

/// Dense inverse-BFGS recursion H <- (I - rho s y') H (I - rho y s') + rho s s', oldest pair first.
inline Matrix dense_bfgs_inverse(const LbfgsMemory& mem, const Matrix& H0) {
    Matrix H = H0;
    const Index d = H0.rows();
    const Matrix I = Matrix::Identity(d, d);
    for (const auto& p : mem.pairs()) {
        const double rho = 1.0 / p.y.dot(p.s);
        const Matrix V = I - rho * p.y * p.s.transpose();
        H = V.transpose() * H * V + rho * p.s * p.s.transpose();
    }
    return H;
}

/// Calls f on every size-b subset of {0..n-1}.
template <class F>
void for_each_subset(Index n, Index b, F&& f) {
    std::vector<bool> mask(static_cast<std::size_t>(n), false);
    std::fill(mask.begin(), mask.begin() + b, true);
    do {
        std::vector<Index> idx;
        for (Index i = 0; i < n; ++i)
            if (mask[static_cast<std::size_t>(i)]) idx.push_back(i);
        f(idx);
    } while (std::prev_permutation(mask.begin(), mask.end()));
}

}  // namespace slbfgs::testing
