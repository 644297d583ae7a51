#pragma once

#include "slbfgs/common.hpp"
#include "slbfgs/two_loop.hpp"

#include <cstdint>

namespace slbfgs {

inline constexpr double kAdamStabilizer = 1e-8;

/// ADAM moment accumulators. They supply the momentum gradient m_hat and the
/// diagonal initial scaling diag(1 / (sqrt(v_hat) + 1e-8)).
struct AdamState {
    Vector m_acc;
    Vector v_acc;
    double beta1 = 0.9;
    double beta2 = 0.999;
    std::int64_t step_count = 0;
    double eps_stab = kAdamStabilizer;

    AdamState() = default;
    AdamState(Index dim, double b1 = 0.9, double b2 = 0.999);
};

struct AdamMoments {
    Vector m_hat;
    Vector v_hat;
};

/// m <- b1 m + (1-b1) g, v <- b2 v + (1-b2) g^2, then bias-corrected with the new step count.
AdamMoments adam_update(AdamState& state, const Vector& g);

/// q / (sqrt(v_hat) + eps) elementwise.
Vector h0_apply(const Vector& v_hat, const Vector& q, double eps = kAdamStabilizer);

/// The same operator as an InitialScaling usable by the recursions.
InitialScaling adam_scaling(const Vector& v_hat, double eps = kAdamStabilizer);

}  // namespace slbfgs
