#include "slbfgs/preconditioner.hpp"

#include <limits>

namespace slbfgs {

AdamState::AdamState(Index dim, double b1, double b2)
    : m_acc(Vector::Zero(dim)), v_acc(Vector::Zero(dim)), beta1(b1), beta2(b2) {
    if (!(b1 >= 0.0 && b1 < 1.0) || !(b2 >= 0.0 && b2 < 1.0)) {
        throw ContractViolation("AdamState: betas must lie in [0, 1)");
    }
}

AdamMoments adam_update(AdamState& state, const Vector& g) {
    require_same_dim(state.m_acc, g, "adam_update");
    if (state.step_count == std::numeric_limits<std::int64_t>::max()) {
        throw ContractViolation("adam_update: step counter overflow");
    }
    state.step_count += 1;
    const double b1 = state.beta1;
    const double b2 = state.beta2;
    state.m_acc = b1 * state.m_acc + (1.0 - b1) * g;
    state.v_acc = b2 * state.v_acc + (1.0 - b2) * g.cwiseAbs2();

    // beta = 0 gives 1 - 0^k = 1 for k >= 1.
    const double k = static_cast<double>(state.step_count);
    const double c1 = 1.0 - std::pow(b1, k);
    const double c2 = 1.0 - std::pow(b2, k);
    return AdamMoments{state.m_acc / c1, state.v_acc / c2};
}

Vector h0_apply(const Vector& v_hat, const Vector& q, double eps) {
    require_same_dim(v_hat, q, "h0_apply");
    return q.array() / (v_hat.array().sqrt() + eps);
}

InitialScaling adam_scaling(const Vector& v_hat, double eps) {
    return InitialScaling::diagonal((v_hat.array().sqrt() + eps).inverse().matrix());
}

}  // namespace slbfgs
