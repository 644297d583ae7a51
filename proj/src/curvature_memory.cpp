#include "slbfgs/curvature_memory.hpp"

namespace slbfgs {

LbfgsMemory::LbfgsMemory(std::size_t capacity, double epsilon)
    : capacity_(capacity), epsilon_(epsilon) {
    if (!(epsilon > 0.0)) throw ContractViolation("LbfgsMemory: epsilon must be positive");
}

bool LbfgsMemory::accepts(const Vector& s, const Vector& y) const {
    require_same_dim(s, y, "push_pair");
    if (!pairs_.empty() && s.size() != dim()) {
        throw ContractViolation("push_pair: pair dimension differs from stored pairs");
    }
    const double ys = wide_dot(y, s);
    const double ss = wide_dot(s, s);
    if (!std::isfinite(ys) || !std::isfinite(ss)) return false;
    return ys > 0.0 && ys >= epsilon_ * ss;
}

bool LbfgsMemory::push_pair(const Vector& s, const Vector& y) {
    if (!accepts(s, y)) return false;
    if (capacity_ == 0) return true;
    if (pairs_.size() == capacity_) pairs_.pop_front();
    pairs_.push_back(CurvaturePair{s, y});
    return true;
}

std::vector<Vector> base_vectors(const LbfgsMemory& memory, const Vector& g) {
    if (!memory.full()) {
        throw ContractViolation("base_vectors: memory holds " + std::to_string(memory.size()) +
                                " of " + std::to_string(memory.capacity()) + " pairs");
    }
    if (!memory.empty()) require_same_dim(memory.pair(0).s, g, "base_vectors");
    std::vector<Vector> out;
    out.reserve(2 * memory.size() + 1);
    for (const auto& p : memory.pairs()) out.push_back(p.s);
    for (const auto& p : memory.pairs()) out.push_back(p.y);
    out.push_back(g);
    return out;
}

}  // namespace slbfgs
