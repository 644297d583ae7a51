#pragma once

#include "slbfgs/common.hpp"

#include <deque>
#include <vector>

namespace slbfgs {

struct CurvaturePair {
    Vector s;
    Vector y;
};

/// Bounded history of curvature pairs with the cautious acceptance rule
/// y's >= eps * |s|^2 (and y's > 0 strictly, which rejects s = 0).
class LbfgsMemory {
public:
    static constexpr double kDefaultEpsilon = 1e-8;

    explicit LbfgsMemory(std::size_t capacity, double epsilon = kDefaultEpsilon);

    /// Returns true when the pair was stored. A rejected pair leaves the memory untouched.
    bool push_pair(const Vector& s, const Vector& y);

    /// Acceptance test without mutation.
    bool accepts(const Vector& s, const Vector& y) const;

    std::size_t capacity() const noexcept { return capacity_; }
    std::size_t size() const noexcept { return pairs_.size(); }
    bool empty() const noexcept { return pairs_.empty(); }
    bool full() const noexcept { return pairs_.size() == capacity_; }
    double epsilon() const noexcept { return epsilon_; }

    /// Oldest first.
    const CurvaturePair& pair(std::size_t i) const { return pairs_.at(i); }
    const std::deque<CurvaturePair>& pairs() const noexcept { return pairs_; }

    /// Dimension of stored vectors, 0 when empty.
    Index dim() const noexcept { return pairs_.empty() ? 0 : pairs_.front().s.size(); }

    void clear() { pairs_.clear(); }

private:
    std::size_t capacity_;
    double epsilon_;
    std::deque<CurvaturePair> pairs_;
};

/// s-history (oldest->newest), y-history (oldest->newest), then g.
/// Requires a full memory; callers in warm-up use a memory whose capacity equals its pair count.
std::vector<Vector> base_vectors(const LbfgsMemory& memory, const Vector& g);

}  // namespace slbfgs
