#pragma once

#include "slbfgs/common.hpp"
#include "slbfgs/curvature_memory.hpp"
#include "slbfgs/dataset.hpp"
#include "slbfgs/problems.hpp"
#include "slbfgs/two_loop.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace slbfgs {

/// A batch split into tau contiguous shards, larger shards first.
struct ShardedBatch {
    std::vector<std::vector<Index>> shards;
    std::size_t total = 0;

    int tau() const noexcept { return static_cast<int>(shards.size()); }
    /// |S_i| / |S|.
    double weight(int i) const {
        return static_cast<double>(shards[static_cast<std::size_t>(i)].size()) / static_cast<double>(total);
    }
};

ShardedBatch shard_batch(const BatchSpec& S, int tau);

/// ceil(log2(tau)), 0 for tau = 1.
int ceil_log2(int tau);

enum class Phase { Gradient = 0, Curvature = 1, Recursion = 2 };
inline constexpr std::array<Phase, 3> kPhases = {Phase::Gradient, Phase::Curvature, Phase::Recursion};
std::string to_string(Phase p);

struct PhaseCounts {
    std::int64_t broadcast_scalars = 0;
    std::int64_t reduced_scalars = 0;
    std::int64_t messages = 0;

    std::int64_t total() const noexcept { return broadcast_scalars + reduced_scalars; }
    bool operator==(const PhaseCounts&) const = default;
};

struct RoundCounts {
    std::array<PhaseCounts, 3> phase{};
    std::size_t memory_pairs = 0;

    const PhaseCounts& at(Phase p) const { return phase[static_cast<std::size_t>(p)]; }
    PhaseCounts& at(Phase p) { return phase[static_cast<std::size_t>(p)]; }
    std::int64_t total() const noexcept;
};

/// Scalars moved between the server and the workers, per optimizer round and phase.
class CommLedger {
public:
    void broadcast(Phase p, std::int64_t scalars);
    /// `rounds` tree levels, each moving `scalars_per_round` scalars toward the server.
    void reduce(Phase p, std::int64_t scalars_per_round, int rounds);
    /// Single-hop gather of independent scalars computed at workers.
    void gather(Phase p, std::int64_t scalars);

    /// Closes the current round and stores its counts.
    void end_round(std::size_t memory_pairs);

    const RoundCounts& current() const noexcept { return current_; }
    const std::vector<RoundCounts>& history() const noexcept { return history_; }
    std::int64_t total_scalars() const noexcept;

private:
    RoundCounts current_;
    std::vector<RoundCounts> history_;
};

/// Fixed-order binary tree sum: level r adds part[i + 2^r] into part[i] for i = 0 mod 2^(r+1).
Vector tree_reduce(std::vector<Vector> parts);

/// Weighted shard gradients summed on the server.
Vector sharded_gradient(const ShardedBatch& shards, const ProblemOracle& oracle, const Vector& w, CommLedger& ledger);

/// GGN-vector product from weighted per-shard products. Requires a diagonal L_hh.
Vector sharded_ggn_vec(const ShardedBatch& shards, const ProblemOracle& oracle, const Vector& w, const Vector& v,
                       CommLedger& ledger);

/// Hessian-vector product with the same message pattern (no L_hh requirement).
Vector sharded_hessian_vec(const ShardedBatch& shards, const ProblemOracle& oracle, const Vector& w,
                           const Vector& v, CommLedger& ledger);

enum class PairPlacement {
    /// One dot product per worker; needs tau >= m(m+1).
    PerDotProduct,
    /// Dot products dealt to workers round-robin; any tau >= 1.
    RoundRobin,
};

/// Vector-free recursion with the dot products and the Y_j = y_j'r0 products computed on
/// simulated workers. Returns the same result as vector_free_two_loop.
DirectionResult distributed_recursion_round(const LbfgsMemory& memory, const Vector& g, const InitialScaling& h0,
                                            int tau, PairPlacement placement, CommLedger& ledger);

/// Closed-form scalar counts for one round of the distributed method.
///   gradient:  d broadcast + d * ceil(log2 tau) reduced
///   curvature: 2d broadcast (s_k, then y_k) + d * ceil(log2 tau) reduced
///   recursion: d broadcast (r0) + (m+1)m + m gathered
RoundCounts expected_round_counts(Index d, int tau, std::size_t m);

struct LedgerReport {
    RoundCounts measured;
    RoundCounts expected;
    bool matches_formula = false;
    std::int64_t total = 0;
    /// 8 * (d * ceil(log2 tau) + m^2).
    std::int64_t bound = 0;
    bool within_bound = false;
};

inline constexpr std::int64_t kCommBoundConstant = 8;

LedgerReport ledger_total(const RoundCounts& round, Index d, int tau, std::size_t m);

}  // namespace slbfgs
