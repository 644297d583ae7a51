#include "slbfgs/distributed_sim.hpp"

namespace slbfgs {

ShardedBatch shard_batch(const BatchSpec& S, int tau) {
    if (tau < 1) throw ContractViolation("shard_batch: need at least one worker");
    if (static_cast<std::size_t>(tau) > S.size()) {
        throw ContractViolation("shard_batch: " + std::to_string(tau) + " workers for a batch of " +
                                std::to_string(S.size()));
    }
    ShardedBatch out;
    out.total = S.size();
    const std::size_t base = S.size() / static_cast<std::size_t>(tau);
    const std::size_t extra = S.size() % static_cast<std::size_t>(tau);
    std::size_t pos = 0;
    for (std::size_t i = 0; i < static_cast<std::size_t>(tau); ++i) {
        const std::size_t len = base + (i < extra ? 1 : 0);
        out.shards.emplace_back(S.indices.begin() + static_cast<std::ptrdiff_t>(pos),
                                S.indices.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }
    return out;
}

int ceil_log2(int tau) {
    if (tau < 1) throw ContractViolation("ceil_log2: tau must be >= 1");
    int r = 0;
    while ((1 << r) < tau) ++r;
    return r;
}

std::string to_string(Phase p) {
    switch (p) {
        case Phase::Gradient: return "gradient";
        case Phase::Curvature: return "curvature";
        case Phase::Recursion: return "recursion";
    }
    return "?";
}

std::int64_t RoundCounts::total() const noexcept {
    std::int64_t t = 0;
    for (const auto& p : phase) t += p.total();
    return t;
}

void CommLedger::broadcast(Phase p, std::int64_t scalars) {
    auto& c = current_.at(p);
    c.broadcast_scalars += scalars;
    c.messages += 1;
}

void CommLedger::reduce(Phase p, std::int64_t scalars_per_round, int rounds) {
    auto& c = current_.at(p);
    c.reduced_scalars += scalars_per_round * rounds;
    c.messages += rounds;
}

void CommLedger::gather(Phase p, std::int64_t scalars) {
    auto& c = current_.at(p);
    c.reduced_scalars += scalars;
    c.messages += 1;
}

void CommLedger::end_round(std::size_t memory_pairs) {
    current_.memory_pairs = memory_pairs;
    history_.push_back(current_);
    current_ = RoundCounts{};
}

std::int64_t CommLedger::total_scalars() const noexcept {
    std::int64_t t = current_.total();
    for (const auto& r : history_) t += r.total();
    return t;
}

Vector tree_reduce(std::vector<Vector> parts) {
    if (parts.empty()) throw ContractViolation("tree_reduce: nothing to reduce");
    for (std::size_t stride = 1; stride < parts.size(); stride *= 2) {
        for (std::size_t i = 0; i + stride < parts.size(); i += 2 * stride) parts[i] += parts[i + stride];
    }
    return std::move(parts.front());
}

namespace {

template <class ShardFn>
Vector sharded_product(const ShardedBatch& shards, const ProblemOracle& oracle, Phase phase, CommLedger& ledger,
                       ShardFn&& per_shard) {
    const Index d = oracle.dim();
    ledger.broadcast(phase, d);
    std::vector<Vector> parts;
    parts.reserve(shards.shards.size());
    for (int i = 0; i < shards.tau(); ++i) parts.push_back(shards.weight(i) * per_shard(shards.shards[static_cast<std::size_t>(i)]));
    const int rounds = ceil_log2(shards.tau());
    if (rounds > 0) ledger.reduce(phase, d, rounds);
    return tree_reduce(std::move(parts));
}

}  // namespace

Vector sharded_gradient(const ShardedBatch& shards, const ProblemOracle& oracle, const Vector& w, CommLedger& ledger) {
    return sharded_product(shards, oracle, Phase::Gradient, ledger,
                           [&](const std::vector<Index>& S) { return oracle.batch_gradient(w, S); });
}

Vector sharded_ggn_vec(const ShardedBatch& shards, const ProblemOracle& oracle, const Vector& w, const Vector& v,
                       CommLedger& ledger) {
    if (!oracle.lhh_diagonal()) {
        throw UnsupportedLoss("sharded_ggn_vec: loss Hessian with respect to the outputs is not diagonal");
    }
    return sharded_product(shards, oracle, Phase::Curvature, ledger,
                           [&](const std::vector<Index>& S) { return oracle.ggn_vec(w, S, v); });
}

Vector sharded_hessian_vec(const ShardedBatch& shards, const ProblemOracle& oracle, const Vector& w,
                           const Vector& v, CommLedger& ledger) {
    return sharded_product(shards, oracle, Phase::Curvature, ledger,
                           [&](const std::vector<Index>& S) { return oracle.hessian_vec(w, S, v); });
}

namespace {

/// Dot-product tasks resident on one simulated worker.
struct Worker {
    struct Task {
        std::size_t row;  // 0..m-1 for y_row, m for g
        std::size_t col;  // s_col
    };
    std::vector<Task> tasks;
};

}  // namespace

DirectionResult distributed_recursion_round(const LbfgsMemory& memory, const Vector& g, const InitialScaling& h0,
                                            int tau, PairPlacement placement, CommLedger& ledger) {
    if (tau < 1) throw ContractViolation("distributed_recursion_round: need at least one worker");
    const std::size_t m = memory.size();
    const Index d = g.size();

    if (m == 0) {
        detail::CoefficientState st;
        st.delta = {1.0L, -1.0L};
        Vector r0 = h0.apply(-g);
        ledger.broadcast(Phase::Recursion, d);
        return detail::to_result(std::move(r0), st);
    }
    require_same_dim(memory.pair(0).s, g, "distributed_recursion_round");

    const std::size_t n_tasks = (m + 1) * m;
    if (placement == PairPlacement::PerDotProduct && static_cast<std::size_t>(tau) < n_tasks) {
        throw ContractViolation("distributed_recursion_round: per-dot-product placement needs " +
                                std::to_string(n_tasks) + " workers, have " + std::to_string(tau));
    }

    // Map step: every (row, col) dot product of the dot matrix lives on exactly one worker.
    std::vector<Worker> workers(static_cast<std::size_t>(tau));
    for (std::size_t t = 0; t < n_tasks; ++t) {
        workers[t % workers.size()].tasks.push_back({t / m, t % m});
    }
    DotMatrix M;
    M.m = m;
    M.entries.resize(static_cast<Index>(m + 1), static_cast<Index>(m));
    for (const Worker& wk : workers) {
        for (const auto& task : wk.tasks) {
            const Vector& left = task.row < m ? memory.pair(task.row).y : g;
            M.entries(static_cast<Index>(task.row), static_cast<Index>(task.col)) = wide_dot(left, memory.pair(task.col).s);
        }
    }
    ledger.gather(Phase::Recursion, static_cast<std::int64_t>(n_tasks));

    detail::CoefficientState st = detail::vector_free_first_loop(M);
    const Vector q = detail::combine_q(memory, g, st, nullptr);
    const Vector r0 = h0.apply(q);
    ledger.broadcast(Phase::Recursion, d);

    // Workers holding y_j return Y_j = y_j' r0.
    std::vector<double> Y(m);
    for (std::size_t j = 0; j < m; ++j) Y[j] = wide_dot(memory.pair(j).y, r0);
    ledger.gather(Phase::Recursion, static_cast<std::int64_t>(m));

    detail::vector_free_second_loop(M, Y, st);
    return detail::to_result(detail::combine_direction(memory, r0, st, nullptr), st);
}

RoundCounts expected_round_counts(Index d, int tau, std::size_t m) {
    const int L = ceil_log2(tau);
    const auto mm = static_cast<std::int64_t>(m);
    RoundCounts r;
    r.memory_pairs = m;
    auto& grad = r.at(Phase::Gradient);
    grad.broadcast_scalars = d;
    grad.reduced_scalars = d * L;
    grad.messages = 1 + L;
    auto& curv = r.at(Phase::Curvature);
    curv.broadcast_scalars = 2 * d;
    curv.reduced_scalars = d * L;
    curv.messages = 2 + L;
    auto& rec = r.at(Phase::Recursion);
    rec.broadcast_scalars = d;
    rec.reduced_scalars = m == 0 ? 0 : (mm + 1) * mm + mm;
    rec.messages = m == 0 ? 1 : 3;
    return r;
}

LedgerReport ledger_total(const RoundCounts& round, Index d, int tau, std::size_t m) {
    LedgerReport rep;
    rep.measured = round;
    rep.expected = expected_round_counts(d, tau, m);
    rep.matches_formula = true;
    for (Phase p : kPhases) {
        if (!(round.at(p) == rep.expected.at(p))) rep.matches_formula = false;
    }
    rep.total = round.total();
    const auto mm = static_cast<std::int64_t>(m);
    rep.bound = kCommBoundConstant * (d * ceil_log2(tau) + mm * mm);
    rep.within_bound = rep.total <= rep.bound;
    return rep;
}

}  // namespace slbfgs
