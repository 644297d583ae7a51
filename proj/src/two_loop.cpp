#include "slbfgs/two_loop.hpp"

#include <limits>

namespace slbfgs {

InitialScaling InitialScaling::scalar(double gamma) {
    if (!(gamma > 0.0) || !std::isfinite(gamma)) {
        throw ContractViolation("InitialScaling::scalar: gamma must be positive and finite");
    }
    return InitialScaling(Kind::Scalar, gamma, {});
}

InitialScaling InitialScaling::diagonal(Vector diag) {
    if (diag.size() == 0 || !(diag.minCoeff() > 0.0) || !diag.allFinite()) {
        throw ContractViolation("InitialScaling::diagonal: entries must be positive and finite");
    }
    return InitialScaling(Kind::Diagonal, 1.0, std::move(diag));
}

Vector InitialScaling::apply(const Vector& q) const {
    switch (kind_) {
        case Kind::Identity: return q;
        case Kind::Scalar: return gamma_ * q;
        case Kind::Diagonal:
            require_same_dim(diag_, q, "InitialScaling::apply");
            return diag_.cwiseProduct(q);
    }
    return q;
}

double InitialScaling::min_eigenvalue() const {
    return kind_ == Kind::Diagonal ? diag_.minCoeff() : gamma_;
}

double InitialScaling::max_eigenvalue() const {
    return kind_ == Kind::Diagonal ? diag_.maxCoeff() : gamma_;
}

Matrix InitialScaling::dense(Index d) const {
    if (kind_ == Kind::Diagonal) {
        if (diag_.size() != d) throw ContractViolation("InitialScaling::dense: dimension mismatch");
        return diag_.asDiagonal();
    }
    return gamma_ * Matrix::Identity(d, d);
}

Vector classic_two_loop(const LbfgsMemory& memory, const Vector& g, const InitialScaling& h0) {
    const std::size_t m = memory.size();
    if (m > 0) require_same_dim(memory.pair(0).s, g, "classic_two_loop");

    std::vector<long double> rho(m), alpha(m);
    Vector q = -g;
    for (std::size_t k = m; k-- > 0;) {
        const auto& p = memory.pair(k);
        const double ys = wide_dot(p.y, p.s);
        if (!(ys > 0.0)) throw ContractViolation("classic_two_loop: non-positive curvature y's");
        rho[k] = 1.0L / ys;
        alpha[k] = rho[k] * wide_dot(p.s, q);
        q -= static_cast<double>(alpha[k]) * p.y;
    }
    Vector r = h0.apply(q);
    for (std::size_t k = 0; k < m; ++k) {
        const auto& p = memory.pair(k);
        const long double beta = rho[k] * wide_dot(p.y, r);
        r += static_cast<double>(alpha[k] - beta) * p.s;
    }
    return r;
}

DotMatrix dot_matrix(const LbfgsMemory& memory, const Vector& g, VectorOpCounter* counter) {
    const std::size_t m = memory.size();
    if (m == 0) throw ContractViolation("dot_matrix: empty memory");
    require_same_dim(memory.pair(0).s, g, "dot_matrix");
    DotMatrix M;
    M.m = m;
    M.entries.resize(static_cast<Index>(m + 1), static_cast<Index>(m));
    for (std::size_t p = 0; p < m; ++p) {
        for (std::size_t q = 0; q < m; ++q) {
            M.entries(static_cast<Index>(p), static_cast<Index>(q)) =
                wide_dot(memory.pair(p).y, memory.pair(q).s);
        }
    }
    for (std::size_t q = 0; q < m; ++q) {
        M.entries(static_cast<Index>(m), static_cast<Index>(q)) = wide_dot(g, memory.pair(q).s);
    }
    if (counter) counter->dots += static_cast<std::int64_t>((m + 1) * m);
    return M;
}

namespace detail {

CoefficientState vector_free_first_loop(const DotMatrix& M) {
    const std::size_t m = M.m;
    CoefficientState st;
    st.delta.assign(2 * m + 2, 0.0L);
    st.alpha.assign(m, 0.0L);
    st.delta[0] = 1.0L;
    st.delta[2 * m + 1] = -1.0L;
    for (std::size_t j = m; j-- > 0;) {
        const long double diag = M(j, j);
        if (!(diag > 0.0L)) throw ContractViolation("vector_free_two_loop: non-positive curvature y's");
        long double acc = 0.0L;
        // rows l = 0..m of M pair with delta_{m+1+l}
        for (std::size_t l = 0; l <= m; ++l) acc += st.delta[m + 1 + l] * M(l, j);
        st.alpha[j] = acc / diag;
        st.delta[m + 1 + j] -= st.alpha[j];
    }
    return st;
}

Vector combine_q(const LbfgsMemory& memory, const Vector& g, const CoefficientState& st,
                 VectorOpCounter* counter) {
    const std::size_t m = memory.size();
    Vector q = static_cast<double>(st.delta[2 * m + 1]) * g;
    for (std::size_t j = 0; j < m; ++j) {
        q += static_cast<double>(st.delta[m + 1 + j]) * memory.pair(j).y;
    }
    if (counter) counter->axpys += static_cast<std::int64_t>(m + 1);
    return q;
}

void vector_free_second_loop(const DotMatrix& M, const std::vector<double>& Y, CoefficientState& st) {
    const std::size_t m = M.m;
    for (std::size_t j = 0; j < m; ++j) {
        long double acc = st.delta[0] * Y[j];
        for (std::size_t l = 0; l < m; ++l) acc += st.delta[1 + l] * M(j, l);
        const long double beta = acc / M(j, j);
        st.delta[1 + j] += st.alpha[j] - beta;
    }
}

Vector combine_direction(const LbfgsMemory& memory, const Vector& r0, const CoefficientState& st,
                         VectorOpCounter* counter) {
    const std::size_t m = memory.size();
    Vector p = static_cast<double>(st.delta[0]) * r0;
    for (std::size_t j = 0; j < m; ++j) p += static_cast<double>(st.delta[1 + j]) * memory.pair(j).s;
    if (counter) counter->axpys += static_cast<std::int64_t>(m + 1);
    return p;
}

DirectionResult to_result(Vector direction, const CoefficientState& st) {
    DirectionResult out;
    out.direction = std::move(direction);
    out.deltas.assign(st.delta.begin(), st.delta.end());
    out.alphas.assign(st.alpha.begin(), st.alpha.end());
    return out;
}

}  // namespace detail

DirectionResult vector_free_two_loop(const LbfgsMemory& memory, const Vector& g,
                                     const InitialScaling& h0, VectorOpCounter* counter) {
    const std::size_t m = memory.size();
    if (m == 0) {
        detail::CoefficientState st;
        st.delta = {1.0L, -1.0L};
        Vector r0 = h0.apply(-g);
        if (counter) {
            counter->axpys += 2;
            counter->h0_applications += 1;
        }
        return detail::to_result(std::move(r0), st);
    }

    const DotMatrix M = dot_matrix(memory, g, counter);
    detail::CoefficientState st = detail::vector_free_first_loop(M);
    const Vector q = detail::combine_q(memory, g, st, counter);
    const Vector r0 = h0.apply(q);
    if (counter) counter->h0_applications += 1;

    std::vector<double> Y(m);
    for (std::size_t j = 0; j < m; ++j) Y[j] = wide_dot(memory.pair(j).y, r0);
    if (counter) counter->dots += static_cast<std::int64_t>(m);

    detail::vector_free_second_loop(M, Y, st);
    return detail::to_result(detail::combine_direction(memory, r0, st, counter), st);
}

}  // namespace slbfgs
