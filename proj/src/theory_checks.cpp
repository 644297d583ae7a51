#include "slbfgs/theory_checks.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numeric>

namespace slbfgs {

double beta_factor(Index n, Index b) {
    if (b < 1 || b > n) throw ContractViolation("beta_factor: need 1 <= b <= n");
    if (n == 1) return 0.0;
    return static_cast<double>(n - b) / (static_cast<double>(b) * static_cast<double>(n - 1));
}

Matrix materialize_h(const LbfgsMemory& memory, const InitialScaling& h0, Index d) {
    Matrix H(d, d);
    for (Index j = 0; j < d; ++j) H.col(j) = -classic_two_loop(memory, Vector::Unit(d, j), h0);
    return H;
}

Matrix materialize_smoothing(const ProblemOracle& oracle, Smoothing kind, const Vector& w, const BatchSpec& S) {
    const Index d = oracle.dim();
    Matrix B(d, d);
    for (Index j = 0; j < d; ++j) {
        const Vector e = Vector::Unit(d, j);
        B.col(j) = kind == Smoothing::Hessian ? oracle.hessian_vec(w, S, e) : oracle.ggn_vec(w, S, e);
    }
    return 0.5 * (B + B.transpose());
}

namespace {

Vector sym_eigenvalues(const Matrix& A) {
    const Matrix S = 0.5 * (A + A.transpose());
    return Eigen::SelfAdjointEigenSolver<Matrix>(S, Eigen::EigenvaluesOnly).eigenvalues();
}

}  // namespace

CurvatureRecorder::CurvatureRecorder(const ProblemOracle& oracle, Smoothing kind, std::size_t m)
    : oracle_(oracle), kind_(kind) {
    trace_.d = oracle.dim();
    trace_.m = m;
}

void CurvatureRecorder::operator()(const StepView& step) {
    const Index d = trace_.d;
    IterateSample it;
    it.step = step.step;
    it.h_eigs = sym_eigenvalues(materialize_h(*step.memory_used, *step.h0, d));
    const InitialScaling& h0 = *step.h0;
    it.h0_min = h0.min_eigenvalue();
    it.h0_max = h0.max_eigenvalue();
    it.pairs = step.memory_used->size();
    trace_.iterates.push_back(std::move(it));

    if (step.s && step.y) {
        // the smoothing matrix that produced y_k; evaluated at w_k
        const Vector ev = sym_eigenvalues(materialize_smoothing(oracle_, kind_, *step.w_before, *step.batch));
        trace_.smoothing_min = std::min(trace_.smoothing_min, ev.minCoeff());
        trace_.smoothing_max = std::max(trace_.smoothing_max, ev.maxCoeff());
        PairSample p;
        p.step = step.step;
        const double ys = step.y->dot(*step.s);
        p.yy_over_ys = step.y->squaredNorm() / ys;
        p.ys_over_ss = ys / step.s->squaredNorm();
        p.accepted = step.pair_accepted;
        trace_.pairs.push_back(p);
    }
}

double EigenConstants::c1() const { return static_cast<double>(d) / sigma + static_cast<double>(m) * Lambda_hat; }

double EigenConstants::log_det_lower() const {
    return -static_cast<double>(d) * std::log(Sigma) + static_cast<double>(m) * std::log(lambda_hat / c1());
}

double EigenConstants::mu1() const { return 1.0 / c1(); }

double EigenConstants::log_mu2() const { return static_cast<double>(d - 1) * std::log(c1()) - log_det_lower(); }

EigenBoundReport check_eigen_bounds(const CurvatureTrace& trace, double slack) {
    EigenBoundReport r;
    if (trace.iterates.empty()) return r;
    EigenConstants& c = r.constants;
    c.d = trace.d;
    c.m = trace.m;
    c.sigma = std::numeric_limits<double>::infinity();
    c.Sigma = 0.0;
    for (const auto& it : trace.iterates) {
        c.sigma = std::min(c.sigma, it.h0_min);
        c.Sigma = std::max(c.Sigma, it.h0_max);
    }
    // Without any pair the smoothing bounds do not enter; keep them neutral.
    c.lambda_hat = trace.pairs.empty() ? 1.0 : trace.smoothing_min;
    c.Lambda_hat = trace.pairs.empty() ? 1.0 : trace.smoothing_max;

    auto violate = [&](long step, const std::string& what) {
        if (r.violations++ == 0) {
            r.first_violation_step = step;
            r.first_violation = what;
        }
    };
    if (!(c.lambda_hat > 0.0)) violate(-1, "smoothing matrices are not positive definite");

    const double mu1 = c.mu1();
    const double log_mu2 = c.log_mu2();
    r.min_h_eig = std::numeric_limits<double>::infinity();
    r.max_h_eig = 0.0;
    r.trace_margin = std::numeric_limits<double>::infinity();
    r.det_margin = std::numeric_limits<double>::infinity();
    for (const auto& it : trace.iterates) {
        ++r.iterates_checked;
        const double lo = it.h_eigs.minCoeff();
        const double hi = it.h_eigs.maxCoeff();
        r.min_h_eig = std::min(r.min_h_eig, lo);
        r.max_h_eig = std::max(r.max_h_eig, hi);
        if (!(lo > 0.0)) {
            violate(it.step, "H_k is not positive definite");
            continue;
        }
        // inverse approximation with the pairs actually stored at this iterate
        EigenConstants local = c;
        local.m = it.pairs;
        local.sigma = it.h0_min;
        local.Sigma = it.h0_max;
        const double b_max = 1.0 / lo;
        const double log_det_b = -it.h_eigs.array().log().sum();
        const double tmargin = 1.0 - b_max / local.c1();
        const double dmargin = log_det_b - local.log_det_lower();
        r.trace_margin = std::min(r.trace_margin, tmargin);
        r.det_margin = std::min(r.det_margin, dmargin);
        if (tmargin < -slack) violate(it.step, "largest eigenvalue of the inverse exceeds C1");
        if (dmargin < -slack) violate(it.step, "determinant of the inverse below the lower bound");
        if (lo < mu1 * (1.0 - slack)) violate(it.step, "eigenvalue below mu1");
        if (std::log(hi) > log_mu2 + slack) violate(it.step, "eigenvalue above mu2");
    }
    for (const auto& p : trace.pairs) {
        if (!p.accepted) continue;
        ++r.pairs_checked;
        if (p.yy_over_ys < c.lambda_hat * (1.0 - slack) || p.yy_over_ys > c.Lambda_hat * (1.0 + slack))
            violate(p.step, "|y|^2 / y's outside [lambda_hat, Lambda_hat]");
        if (p.ys_over_ss < c.lambda_hat * (1.0 - slack)) violate(p.step, "y's / |s|^2 below lambda_hat");
    }
    return r;
}

CautiousPairReport check_cautious_pairs(const CurvatureTrace& trace, double epsilon, double slack) {
    CautiousPairReport r;
    r.epsilon = epsilon;
    r.Lambda_hat = trace.smoothing_max;
    for (const auto& p : trace.pairs) {
        if (!p.accepted) continue;
        ++r.pairs_checked;
        const bool ok = p.yy_over_ys >= epsilon * (1.0 - slack) && p.yy_over_ys <= r.Lambda_hat * (1.0 + slack) &&
                        p.ys_over_ss >= epsilon * (1.0 - slack);
        if (!ok && r.violations++ == 0) r.first_violation_step = p.step;
    }
    return r;
}

void for_each_subset(Index n, Index b, const std::function<void(const std::vector<Index>&)>& fn) {
    if (b < 0 || b > n) throw ContractViolation("for_each_subset: need 0 <= b <= n");
    std::vector<Index> idx(static_cast<std::size_t>(b));
    std::iota(idx.begin(), idx.end(), Index{0});
    while (true) {
        fn(idx);
        Index i = b - 1;
        while (i >= 0 && idx[static_cast<std::size_t>(i)] == n - b + i) --i;
        if (i < 0) return;
        ++idx[static_cast<std::size_t>(i)];
        for (Index j = i + 1; j < b; ++j) idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
    }
}

VarianceReport check_variance_bound(const std::vector<Vector>& xi, Index b) {
    const Index n = static_cast<Index>(xi.size());
    if (n < 1 || b < 1 || b > n) throw ContractViolation("check_variance_bound: need 1 <= b <= n");
    Vector mean = Vector::Zero(xi.front().size());
    double sq = 0.0;
    for (const auto& v : xi) {
        mean += v;
        sq += v.squaredNorm();
    }
    mean /= static_cast<double>(n);

    long double total = 0.0L;
    long count = 0;
    for_each_subset(n, b, [&](const std::vector<Index>& S) {
        Vector m = Vector::Zero(mean.size());
        for (Index i : S) m += xi[static_cast<std::size_t>(i)];
        m /= static_cast<double>(b);
        total += (m - mean).squaredNorm();
        ++count;
    });
    VarianceReport r;
    r.lhs = static_cast<double>(total / count);
    r.rhs = beta_factor(n, b) / static_cast<double>(n) * sq;
    return r;
}

BatchBoundConstants quadratic_constants(const ProblemOracle& oracle, const Vector& w_star) {
    BatchBoundConstants c;
    const Index n = oracle.n();
    c.lambda = sym_eigenvalues(materialize_smoothing(oracle, Smoothing::Hessian, w_star, BatchSpec::full(n))).minCoeff();
    c.Lambda = 0.0;
    double g2 = 0.0;
    for (Index i = 0; i < n; ++i) {
        BatchSpec one;
        one.indices = {i};
        c.Lambda = std::max(c.Lambda,
                            sym_eigenvalues(materialize_smoothing(oracle, Smoothing::Hessian, w_star, one)).maxCoeff());
        g2 += oracle.sample_gradient(w_star, i).squaredNorm();
    }
    c.N = 2.0 * g2 / static_cast<double>(n);
    c.f_star = oracle.full_loss(w_star);
    return c;
}

BatchGradientReport check_batch_gradient_bound(const ProblemOracle& oracle, const Vector& w, Index b,
                                               const BatchBoundConstants& c) {
    const Index n = oracle.n();
    long double total = 0.0L;
    long count = 0;
    for_each_subset(n, b, [&](const std::vector<Index>& S) {
        total += oracle.batch_gradient(w, std::span<const Index>(S)).squaredNorm();
        ++count;
    });
    BatchGradientReport r;
    r.lhs = static_cast<double>(total / count);
    const double beta = beta_factor(n, b);
    const double gap = oracle.full_loss(w) - c.f_star;
    const double g2 = oracle.full_gradient(w).squaredNorm();
    r.rhs_convex = 4.0 * beta * c.Lambda * gap + 2.0 * g2 + c.N;
    r.rhs_strong = 4.0 * beta * c.Lambda * (c.Lambda / c.lambda) * gap + 2.0 * g2 + c.N;
    return r;
}

double tail_mean(const std::vector<double>& trace, double fraction) {
    if (trace.empty()) throw ContractViolation("tail_mean: empty trace");
    const auto len = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(fraction * static_cast<double>(trace.size()))));
    double s = 0.0;
    for (std::size_t i = trace.size() - len; i < trace.size(); ++i) s += trace[i];
    return s / static_cast<double>(len);
}

PlateauComparison compare_plateaus(const std::vector<double>& alphas, const std::vector<std::vector<double>>& plateaus,
                                   int min_seeds) {
    if (alphas.size() != plateaus.size() || alphas.size() < 2)
        throw ContractViolation("compare_plateaus: need a plateau list per alpha, at least two alphas");
    PlateauComparison r;
    r.alphas = alphas;
    r.seeds = static_cast<int>(plateaus.front().size());
    for (const auto& p : plateaus)
        if (static_cast<int>(p.size()) != r.seeds) throw ContractViolation("compare_plateaus: ragged seed lists");
    r.conclusive = r.seeds >= min_seeds && r.seeds >= 2;
    for (const auto& p : plateaus) {
        const double mean = std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size());
        double var = 0.0;
        for (double v : p) var += (v - mean) * (v - mean);
        var /= std::max<double>(1.0, static_cast<double>(p.size()) - 1.0);
        r.mean.push_back(mean);
        r.std_error.push_back(std::sqrt(var / static_cast<double>(p.size())));
    }
    std::vector<std::size_t> order(alphas.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return alphas[a] < alphas[b]; });
    r.monotone = true;
    for (std::size_t i = 1; i < order.size(); ++i)
        if (r.mean[order[i]] < r.mean[order[i - 1]]) r.monotone = false;

    const auto& big = plateaus[order.back()];
    const auto& small = plateaus[order.front()];
    std::vector<double> diff(big.size());
    for (std::size_t s = 0; s < big.size(); ++s) diff[s] = big[s] - small[s];
    const double dm = std::accumulate(diff.begin(), diff.end(), 0.0) / static_cast<double>(diff.size());
    double dv = 0.0;
    for (double v : diff) dv += (v - dm) * (v - dm);
    dv /= std::max<double>(1.0, static_cast<double>(diff.size()) - 1.0);
    const double se = std::sqrt(dv / static_cast<double>(diff.size()));
    r.t_statistic = se > 0.0 ? dm / se : (dm > 0.0 ? std::numeric_limits<double>::infinity() : 0.0);
    r.significant = r.t_statistic > 2.0;
    return r;
}

namespace {

double ls_slope(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxy / sxx;
}

}  // namespace

double loglog_slope(const std::vector<double>& trace, double offset, std::size_t first) {
    if (first + 2 > trace.size()) throw ContractViolation("loglog_slope: need at least two points");
    std::vector<double> x, y;
    for (std::size_t k = first; k < trace.size(); ++k) {
        if (!(trace[k] > 0.0)) continue;
        x.push_back(std::log(static_cast<double>(k) + offset));
        y.push_back(std::log(trace[k]));
    }
    if (x.size() < 2) throw ContractViolation("loglog_slope: not enough positive values");
    return ls_slope(x, y);
}

double log_linear_rate(const std::vector<double>& trace, std::size_t first, std::size_t last) {
    if (last > trace.size() || first + 2 > last) throw ContractViolation("log_linear_rate: bad range");
    std::vector<double> x, y;
    for (std::size_t k = first; k < last; ++k) {
        if (!(trace[k] > 0.0)) continue;
        x.push_back(static_cast<double>(k));
        y.push_back(std::log(trace[k]));
    }
    if (x.size() < 2) throw ContractViolation("log_linear_rate: not enough positive values");
    return ls_slope(x, y);
}

std::vector<double> running_average(const std::vector<double>& trace) {
    std::vector<double> out(trace.size());
    long double s = 0.0L;
    for (std::size_t i = 0; i < trace.size(); ++i) {
        s += trace[i];
        out[i] = static_cast<double>(s / static_cast<long double>(i + 1));
    }
    return out;
}

double admissible_alpha(double lambda, double Lambda, double mu1, double mu2, double beta) {
    return lambda * mu1 / (mu2 * mu2 * (lambda + Lambda * beta) * Lambda);
}

}  // namespace slbfgs
