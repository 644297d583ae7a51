#pragma once

#include "slbfgs/common.hpp"
#include "slbfgs/curvature_memory.hpp"
#include "slbfgs/optimizer.hpp"
#include "slbfgs/problems.hpp"
#include "slbfgs/two_loop.hpp"

#include <functional>
#include <string>
#include <vector>

namespace slbfgs {

/// (n - b) / (b (n - 1)); zero at b = n.
double beta_factor(Index n, Index b);

/// Dense H_k with column j = H e_j = -classic_two_loop(memory, e_j). Intended for d <= 50.
Matrix materialize_h(const LbfgsMemory& memory, const InitialScaling& h0, Index d);

/// Dense batch Hessian or GGN at (w, S), assembled from matrix-vector products.
enum class Smoothing { Hessian, Ggn };
Matrix materialize_smoothing(const ProblemOracle& oracle, Smoothing kind, const Vector& w, const BatchSpec& S);

struct IterateSample {
    long step = 0;
    Vector h_eigs;  // ascending eigenvalues of H_k
    double h0_min = 0.0;
    double h0_max = 0.0;
    std::size_t pairs = 0;
};

struct PairSample {
    long step = 0;
    double yy_over_ys = 0.0;  // |y|^2 / y's
    double ys_over_ss = 0.0;  // y's / |s|^2
    bool accepted = false;
};

struct CurvatureTrace {
    Index d = 0;
    std::size_t m = 0;
    std::vector<IterateSample> iterates;
    std::vector<PairSample> pairs;
    /// Extremal eigenvalues of the smoothing matrices over every visited (w_k, S_k).
    double smoothing_min = std::numeric_limits<double>::infinity();
    double smoothing_max = -std::numeric_limits<double>::infinity();
};

/// Optimizer observer that materializes H_k and the smoothing matrix at every step.
class CurvatureRecorder {
public:
    CurvatureRecorder(const ProblemOracle& oracle, Smoothing kind, std::size_t m);
    void operator()(const StepView& step);
    const CurvatureTrace& trace() const noexcept { return trace_; }

private:
    const ProblemOracle& oracle_;
    Smoothing kind_;
    CurvatureTrace trace_;
};

/// Constants of the trace/determinant argument.
struct EigenConstants {
    Index d = 0;
    std::size_t m = 0;
    double sigma = 0.0, Sigma = 0.0;              // bounds on H_k^0
    double lambda_hat = 0.0, Lambda_hat = 0.0;    // bounds on the smoothing matrices
    double c1() const;                            // d / sigma + m * Lambda_hat
    double log_det_lower() const;                 // log of Sigma^{-d} (lambda_hat / C1)^m
    double mu1() const;                           // 1 / C1
    double log_mu2() const;                       // log of C1^{d-1} / det lower bound
};

struct EigenBoundReport {
    EigenConstants constants;
    long iterates_checked = 0;
    long pairs_checked = 0;
    long violations = 0;
    long first_violation_step = -1;
    std::string first_violation;
    double min_h_eig = 0.0, max_h_eig = 0.0;
    /// Smallest relative gaps (positive = inside the bound).
    double trace_margin = 0.0, det_margin = 0.0;
    bool passed() const noexcept { return violations == 0 && iterates_checked > 0; }
};

/// Checks lambda_max(H^-1) <= C1, det(H^-1) >= Sigma^-d (lambda_hat/C1)^m and
/// mu1 <= eig(H) <= mu2 at every iterate, plus the per-pair intermediates
/// lambda_hat <= |y|^2/y's <= Lambda_hat and y's/|s|^2 >= lambda_hat.
EigenBoundReport check_eigen_bounds(const CurvatureTrace& trace, double slack = 1e-8);

struct CautiousPairReport {
    long pairs_checked = 0;
    long violations = 0;
    long first_violation_step = -1;
    double epsilon = 0.0, Lambda_hat = 0.0;
    bool passed() const noexcept { return violations == 0 && pairs_checked > 0; }
};

/// eps <= |y|^2/y's <= Lambda_hat and y's/|s|^2 >= eps for every accepted pair.
CautiousPairReport check_cautious_pairs(const CurvatureTrace& trace, double epsilon, double slack = 1e-8);

/// Visits every size-b subset of {0..n-1} in lexicographic order.
void for_each_subset(Index n, Index b, const std::function<void(const std::vector<Index>&)>& fn);

struct VarianceReport {
    double lhs = 0.0;  // E |mean_S xi - mean xi|^2 over all size-b subsets
    double rhs = 0.0;  // (n-b) / (n b (n-1)) * sum |xi_i|^2
    bool holds(double tol = 1e-12) const noexcept { return lhs <= rhs + tol * std::max(1.0, rhs); }
};

VarianceReport check_variance_bound(const std::vector<Vector>& xi, Index b);

struct BatchBoundConstants {
    double lambda = 0.0;  // strong convexity of F
    double Lambda = 0.0;  // smoothness of every f_i
    double f_star = 0.0;
    double N = 0.0;       // 2 E_i |grad f_i(w*)|^2
};

/// Exact constants for a quadratic oracle (Hessians are constant) with minimizer w_star.
BatchBoundConstants quadratic_constants(const ProblemOracle& oracle, const Vector& w_star);

struct BatchGradientReport {
    double lhs = 0.0;           // E |grad F^S(w)|^2, exact over all subsets
    double rhs_strong = 0.0;    // 4 beta Lambda kappa (F - F*) + 2 |grad F|^2 + N
    double rhs_convex = 0.0;    // 4 beta Lambda (F - F*) + 2 |grad F|^2 + N
    bool holds(double tol = 1e-12) const noexcept {
        const double s = tol * std::max(1.0, rhs_strong);
        return lhs <= rhs_strong + s && lhs <= rhs_convex + s;
    }
};

BatchGradientReport check_batch_gradient_bound(const ProblemOracle& oracle, const Vector& w, Index b,
                                               const BatchBoundConstants& c);

/// Mean of the last `fraction` of a trace.
double tail_mean(const std::vector<double>& trace, double fraction = 0.2);

struct PlateauComparison {
    std::vector<double> alphas;      // as given
    std::vector<double> mean;        // seed-averaged plateau per alpha
    std::vector<double> std_error;
    int seeds = 0;
    bool conclusive = false;         // enough seeds
    bool monotone = false;           // plateau non-increasing as alpha decreases
    /// Paired t statistic of plateau(alpha_max) - plateau(alpha_min) across seeds.
    double t_statistic = 0.0;
    bool significant = false;        // t > 2
    bool passed() const noexcept { return conclusive && monotone && significant; }
};

/// plateaus[a][s] is the plateau of alpha a under seed s (same seeds for every alpha).
PlateauComparison compare_plateaus(const std::vector<double>& alphas,
                                   const std::vector<std::vector<double>>& plateaus, int min_seeds = 20);

/// Least-squares slope of log(trace[k]) against log(k + offset) over k in [first, trace.size()).
double loglog_slope(const std::vector<double>& trace, double offset, std::size_t first);

/// Least-squares slope of log(trace[k]) against k over [first, last); negative means geometric decay.
double log_linear_rate(const std::vector<double>& trace, std::size_t first, std::size_t last);

/// Running averages (1/L) sum_{k<L} trace[k].
std::vector<double> running_average(const std::vector<double>& trace);

/// Upper end of the admissible constant step size for strongly convex problems:
/// lambda mu1 / (mu2^2 (lambda + Lambda beta) Lambda), with f_i convex.
double admissible_alpha(double lambda, double Lambda, double mu1, double mu2, double beta);

}  // namespace slbfgs
