#include "doctest.h"
#include "support.hpp"

#include "slbfgs/theory_checks.hpp"

#include <Eigen/Dense>
#include <cmath>

using namespace slbfgs;
using slbfgs::testing::random_vector;

namespace {

std::shared_ptr<const Dataset> synth(SynthKind kind, Index n, Index d, std::uint64_t seed, double noise) {
    SynthParams p;
    p.kind = kind;
    p.n = n;
    p.d = d;
    p.seed = seed;
    p.noise = noise;
    return std::make_shared<const Dataset>(synth_dataset(p).data);
}

// (A'A/n + reg I) w = A'b/n
Vector least_squares_minimizer(const Dataset& ds, double reg) {
    const Matrix A = Matrix(ds.features);
    const double n = static_cast<double>(ds.n());
    const Matrix K = A.transpose() * A / n + reg * Matrix::Identity(ds.d(), ds.d());
    return K.ldlt().solve(A.transpose() * ds.labels / n);
}

std::unique_ptr<ProblemOracle> least_squares(std::shared_ptr<const Dataset> data, double reg) {
    ProblemSpec spec;
    spec.kind = ProblemKind::LeastSquares;
    spec.reg = reg;
    return make_problem(spec, std::move(data));
}

}  // namespace

TEST_CASE("beta_factor") {
    CHECK(beta_factor(10, 10) == 0.0);
    CHECK(beta_factor(10, 1) == 1.0);
    CHECK(beta_factor(5, 2) == doctest::Approx(3.0 / 8.0).epsilon(1e-15));
    CHECK_THROWS_AS(beta_factor(5, 6), ContractViolation);
}

TEST_CASE("materialize_h") {
    SUBCASE("no pairs, scalar h0") {
        LbfgsMemory mem(3);
        const Matrix H = materialize_h(mem, InitialScaling::scalar(2.5), 4);
        CHECK((H - 2.5 * Matrix::Identity(4, 4)).cwiseAbs().maxCoeff() == 0.0);
    }
    SUBCASE("s = y = e1 keeps the identity") {
        LbfgsMemory mem(1);
        REQUIRE(mem.push_pair(Vector::Unit(3, 0), Vector::Unit(3, 0)));
        const Matrix H = materialize_h(mem, InitialScaling::identity(), 3);
        CHECK((H - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-15);
    }
    SUBCASE("random instances match the dense BFGS inverse and are symmetric") {
        Rng rng(3);
        for (int trial = 0; trial < 100; ++trial) {
            const Index d = 2 + static_cast<Index>(uniform_below(rng, 12));
            const auto m = static_cast<std::size_t>(uniform_below(rng, 6));
            const LbfgsMemory mem = slbfgs::testing::random_memory(rng, d, m);
            const Vector diag = slbfgs::testing::random_positive(rng, d, 0.1, 10.0);
            const Matrix H = materialize_h(mem, InitialScaling::diagonal(diag), d);
            const Matrix ref = slbfgs::testing::dense_bfgs_inverse(mem, Matrix(diag.asDiagonal()));
            CHECK((H - ref).norm() <= 1e-10 * ref.norm());
            CHECK((H - H.transpose()).cwiseAbs().maxCoeff() <= 1e-9 * H.cwiseAbs().maxCoeff());
        }
    }
}

TEST_CASE("eigenvalue bounds along optimizer runs") {
    SUBCASE("m = 0 with identity scaling gives H_k = I") {
        auto data = synth(SynthKind::Logistic, 100, 5, 2, 0.1);
        auto f = make_problem(ProblemSpec{}, data);
        OptimizerConfig cfg;
        cfg.memory = 0;
        cfg.batch_size = 10;
        cfg.scaling = InitialScalingMode::Identity;
        CurvatureRecorder rec(*f, Smoothing::Hessian, 0);
        Optimizer opt(cfg, *f, Vector::Zero(5));
        opt.set_observer(std::ref(rec));
        for (int i = 0; i < 20; ++i) opt.step();
        for (const auto& it : rec.trace().iterates) {
            CHECK(it.h_eigs.minCoeff() == 1.0);
            CHECK(it.h_eigs.maxCoeff() == 1.0);
        }
        const auto rep = check_eigen_bounds(rec.trace());
        CHECK(rep.passed());
        CHECK(rep.constants.mu1() == doctest::Approx(1.0 / 5.0));
    }
    SUBCASE("regularized logistic, d = 10, m = 5, 200 iterations") {
        auto data = synth(SynthKind::Logistic, 500, 10, 4, 0.1);
        auto f = make_problem(ProblemSpec{}, data);
        OptimizerConfig cfg;
        cfg.memory = 5;
        cfg.batch_size = 32;
        cfg.lr.alpha = 0.02;
        CurvatureRecorder rec(*f, Smoothing::Hessian, 5);
        Optimizer opt(cfg, *f, Vector::Zero(10));
        opt.set_observer(std::ref(rec));
        for (int i = 0; i < 200; ++i) opt.step();
        const auto rep = check_eigen_bounds(rec.trace());
        INFO(rep.first_violation);
        CHECK(rep.passed());
        CHECK(rep.iterates_checked == 200);
        CHECK(rep.pairs_checked > 100);
        CHECK(rep.trace_margin > 0.0);
        CHECK(rep.min_h_eig >= rep.constants.mu1());
    }
    SUBCASE("a tampered trace is reported") {
        CurvatureTrace t;
        t.d = 2;
        t.m = 1;
        IterateSample it;
        it.h_eigs = Vector::Constant(2, 1e-6);  // inverse far above C1 = 2 + 1
        it.h0_min = it.h0_max = 1.0;
        it.pairs = 1;
        t.iterates.push_back(it);
        t.pairs.push_back(PairSample{0, 1.0, 1.0, true});
        t.smoothing_min = t.smoothing_max = 1.0;
        const auto rep = check_eigen_bounds(t);
        CHECK_FALSE(rep.passed());
        CHECK(rep.first_violation_step == 0);
    }
}

TEST_CASE("cautious pairs on the MLP satisfy the nonconvex per-pair bounds") {
    SynthParams p;
    p.kind = SynthKind::Multiclass;
    p.n = 200;
    p.d = 4;
    p.num_classes = 3;
    p.seed = 5;
    auto data = std::make_shared<const Dataset>(synth_dataset(p).data);
    ProblemSpec spec;
    spec.kind = ProblemKind::MlpCrossEntropy;
    spec.hidden = 3;
    auto f = make_problem(spec, data);
    {
        const Variant v = Variant::LbfgsF;
        OptimizerConfig cfg;
        cfg.variant = v;
        cfg.memory = 5;
        cfg.batch_size = 20;
        cfg.lr.alpha = 0.01;
        CurvatureRecorder rec(*f, Smoothing::Ggn, 5);
        Optimizer opt(cfg, *f, f->initial_point(1));
        opt.set_observer(std::ref(rec));
        for (int i = 0; i < 150; ++i) opt.step();
        const auto rep = check_cautious_pairs(rec.trace(), cfg.cautious_eps);
        CHECK(rep.passed());
        CHECK(rep.pairs_checked > 20);
    }
}

TEST_CASE("subset enumeration") {
    long count = 0;
    std::vector<Index> last;
    for_each_subset(6, 3, [&](const std::vector<Index>& S) {
        ++count;
        CHECK(std::is_sorted(S.begin(), S.end()));
        CHECK(S != last);
        last = S;
    });
    CHECK(count == 20);
    count = 0;
    for_each_subset(4, 0, [&](const std::vector<Index>& S) {
        CHECK(S.empty());
        ++count;
    });
    CHECK(count == 1);
}

TEST_CASE("variance bound over all subsets") {
    SUBCASE("full batch") {
        Rng rng(1);
        std::vector<Vector> xi;
        for (int i = 0; i < 5; ++i) xi.push_back(random_vector(rng, 3));
        const auto r = check_variance_bound(xi, 5);
        CHECK(r.lhs <= 1e-30);
        CHECK(r.rhs == 0.0);
        CHECK(r.holds());
    }
    SUBCASE("antipodal pair attains equality") {
        const auto r = check_variance_bound({Vector::Unit(2, 0), -Vector::Unit(2, 0)}, 1);
        CHECK(r.lhs == 1.0);
        CHECK(r.rhs == 1.0);
        CHECK(r.holds(0.0));
    }
    SUBCASE("random sets, every n <= 8 and b") {
        Rng rng(9);
        for (int inst = 0; inst < 50; ++inst) {
            const Index n = 2 + static_cast<Index>(uniform_below(rng, 7));
            const Index d = 1 + static_cast<Index>(uniform_below(rng, 4));
            std::vector<Vector> xi;
            Vector mean = Vector::Zero(d);
            for (Index i = 0; i < n; ++i) {
                xi.push_back(random_vector(rng, d, 3.0) + Vector::Constant(d, 1.0));
                mean += xi.back();
            }
            mean /= static_cast<double>(n);
            double centered = 0.0;
            for (const auto& v : xi) centered += (v - mean).squaredNorm();
            for (Index b = 1; b <= n; ++b) {
                const auto r = check_variance_bound(xi, b);
                CHECK(r.holds());
                // without-replacement sampling variance of the mean
                const double exact = beta_factor(n, b) * centered / static_cast<double>(n);
                CHECK(std::abs(r.lhs - exact) <= 1e-12 * std::max(1.0, exact));
            }
        }
    }
}

TEST_CASE("batch gradient bounds over all subsets") {
    SUBCASE("regularized least squares, grid of w") {
        Rng rng(17);
        for (int inst = 0; inst < 50; ++inst) {
            const Index n = 2 + static_cast<Index>(uniform_below(rng, 7));
            auto data = synth(SynthKind::LeastSquares, n, 3, 100 + static_cast<std::uint64_t>(inst), 0.5);
            const double reg = 0.1;
            auto f = least_squares(data, reg);
            const Vector ws = least_squares_minimizer(*data, reg);
            CHECK(f->full_gradient(ws).norm() <= 1e-12);
            const BatchBoundConstants c = quadratic_constants(*f, ws);
            CHECK(c.lambda >= reg * (1.0 - 1e-12));
            for (int g = 0; g < 5; ++g) {
                const Vector w = ws + random_vector(rng, 3, std::pow(10.0, g - 2));
                for (Index b = 1; b <= n; ++b) {
                    const auto r = check_batch_gradient_bound(*f, w, b, c);
                    CHECK(r.holds());
                    CHECK(r.rhs_convex <= r.rhs_strong);
                }
            }
        }
    }
    SUBCASE("full batch reduces to the deterministic gradient") {
        auto data = synth(SynthKind::LeastSquares, 6, 3, 3, 0.5);
        auto f = least_squares(data, 0.05);
        const Vector ws = least_squares_minimizer(*data, 0.05);
        const auto c = quadratic_constants(*f, ws);
        const Vector w = Vector::Constant(3, 0.7);
        const auto r = check_batch_gradient_bound(*f, w, 6, c);
        CHECK(r.lhs == doctest::Approx(f->full_gradient(w).squaredNorm()).epsilon(1e-13));
        CHECK(r.holds());
    }
    SUBCASE("interpolation at the optimum gives zero on both sides") {
        auto data = synth(SynthKind::LeastSquares, 6, 3, 8, 0.0);
        auto f = least_squares(data, 0.0);
        const Vector ws = least_squares_minimizer(*data, 0.0);
        const auto c = quadratic_constants(*f, ws);
        CHECK(c.N <= 1e-24);
        for (Index b = 1; b <= 6; ++b) {
            const auto r = check_batch_gradient_bound(*f, ws, b, c);
            CHECK(r.lhs <= 1e-24);
            CHECK(r.holds());
        }
    }
}

TEST_CASE("trace statistics") {
    CHECK(tail_mean({1, 2, 3, 4, 5, 6, 7, 8, 9, 10}) == 9.5);
    CHECK(tail_mean({4.0}) == 4.0);
    std::vector<double> inv;
    for (int k = 0; k < 200; ++k) inv.push_back(3.0 / (k + 5.0));
    CHECK(loglog_slope(inv, 5.0, 10) == doctest::Approx(-1.0).epsilon(1e-12));
    std::vector<double> geo;
    for (int k = 0; k < 50; ++k) geo.push_back(std::pow(0.5, k));
    CHECK(log_linear_rate(geo, 0, 50) == doctest::Approx(std::log(0.5)).epsilon(1e-12));
    const auto ra = running_average({2, 4, 6});
    CHECK(ra == std::vector<double>{2, 3, 4});
}

TEST_CASE("plateau comparison") {
    std::vector<std::vector<double>> p(2);
    for (int s = 0; s < 20; ++s) {
        p[0].push_back(1.0 + 0.01 * s);   // alpha = 0.1
        p[1].push_back(0.25 + 0.011 * s); // alpha = 0.025
    }
    auto r = compare_plateaus({0.1, 0.025}, p);
    CHECK(r.conclusive);
    CHECK(r.monotone);
    CHECK(r.significant);
    CHECK(r.passed());
    std::swap(p[0], p[1]);
    CHECK_FALSE(compare_plateaus({0.1, 0.025}, p).passed());
    p[0].resize(5);
    p[1].resize(5);
    CHECK_FALSE(compare_plateaus({0.1, 0.025}, p).conclusive);
}
