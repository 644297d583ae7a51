#include "doctest.h"
#include "support.hpp"

#include "slbfgs/problems.hpp"

#include <sstream>

using namespace slbfgs;
using slbfgs::testing::rel_err;

namespace {

std::shared_ptr<const Dataset> synth(SynthKind kind, Index n, Index d, std::uint64_t seed, double noise = 0.3,
                                     int classes = 3) {
    SynthParams p;
    p.kind = kind;
    p.n = n;
    p.d = d;
    p.seed = seed;
    p.noise = noise;
    p.num_classes = classes;
    return std::make_shared<const Dataset>(synth_dataset(p).data);
}

std::vector<std::unique_ptr<ProblemOracle>> all_kinds(std::uint64_t seed) {
    std::vector<std::unique_ptr<ProblemOracle>> out;
    out.push_back(std::make_unique<LogisticProblem>(synth(SynthKind::Logistic, 40, 6, seed), 0.05));
    out.push_back(std::make_unique<LeastSquaresProblem>(synth(SynthKind::LeastSquares, 40, 6, seed), 0.01));
    out.push_back(std::make_unique<MlpProblem>(synth(SynthKind::Multiclass, 40, 5, seed), 4, 1e-3));
    return out;
}

Vector random_point(const ProblemOracle& f, Rng& rng) {
    return testing::random_vector(rng, f.dim(), f.kind() == ProblemKind::MlpCrossEntropy ? 0.7 : 0.5);
}

/// Per-sample losses written out directly from the model definitions.
double naive_loss(const ProblemOracle& f, const Vector& w, const std::vector<Index>& S) {
    const Matrix A = Matrix(f.data().features);
    double acc = 0.0;
    for (Index i : S) {
        const double b = f.data().labels[i];
        switch (f.kind()) {
            case ProblemKind::Logistic: acc += std::log(1.0 + std::exp(-b * A.row(i).dot(w))); break;
            case ProblemKind::LeastSquares: acc += 0.5 * std::pow(A.row(i).dot(w) - b, 2); break;
            case ProblemKind::MlpCrossEntropy: {
                const auto& mlp = dynamic_cast<const MlpProblem&>(f);
                const Index D = A.cols(), H = mlp.hidden(), K = mlp.classes();
                const Eigen::Map<const Matrix> W1(w.data(), H, D);
                const Eigen::Map<const Vector> c1(w.data() + H * D, H);
                const Eigen::Map<const Matrix> W2(w.data() + H * D + H, K, H);
                const Eigen::Map<const Vector> c2(w.data() + H * D + H + K * H, K);
                const Vector h = (W1 * A.row(i).transpose() + c1).array().tanh().matrix();
                const Vector z = W2 * h + c2;
                acc += -std::log(std::exp(z[static_cast<Index>(b)]) / z.array().exp().sum());
                break;
            }
        }
    }
    return acc / static_cast<double>(S.size()) + 0.5 * f.regularization() * w.squaredNorm();
}

std::vector<Index> random_batch(Rng& rng, Index n) {
    const Index b = 1 + static_cast<Index>(uniform_below(rng, static_cast<std::uint64_t>(n)));
    return sample_batch(n, b, rng).indices;
}

}  // namespace

TEST_CASE("loss at trivial points") {
    SUBCASE("least squares with zero labels") {
        auto ds = std::make_shared<Dataset>(synth_dataset({SynthKind::LeastSquares, 10, 3, 1, 0.0, 3}).data);
        ds->labels.setZero();
        LeastSquaresProblem f(ds, 0.0);
        CHECK(f.full_loss(Vector::Zero(3)) == 0.0);
    }
    SUBCASE("logistic at zero is ln 2") {
        LogisticProblem f(synth(SynthKind::Logistic, 10, 3, 1), 0.1);
        CHECK(f.full_loss(Vector::Zero(3)) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
        CHECK(f.sample_loss(Vector::Zero(3), 4) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
    }
}

TEST_CASE("batch loss matches the per-sample recomputation") {
    Rng rng(10);
    for (auto& f : all_kinds(3)) {
        for (int t = 0; t < 20; ++t) {
            const Vector w = random_point(*f, rng);
            const auto S = random_batch(rng, f->n());
            REQUIRE(f->batch_loss(w, S) == doctest::Approx(naive_loss(*f, w, S)).epsilon(1e-12));
        }
    }
}

TEST_CASE("empty batch and bad dimensions are rejected") {
    auto fs = all_kinds(1);
    const std::vector<Index> none;
    const Vector w = Vector::Zero(fs[0]->dim());
    CHECK_THROWS_AS(fs[0]->batch_loss(w, none), ContractViolation);
    CHECK_THROWS_AS(fs[0]->batch_gradient(w, none), ContractViolation);
    CHECK_THROWS_AS(fs[0]->hessian_vec(w, none, w), ContractViolation);
    CHECK_THROWS_AS(fs[0]->batch_gradient(Vector::Zero(fs[0]->dim() + 1), BatchSpec::full(5)), ContractViolation);
}

TEST_CASE("gradient: full batch and exhaustive-subset unbiasedness") {
    Rng rng(11);
    auto ds_log = synth(SynthKind::Logistic, 7, 4, 2);
    auto ds_ls = synth(SynthKind::LeastSquares, 7, 4, 2);
    auto ds_mc = synth(SynthKind::Multiclass, 7, 3, 2);
    std::vector<std::unique_ptr<ProblemOracle>> fs;
    fs.push_back(std::make_unique<LogisticProblem>(ds_log, 0.1));
    fs.push_back(std::make_unique<LeastSquaresProblem>(ds_ls, 0.1));
    fs.push_back(std::make_unique<MlpProblem>(ds_mc, 3, 0.1));
    for (auto& f : fs) {
        const Vector w = random_point(*f, rng);
        const Vector full = f->full_gradient(w);
        CHECK(f->batch_gradient(w, BatchSpec::full(7)) == full);
        for (Index b = 1; b <= 7; ++b) {
            Vector mean = Vector::Zero(f->dim());
            double count = 0;
            testing::for_each_subset(7, b, [&](const std::vector<Index>& S) {
                mean += f->batch_gradient(w, S);
                count += 1;
            });
            mean /= count;
            REQUIRE(rel_err(mean, full) <= 1e-12);
        }
    }
}

TEST_CASE("finite-difference consistency of loss, gradient and Hessian-vector products") {
    Rng rng(12);
    const double eps = 1e-5;
    for (auto& f : all_kinds(4)) {
        double worst_g = 0.0, worst_h = 0.0;
        for (int t = 0; t < 30; ++t) {
            const Vector w = random_point(*f, rng);
            const Vector u = testing::random_vector(rng, f->dim());
            const auto S = random_batch(rng, f->n());
            const double fd = (f->batch_loss(w + eps * u, S) - f->batch_loss(w - eps * u, S)) / (2 * eps);
            const double an = f->batch_gradient(w, S).dot(u);
            worst_g = std::max(worst_g, std::abs(fd - an) / std::max(std::abs(an), 1e-3));
            const Vector fdh = (f->batch_gradient(w + eps * u, S) - f->batch_gradient(w - eps * u, S)) / (2 * eps);
            worst_h = std::max(worst_h, rel_err(f->hessian_vec(w, S, u), fdh));
        }
        INFO(to_string(f->kind()));
        CHECK(worst_g <= 1e-6);
        CHECK(worst_h <= 1e-5);
    }
}

TEST_CASE("Hessian-vector products are linear and symmetric") {
    Rng rng(13);
    for (auto& f : all_kinds(5)) {
        const Vector w = random_point(*f, rng);
        const auto S = random_batch(rng, f->n());
        const Vector u = testing::random_vector(rng, f->dim()), v = testing::random_vector(rng, f->dim());
        CHECK(f->hessian_vec(w, S, Vector::Zero(f->dim())).norm() == 0.0);
        const double uHv = u.dot(f->hessian_vec(w, S, v));
        const double vHu = v.dot(f->hessian_vec(w, S, u));
        CHECK(std::abs(uHv - vHu) <= 1e-10 * std::max(1.0, std::abs(uHv)));
    }
}

TEST_CASE("least-squares Hessian is (1/|S|) A_S'A_S") {
    auto ds = synth(SynthKind::LeastSquares, 12, 4, 6);
    LeastSquaresProblem f(ds, 0.0);
    const std::vector<Index> S = {1, 4, 5, 9};
    const Matrix A = Matrix(ds->features);
    Matrix AS(4, 4);
    for (int r = 0; r < 4; ++r) AS.row(r) = A.row(S[static_cast<std::size_t>(r)]);
    const Vector e1 = Vector::Unit(4, 0);
    const Vector expect = AS.transpose() * AS * e1 / 4.0;
    CHECK(rel_err(f.hessian_vec(Vector::Ones(4), S, e1), expect) <= 1e-14);
}

TEST_CASE("GGN equals the Hessian for linear predictors") {
    Rng rng(14);
    auto ls = LeastSquaresProblem(synth(SynthKind::LeastSquares, 30, 5, 7), 0.02);
    auto lg = LogisticProblem(synth(SynthKind::Logistic, 30, 5, 7), 0.02);
    auto sm = MlpProblem(synth(SynthKind::Multiclass, 30, 5, 7, 0.3, 4), 0, 0.02);
    for (int t = 0; t < 50; ++t) {
        for (const ProblemOracle* f : {static_cast<const ProblemOracle*>(&ls), static_cast<const ProblemOracle*>(&lg),
                                       static_cast<const ProblemOracle*>(&sm)}) {
            const Vector w = random_point(*f, rng);
            const Vector v = testing::random_vector(rng, f->dim());
            const auto S = random_batch(rng, f->n());
            REQUIRE(rel_err(f->ggn_vec(w, S, v), f->hessian_vec(w, S, v)) <= 1e-10);
        }
    }
    const Vector w = Vector::Ones(5), v = Vector::Unit(5, 2);
    CHECK(ls.ggn_vec(w, BatchSpec::full(30), v) == ls.hessian_vec(w, BatchSpec::full(30), v));
}

TEST_CASE("MLP GGN is positive semidefinite in both parameterizations") {
    Rng rng(15);
    auto ds = synth(SynthKind::Multiclass, 25, 4, 8);
    MlpProblem logits(ds, 5, 0.0, GgnMode::Logits);
    MlpProblem probs(ds, 5, 0.0, GgnMode::Probabilities);
    CHECK_FALSE(logits.lhh_diagonal());
    CHECK(probs.lhh_diagonal());
    for (int t = 0; t < 1000; ++t) {
        const Vector w = testing::random_vector(rng, logits.dim(), 1.0);
        const Vector v = testing::random_vector(rng, logits.dim());
        const auto S = random_batch(rng, 25);
        REQUIRE(v.dot(logits.ggn_vec(w, S, v)) >= -1e-12 * v.squaredNorm());
        REQUIRE(v.dot(probs.ggn_vec(w, S, v)) >= -1e-12 * v.squaredNorm());
    }
}

TEST_CASE("probability-parameterized GGN quadratic form") {
    Rng rng(16);
    auto ds = synth(SynthKind::Multiclass, 6, 3, 9);
    MlpProblem f(ds, 2, 0.0, GgnMode::Probabilities);
    MlpProblem lin(ds, 2, 0.0, GgnMode::Logits);
    const Vector w = testing::random_vector(rng, f.dim());
    const Vector v = testing::random_vector(rng, f.dim());
    const std::vector<Index> S = {2};
    // one-hot label: v'Gv = (d p_y/dt)^2 / p_y^2 = (d log p_y/dt)^2
    const double eps = 1e-6;
    const double dlogp = -(f.batch_loss(w + eps * v, S) - f.batch_loss(w - eps * v, S)) / (2 * eps);
    CHECK(v.dot(f.ggn_vec(w, S, v)) == doctest::Approx(dlogp * dlogp).epsilon(1e-6));
    CHECK(rel_err(f.ggn_vec(w, S, v), lin.ggn_vec(w, S, v)) > 1e-6);
}

TEST_CASE("sample_batch") {
    Rng rng(17);
    SUBCASE("full batch") {
        const auto S = sample_batch(5, 5, rng);
        CHECK(S.indices == std::vector<Index>{0, 1, 2, 3, 4});
    }
    SUBCASE("determinism") {
        Rng a(42), b(42);
        for (int k = 0; k < 20; ++k) REQUIRE(sample_batch(50, 7, a).indices == sample_batch(50, 7, b).indices);
    }
    SUBCASE("distinct indices") {
        for (int k = 0; k < 100; ++k) {
            auto S = sample_batch(20, 9, rng).indices;
            REQUIRE(std::adjacent_find(S.begin(), S.end()) == S.end());
            REQUIRE(std::is_sorted(S.begin(), S.end()));
        }
    }
    SUBCASE("inclusion frequency") {
        std::vector<int> hits(10, 0);
        const int draws = 100000;
        for (int k = 0; k < draws; ++k)
            for (Index i : sample_batch(10, 3, rng).indices) ++hits[static_cast<std::size_t>(i)];
        for (int h : hits) CHECK(std::abs(h / static_cast<double>(draws) - 0.3) <= 0.01);
    }
    SUBCASE("oversized batch") { CHECK_THROWS_AS(sample_batch(3, 4, rng), ContractViolation); }
}

TEST_CASE("libsvm parsing") {
    SUBCASE("basic row") {
        std::istringstream in("+1 1:0.5 3:2\n");
        const Dataset ds = parse_libsvm(in);
        CHECK(ds.n() == 1);
        CHECK(ds.d() == 3);
        CHECK(ds.labels[0] == 1.0);
        CHECK(ds.features.coeff(0, 0) == 0.5);
        CHECK(ds.features.coeff(0, 1) == 0.0);
        CHECK(ds.features.coeff(0, 2) == 2.0);
        CHECK(ds.features.nonZeros() == 2);
        CHECK(ds.label_kind == LabelKind::Binary);
    }
    SUBCASE("label only") {
        std::istringstream in("-1\n+1 2:1\n");
        const Dataset ds = parse_libsvm(in);
        CHECK(ds.n() == 2);
        CHECK(ds.features.row(0).nonZeros() == 0);
        CHECK(ds.labels[0] == -1.0);
    }
    SUBCASE("malformed") {
        std::istringstream in("abc 1:x\n");
        try {
            parse_libsvm(in);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.line() == 1);
        }
    }
    SUBCASE("bad token on a later line") {
        std::istringstream in("1 1:1\n1 0:2\n");
        try {
            parse_libsvm(in);
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.line() == 2);
        }
    }
    SUBCASE("empty input") {
        std::istringstream in("");
        CHECK_THROWS_AS(parse_libsvm(in), ParseError);
    }
    SUBCASE("real labels") {
        std::istringstream in("0.25 1:1\n3 2:1\n");
        CHECK(parse_libsvm(in).label_kind == LabelKind::Real);
    }
}

TEST_CASE("synthetic data") {
    SUBCASE("noiseless least squares has the planted optimum") {
        const auto sd = synth_dataset({SynthKind::LeastSquares, 50, 8, 3, 0.0, 3});
        LeastSquaresProblem f(std::make_shared<const Dataset>(sd.data), 0.0);
        CHECK(f.full_loss(sd.planted) <= 1e-28);
    }
    SUBCASE("determinism") {
        const auto a = synth_dataset({SynthKind::Multiclass, 30, 4, 9, 0.5, 3});
        const auto b = synth_dataset({SynthKind::Multiclass, 30, 4, 9, 0.5, 3});
        CHECK(Matrix(a.data.features) == Matrix(b.data.features));
        CHECK(a.data.labels == b.data.labels);
    }
    SUBCASE("holdout split") {
        const auto sd = synth_dataset({SynthKind::Logistic, 100, 4, 1, 0.1, 3});
        const auto [train, test] = split_holdout(sd.data, 0.2, 5);
        CHECK(train.n() == 80);
        CHECK(test.n() == 20);
        CHECK(train.d() == 4);
    }
}
