#include "slbfgs/harness.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <map>
#include <random>
#include <tuple>

namespace slbfgs {

namespace {

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

Vector gaussian(Rng& rng, Index d, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Vector v(d);
    for (Index i = 0; i < d; ++i) v[i] = g(rng);
    return v;
}

// pairs y = B s with a random SPD B
LbfgsMemory random_memory(Rng& rng, Index d, std::size_t m) {
    Matrix Q(d, d);
    for (Index j = 0; j < d; ++j) Q.col(j) = gaussian(rng, d);
    const Matrix B = Q.transpose() * Q / static_cast<double>(d) + 0.1 * Matrix::Identity(d, d);
    LbfgsMemory mem(m);
    while (mem.size() < m) {
        const Vector s = gaussian(rng, d);
        mem.push_pair(s, B * s);
    }
    return mem;
}

double rel(const Vector& a, const Vector& b) {
    return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-300});
}

Vector least_squares_minimizer(const Dataset& ds, double reg) {
    const Matrix A = Matrix(ds.features);
    const double n = static_cast<double>(ds.n());
    const Matrix K = A.transpose() * A / n + reg * Matrix::Identity(ds.d(), ds.d());
    return K.ldlt().solve(A.transpose() * ds.labels / n);
}

bool strongly_convex(const ProblemOracle& f) {
    return f.convex() && f.regularization() > 0.0;
}

CheckOutcome eigen_check(const ExperimentConfig& config, const ProblemOracle& f) {
    CheckOutcome out;
    out.name = "hessian-approximation bounds";
    const Cell* cell = nullptr;
    const auto cells = expand_grid(config);
    for (const auto& c : cells)
        if (c.config.variant == Variant::LbfgsH || c.config.variant == Variant::LbfgsF) {
            cell = &c;
            break;
        }
    if (!cell) {
        out.conclusive = false;
        out.detail = "no lbfgs-h or lbfgs-f cell in the grid";
        return out;
    }
    if (f.dim() > 50) {
        out.conclusive = false;
        out.detail = "dimension " + std::to_string(f.dim()) + " too large for dense materialization";
        return out;
    }
    OptimizerConfig cfg = cell->config;
    cfg.seed = config.seeds.front();
    cfg.workers = 1;
    const Smoothing kind = cfg.variant == Variant::LbfgsH ? Smoothing::Hessian : Smoothing::Ggn;
    CurvatureRecorder rec(f, kind, cfg.memory);
    Optimizer opt(cfg, f, f.initial_point(cfg.seed));
    opt.set_observer(std::ref(rec));
    try {
        for (long i = 0; i < config.theory.eigen_iterations; ++i) opt.step();
    } catch (const DivergedError& e) {
        out.detail = std::string("run diverged: ") + e.what();
        return out;
    }
    if (strongly_convex(f)) {
        const auto r = check_eigen_bounds(rec.trace());
        out.passed = r.passed();
        out.detail = cell->id() + ": " + std::to_string(r.iterates_checked) + " iterates, " +
                     std::to_string(r.pairs_checked) + " pairs, " + std::to_string(r.violations) + " violations" +
                     fmt("; eig(H) in [%.3e, %.3e], mu1 = %.3e", r.min_h_eig, r.max_h_eig, r.constants.mu1()) +
                     fmt(", log mu2 = %.3f, C1 = %.3e", r.constants.log_mu2(), r.constants.c1());
        if (!out.passed && !r.first_violation.empty())
            out.detail += "; first: " + r.first_violation + " at step " + std::to_string(r.first_violation_step);
    } else {
        const auto r = check_cautious_pairs(rec.trace(), cfg.cautious_eps);
        out.name = "cautious pair bounds";
        out.passed = r.passed();
        out.detail = cell->id() + ": " + std::to_string(r.pairs_checked) + " accepted pairs, " +
                     std::to_string(r.violations) + " violations" + fmt(", Lambda_hat = %.3e", r.Lambda_hat);
    }
    return out;
}

std::vector<CheckOutcome> sampling_bounds(const ExperimentConfig& config, const PreparedProblem& prob) {
    std::vector<CheckOutcome> outs;
    const Dataset& train = *prob.train;
    const Index n = std::min<Index>(8, train.n());
    std::vector<Index> rows(static_cast<std::size_t>(n));
    for (Index i = 0; i < n; ++i) rows[static_cast<std::size_t>(i)] = i;
    auto small = std::make_shared<const Dataset>(select_rows(train, rows));
    ProblemSpec spec = config.problem.spec;
    spec.reg = prob.oracle->regularization();
    auto f = make_problem(spec, small);

    Rng rng(config.seeds.front());
    CheckOutcome var;
    var.name = "variance bound (exhaustive subsets)";
    var.passed = true;
    long cases = 0;
    for (int trial = 0; trial < 5; ++trial) {
        const Vector w = f->initial_point(config.seeds.front() + static_cast<std::uint64_t>(trial)) + gaussian(rng, f->dim(), 0.5);
        std::vector<Vector> xi;
        for (Index i = 0; i < n; ++i) xi.push_back(f->sample_gradient(w, i));
        for (Index b = 1; b <= n; ++b) {
            ++cases;
            if (!check_variance_bound(xi, b).holds()) var.passed = false;
        }
    }
    var.detail = std::to_string(cases) + " (w, b) cases on n = " + std::to_string(n);
    outs.push_back(var);

    CheckOutcome bg;
    bg.name = "batch gradient bound (exhaustive subsets)";
    if (spec.kind != ProblemKind::LeastSquares || !(f->regularization() > 0.0)) {
        bg.conclusive = false;
        bg.detail = "needs least squares with positive regularization (closed-form minimizer)";
    } else {
        const Vector ws = least_squares_minimizer(*small, f->regularization());
        const auto c = quadratic_constants(*f, ws);
        bg.passed = true;
        cases = 0;
        for (int trial = 0; trial < 5; ++trial) {
            const Vector w = ws + gaussian(rng, f->dim(), std::pow(10.0, trial - 2));
            for (Index b = 1; b <= n; ++b) {
                ++cases;
                if (!check_batch_gradient_bound(*f, w, b, c).holds()) bg.passed = false;
            }
        }
        bg.detail = std::to_string(cases) + " (w, b) cases" + fmt(", lambda = %.3e, Lambda = %.3e, N = %.3e", c.lambda, c.Lambda, c.N);
    }
    outs.push_back(bg);
    return outs;
}

std::vector<CheckOutcome> neighborhood_checks(const ExperimentConfig& config, const ProblemOracle& f) {
    std::vector<CheckOutcome> outs;
    const ReferenceSolution ref = compute_reference(f);
    RunOptions opts;
    opts.trace_steps = true;
    if (ref.certified) opts.f_star = ref.f;

    // group cells that differ only in alpha
    using Key = std::tuple<int, Index, std::size_t, int>;
    std::map<Key, std::vector<Cell>> groups;
    for (const auto& c : expand_grid(config)) {
        if (!is_stochastic_lbfgs(c.config.variant)) continue;
        groups[{static_cast<int>(c.config.variant), c.config.batch_size, c.config.memory,
                static_cast<int>(c.config.lr.kind)}]
            .push_back(c);
    }
    for (auto& [key, cells] : groups) {
        const bool decaying = std::get<3>(key) == static_cast<int>(LrSchedule::Kind::Decaying);
        const std::string label = to_string(cells.front().config.variant) + " b=" +
                                  std::to_string(cells.front().config.batch_size) + " m=" +
                                  std::to_string(cells.front().config.memory);
        std::vector<double> alphas;
        std::vector<std::vector<double>> plateaus;
        std::vector<std::vector<double>> mean_trace;
        for (const auto& c : cells) {
            alphas.push_back(c.config.lr.alpha);
            plateaus.emplace_back();
            std::vector<double> avg;
            for (std::uint64_t seed : config.seeds) {
                OptimizerConfig cfg = c.config;
                cfg.seed = seed;
                cfg.workers = 1;
                const RunRecord r = run(cfg, f, config.epochs, opts);
                if (r.diverged) {
                    plateaus.back().push_back(std::numeric_limits<double>::infinity());
                    continue;
                }
                const std::vector<double> tr = f.convex() ? r.step_loss : running_average(r.step_grad_sq);
                plateaus.back().push_back(tail_mean(tr));
                if (avg.empty()) avg.assign(tr.size(), 0.0);
                for (std::size_t k = 0; k < tr.size(); ++k) avg[k] += tr[k] / static_cast<double>(config.seeds.size());
            }
            mean_trace.push_back(avg);
        }
        if (decaying) {
            for (std::size_t i = 0; i < cells.size(); ++i) {
                CheckOutcome o;
                o.name = "decaying-schedule rate " + label + fmt(" alpha=%g", alphas[i]);
                if (!ref.certified || mean_trace[i].size() < 4) {
                    o.conclusive = false;
                    o.detail = "needs a certified reference and a completed run";
                } else {
                    const double slope = loglog_slope(mean_trace[i], cells[i].config.lr.offset, mean_trace[i].size() / 2);
                    o.passed = slope >= -1.3 && slope <= -0.7;
                    o.detail = fmt("log-log slope %.3f (expected within [-1.3, -0.7])", slope);
                }
                outs.push_back(o);
            }
            continue;
        }
        if (cells.size() < 2) continue;
        CheckOutcome o;
        o.name = std::string(f.convex() ? "plateau ordering " : "stationarity plateau ordering ") + label;
        const auto cmp = compare_plateaus(alphas, plateaus, 20);
        o.conclusive = cmp.conclusive;
        o.passed = cmp.passed();
        for (std::size_t i = 0; i < alphas.size(); ++i)
            o.detail += fmt("alpha=%g: %.4e +- %.1e; ", alphas[i], cmp.mean[i], cmp.std_error[i]);
        o.detail += fmt("paired t = %.2f, %g seeds", cmp.t_statistic, cmp.seeds);
        if (!cmp.conclusive) o.detail += " (fewer than 20 seeds: inconclusive)";
        outs.push_back(o);
    }
    return outs;
}

}  // namespace

std::vector<CheckOutcome> check_theory(const ExperimentConfig& config) {
    config.validate();
    const PreparedProblem prob = prepare_problem(config.problem);
    std::vector<CheckOutcome> outs;
    if (config.theory.eigen_bounds) outs.push_back(eigen_check(config, *prob.oracle));
    if (config.theory.sampling_bounds)
        for (auto& o : sampling_bounds(config, prob)) outs.push_back(std::move(o));
    if (config.theory.neighborhood)
        for (auto& o : neighborhood_checks(config, *prob.oracle)) outs.push_back(std::move(o));
    return outs;
}

std::vector<CheckOutcome> selftest() {
    std::vector<CheckOutcome> outs;
    Rng rng(20240601);

    {
        CheckOutcome o{"vector-free recursion matches two-loop", true, true, ""};
        double worst = 0.0;
        for (int t = 0; t < 200; ++t) {
            const Index d = 1 + static_cast<Index>(uniform_below(rng, 30));
            const auto m = static_cast<std::size_t>(uniform_below(rng, 8));
            const LbfgsMemory mem = random_memory(rng, d, m);
            const Vector g = gaussian(rng, d);
            const auto h0 = InitialScaling::diagonal(gaussian(rng, d).cwiseAbs().array() + 0.1);
            worst = std::max(worst, rel(vector_free_two_loop(mem, g, h0).direction, classic_two_loop(mem, g, h0)));
        }
        o.passed = worst <= 1e-10;
        o.detail = fmt("max relative error %.2e", worst);
        outs.push_back(o);
    }

    SynthParams sp;
    sp.n = 64;
    sp.d = 6;
    sp.noise = 0.2;
    sp.kind = SynthKind::LeastSquares;
    auto ls_data = std::make_shared<const Dataset>(synth_dataset(sp).data);
    sp.kind = SynthKind::Logistic;
    auto lg_data = std::make_shared<const Dataset>(synth_dataset(sp).data);
    auto ls = make_problem(ProblemSpec{ProblemKind::LeastSquares, 0.01, 0, GgnMode::Logits}, ls_data);
    auto lg = make_problem(ProblemSpec{}, lg_data);

    {
        CheckOutcome o{"hessian-vector product matches finite differences", true, true, ""};
        double worst = 0.0;
        const BatchSpec S = sample_batch(lg->n(), 16, rng);
        for (int t = 0; t < 20; ++t) {
            const Vector w = gaussian(rng, 6), v = gaussian(rng, 6);
            const double h = 1e-5;
            const Vector fd = (lg->batch_gradient(w + h * v, S) - lg->batch_gradient(w - h * v, S)) / (2 * h);
            worst = std::max(worst, rel(lg->hessian_vec(w, S, v), fd));
        }
        o.passed = worst <= 1e-5;
        o.detail = fmt("max relative error %.2e", worst);
        outs.push_back(o);
    }
    {
        CheckOutcome o{"GGN equals Hessian for a linear predictor", true, true, ""};
        double worst = 0.0;
        for (int t = 0; t < 20; ++t) {
            const BatchSpec S = sample_batch(lg->n(), 8, rng);
            const Vector w = gaussian(rng, 6), v = gaussian(rng, 6);
            worst = std::max(worst, rel(lg->ggn_vec(w, S, v), lg->hessian_vec(w, S, v)));
        }
        o.passed = worst <= 1e-10;
        o.detail = fmt("max relative error %.2e", worst);
        outs.push_back(o);
    }
    {
        CheckOutcome o{"sharded products and recursion are transparent", true, true, ""};
        double worst = 0.0;
        bool bit_equal = true;
        for (int tau : {1, 2, 4, 8}) {
            const BatchSpec S = sample_batch(ls->n(), 32, rng);
            const Vector w = gaussian(rng, 6), v = gaussian(rng, 6);
            CommLedger ledger;
            worst = std::max(worst, rel(sharded_ggn_vec(shard_batch(S, tau), *ls, w, v, ledger), ls->ggn_vec(w, S, v)));
            const LbfgsMemory mem = random_memory(rng, 6, 3);
            const Vector g = gaussian(rng, 6);
            const auto a = distributed_recursion_round(mem, g, InitialScaling::identity(), tau, PairPlacement::RoundRobin, ledger);
            bit_equal = bit_equal && a.direction == vector_free_two_loop(mem, g, InitialScaling::identity()).direction;
        }
        o.passed = worst <= 1e-10 && bit_equal;
        o.detail = fmt("max relative error %.2e", worst) + (bit_equal ? ", recursion bit-identical" : ", recursion differs");
        outs.push_back(o);
    }
    {
        CheckOutcome o{"communication ledger matches the phase formulas", true, true, ""};
        OptimizerConfig cfg;
        cfg.memory = 3;
        cfg.batch_size = 16;
        cfg.workers = 4;
        Optimizer opt(cfg, *ls, Vector::Zero(6));
        for (int i = 0; i < 10; ++i) opt.step();
        for (const auto& r : opt.ledger()->history()) {
            const auto rep = ledger_total(r, 6, 4, r.memory_pairs);
            o.passed = o.passed && rep.matches_formula;
        }
        o.detail = std::to_string(opt.ledger()->history().size()) + " rounds";
        outs.push_back(o);
    }
    {
        CheckOutcome o{"LBFGS-H with m = 0 reproduces ADAM", true, true, ""};
        OptimizerConfig a;
        a.memory = 0;
        a.batch_size = 8;
        a.lr.alpha = 0.05;
        OptimizerConfig b = a;
        b.variant = Variant::Adam;
        Optimizer oa(a, *lg, Vector::Zero(6)), ob(b, *lg, Vector::Zero(6));
        double worst = 0.0;
        for (int i = 0; i < 50; ++i) {
            oa.step();
            ob.step();
            worst = std::max(worst, rel(oa.weights(), ob.weights()));
        }
        o.passed = worst <= 1e-10;
        o.detail = fmt("max relative difference %.2e over 50 steps", worst);
        outs.push_back(o);
    }
    {
        CheckOutcome o{"variance bound over all subsets", true, true, ""};
        long cases = 0;
        for (int t = 0; t < 10; ++t) {
            const Index n = 2 + static_cast<Index>(uniform_below(rng, 6));
            std::vector<Vector> xi;
            for (Index i = 0; i < n; ++i) xi.push_back(gaussian(rng, 3));
            for (Index b = 1; b <= n; ++b, ++cases) o.passed = o.passed && check_variance_bound(xi, b).holds();
        }
        o.detail = std::to_string(cases) + " cases";
        outs.push_back(o);
    }
    return outs;
}

}  // namespace slbfgs
