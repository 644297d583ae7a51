#include "slbfgs/harness.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace slbfgs {

namespace {

std::string num(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string short_num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << content;
}

nlohmann::ordered_json counts_json(const RoundCounts& r) {
    nlohmann::ordered_json j;
    for (Phase p : kPhases) {
        const auto& c = r.at(p);
        j[to_string(p)] = {{"broadcast", c.broadcast_scalars}, {"reduced", c.reduced_scalars}, {"messages", c.messages}};
    }
    j["total"] = r.total();
    return j;
}

}  // namespace

std::filesystem::path default_output_dir() {
    const char* env = std::getenv(kOutDirEnv);
    return env && *env ? std::filesystem::path(env) : std::filesystem::path("results");
}

PreparedProblem prepare_problem(const ProblemConfig& config) {
    Dataset all;
    std::uint64_t split_seed = config.data.synthetic.seed;
    if (config.data.path) {
        all = parse_libsvm(*config.data.path);
        split_seed = 1;
    } else {
        all = synth_dataset(config.data.synthetic).data;
    }
    if (config.spec.kind == ProblemKind::MlpCrossEntropy && all.label_kind != LabelKind::Class) {
        // libsvm class labels arrive as reals; treat non-negative integers as classes
        int k = 0;
        for (Index i = 0; i < all.n(); ++i) {
            const double y = all.labels[i];
            if (y < 0 || y != std::floor(y)) throw ConfigError("mlp needs integer class labels 0..K-1");
            k = std::max(k, static_cast<int>(y) + 1);
        }
        all.label_kind = LabelKind::Class;
        all.num_classes = k;
    }
    PreparedProblem out;
    if (config.holdout > 0.0) {
        auto [train, test] = split_holdout(all, config.holdout, split_seed);
        out.train = std::make_shared<const Dataset>(std::move(train));
        if (test.n() > 0) out.test = std::make_shared<const Dataset>(std::move(test));
    } else {
        out.train = std::make_shared<const Dataset>(std::move(all));
    }
    out.oracle = make_problem(config.spec, out.train);
    return out;
}

ReferenceSolution compute_reference(const ProblemOracle& oracle, double tolerance, long max_iterations) {
    OptimizerConfig cfg;
    cfg.variant = Variant::LbfgsClassic;
    cfg.memory = 20;
    cfg.lr.alpha = 1.0;
    cfg.batch_size = oracle.n();
    Optimizer opt(cfg, oracle, oracle.initial_point(1));
    ReferenceSolution ref;
    ref.grad_norm = oracle.full_gradient(opt.weights()).norm();
    while (ref.grad_norm > tolerance && ref.iterations < max_iterations) {
        const Vector before = opt.weights();
        opt.step();
        ++ref.iterations;
        ref.grad_norm = oracle.full_gradient(opt.weights()).norm();
        if (opt.weights() == before) break;  // line search cannot make progress
    }
    ref.w = opt.weights();
    ref.f = oracle.full_loss(ref.w);
    ref.certified = oracle.convex() && ref.grad_norm <= tolerance;
    return ref;
}

std::string Cell::id() const {
    return to_string(config.variant) + "_a" + short_num(config.lr.alpha) + "_b" + std::to_string(config.batch_size) +
           "_m" + std::to_string(config.memory);
}

std::vector<Cell> expand_grid(const ExperimentConfig& config) {
    std::vector<Cell> cells;
    for (const auto& g : config.grid)
        for (Variant v : g.variants)
            for (double a : g.alphas)
                for (Index b : g.batches)
                    for (std::size_t m : g.memories) {
                        Cell c;
                        c.config = g.base;
                        c.config.variant = v;
                        c.config.lr.alpha = a;
                        c.config.batch_size = b;
                        c.config.memory = m;
                        c.config.workers = config.workers;
                        c.config.placement = config.placement;
                        cells.push_back(c);
                    }
    return cells;
}

bool ExperimentResult::any_diverged() const {
    return std::any_of(runs.begin(), runs.end(), [](const RunResult& r) { return r.record.diverged; });
}

void write_run_csv(std::ostream& os, const RunRecord& record) {
    os << kRunColumns << '\n';
    for (const auto& r : record.rows) {
        os << r.epoch << ',' << num(r.train_loss) << ',' << num(r.subopt) << ',' << num(r.test_error) << ','
           << num(r.grad_norm) << ',' << r.skips << ',' << r.comm_scalars << '\n';
    }
}

void write_run_json(std::ostream& os, const RunRecord& record) {
    nlohmann::ordered_json j;
    j["columns"] = {"epoch", "train_loss", "subopt", "test_error", "grad_norm", "skips", "comm_scalars"};
    auto rows = nlohmann::ordered_json::array();
    for (const auto& r : record.rows)
        rows.push_back({r.epoch, r.train_loss, r.subopt, r.test_error, r.grad_norm, r.skips, r.comm_scalars});
    j["rows"] = rows;
    j["diverged"] = record.diverged;
    if (record.diverged) {
        j["diverged_step"] = record.diverged_step;
        j["message"] = record.message;
    }
    os << j.dump(2) << '\n';
}

RunRecord read_run_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line != kRunColumns) throw ParseError("unexpected run CSV header", 1);
    RunRecord rec;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (f.size() != 7) throw ParseError("expected 7 fields", lineno);
        EpochRow r;
        try {
            r.epoch = std::stol(f[0]);
            r.train_loss = std::stod(f[1]);
            r.subopt = std::stod(f[2]);
            r.test_error = std::stod(f[3]);
            r.grad_norm = std::stod(f[4]);
            r.skips = std::stol(f[5]);
            r.comm_scalars = std::stoll(f[6]);
        } catch (const std::exception&) {
            throw ParseError("malformed number", lineno);
        }
        rec.rows.push_back(r);
    }
    return rec;
}

std::vector<AggregateRow> aggregate(const std::vector<const RunRecord*>& records) {
    std::map<long, AggregateRow> by_epoch;
    for (const RunRecord* rec : records) {
        for (const auto& r : rec->rows) {
            auto [it, fresh] = by_epoch.try_emplace(r.epoch);
            AggregateRow& a = it->second;
            if (fresh) {
                a.epoch = r.epoch;
                a.subopt_min = a.subopt_max = r.subopt;
                a.test_error_min = a.test_error_max = r.test_error;
            }
            ++a.seeds;
            a.subopt_min = std::min(a.subopt_min, r.subopt);
            a.subopt_max = std::max(a.subopt_max, r.subopt);
            a.subopt_mean += r.subopt;
            a.test_error_min = std::min(a.test_error_min, r.test_error);
            a.test_error_max = std::max(a.test_error_max, r.test_error);
            a.test_error_mean += r.test_error;
        }
    }
    std::vector<AggregateRow> out;
    for (auto& [e, a] : by_epoch) {
        a.subopt_mean /= a.seeds;
        a.test_error_mean /= a.seeds;
        // the mean of identical values can round just outside [min, max]
        a.subopt_mean = std::clamp(a.subopt_mean, a.subopt_min, a.subopt_max);
        a.test_error_mean = std::clamp(a.test_error_mean, a.test_error_min, a.test_error_max);
        out.push_back(a);
    }
    return out;
}

ExperimentResult run_experiment(const ExperimentConfig& config) {
    config.validate();
    PreparedProblem prob = prepare_problem(config.problem);
    const ProblemOracle& oracle = *prob.oracle;

    ExperimentResult result;
    result.cells = expand_grid(config);
    for (const auto& c : result.cells) c.config.validate(oracle.n());
    result.reference = compute_reference(oracle);

    namespace fs = std::filesystem;
    const fs::path out_dir = config.output.empty() ? default_output_dir() : config.output;
    const fs::path run_dir = out_dir / "runs";
    fs::create_directories(run_dir);

    // unique file stems
    std::vector<std::string> stems;
    std::map<std::string, int> seen;
    for (const auto& c : result.cells) {
        std::string id = c.id();
        const int k = seen[id]++;
        if (k > 0) id += "_" + std::to_string(k);
        stems.push_back(id);
    }

    RunOptions opts;
    opts.test = prob.test.get();
    if (result.reference.certified) opts.f_star = result.reference.f;
    opts.trace_steps = config.trace_steps;

    const std::size_t ns = config.seeds.size();
    result.runs.resize(result.cells.size() * ns);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    auto worker = [&] {
        for (std::size_t t; (t = next.fetch_add(1)) < result.runs.size();) {
            try {
                RunResult& rr = result.runs[t];
                rr.cell = t / ns;
                rr.seed = config.seeds[t % ns];
                OptimizerConfig cfg = result.cells[rr.cell].config;
                cfg.seed = rr.seed;
                rr.record = run(cfg, oracle, config.epochs, opts);
                if (rr.record.last_round)
                    rr.ledger = ledger_total(*rr.record.last_round, oracle.dim(), config.workers,
                                             rr.record.last_round->memory_pairs);
                const bool json = config.format == OutputFormat::Json;
                rr.file = run_dir / (stems[rr.cell] + "_seed" + std::to_string(rr.seed) + (json ? ".json" : ".csv"));
                std::ostringstream os;
                if (json) write_run_json(os, rr.record);
                else write_run_csv(os, rr.record);
                write_file(rr.file, os.str());
            } catch (...) {
                std::lock_guard lock(failure_mu);
                if (!failure) failure = std::current_exception();
            }
        }
    };
    unsigned threads = config.threads > 0 ? static_cast<unsigned>(config.threads) : std::thread::hardware_concurrency();
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(result.runs.size())));
    std::vector<std::thread> pool;
    for (unsigned i = 1; i < threads; ++i) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (failure) std::rethrow_exception(failure);

    // aggregate: one block per cell
    std::ostringstream agg;
    agg << "cell,variant,alpha,batch,memory,epoch,seeds,subopt_min,subopt_mean,subopt_max,"
           "test_error_min,test_error_mean,test_error_max\n";
    for (std::size_t c = 0; c < result.cells.size(); ++c) {
        std::vector<const RunRecord*> recs;
        for (std::size_t s = 0; s < ns; ++s) recs.push_back(&result.runs[c * ns + s].record);
        const auto& cfg = result.cells[c].config;
        for (const auto& a : aggregate(recs)) {
            agg << stems[c] << ',' << to_string(cfg.variant) << ',' << num(cfg.lr.alpha) << ',' << cfg.batch_size << ','
                << cfg.memory << ',' << a.epoch << ',' << a.seeds << ',' << num(a.subopt_min) << ','
                << num(a.subopt_mean) << ',' << num(a.subopt_max) << ',' << num(a.test_error_min) << ','
                << num(a.test_error_mean) << ',' << num(a.test_error_max) << '\n';
        }
    }
    result.aggregate_file = out_dir / "aggregate.csv";
    write_file(result.aggregate_file, agg.str());

    nlohmann::ordered_json sum;
    sum["problem"] = {{"kind", to_string(config.problem.spec.kind)},
                      {"n_train", oracle.n()},
                      {"n_test", prob.test ? prob.test->n() : 0},
                      {"dim", oracle.dim()},
                      {"regularization", oracle.regularization()}};
    const auto& ref = result.reference;
    sum["reference"] = {{"f", ref.f}, {"grad_norm", ref.grad_norm}, {"iterations", ref.iterations},
                        {"certified", ref.certified}};
    sum["subopt_axis"] = ref.certified ? "F - F*" : "training loss";
    auto runs = nlohmann::ordered_json::array();
    for (const auto& rr : result.runs) {
        const auto& cfg = result.cells[rr.cell].config;
        nlohmann::ordered_json j = {{"cell", stems[rr.cell]},
                                    {"variant", to_string(cfg.variant)},
                                    {"alpha", cfg.lr.alpha},
                                    {"batch", cfg.batch_size},
                                    {"memory", cfg.memory},
                                    {"seed", rr.seed},
                                    {"file", fs::relative(rr.file, out_dir).generic_string()},
                                    {"epochs_completed", rr.record.rows.back().epoch},
                                    {"diverged", rr.record.diverged}};
        if (rr.record.diverged) {
            j["diverged_step"] = rr.record.diverged_step;
            j["message"] = rr.record.message;
        }
        runs.push_back(j);
    }
    sum["runs"] = runs;
    if (config.workers > 1) {
        auto ledger = nlohmann::ordered_json::array();
        for (const auto& rr : result.runs) {
            if (!rr.ledger) continue;
            const auto& L = *rr.ledger;
            const bool formula_applies = is_stochastic_lbfgs(result.cells[rr.cell].config.variant) &&
                                         result.cells[rr.cell].config.variant != Variant::LbfgsS;
            nlohmann::ordered_json j = {{"cell", stems[rr.cell]},
                                        {"seed", rr.seed},
                                        {"workers", config.workers},
                                        {"memory_pairs", L.measured.memory_pairs},
                                        {"last_round", counts_json(L.measured)},
                                        {"total_scalars", rr.record.rows.back().comm_scalars}};
            if (formula_applies) {
                j["expected_round"] = counts_json(L.expected);
                j["matches_formula"] = L.matches_formula;
                j["bound"] = L.bound;
                j["within_bound"] = L.within_bound;
            }
            ledger.push_back(j);
        }
        sum["ledger"] = ledger;
    }
    result.summary_file = out_dir / "summary.json";
    write_file(result.summary_file, sum.dump(2) + "\n");
    return result;
}

}  // namespace slbfgs
