// Command-line experiment runner.

#include "slbfgs/harness.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <cstdio>
#include <fstream>
#include <iostream>

using namespace slbfgs;

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kFailed = 2;

struct Flags {
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string format;
    int workers = 0;
    bool quiet = false;
};

ExperimentConfig load(const std::string& path, const Flags& f) {
    if (!std::filesystem::exists(path)) throw ConfigError("config file '" + path + "' does not exist");
    ExperimentConfig c = load_config(path);
    if (f.seed) c.seeds = {*f.seed};
    if (!f.out.empty()) c.output = f.out;
    if (f.format == "json") c.format = OutputFormat::Json;
    else if (f.format == "csv") c.format = OutputFormat::Csv;
    if (f.workers > 0) c.workers = f.workers;
    c.validate();
    return c;
}

std::filesystem::path out_dir(const ExperimentConfig& c) {
    return c.output.empty() ? default_output_dir() : c.output;
}

int print_checks(const std::vector<CheckOutcome>& checks, bool quiet, const std::filesystem::path* json_path) {
    bool failed = false;
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& c : checks) {
        const char* status = !c.conclusive ? "SKIP" : c.passed ? "PASS" : "FAIL";
        if (c.conclusive && !c.passed) failed = true;
        if (!quiet) std::printf("%s  %s: %s\n", status, c.name.c_str(), c.detail.c_str());
        arr.push_back({{"name", c.name}, {"status", status}, {"detail", c.detail}});
    }
    if (json_path) {
        std::filesystem::create_directories(json_path->parent_path());
        std::ofstream(*json_path) << arr.dump(2) << '\n';
    }
    return failed ? kFailed : kOk;
}

int cmd_run(const std::string& path, const Flags& f) {
    const ExperimentConfig c = load(path, f);
    const ExperimentResult r = run_experiment(c);
    if (!f.quiet) {
        std::printf("reference F = %.12g  |grad| = %.3e  (%s)\n", r.reference.f, r.reference.grad_norm,
                    r.reference.certified ? "certified" : "best found; subopt column holds the training loss");
        for (const auto& run : r.runs) {
            const auto& last = run.record.rows.back();
            std::printf("%-32s seed %-4llu epoch %-4ld subopt %.6e  test %.4f  skips %ld%s\n",
                        r.cells[run.cell].id().c_str(), static_cast<unsigned long long>(run.seed), last.epoch,
                        last.subopt, last.test_error, last.skips, run.record.diverged ? "  DIVERGED" : "");
        }
        if (c.workers > 1) {
            std::printf("ledger (workers = %d):\n", c.workers);
            for (const auto& run : r.runs) {
                if (!run.ledger) continue;
                const auto& L = *run.ledger;
                std::printf("  %-32s seed %-4llu round: gradient %lld, curvature %lld, recursion %lld, total %lld;"
                            " run total %lld\n",
                            r.cells[run.cell].id().c_str(), static_cast<unsigned long long>(run.seed),
                            static_cast<long long>(L.measured.at(Phase::Gradient).total()),
                            static_cast<long long>(L.measured.at(Phase::Curvature).total()),
                            static_cast<long long>(L.measured.at(Phase::Recursion).total()),
                            static_cast<long long>(L.total),
                            static_cast<long long>(run.record.rows.back().comm_scalars));
            }
        }
        std::printf("wrote %s and %s\n", r.aggregate_file.c_str(), r.summary_file.c_str());
    }
    return r.any_diverged() ? kFailed : kOk;
}

int cmd_reference(const std::string& path, const Flags& f) {
    const ExperimentConfig c = load(path, f);
    const PreparedProblem p = prepare_problem(c.problem);
    const ReferenceSolution r = compute_reference(*p.oracle);
    nlohmann::ordered_json j = {{"f", r.f}, {"grad_norm", r.grad_norm}, {"iterations", r.iterations},
                                {"certified", r.certified}, {"w", std::vector<double>(r.w.begin(), r.w.end())}};
    const auto dir = out_dir(c);
    std::filesystem::create_directories(dir);
    std::ofstream(dir / "reference.json") << j.dump(2) << '\n';
    if (!f.quiet)
        std::printf("F = %.15g  |grad| = %.3e  iterations %ld  %s\n", r.f, r.grad_norm, r.iterations,
                    r.certified ? "certified" : "best found (not certified)");
    return kOk;
}

int cmd_check_theory(const std::string& path, const Flags& f) {
    const ExperimentConfig c = load(path, f);
    const auto json = out_dir(c) / "theory.json";
    return print_checks(check_theory(c), f.quiet, &json);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Stochastic L-BFGS experiment runner"};
    app.require_subcommand(1);
    Flags flags;
    std::string config_path;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--seed", flags.seed, "Run a single seed instead of the configured list");
        sub->add_option("--out", flags.out, "Output directory");
        sub->add_option("--format", flags.format, "Per-run file format")->check(CLI::IsMember({"csv", "json"}));
        sub->add_option("--workers", flags.workers, "Simulated workers (enables the distributed path)")
            ->check(CLI::PositiveNumber);
        sub->add_flag("--quiet", flags.quiet, "Suppress console output");
    };
    auto* run = app.add_subcommand("run", "Run the optimizer grid of a config file");
    auto* ref = app.add_subcommand("reference", "Compute the reference solution");
    auto* chk = app.add_subcommand("check-theory", "Numerical checks of the convergence theory");
    auto* self = app.add_subcommand("selftest", "Run the built-in invariant suite");
    for (auto* sub : {run, ref, chk}) {
        sub->add_option("config", config_path, "Config file (YAML)")->required();
        add_common(sub);
    }
    self->add_flag("--quiet", flags.quiet, "Suppress console output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n\n" << app.help();
        return kConfigError;
    }

    try {
        if (*run) return cmd_run(config_path, flags);
        if (*ref) return cmd_reference(config_path, flags);
        if (*chk) return cmd_check_theory(config_path, flags);
        return print_checks(selftest(), flags.quiet, nullptr);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ParseError& e) {
        std::cerr << "data error: " << e.what() << " (line " << e.line() << ")\n";
        return kConfigError;
    } catch (const ContractViolation& e) {
        std::cerr << "invalid setting: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kFailed;
    }
}
