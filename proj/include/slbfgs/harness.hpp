#pragma once

#include "slbfgs/dataset.hpp"
#include "slbfgs/optimizer.hpp"
#include "slbfgs/problems.hpp"
#include "slbfgs/theory_checks.hpp"

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace slbfgs {

/// Environment variable naming the default output directory.
inline constexpr const char* kOutDirEnv = "SLBFGS_OUT_DIR";

enum class OutputFormat { Csv, Json };

/// $SLBFGS_OUT_DIR when set, else "results".
std::filesystem::path default_output_dir();

struct DataSource {
    std::optional<std::string> path;  // libsvm file
    SynthParams synthetic;            // used when path is empty
};

struct ProblemConfig {
    ProblemSpec spec;
    DataSource data;
    double holdout = 0.2;
};

/// One optimizer entry of the grid; each list expands into a cross product.
struct OptimizerGrid {
    std::vector<Variant> variants;
    std::vector<double> alphas;
    std::vector<Index> batches;
    std::vector<std::size_t> memories;
    OptimizerConfig base;  // schedule kind, offset, betas, scaling, ...
};

struct TheoryToggles {
    bool eigen_bounds = true;
    bool sampling_bounds = true;
    bool neighborhood = true;
    long eigen_iterations = 200;
};

struct ExperimentConfig {
    ProblemConfig problem;
    std::vector<OptimizerGrid> grid;
    long epochs = 10;
    std::vector<std::uint64_t> seeds{1};
    std::filesystem::path output;  // empty: default_output_dir()
    int workers = 1;
    PairPlacement placement = PairPlacement::RoundRobin;
    int threads = 0;  // 0: hardware concurrency
    bool trace_steps = false;
    OutputFormat format = OutputFormat::Csv;
    TheoryToggles theory;

    /// Throws ConfigError.
    void validate() const;
};

/// Parses the YAML document. Throws ConfigError naming the offending key.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Training and holdout data plus the oracle built on the training part.
struct PreparedProblem {
    std::shared_ptr<const Dataset> train;
    std::shared_ptr<const Dataset> test;  // empty when holdout = 0
    std::unique_ptr<ProblemOracle> oracle;
};

PreparedProblem prepare_problem(const ProblemConfig& config);

struct ReferenceSolution {
    Vector w;
    double f = 0.0;
    double grad_norm = 0.0;
    long iterations = 0;
    /// True when |grad F| <= tolerance on a convex problem; otherwise f is the best loss found.
    bool certified = false;
};

/// Deterministic full-batch classical L-BFGS with backtracking.
ReferenceSolution compute_reference(const ProblemOracle& oracle, double tolerance = 1e-10, long max_iterations = 2000);

/// One (variant, alpha, b, m) grid point.
struct Cell {
    OptimizerConfig config;  // seed filled per run
    std::string id() const;
};

std::vector<Cell> expand_grid(const ExperimentConfig& config);

struct RunResult {
    std::size_t cell = 0;
    std::uint64_t seed = 0;
    RunRecord record;
    std::optional<LedgerReport> ledger;  // last round, distributed runs only
    std::filesystem::path file;
};

struct ExperimentResult {
    ReferenceSolution reference;
    std::vector<Cell> cells;
    std::vector<RunResult> runs;  // cell-major, then seed order
    std::filesystem::path aggregate_file;
    std::filesystem::path summary_file;
    bool any_diverged() const;
};

/// Runs every cell for every seed on a worker pool, writes per-run files, the aggregate and a summary.
ExperimentResult run_experiment(const ExperimentConfig& config);

/// Fixed CSV schema.
inline constexpr const char* kRunColumns = "epoch,train_loss,subopt,test_error,grad_norm,skips,comm_scalars";

void write_run_csv(std::ostream& os, const RunRecord& record);
void write_run_json(std::ostream& os, const RunRecord& record);

struct AggregateRow {
    long epoch = 0;
    int seeds = 0;
    double subopt_min = 0, subopt_mean = 0, subopt_max = 0;
    double test_error_min = 0, test_error_mean = 0, test_error_max = 0;
};

/// Per-epoch order statistics across the records of one cell.
std::vector<AggregateRow> aggregate(const std::vector<const RunRecord*>& records);

/// Reads a per-run CSV back (for recomputing aggregates offline).
RunRecord read_run_csv(std::istream& is);

struct CheckOutcome {
    std::string name;
    bool passed = false;
    bool conclusive = true;
    std::string detail;
};

/// Theory checks driven by the configured problem and grid.
std::vector<CheckOutcome> check_theory(const ExperimentConfig& config);

/// Quick invariant suite on small random instances.
std::vector<CheckOutcome> selftest();

}  // namespace slbfgs
