#pragma once

#include "slbfgs/common.hpp"
#include "slbfgs/curvature_memory.hpp"
#include "slbfgs/dataset.hpp"
#include "slbfgs/distributed_sim.hpp"
#include "slbfgs/preconditioner.hpp"
#include "slbfgs/problems.hpp"
#include "slbfgs/two_loop.hpp"

#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace slbfgs {

enum class Variant {
    LbfgsH,        // y_k = Hessian-vector product on the step
    LbfgsF,        // y_k = GGN/Fisher-vector product on the step
    LbfgsS,        // y_k = difference of consecutive batch gradients
    LbfgsClassic,  // full gradients, gamma*I scaling, backtracking
    Sgd,           // momentum SGD
    Adam,
    Adagrad,
};

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);
bool is_stochastic_lbfgs(Variant v);

struct LrSchedule {
    enum class Kind { Constant, Decaying };
    Kind kind = Kind::Constant;
    double alpha = 1e-2;
    double offset = 1.0;  // E in alpha / (k + E)
};

/// alpha for constant schedules, alpha / (k + E) for decaying ones.
double lr_schedule(const LrSchedule& schedule, long k);

/// How the stochastic L-BFGS variants pick H_k^0 and the gradient fed to the recursion.
enum class InitialScalingMode {
    Adam,            // diag(1/(sqrt(v_hat)+1e-8)) with momentum gradient m_hat
    Identity,        // I with the raw batch gradient
    ScaledIdentity,  // (y's / y'y of the newest pair) I with the raw batch gradient
};

std::string to_string(InitialScalingMode m);
InitialScalingMode scaling_from_string(const std::string& s);

struct OptimizerConfig {
    Variant variant = Variant::LbfgsH;
    std::size_t memory = 10;
    Index batch_size = 64;
    LrSchedule lr;
    double cautious_eps = LbfgsMemory::kDefaultEpsilon;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double sgd_momentum = 0.9;
    double adagrad_eps = 1e-8;
    InitialScalingMode scaling = InitialScalingMode::Adam;
    /// Evaluate the curvature product at w_{k+1} instead of w_k.
    bool curvature_at_next_iterate = false;
    std::uint64_t seed = 1;
    int workers = 1;
    PairPlacement placement = PairPlacement::RoundRobin;
    /// Divergence guard: abort when the loss exceeds this multiple of the initial loss.
    double divergence_factor = 1e3;
    double armijo_c = 1e-4;

    /// Throws ConfigError.
    void validate(Index n) const;
};

/// Snapshot handed to an observer after every stochastic L-BFGS step.
struct StepView {
    long step = 0;
    const BatchSpec* batch = nullptr;
    const Vector* w_before = nullptr;
    const Vector* w_after = nullptr;
    const Vector* gradient = nullptr;  // the vector fed to the recursion
    const Vector* direction = nullptr;
    const InitialScaling* h0 = nullptr;
    /// Memory used to compute `direction` (before this step's pair was pushed).
    const LbfgsMemory* memory_used = nullptr;
    const LbfgsMemory* memory_after = nullptr;
    const Vector* s = nullptr;  // null when no pair was formed
    const Vector* y = nullptr;
    bool pair_accepted = false;
    double alpha = 0.0;
};

class Optimizer {
public:
    Optimizer(OptimizerConfig config, const ProblemOracle& oracle, Vector w0);

    /// One iteration. Throws DivergedError on non-finite values.
    void step();

    const Vector& weights() const noexcept { return w_; }
    long steps() const noexcept { return k_; }
    long skips() const noexcept { return skips_; }
    std::int64_t gradient_evals() const noexcept { return grad_evals_; }
    std::int64_t curvature_evals() const noexcept { return curv_evals_; }
    const LbfgsMemory& memory() const noexcept { return memory_; }
    const OptimizerConfig& config() const noexcept { return cfg_; }
    const CommLedger* ledger() const noexcept { return ledger_ ? &*ledger_ : nullptr; }
    const BatchSpec& last_batch() const noexcept { return batch_; }

    void set_observer(std::function<void(const StepView&)> fn) { observer_ = std::move(fn); }

    /// Steps that make up one pass over the data.
    long steps_per_epoch() const;

private:
    void draw_batch();
    Vector batch_gradient(const Vector& w);
    void lbfgs_step();
    void classic_step();
    void baseline_step();
    void check_finite(const Vector& v, const char* what) const;

    OptimizerConfig cfg_;
    const ProblemOracle& oracle_;
    Vector w_;
    long k_ = 0;
    long skips_ = 0;
    std::int64_t grad_evals_ = 0;
    std::int64_t curv_evals_ = 0;
    Rng sampler_;
    BatchSpec batch_;
    LbfgsMemory memory_;
    AdamState adam_;
    Vector sgd_buf_;
    Vector adagrad_acc_;
    std::optional<Vector> prev_gradient_;     // LBFGS-S
    std::optional<Vector> full_gradient_;     // classic
    std::optional<CommLedger> ledger_;
    std::function<void(const StepView&)> observer_;
};

struct EpochRow {
    long epoch = 0;
    double train_loss = 0.0;
    double subopt = 0.0;
    double test_error = 0.0;
    double grad_norm = 0.0;
    long skips = 0;
    std::int64_t comm_scalars = 0;
    std::int64_t oracle_calls = 0;
};

struct RunRecord {
    std::vector<EpochRow> rows;
    /// Per-step full-objective trace (only with RunOptions::trace_steps).
    std::vector<double> step_loss;
    std::vector<double> step_grad_sq;
    bool diverged = false;
    long diverged_step = -1;
    std::string message;
    Vector final_w;
    /// Last completed communication round of a distributed run.
    std::optional<RoundCounts> last_round;
};

struct RunOptions {
    const Dataset* test = nullptr;
    /// Reference optimum; subopt = F - F*. Without it subopt holds the training loss.
    std::optional<double> f_star;
    bool trace_steps = false;
    std::function<void(const StepView&)> observer;
};

/// epochs * steps_per_epoch steps from the problem's initial point, with per-epoch metrics.
/// Divergence ends the run early and is reported in the record.
RunRecord run(const OptimizerConfig& config, const ProblemOracle& oracle, long epochs, const RunOptions& options = {});

}  // namespace slbfgs
