#include "slbfgs/optimizer.hpp"

#include <cmath>

namespace slbfgs {

namespace {

constexpr std::pair<Variant, const char*> kVariantNames[] = {
    {Variant::LbfgsH, "lbfgs-h"}, {Variant::LbfgsF, "lbfgs-f"}, {Variant::LbfgsS, "lbfgs-s"},
    {Variant::LbfgsClassic, "lbfgs"}, {Variant::Sgd, "sgd"},    {Variant::Adam, "adam"},
    {Variant::Adagrad, "adagrad"},
};

constexpr std::pair<InitialScalingMode, const char*> kScalingNames[] = {
    {InitialScalingMode::Adam, "adam"},
    {InitialScalingMode::Identity, "identity"},
    {InitialScalingMode::ScaledIdentity, "scaled-identity"},
};

// gamma = y's / y'y of the newest pair, 1 without pairs.
InitialScaling newest_pair_scaling(const LbfgsMemory& mem) {
    if (mem.empty()) return InitialScaling::identity();
    const auto& p = mem.pair(mem.size() - 1);
    return InitialScaling::scalar(p.y.dot(p.s) / p.y.squaredNorm());
}

OptimizerConfig validated(OptimizerConfig cfg, Index n) {
    cfg.validate(n);
    return cfg;
}

}  // namespace

std::string to_string(Variant v) {
    for (auto [k, name] : kVariantNames)
        if (k == v) return name;
    return "?";
}

Variant variant_from_string(const std::string& s) {
    for (auto [k, name] : kVariantNames)
        if (s == name) return k;
    throw ConfigError("unknown optimizer variant '" + s + "'");
}

bool is_stochastic_lbfgs(Variant v) {
    return v == Variant::LbfgsH || v == Variant::LbfgsF || v == Variant::LbfgsS;
}

std::string to_string(InitialScalingMode m) {
    for (auto [k, name] : kScalingNames)
        if (k == m) return name;
    return "?";
}

InitialScalingMode scaling_from_string(const std::string& s) {
    for (auto [k, name] : kScalingNames)
        if (s == name) return k;
    throw ConfigError("unknown initial scaling '" + s + "'");
}

double lr_schedule(const LrSchedule& schedule, long k) {
    if (k < 0) throw ContractViolation("lr_schedule: negative step index");
    if (schedule.kind == LrSchedule::Kind::Constant) return schedule.alpha;
    return schedule.alpha / (static_cast<double>(k) + schedule.offset);
}

void OptimizerConfig::validate(Index n) const {
    if (!(lr.alpha > 0.0) || !std::isfinite(lr.alpha)) throw ConfigError("learning rate must be positive");
    if (lr.kind == LrSchedule::Kind::Decaying && !(lr.offset > 0.0))
        throw ConfigError("decaying schedule needs E > 0");
    if (batch_size < 1 || batch_size > n)
        throw ConfigError("batch size " + std::to_string(batch_size) + " outside [1, " + std::to_string(n) + "]");
    if (!(cautious_eps >= 0.0)) throw ConfigError("cautious threshold must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
        throw ConfigError("ADAM betas must lie in [0, 1)");
    if (!(sgd_momentum >= 0.0 && sgd_momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(adagrad_eps > 0.0)) throw ConfigError("ADAGRAD epsilon must be positive");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    if (workers > 1 && variant != Variant::LbfgsClassic && workers > batch_size)
        throw ConfigError("more workers than batch samples");
    if (!(divergence_factor > 1.0)) throw ConfigError("divergence factor must exceed 1");
    if (!(armijo_c > 0.0 && armijo_c < 1.0)) throw ConfigError("Armijo constant must lie in (0, 1)");
}

Optimizer::Optimizer(OptimizerConfig config, const ProblemOracle& oracle, Vector w0)
    : cfg_(validated(std::move(config), oracle.n())),
      oracle_(oracle),
      w_(std::move(w0)),
      sampler_(cfg_.seed),
      memory_(cfg_.memory, cfg_.cautious_eps),
      adam_(oracle.dim(), cfg_.beta1, cfg_.beta2) {
    if (w_.size() != oracle.dim()) throw ContractViolation("Optimizer: initial point has the wrong dimension");
    if (cfg_.workers > 1 && cfg_.variant != Variant::LbfgsClassic) ledger_.emplace();
    sgd_buf_ = Vector::Zero(w_.size());
    adagrad_acc_ = Vector::Zero(w_.size());
}

long Optimizer::steps_per_epoch() const {
    if (cfg_.variant == Variant::LbfgsClassic) return 1;
    return static_cast<long>((oracle_.n() + cfg_.batch_size - 1) / cfg_.batch_size);
}

void Optimizer::check_finite(const Vector& v, const char* what) const {
    if (!all_finite(v)) throw DivergedError(std::string("non-finite ") + what, k_);
}

void Optimizer::draw_batch() { batch_ = sample_batch(oracle_.n(), cfg_.batch_size, sampler_); }

Vector Optimizer::batch_gradient(const Vector& w) {
    grad_evals_ += static_cast<std::int64_t>(batch_.size());
    if (ledger_) return sharded_gradient(shard_batch(batch_, cfg_.workers), oracle_, w, *ledger_);
    return oracle_.batch_gradient(w, batch_);
}

void Optimizer::step() {
    switch (cfg_.variant) {
        case Variant::LbfgsH:
        case Variant::LbfgsF:
        case Variant::LbfgsS: lbfgs_step(); break;
        case Variant::LbfgsClassic: classic_step(); break;
        default: baseline_step(); break;
    }
    ++k_;
}

void Optimizer::lbfgs_step() {
    draw_batch();
    const Vector g_raw = batch_gradient(w_);
    check_finite(g_raw, "gradient");

    Vector g;
    InitialScaling h0 = InitialScaling::identity();
    switch (cfg_.scaling) {
        case InitialScalingMode::Adam: {
            AdamMoments mo = adam_update(adam_, g_raw);
            g = std::move(mo.m_hat);
            h0 = adam_scaling(mo.v_hat, adam_.eps_stab);
            break;
        }
        case InitialScalingMode::Identity: g = g_raw; break;
        case InitialScalingMode::ScaledIdentity:
            g = g_raw;
            h0 = newest_pair_scaling(memory_);
            break;
    }

    const std::size_t m_used = memory_.size();
    DirectionResult dir = ledger_ ? distributed_recursion_round(memory_, g, h0, cfg_.workers, cfg_.placement, *ledger_)
                                  : vector_free_two_loop(memory_, g, h0);
    check_finite(dir.direction, "direction");

    const double alpha = lr_schedule(cfg_.lr, k_);
    const Vector w_prev = w_;
    w_ += alpha * dir.direction;
    check_finite(w_, "iterate");

    std::optional<LbfgsMemory> before;
    if (observer_) before = memory_;

    std::optional<Vector> s, y;
    bool accepted = false;
    if (memory_.capacity() > 0) {
        if (cfg_.variant == Variant::LbfgsS) {
            // y_k = grad^{S_k}(w_k) - grad^{S_{k-1}}(w_{k-1}); no pair at k = 0.
            if (prev_gradient_) {
                s = w_ - w_prev;
                y = g_raw - *prev_gradient_;
            }
            prev_gradient_ = g_raw;
        } else {
            s = w_ - w_prev;
            const Vector& at = cfg_.curvature_at_next_iterate ? w_ : w_prev;
            curv_evals_ += static_cast<std::int64_t>(batch_.size());
            const bool fisher = cfg_.variant == Variant::LbfgsF;
            if (ledger_) {
                const ShardedBatch shards = shard_batch(batch_, cfg_.workers);
                y = fisher ? sharded_ggn_vec(shards, oracle_, at, *s, *ledger_)
                           : sharded_hessian_vec(shards, oracle_, at, *s, *ledger_);
                ledger_->broadcast(Phase::Curvature, oracle_.dim());  // y_k back to the workers
            } else {
                y = fisher ? oracle_.ggn_vec(at, batch_, *s) : oracle_.hessian_vec(at, batch_, *s);
            }
        }
        if (y) {
            check_finite(*y, "curvature pair");
            accepted = memory_.push_pair(*s, *y);
            if (!accepted) ++skips_;
        }
    }
    if (ledger_) ledger_->end_round(m_used);

    if (observer_) {
        StepView v;
        v.step = k_;
        v.batch = &batch_;
        v.w_before = &w_prev;
        v.w_after = &w_;
        v.gradient = &g;
        v.direction = &dir.direction;
        v.h0 = &h0;
        v.memory_used = &*before;
        v.memory_after = &memory_;
        v.s = s ? &*s : nullptr;
        v.y = y ? &*y : nullptr;
        v.pair_accepted = accepted;
        v.alpha = alpha;
        observer_(v);
    }
}

void Optimizer::classic_step() {
    batch_ = BatchSpec::full(oracle_.n());
    if (!full_gradient_) {
        full_gradient_ = oracle_.full_gradient(w_);
        grad_evals_ += oracle_.n();
    }
    const Vector& g = *full_gradient_;
    check_finite(g, "gradient");

    Vector p = vector_free_two_loop(memory_, g, newest_pair_scaling(memory_)).direction;
    double slope = g.dot(p);
    if (!(slope < 0.0)) {
        memory_.clear();
        p = -g;
        slope = -g.squaredNorm();
    }
    if (slope == 0.0) return;  // stationary

    const double f0 = oracle_.full_loss(w_);
    double alpha = lr_schedule(cfg_.lr, k_);
    Vector w_new = w_ + alpha * p;
    double f_new = oracle_.full_loss(w_new);
    std::optional<Vector> g_new;
    bool ok = f_new <= f0 + cfg_.armijo_c * alpha * slope;
    const double roundoff = 1e-12 * std::max(1.0, std::abs(f0));
    if (!ok && -alpha * slope <= 100.0 * roundoff) {
        // Predicted decrease below the resolution of F: approximate Armijo, judged by the gradient.
        g_new = oracle_.full_gradient(w_new);
        grad_evals_ += oracle_.n();
        ok = f_new <= f0 + roundoff && g_new->norm() < g.norm();
        if (!ok) g_new.reset();
    }
    for (int halvings = 0; !ok && halvings < 60; ++halvings) {
        alpha *= 0.5;
        w_new = w_ + alpha * p;
        f_new = oracle_.full_loss(w_new);
        ok = f_new <= f0 + cfg_.armijo_c * alpha * slope;
    }
    if (!ok) return;  // no progress possible at this precision
    check_finite(w_new, "iterate");

    if (!g_new) {
        g_new = oracle_.full_gradient(w_new);
        grad_evals_ += oracle_.n();
    }
    check_finite(*g_new, "gradient");
    if (!memory_.push_pair(w_new - w_, *g_new - g)) ++skips_;
    w_ = std::move(w_new);
    full_gradient_ = std::move(*g_new);
}

void Optimizer::baseline_step() {
    draw_batch();
    const Vector g = batch_gradient(w_);
    check_finite(g, "gradient");
    const double alpha = lr_schedule(cfg_.lr, k_);
    switch (cfg_.variant) {
        case Variant::Sgd:
            sgd_buf_ = cfg_.sgd_momentum * sgd_buf_ + g;
            w_ -= alpha * sgd_buf_;
            break;
        case Variant::Adam: {
            const AdamMoments mo = adam_update(adam_, g);
            w_.array() -= alpha * mo.m_hat.array() / (mo.v_hat.array().sqrt() + adam_.eps_stab);
            break;
        }
        case Variant::Adagrad:
            adagrad_acc_.array() += g.array().square();
            w_.array() -= alpha * g.array() / (adagrad_acc_.array().sqrt() + cfg_.adagrad_eps);
            break;
        default: throw ContractViolation("baseline_step: not a baseline variant");
    }
    if (ledger_) ledger_->end_round(0);
    check_finite(w_, "iterate");
}

RunRecord run(const OptimizerConfig& config, const ProblemOracle& oracle, long epochs, const RunOptions& options) {
    if (epochs < 0) throw ConfigError("epochs must be non-negative");
    Optimizer opt(config, oracle, oracle.initial_point(config.seed));
    if (options.observer) opt.set_observer(options.observer);

    RunRecord rec;
    double initial_loss = 0.0;
    auto measure = [&](long epoch) {
        EpochRow row;
        row.epoch = epoch;
        row.train_loss = oracle.full_loss(opt.weights());
        row.subopt = options.f_star ? row.train_loss - *options.f_star : row.train_loss;
        // Without a holdout set the error is measured on the training data.
        row.test_error = oracle.test_error(opt.weights(), options.test ? *options.test : oracle.data());
        row.grad_norm = oracle.full_gradient(opt.weights()).norm();
        row.skips = opt.skips();
        row.comm_scalars = opt.ledger() ? opt.ledger()->total_scalars() : 0;
        row.oracle_calls = opt.gradient_evals() + opt.curvature_evals();
        return row;
    };
    auto diverged = [&](const EpochRow& row) {
        return !std::isfinite(row.train_loss) || !std::isfinite(row.grad_norm) ||
               row.train_loss > config.divergence_factor * std::max(initial_loss, 1e-300);
    };

    rec.rows.push_back(measure(0));
    initial_loss = rec.rows.front().train_loss;
    const long per_epoch = opt.steps_per_epoch();
    try {
        for (long e = 1; e <= epochs; ++e) {
            for (long i = 0; i < per_epoch; ++i) {
                opt.step();
                if (options.trace_steps) {
                    const double f = oracle.full_loss(opt.weights());
                    rec.step_loss.push_back(options.f_star ? f - *options.f_star : f);
                    rec.step_grad_sq.push_back(oracle.full_gradient(opt.weights()).squaredNorm());
                }
            }
            EpochRow row = measure(e);
            if (diverged(row)) throw DivergedError("loss exceeded the divergence guard", opt.steps());
            rec.rows.push_back(row);
        }
    } catch (const DivergedError& err) {
        rec.diverged = true;
        rec.diverged_step = err.step();
        rec.message = err.what();
    }
    rec.final_w = opt.weights();
    if (opt.ledger() && !opt.ledger()->history().empty()) rec.last_round = opt.ledger()->history().back();
    return rec;
}

}  // namespace slbfgs
