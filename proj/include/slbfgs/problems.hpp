#pragma once

#include "slbfgs/common.hpp"
#include "slbfgs/dataset.hpp"

#include <memory>
#include <span>
#include <string>

namespace slbfgs {

enum class ProblemKind { Logistic, LeastSquares, MlpCrossEntropy };

std::string to_string(ProblemKind k);
ProblemKind problem_kind_from_string(const std::string& s);

/// Which loss Hessian L_hh the GGN product uses for the softmax model.
enum class GgnMode {
    /// h = logits, L_hh = diag(p) - p p'. Dense per sample.
    Logits,
    /// h = class probabilities, L_hh = diag(b_c / p_c^2). Diagonal.
    Probabilities,
};

/// Finite-sum objective F(w) = (1/n) sum_i f_i(w) + (reg/2) |w|^2 with first- and
/// second-order batch oracles. Batch quantities average over the batch.
class ProblemOracle {
public:
    ProblemOracle(std::shared_ptr<const Dataset> data, double reg);
    virtual ~ProblemOracle() = default;

    virtual ProblemKind kind() const = 0;
    virtual Index dim() const = 0;
    /// Whether every f_i is convex in w.
    virtual bool convex() const = 0;
    /// Whether the loss Hessian with respect to the predictor output is diagonal.
    virtual bool lhh_diagonal() const = 0;

    const Dataset& data() const noexcept { return *data_; }
    std::shared_ptr<const Dataset> data_ptr() const noexcept { return data_; }
    Index n() const noexcept { return data_->n(); }
    double regularization() const noexcept { return reg_; }

    double batch_loss(const Vector& w, std::span<const Index> S) const;
    Vector batch_gradient(const Vector& w, std::span<const Index> S) const;
    Vector hessian_vec(const Vector& w, std::span<const Index> S, const Vector& v) const;
    Vector ggn_vec(const Vector& w, std::span<const Index> S, const Vector& v) const;

    double batch_loss(const Vector& w, const BatchSpec& S) const { return batch_loss(w, S.view()); }
    Vector batch_gradient(const Vector& w, const BatchSpec& S) const { return batch_gradient(w, S.view()); }
    Vector hessian_vec(const Vector& w, const BatchSpec& S, const Vector& v) const {
        return hessian_vec(w, S.view(), v);
    }
    Vector ggn_vec(const Vector& w, const BatchSpec& S, const Vector& v) const { return ggn_vec(w, S.view(), v); }

    double full_loss(const Vector& w) const;
    Vector full_gradient(const Vector& w) const;

    /// Per-sample loss and gradient including the regularizer.
    double sample_loss(const Vector& w, Index i) const;
    Vector sample_gradient(const Vector& w, Index i) const;

    /// Misclassification rate (Logistic, MLP) or mean squared residual (LeastSquares) on `test`.
    virtual double test_error(const Vector& w, const Dataset& test) const = 0;

    /// Zeros for convex problems; the MLP draws N(0, 1/fan_in) weights.
    virtual Vector initial_point(std::uint64_t seed) const;

protected:
    // Unnormalized sums over S of the data term (no regularizer).
    virtual double loss_sum(const Vector& w, std::span<const Index> S) const = 0;
    virtual void gradient_sum(const Vector& w, std::span<const Index> S, Vector& out) const = 0;
    virtual void hvp_sum(const Vector& w, std::span<const Index> S, const Vector& v, Vector& out) const = 0;
    virtual void ggn_sum(const Vector& w, std::span<const Index> S, const Vector& v, Vector& out) const = 0;

    void check_args(const Vector& w, std::span<const Index> S, const char* where) const;

private:
    std::shared_ptr<const Dataset> data_;
    double reg_;
};

/// f_i(w) = log(1 + exp(-b_i a_i'w)), b_i in {-1, +1}.
class LogisticProblem final : public ProblemOracle {
public:
    LogisticProblem(std::shared_ptr<const Dataset> data, double reg);

    ProblemKind kind() const override { return ProblemKind::Logistic; }
    Index dim() const override { return data().d(); }
    bool convex() const override { return true; }
    bool lhh_diagonal() const override { return true; }
    double test_error(const Vector& w, const Dataset& test) const override;

protected:
    double loss_sum(const Vector& w, std::span<const Index> S) const override;
    void gradient_sum(const Vector& w, std::span<const Index> S, Vector& out) const override;
    void hvp_sum(const Vector& w, std::span<const Index> S, const Vector& v, Vector& out) const override;
    void ggn_sum(const Vector& w, std::span<const Index> S, const Vector& v, Vector& out) const override;
};

/// f_i(w) = (1/2)(a_i'w - b_i)^2.
class LeastSquaresProblem final : public ProblemOracle {
public:
    LeastSquaresProblem(std::shared_ptr<const Dataset> data, double reg);

    ProblemKind kind() const override { return ProblemKind::LeastSquares; }
    Index dim() const override { return data().d(); }
    bool convex() const override { return true; }
    bool lhh_diagonal() const override { return true; }
    double test_error(const Vector& w, const Dataset& test) const override;

protected:
    double loss_sum(const Vector& w, std::span<const Index> S) const override;
    void gradient_sum(const Vector& w, std::span<const Index> S, Vector& out) const override;
    void hvp_sum(const Vector& w, std::span<const Index> S, const Vector& v, Vector& out) const override;
    void ggn_sum(const Vector& w, std::span<const Index> S, const Vector& v, Vector& out) const override;
};

/// Softmax cross-entropy on a one-hidden-layer tanh network. hidden = 0 gives a
/// linear softmax model z = W a + c.
///
/// Parameter layout (all column-major): W1 (H x D), c1 (H), W2 (K x H), c2 (K);
/// without a hidden layer: W (K x D), c (K).
class MlpProblem final : public ProblemOracle {
public:
    MlpProblem(std::shared_ptr<const Dataset> data, int hidden, double reg, GgnMode mode = GgnMode::Logits);

    ProblemKind kind() const override { return ProblemKind::MlpCrossEntropy; }
    Index dim() const override { return dim_; }
    bool convex() const override { return hidden_ == 0; }
    bool lhh_diagonal() const override { return mode_ == GgnMode::Probabilities; }
    double test_error(const Vector& w, const Dataset& test) const override;
    Vector initial_point(std::uint64_t seed) const override;

    int hidden() const noexcept { return hidden_; }
    int classes() const noexcept { return classes_; }
    GgnMode ggn_mode() const noexcept { return mode_; }

protected:
    double loss_sum(const Vector& w, std::span<const Index> S) const override;
    void gradient_sum(const Vector& w, std::span<const Index> S, Vector& out) const override;
    void hvp_sum(const Vector& w, std::span<const Index> S, const Vector& v, Vector& out) const override;
    void ggn_sum(const Vector& w, std::span<const Index> S, const Vector& v, Vector& out) const override;

private:
    struct Forward;
    Forward forward(const Vector& w, const Dataset& ds, Index i) const;
    Vector logits(const Vector& w, const Dataset& ds, Index i) const;

    int hidden_;
    int classes_;
    Index inputs_;
    Index dim_;
    GgnMode mode_;
};

struct ProblemSpec {
    ProblemKind kind = ProblemKind::Logistic;
    /// Negative selects the default: 1/n for logistic, 0 otherwise.
    double reg = -1.0;
    int hidden = 32;
    GgnMode ggn_mode = GgnMode::Logits;
};

std::unique_ptr<ProblemOracle> make_problem(const ProblemSpec& spec, std::shared_ptr<const Dataset> data);

}  // namespace slbfgs
