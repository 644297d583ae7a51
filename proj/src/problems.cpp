#include "slbfgs/problems.hpp"

#include <algorithm>

namespace slbfgs {

std::string to_string(ProblemKind k) {
    switch (k) {
        case ProblemKind::Logistic: return "logistic";
        case ProblemKind::LeastSquares: return "least_squares";
        case ProblemKind::MlpCrossEntropy: return "mlp";
    }
    return "?";
}

ProblemKind problem_kind_from_string(const std::string& s) {
    if (s == "logistic") return ProblemKind::Logistic;
    if (s == "least_squares" || s == "least-squares") return ProblemKind::LeastSquares;
    if (s == "mlp" || s == "mlp_cross_entropy" || s == "mlp-cross-entropy") return ProblemKind::MlpCrossEntropy;
    throw ConfigError("unknown problem kind '" + s + "'");
}

namespace {

double row_dot(const SparseRows& A, Index i, const Vector& w) {
    double acc = 0.0;
    for (SparseRows::InnerIterator it(A, i); it; ++it) acc += it.value() * w[it.col()];
    return acc;
}

void add_row(const SparseRows& A, Index i, double scale, Vector& out) {
    for (SparseRows::InnerIterator it(A, i); it; ++it) out[it.col()] += scale * it.value();
}

/// log(1 + exp(t)) without overflow.
double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

}  // namespace

ProblemOracle::ProblemOracle(std::shared_ptr<const Dataset> data, double reg)
    : data_(std::move(data)), reg_(reg) {
    if (!data_) throw ContractViolation("ProblemOracle: null dataset");
    if (!(reg >= 0.0)) throw ContractViolation("ProblemOracle: regularization must be non-negative");
    data_->validate();
}

void ProblemOracle::check_args(const Vector& w, std::span<const Index> S, const char* where) const {
    if (S.empty()) throw ContractViolation(std::string(where) + ": empty batch");
    if (w.size() != dim()) {
        throw ContractViolation(std::string(where) + ": parameter dimension " + std::to_string(w.size()) +
                                ", expected " + std::to_string(dim()));
    }
}

double ProblemOracle::batch_loss(const Vector& w, std::span<const Index> S) const {
    check_args(w, S, "batch_loss");
    return loss_sum(w, S) / static_cast<double>(S.size()) + 0.5 * reg_ * w.squaredNorm();
}

Vector ProblemOracle::batch_gradient(const Vector& w, std::span<const Index> S) const {
    check_args(w, S, "batch_gradient");
    Vector g = Vector::Zero(dim());
    gradient_sum(w, S, g);
    g /= static_cast<double>(S.size());
    g += reg_ * w;
    return g;
}

Vector ProblemOracle::hessian_vec(const Vector& w, std::span<const Index> S, const Vector& v) const {
    check_args(w, S, "hessian_vec");
    require_same_dim(w, v, "hessian_vec");
    Vector out = Vector::Zero(dim());
    hvp_sum(w, S, v, out);
    out /= static_cast<double>(S.size());
    out += reg_ * v;
    return out;
}

Vector ProblemOracle::ggn_vec(const Vector& w, std::span<const Index> S, const Vector& v) const {
    check_args(w, S, "ggn_vec");
    require_same_dim(w, v, "ggn_vec");
    Vector out = Vector::Zero(dim());
    ggn_sum(w, S, v, out);
    out /= static_cast<double>(S.size());
    out += reg_ * v;
    return out;
}

double ProblemOracle::full_loss(const Vector& w) const { return batch_loss(w, BatchSpec::full(n())); }

Vector ProblemOracle::full_gradient(const Vector& w) const { return batch_gradient(w, BatchSpec::full(n())); }

double ProblemOracle::sample_loss(const Vector& w, Index i) const {
    const Index idx[1] = {i};
    return batch_loss(w, std::span<const Index>(idx, 1));
}

Vector ProblemOracle::sample_gradient(const Vector& w, Index i) const {
    const Index idx[1] = {i};
    return batch_gradient(w, std::span<const Index>(idx, 1));
}

Vector ProblemOracle::initial_point(std::uint64_t) const { return Vector::Zero(dim()); }

// ---------------------------------------------------------------- logistic

LogisticProblem::LogisticProblem(std::shared_ptr<const Dataset> data, double reg)
    : ProblemOracle(std::move(data), reg) {
    if (this->data().label_kind != LabelKind::Binary) throw ContractViolation("LogisticProblem: labels must be +1/-1");
}

double LogisticProblem::loss_sum(const Vector& w, std::span<const Index> S) const {
    const auto& A = data().features;
    double acc = 0.0;
    for (Index i : S) acc += softplus(-data().labels[i] * row_dot(A, i, w));
    return acc;
}

void LogisticProblem::gradient_sum(const Vector& w, std::span<const Index> S, Vector& out) const {
    const auto& A = data().features;
    for (Index i : S) {
        const double b = data().labels[i];
        add_row(A, i, -b * sigmoid(-b * row_dot(A, i, w)), out);
    }
}

void LogisticProblem::hvp_sum(const Vector& w, std::span<const Index> S, const Vector& v, Vector& out) const {
    const auto& A = data().features;
    for (Index i : S) {
        const double s = sigmoid(row_dot(A, i, w));
        add_row(A, i, s * (1.0 - s) * row_dot(A, i, v), out);
    }
}

void LogisticProblem::ggn_sum(const Vector& w, std::span<const Index> S, const Vector& v, Vector& out) const {
    // h = a'w, L(h) = log(1 + exp(-b h)), L_hh = sigma(bh)(1 - sigma(bh)).
    const auto& A = data().features;
    for (Index i : S) {
        const double b = data().labels[i];
        const double jv = row_dot(A, i, v);
        const double s = sigmoid(b * row_dot(A, i, w));
        add_row(A, i, s * (1.0 - s) * jv, out);
    }
}

double LogisticProblem::test_error(const Vector& w, const Dataset& test) const {
    if (test.n() == 0) return 0.0;
    Index wrong = 0;
    for (Index i = 0; i < test.n(); ++i) {
        const double z = row_dot(test.features, i, w);
        if ((z >= 0.0 ? 1.0 : -1.0) != test.labels[i]) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(test.n());
}

// ---------------------------------------------------------- least squares

LeastSquaresProblem::LeastSquaresProblem(std::shared_ptr<const Dataset> data, double reg)
    : ProblemOracle(std::move(data), reg) {}

double LeastSquaresProblem::loss_sum(const Vector& w, std::span<const Index> S) const {
    double acc = 0.0;
    for (Index i : S) {
        const double r = row_dot(data().features, i, w) - data().labels[i];
        acc += 0.5 * r * r;
    }
    return acc;
}

void LeastSquaresProblem::gradient_sum(const Vector& w, std::span<const Index> S, Vector& out) const {
    for (Index i : S) add_row(data().features, i, row_dot(data().features, i, w) - data().labels[i], out);
}

void LeastSquaresProblem::hvp_sum(const Vector&, std::span<const Index> S, const Vector& v, Vector& out) const {
    for (Index i : S) add_row(data().features, i, row_dot(data().features, i, v), out);
}

void LeastSquaresProblem::ggn_sum(const Vector&, std::span<const Index> S, const Vector& v, Vector& out) const {
    // J = A_S, L_hh = I per sample (the 1/|S| is applied by the caller).
    for (Index i : S) {
        const double jv = row_dot(data().features, i, v);
        add_row(data().features, i, 1.0 * jv, out);
    }
}

double LeastSquaresProblem::test_error(const Vector& w, const Dataset& test) const {
    if (test.n() == 0) return 0.0;
    double acc = 0.0;
    for (Index i = 0; i < test.n(); ++i) {
        const double r = row_dot(test.features, i, w) - test.labels[i];
        acc += r * r;
    }
    return acc / static_cast<double>(test.n());
}

// -------------------------------------------------------------------- MLP

struct MlpProblem::Forward {
    Vector u;   // hidden pre-activation
    Vector h;   // tanh(u)
    Vector z;   // logits
    Vector p;   // softmax(z)
    Index label = 0;
};

namespace {

struct MlpView {
    Index D, H, K;
    bool has_hidden;
    // hidden model
    Eigen::Map<const Matrix> W1, W2;
    Eigen::Map<const Vector> c1, c2;

    MlpView(const Vector& w, Index D_, Index H_, Index K_)
        : D(D_), H(H_), K(K_), has_hidden(H_ > 0),
          W1(w.data(), H_ > 0 ? H_ : K_, D_),
          W2(w.data() + (H_ > 0 ? H_ * D_ + H_ : 0), H_ > 0 ? K_ : 0, H_),
          c1(w.data() + (H_ > 0 ? H_ * D_ : K_ * D_), H_ > 0 ? H_ : K_),
          c2(w.data() + (H_ > 0 ? H_ * D_ + H_ + K_ * H_ : 0), H_ > 0 ? K_ : 0) {}
};

struct MlpGrad {
    Eigen::Map<Matrix> W1, W2;
    Eigen::Map<Vector> c1, c2;

    MlpGrad(Vector& g, Index D, Index H, Index K)
        : W1(g.data(), H > 0 ? H : K, D),
          W2(g.data() + (H > 0 ? H * D + H : 0), H > 0 ? K : 0, H),
          c1(g.data() + (H > 0 ? H * D : K * D), H > 0 ? H : K),
          c2(g.data() + (H > 0 ? H * D + H + K * H : 0), H > 0 ? K : 0) {}
};

/// first-layer product M a for a sparse row a.
Vector first_layer(const Eigen::Map<const Matrix>& M, const SparseRows& A, Index i) {
    Vector out = Vector::Zero(M.rows());
    for (SparseRows::InnerIterator it(A, i); it; ++it) out += it.value() * M.col(it.col());
    return out;
}

void add_outer_row(Eigen::Map<Matrix>& G, const Vector& col, const SparseRows& A, Index i) {
    for (SparseRows::InnerIterator it(A, i); it; ++it) G.col(it.col()) += it.value() * col;
}

/// (diag(p) - p p') x
Vector softmax_jacobian(const Vector& p, const Vector& x) {
    return p.cwiseProduct(x - Vector::Constant(x.size(), p.dot(x)));
}

}  // namespace

MlpProblem::MlpProblem(std::shared_ptr<const Dataset> data, int hidden, double reg, GgnMode mode)
    : ProblemOracle(std::move(data), reg), hidden_(hidden), mode_(mode) {
    if (this->data().label_kind != LabelKind::Class || this->data().num_classes < 2) {
        throw ContractViolation("MlpProblem: needs class labels with at least two classes");
    }
    if (hidden < 0) throw ContractViolation("MlpProblem: hidden width must be >= 0");
    classes_ = this->data().num_classes;
    inputs_ = this->data().d();
    const Index H = hidden_, K = classes_, D = inputs_;
    dim_ = H > 0 ? H * D + H + K * H + K : K * D + K;
}

MlpProblem::Forward MlpProblem::forward(const Vector& w, const Dataset& ds, Index i) const {
    const MlpView m(w, inputs_, hidden_, classes_);
    Forward f;
    if (m.has_hidden) {
        f.u = first_layer(m.W1, ds.features, i) + m.c1;
        f.h = f.u.array().tanh().matrix();
        f.z = m.W2 * f.h + m.c2;
    } else {
        f.z = first_layer(m.W1, ds.features, i) + m.c1;
    }
    const double zmax = f.z.maxCoeff();
    f.p = (f.z.array() - zmax).exp().matrix();
    f.p /= f.p.sum();
    f.label = static_cast<Index>(ds.labels[i]);
    return f;
}

Vector MlpProblem::logits(const Vector& w, const Dataset& ds, Index i) const { return forward(w, ds, i).z; }

double MlpProblem::loss_sum(const Vector& w, std::span<const Index> S) const {
    double acc = 0.0;
    for (Index i : S) {
        const Forward f = forward(w, data(), i);
        const double zmax = f.z.maxCoeff();
        const double lse = zmax + std::log((f.z.array() - zmax).exp().sum());
        acc += lse - f.z[f.label];
    }
    return acc;
}

void MlpProblem::gradient_sum(const Vector& w, std::span<const Index> S, Vector& out) const {
    const MlpView m(w, inputs_, hidden_, classes_);
    MlpGrad g(out, inputs_, hidden_, classes_);
    for (Index i : S) {
        const Forward f = forward(w, data(), i);
        Vector dz = f.p;
        dz[f.label] -= 1.0;
        if (m.has_hidden) {
            g.W2 += dz * f.h.transpose();
            g.c2 += dz;
            const Vector du = (m.W2.transpose() * dz).cwiseProduct((1.0 - f.h.array().square()).matrix());
            add_outer_row(g.W1, du, data().features, i);
            g.c1 += du;
        } else {
            add_outer_row(g.W1, dz, data().features, i);
            g.c1 += dz;
        }
    }
}

void MlpProblem::hvp_sum(const Vector& w, std::span<const Index> S, const Vector& v, Vector& out) const {
    // Forward-mode (R-operator) pass over the reverse-mode gradient.
    const MlpView m(w, inputs_, hidden_, classes_);
    const MlpView dv(v, inputs_, hidden_, classes_);
    MlpGrad g(out, inputs_, hidden_, classes_);
    for (Index i : S) {
        const Forward f = forward(w, data(), i);
        Vector dz = f.p;
        dz[f.label] -= 1.0;
        if (m.has_hidden) {
            const Vector ru = first_layer(dv.W1, data().features, i) + dv.c1;
            const Vector dtanh = (1.0 - f.h.array().square()).matrix();
            const Vector rh = dtanh.cwiseProduct(ru);
            const Vector rz = dv.W2 * f.h + m.W2 * rh + dv.c2;
            const Vector rdz = softmax_jacobian(f.p, rz);

            g.W2 += rdz * f.h.transpose() + dz * rh.transpose();
            g.c2 += rdz;
            const Vector dh = m.W2.transpose() * dz;
            const Vector rdh = dv.W2.transpose() * dz + m.W2.transpose() * rdz;
            const Vector rdu = rdh.cwiseProduct(dtanh) - 2.0 * dh.cwiseProduct(f.h).cwiseProduct(rh);
            add_outer_row(g.W1, rdu, data().features, i);
            g.c1 += rdu;
        } else {
            const Vector rz = first_layer(dv.W1, data().features, i) + dv.c1;
            const Vector rdz = softmax_jacobian(f.p, rz);
            add_outer_row(g.W1, rdz, data().features, i);
            g.c1 += rdz;
        }
    }
}

void MlpProblem::ggn_sum(const Vector& w, std::span<const Index> S, const Vector& v, Vector& out) const {
    // J' L_hh J v with J the Jacobian of the logits (or probabilities) in w.
    const MlpView m(w, inputs_, hidden_, classes_);
    const MlpView dv(v, inputs_, hidden_, classes_);
    MlpGrad g(out, inputs_, hidden_, classes_);
    for (Index i : S) {
        const Forward f = forward(w, data(), i);
        Vector jz;  // J_z v
        Vector dtanh;
        if (m.has_hidden) {
            dtanh = (1.0 - f.h.array().square()).matrix();
            const Vector rh = dtanh.cwiseProduct(first_layer(dv.W1, data().features, i) + dv.c1);
            jz = dv.W2 * f.h + m.W2 * rh + dv.c2;
        } else {
            jz = first_layer(dv.W1, data().features, i) + dv.c1;
        }

        Vector back;  // cotangent on the logits
        if (mode_ == GgnMode::Logits) {
            back = softmax_jacobian(f.p, jz);
        } else {
            const Vector jp = softmax_jacobian(f.p, jz);
            Vector t = Vector::Zero(classes_);
            const double py = f.p[f.label];
            t[f.label] = jp[f.label] / (py * py);
            back = softmax_jacobian(f.p, t);
        }

        if (m.has_hidden) {
            g.W2 += back * f.h.transpose();
            g.c2 += back;
            const Vector du = (m.W2.transpose() * back).cwiseProduct(dtanh);
            add_outer_row(g.W1, du, data().features, i);
            g.c1 += du;
        } else {
            add_outer_row(g.W1, back, data().features, i);
            g.c1 += back;
        }
    }
}

double MlpProblem::test_error(const Vector& w, const Dataset& test) const {
    if (test.n() == 0) return 0.0;
    if (test.d() != inputs_) throw ContractViolation("MlpProblem::test_error: feature dimension mismatch");
    Index wrong = 0;
    for (Index i = 0; i < test.n(); ++i) {
        Index best = 0;
        logits(w, test, i).maxCoeff(&best);
        if (best != static_cast<Index>(test.labels[i])) ++wrong;
    }
    return static_cast<double>(wrong) / static_cast<double>(test.n());
}

Vector MlpProblem::initial_point(std::uint64_t seed) const {
    Vector w = Vector::Zero(dim_);
    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    MlpGrad view(w, inputs_, hidden_, classes_);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(inputs_));
    for (Index k = 0; k < view.W1.size(); ++k) view.W1.data()[k] = s1 * gauss(rng);
    if (hidden_ > 0) {
        const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
        for (Index k = 0; k < view.W2.size(); ++k) view.W2.data()[k] = s2 * gauss(rng);
    }
    return w;
}

std::unique_ptr<ProblemOracle> make_problem(const ProblemSpec& spec, std::shared_ptr<const Dataset> data) {
    const double n = static_cast<double>(data->n());
    switch (spec.kind) {
        case ProblemKind::Logistic:
            return std::make_unique<LogisticProblem>(std::move(data), spec.reg < 0 ? 1.0 / n : spec.reg);
        case ProblemKind::LeastSquares:
            return std::make_unique<LeastSquaresProblem>(std::move(data), spec.reg < 0 ? 0.0 : spec.reg);
        case ProblemKind::MlpCrossEntropy:
            return std::make_unique<MlpProblem>(std::move(data), spec.hidden, spec.reg < 0 ? 0.0 : spec.reg,
                                                spec.ggn_mode);
    }
    throw ConfigError("unknown problem kind");
}

}  // namespace slbfgs
