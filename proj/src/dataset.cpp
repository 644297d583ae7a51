#include "slbfgs/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <istream>
#include <numeric>
#include <sstream>

namespace slbfgs {

void Dataset::validate() const {
    if (labels.size() != features.rows()) throw ContractViolation("Dataset: label count differs from row count");
    for (Index k = 0; k < features.nonZeros(); ++k) {
        if (!std::isfinite(features.valuePtr()[k])) throw ContractViolation("Dataset: non-finite feature");
    }
    for (Index i = 0; i < labels.size(); ++i) {
        const double b = labels[i];
        if (!std::isfinite(b)) throw ContractViolation("Dataset: non-finite label");
        switch (label_kind) {
            case LabelKind::Binary:
                if (b != 1.0 && b != -1.0) throw ContractViolation("Dataset: binary labels must be +1/-1");
                break;
            case LabelKind::Class:
                if (b < 0 || b >= num_classes || b != std::floor(b)) {
                    throw ContractViolation("Dataset: class label out of range");
                }
                break;
            case LabelKind::Real: break;
        }
    }
}

BatchSpec BatchSpec::full(Index n) {
    BatchSpec s;
    s.indices.resize(static_cast<std::size_t>(n));
    std::iota(s.indices.begin(), s.indices.end(), Index{0});
    return s;
}

std::uint64_t uniform_below(Rng& rng, std::uint64_t bound) {
    if (bound == 0) throw ContractViolation("uniform_below: empty range");
    // 2^64 mod bound values at the bottom are rejected so the rest split evenly.
    const std::uint64_t threshold = (std::uint64_t{0} - bound) % bound;
    std::uint64_t x;
    do {
        x = rng();
    } while (x < threshold);
    return x % bound;
}

BatchSpec sample_batch(Index n, Index b, Rng& rng) {
    if (b < 1 || b > n) {
        throw ContractViolation("sample_batch: batch size " + std::to_string(b) + " outside [1, " +
                                std::to_string(n) + "]");
    }
    BatchSpec s;
    if (b == n) return BatchSpec::full(n);
    // Partial Fisher-Yates over a lazily materialized permutation.
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    for (Index i = 0; i < b; ++i) {
        const auto j = static_cast<Index>(uniform_below(rng, static_cast<std::uint64_t>(n - i))) + i;
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    s.indices.assign(perm.begin(), perm.begin() + b);
    std::sort(s.indices.begin(), s.indices.end());
    return s;
}

namespace {

bool parse_double(std::string_view tok, double& out) {
    if (!tok.empty() && tok.front() == '+') tok.remove_prefix(1);
    const auto* end = tok.data() + tok.size();
    auto [ptr, ec] = std::from_chars(tok.data(), end, out);
    return ec == std::errc() && ptr == end;
}

}  // namespace

Dataset parse_libsvm(std::istream& in) {
    using Triplet = Eigen::Triplet<double>;
    std::vector<Triplet> entries;
    std::vector<double> labels;
    Index max_col = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        std::istringstream toks(line);
        std::string tok;
        if (!(toks >> tok)) continue;
        double label = 0.0;
        if (!parse_double(tok, label)) throw ParseError("bad label '" + tok + "'", line_no);
        const auto row = static_cast<Index>(labels.size());
        labels.push_back(label);
        while (toks >> tok) {
            const auto colon = tok.find(':');
            if (colon == std::string::npos) throw ParseError("expected idx:val, got '" + tok + "'", line_no);
            long long idx = 0;
            const std::string_view idx_part(tok.data(), colon);
            auto [ptr, ec] = std::from_chars(idx_part.data(), idx_part.data() + idx_part.size(), idx);
            if (ec != std::errc() || ptr != idx_part.data() + idx_part.size() || idx < 1) {
                throw ParseError("bad feature index in '" + tok + "'", line_no);
            }
            double val = 0.0;
            if (!parse_double(std::string_view(tok).substr(colon + 1), val) || !std::isfinite(val)) {
                throw ParseError("bad feature value in '" + tok + "'", line_no);
            }
            entries.emplace_back(row, static_cast<Index>(idx - 1), val);
            max_col = std::max(max_col, static_cast<Index>(idx));
        }
    }
    if (labels.empty()) throw ParseError("no samples", line_no == 0 ? 1 : line_no);

    Dataset ds;
    ds.features.resize(static_cast<Index>(labels.size()), max_col);
    ds.features.setFromTriplets(entries.begin(), entries.end());
    ds.features.makeCompressed();
    ds.labels = Eigen::Map<const Vector>(labels.data(), static_cast<Index>(labels.size()));

    const bool binary = std::all_of(labels.begin(), labels.end(), [](double b) { return b == 1.0 || b == -1.0; });
    ds.label_kind = binary ? LabelKind::Binary : LabelKind::Real;
    return ds;
}

Dataset parse_libsvm(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return parse_libsvm(in);
}

SyntheticData synth_dataset(const SynthParams& p) {
    if (p.n < 1 || p.d < 1) throw ContractViolation("synth_dataset: n and d must be >= 1");
    Rng rng(p.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const int K = p.kind == SynthKind::Multiclass ? p.num_classes : 1;
    if (K < 1 || (p.kind == SynthKind::Multiclass && K < 2)) {
        throw ContractViolation("synth_dataset: need at least two classes");
    }
    SyntheticData out;
    out.planted.resize(static_cast<Index>(K) * p.d);
    for (Index k = 0; k < out.planted.size(); ++k) out.planted[k] = gauss(rng);
    if (p.kind != SynthKind::Multiclass) out.planted /= std::sqrt(static_cast<double>(p.d));

    Matrix dense(p.n, p.d);
    for (Index i = 0; i < p.n; ++i)
        for (Index j = 0; j < p.d; ++j) dense(i, j) = gauss(rng);

    Dataset& ds = out.data;
    ds.labels.resize(p.n);
    switch (p.kind) {
        case SynthKind::LeastSquares: {
            ds.label_kind = LabelKind::Real;
            for (Index i = 0; i < p.n; ++i) ds.labels[i] = dense.row(i).dot(out.planted) + p.noise * gauss(rng);
            break;
        }
        case SynthKind::Logistic: {
            ds.label_kind = LabelKind::Binary;
            for (Index i = 0; i < p.n; ++i) {
                const double z = dense.row(i).dot(out.planted) + p.noise * gauss(rng);
                ds.labels[i] = z >= 0.0 ? 1.0 : -1.0;
            }
            break;
        }
        case SynthKind::Multiclass: {
            ds.label_kind = LabelKind::Class;
            ds.num_classes = K;
            const Eigen::Map<const Matrix> W(out.planted.data(), K, p.d);
            for (Index i = 0; i < p.n; ++i) {
                Vector z = W * dense.row(i).transpose();
                for (Index k = 0; k < K; ++k) z[k] += p.noise * gauss(rng);
                Index best = 0;
                z.maxCoeff(&best);
                ds.labels[i] = static_cast<double>(best);
            }
            break;
        }
    }
    ds.features = dense.sparseView();
    ds.features.makeCompressed();
    return out;
}

Dataset select_rows(const Dataset& all, std::span<const Index> rows) {
    using Triplet = Eigen::Triplet<double>;
    std::vector<Triplet> entries;
    Dataset out;
    out.label_kind = all.label_kind;
    out.num_classes = all.num_classes;
    out.labels.resize(static_cast<Index>(rows.size()));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const Index i = rows[r];
        for (SparseRows::InnerIterator it(all.features, i); it; ++it) {
            entries.emplace_back(static_cast<Index>(r), it.col(), it.value());
        }
        out.labels[static_cast<Index>(r)] = all.labels[i];
    }
    out.features.resize(static_cast<Index>(rows.size()), all.d());
    out.features.setFromTriplets(entries.begin(), entries.end());
    out.features.makeCompressed();
    return out;
}

std::pair<Dataset, Dataset> split_holdout(const Dataset& all, double test_fraction, std::uint64_t seed) {
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) {
        throw ContractViolation("split_holdout: fraction must lie in [0, 1)");
    }
    const Index n = all.n();
    std::vector<Index> perm(static_cast<std::size_t>(n));
    std::iota(perm.begin(), perm.end(), Index{0});
    Rng rng(seed);
    for (Index i = n - 1; i > 0; --i) {
        const auto j = static_cast<Index>(uniform_below(rng, static_cast<std::uint64_t>(i + 1)));
        std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
    const auto n_test = static_cast<Index>(std::llround(test_fraction * static_cast<double>(n)));
    std::vector<Index> test(perm.begin(), perm.begin() + n_test);
    std::vector<Index> train(perm.begin() + n_test, perm.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    return {select_rows(all, train), select_rows(all, test)};
}

}  // namespace slbfgs
