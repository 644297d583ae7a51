#pragma once

#include "slbfgs/common.hpp"

#include <Eigen/SparseCore>

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace slbfgs {

using Rng = std::mt19937_64;
using SparseRows = Eigen::SparseMatrix<double, Eigen::RowMajor>;

enum class LabelKind { Binary, Real, Class };

/// Immutable design matrix (rows a_i) plus labels b_i.
struct Dataset {
    SparseRows features;
    Vector labels;
    LabelKind label_kind = LabelKind::Real;
    int num_classes = 0;  // Class labels only

    Index n() const noexcept { return features.rows(); }
    Index d() const noexcept { return features.cols(); }

    /// Throws ContractViolation on NaN/Inf or labels outside the declared domain.
    void validate() const;
};

/// Distinct sample indices, sorted ascending.
struct BatchSpec {
    std::vector<Index> indices;
    std::uint64_t draw = 0;  // position in the sampler stream

    std::size_t size() const noexcept { return indices.size(); }
    std::span<const Index> view() const noexcept { return indices; }

    static BatchSpec full(Index n);
};

/// Uniform integer in [0, bound) by rejection, independent of the standard library's distributions.
std::uint64_t uniform_below(Rng& rng, std::uint64_t bound);

/// Uniform subset of size b drawn without replacement.
BatchSpec sample_batch(Index n, Index b, Rng& rng);

/// "label idx:val idx:val ..." with 1-based indices. Blank lines and '#' comments are skipped.
Dataset parse_libsvm(const std::filesystem::path& path);
Dataset parse_libsvm(std::istream& in);

enum class SynthKind { Logistic, LeastSquares, Multiclass };

struct SynthParams {
    SynthKind kind = SynthKind::Logistic;
    Index n = 1000;
    Index d = 20;
    std::uint64_t seed = 1;
    double noise = 0.0;
    int num_classes = 3;  // Multiclass only
};

struct SyntheticData {
    Dataset data;
    /// Planted weights: d-vector for linear kinds, K x d (column-major) for Multiclass.
    Vector planted;
};

/// Gaussian features with a planted linear model.
///  - LeastSquares: b = a'w + noise * N(0,1).
///  - Logistic: b = sign(a'w + noise * N(0,1)), zero mapped to +1.
///  - Multiclass: b = argmax(W a + noise * N(0,1)).
SyntheticData synth_dataset(const SynthParams& p);

/// Deterministic train/test split; test gets round(fraction * n) rows.
std::pair<Dataset, Dataset> split_holdout(const Dataset& all, double test_fraction, std::uint64_t seed);

Dataset select_rows(const Dataset& all, std::span<const Index> rows);

}  // namespace slbfgs
