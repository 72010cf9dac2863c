#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "streamrak/common.hpp"
#include "streamrak/kernel.hpp"
#include "streamrak/pyramid.hpp"
#include "streamrak/random.hpp"
#include "streamrak/solver.hpp"

namespace streamrak {

struct BatchDataset {
    PointBlock points;
    Vector targets;

    Eigen::Index size() const noexcept { return points.rows(); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(points.cols()); }
    void check() const {
        if (points.rows() != targets.size())
            throw UsageError("dataset has " + std::to_string(points.rows()) + " points and " +
                             std::to_string(targets.size()) + " targets");
    }
};

/// k distinct indices from [0, n), uniformly without replacement, deterministic per seed.
inline std::vector<Eigen::Index> sample_without_replacement(Eigen::Index n, Eigen::Index k, std::uint64_t seed) {
    if (k > n || k < 0) throw UsageError("cannot draw " + std::to_string(k) + " of " + std::to_string(n));
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    Rng rng(seed);
    for (Eigen::Index i = 0; i < k; ++i) {
        const auto j = i + static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::uint64_t>(n - i)));
        std::swap(idx[i], idx[j]);
    }
    idx.resize(static_cast<std::size_t>(k));
    return idx;
}

inline PointBlock select_rows(const PointBlock& p, const std::vector<Eigen::Index>& rows) {
    PointBlock out(static_cast<Eigen::Index>(rows.size()), p.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = p.row(rows[i]);
    return out;
}

inline Vector select_entries(const Vector& v, const std::vector<Eigen::Index>& rows) {
    Vector out(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t i = 0; i < rows.size(); ++i) out[static_cast<Eigen::Index>(i)] = v[rows[i]];
    return out;
}

/// Exact KRR: (K + lambda n I) alpha = y.
inline Vector krr_fit(const BatchDataset& data, Bandwidth r, double lambda) {
    data.check();
    if (data.size() < 1) throw UsageError("krr_fit needs at least one sample");
    if (!(lambda >= 0.0)) throw UsageError("lambda must be non-negative");
    Matrix k = kernel_cross_matrix(data.points, data.points, r);
    k.diagonal().array() += lambda * static_cast<double>(data.size());
    Eigen::LLT<Matrix> llt(k);
    if (llt.info() != Eigen::Success) throw NumericalError("KRR system is not positive definite");
    Vector a = llt.solve(data.targets);
    if (!a.allFinite()) throw NumericalError("non-finite KRR coefficients");
    return a;
}

/// Full-kernel pyramid: every training point is a centre, level l uses bandwidth r0 2^-l and
/// fits the residual of the levels before it.
inline PyramidModel krr_pyramid_fit(const BatchDataset& data, Bandwidth r0, int levels, double lambda,
                                    int first_level = 0) {
    data.check();
    if (levels < 1) throw UsageError("levels must be >= 1");
    PyramidModel model(data.dim(), r0);
    Vector d = data.targets;
    for (int l = first_level; l < first_level + levels; ++l) {
        const Bandwidth r = bandwidth_at_level(l, r0);
        BatchDataset level_data{data.points, d};
        LevelModel lm;
        lm.level = l;
        lm.bandwidth = r;
        lm.landmarks = data.points;
        lm.coefficients = krr_fit(level_data, r, lambda);
        lm.samples = static_cast<std::uint64_t>(data.size());
        d -= kernel_cross_matrix(data.points, data.points, r) * lm.coefficients;
        model = model.add_level(std::move(lm));
    }
    return model;
}

/// K_nm^T K_nm and K_nm^T y over the given rows, assembled in row blocks.
inline std::pair<Matrix, Vector> sketched_system(const PointBlock& points, const Vector& y, const PointBlock& centres,
                                                 Bandwidth r, Eigen::Index block = 2048) {
    const Eigen::Index m = centres.rows();
    Matrix gram = Matrix::Zero(m, m);
    Vector rhs = Vector::Zero(m);
    for (Eigen::Index s = 0; s < points.rows(); s += block) {
        const Eigen::Index e = std::min(points.rows(), s + block);
        const PointBlock part = points.middleRows(s, e - s);
        const Matrix knm = kernel_cross_matrix(part, centres, r);
        gram.selfadjointView<Eigen::Lower>().rankUpdate(knm.transpose());
        rhs.noalias() += knm.transpose() * y.segment(s, e - s);
    }
    Matrix full = gram.selfadjointView<Eigen::Lower>();
    return {full, rhs};
}

/// Single-bandwidth FALKON fit on m uniformly sampled Nystrom centres.
inline LevelModel falkon_fit(const BatchDataset& data, Bandwidth r, const SolverOptions& opt, Eigen::Index m,
                             std::uint64_t seed, int level = 0) {
    data.check();
    if (m < 1 || m > data.size()) throw UsageError("falkon_fit needs 1 <= m <= n");
    LevelModel lm;
    lm.level = level;
    lm.bandwidth = r;
    lm.landmarks = select_rows(data.points, sample_without_replacement(data.size(), m, seed));
    const auto [gram, rhs] = sketched_system(data.points, data.targets, lm.landmarks, r);
    const Matrix kmm = kernel_cross_matrix(lm.landmarks, lm.landmarks, r);
    lm.coefficients = solve_sketched(kmm, gram, rhs, static_cast<std::uint64_t>(data.size()), opt).coefficients;
    lm.samples = static_cast<std::uint64_t>(data.size());
    return lm;
}

/// Laplacian pyramid over uniform Nystrom centres reused at every level. With per_level_n the
/// training rows are split into consecutive disjoint slices of that size, one per level.
inline PyramidModel lp_krr_fit(const BatchDataset& data, Bandwidth r0, int levels, const SolverOptions& opt,
                               Eigen::Index m, std::optional<Eigen::Index> per_level_n, std::uint64_t seed,
                               int first_level = 0) {
    data.check();
    if (levels < 1) throw UsageError("levels must be >= 1");
    if (m < 1 || m > data.size()) throw UsageError("lp_krr_fit needs 1 <= m <= n");
    if (per_level_n && (*per_level_n < 1 || *per_level_n * levels > data.size()))
        throw UsageError("per-level split exceeds the dataset");
    const PointBlock centres = select_rows(data.points, sample_without_replacement(data.size(), m, seed));
    PyramidModel model(data.dim(), r0);
    for (int i = 0; i < levels; ++i) {
        const int l = first_level + i;
        const Bandwidth r = bandwidth_at_level(l, r0);
        Eigen::Index s = 0, count = data.size();
        if (per_level_n) {
            s = *per_level_n * i;
            count = *per_level_n;
        }
        const PointBlock pts = data.points.middleRows(s, count);
        Vector d(count);
        for (Eigen::Index j = 0; j < count; ++j)
            d[j] = residual(data.targets[s + j], model, row_span(pts, j));
        const auto [gram, rhs] = sketched_system(pts, d, centres, r);
        const Matrix kmm = kernel_cross_matrix(centres, centres, r);
        LevelModel lm;
        lm.level = l;
        lm.bandwidth = r;
        lm.landmarks = centres;
        lm.coefficients = solve_sketched(kmm, gram, rhs, static_cast<std::uint64_t>(count), opt).coefficients;
        lm.samples = static_cast<std::uint64_t>(count);
        model = model.add_level(std::move(lm));
    }
    return model;
}

struct CvResult {
    int best_level = 0;
    Bandwidth best_bandwidth{1.0};
    std::vector<double> errors;  // mean squared validation error per grid level
};

/// k-fold cross-validation of the FALKON bandwidth over r0 2^-l, l in [lo, hi].
inline CvResult falkon_cv_bandwidth(const BatchDataset& data, Bandwidth r0, int lo, int hi, const SolverOptions& opt,
                                    Eigen::Index m, int folds, std::uint64_t seed) {
    data.check();
    if (folds < 2 || data.size() < folds) throw UsageError("need at least 2 folds and one sample per fold");
    if (hi < lo) throw UsageError("empty bandwidth grid");
    const auto perm = sample_without_replacement(data.size(), data.size(), seed);
    CvResult res;
    double best = std::numeric_limits<double>::infinity();
    for (int l = lo; l <= hi; ++l) {
        const Bandwidth r = bandwidth_at_level(l, r0);
        double sse = 0.0;
        for (int f = 0; f < folds; ++f) {
            std::vector<Eigen::Index> train, test;
            for (std::size_t i = 0; i < perm.size(); ++i) (static_cast<int>(i % folds) == f ? test : train).push_back(perm[i]);
            BatchDataset tr{select_rows(data.points, train), select_entries(data.targets, train)};
            const Eigen::Index mm = std::min<Eigen::Index>(m, tr.size());
            const LevelModel lm = falkon_fit(tr, r, opt, mm, mix_seed(seed, static_cast<std::uint64_t>(f)), l);
            for (Eigen::Index i : test) {
                const double e = data.targets[i] - lm.evaluate(row_span(data.points, i));
                sse += e * e;
            }
        }
        const double err = sse / static_cast<double>(data.size());
        res.errors.push_back(err);
        if (err < best) {
            best = err;
            res.best_level = l;
            res.best_bandwidth = r;
        }
    }
    return res;
}

}  // namespace streamrak
