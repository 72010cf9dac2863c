#pragma once

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "streamrak/baselines.hpp"
#include "streamrak/bench.hpp"
#include "streamrak/config.hpp"
#include "streamrak/dataset_io.hpp"
#include "streamrak/orchestrator.hpp"

namespace streamrak {

enum class BenchmarkKind { Varsinus, Dumbbell, PendulumLow, PendulumHigh };

inline const char* to_string(BenchmarkKind k) {
    switch (k) {
        case BenchmarkKind::Varsinus: return "varsinus";
        case BenchmarkKind::Dumbbell: return "dumbbell";
        case BenchmarkKind::PendulumLow: return "pendulum-low";
        case BenchmarkKind::PendulumHigh: return "pendulum-high";
    }
    return "?";
}

inline BenchmarkKind parse_benchmark_kind(const std::string& s) {
    for (auto k : {BenchmarkKind::Varsinus, BenchmarkKind::Dumbbell, BenchmarkKind::PendulumLow,
                   BenchmarkKind::PendulumHigh}) {
        if (s == to_string(k)) return k;
    }
    throw UsageError("unknown benchmark `" + s + "` (varsinus, dumbbell, pendulum-low, pendulum-high)");
}

inline bool is_pendulum(BenchmarkKind k) { return k == BenchmarkKind::PendulumLow || k == BenchmarkKind::PendulumHigh; }

/// Training and test sizes. For the pendulum runs these count pendulums, not pairs.
struct BenchmarkSizes {
    Eigen::Index train = 0;
    Eigen::Index test = 0;
};

inline BenchmarkSizes full_sizes(BenchmarkKind k) {
    switch (k) {
        case BenchmarkKind::Varsinus: return {2'200'000, 130'000};
        case BenchmarkKind::Dumbbell: return {1'900'000, 600'000};
        default: return {8000, 100};
    }
}

/// Training count scaled; test counts scale too except the 100 pendulum test runs.
inline BenchmarkSizes scaled_sizes(BenchmarkKind k, double scale) {
    if (!(scale > 0.0 && scale <= 1.0)) throw UsageError("scale must lie in (0, 1]");
    const BenchmarkSizes f = full_sizes(k);
    auto sc = [&](Eigen::Index n) { return std::max<Eigen::Index>(1, std::llround(static_cast<double>(n) * scale)); };
    return {sc(f.train), is_pendulum(k) ? f.test : sc(f.test)};
}

/// Pipeline settings used by every benchmark run.
inline RunConfig benchmark_config(BenchmarkKind k) {
    RunConfig c;
    c.alpha = 0.1;
    c.bypass = false;
    c.min_pool_fraction = 0.6;
    c.pool_patience = 20000;
    c.delta1 = 1e-4;
    c.delta2 = 1e-5;
    c.delta3 = 10000;
    c.lambda = 1e-5;
    c.max_cg_iter = 100;
    if (is_pendulum(k)) c.bandwidth_scale = 4.0;
    return c;
}

struct BenchmarkOptions {
    BenchmarkSizes sizes;
    std::uint64_t seed = 1;
    RunConfig config;
    bool baselines = true;
    Eigen::Index falkon_max_centres = 1000;  // FALKON uses min(10 sqrt(n), this)
    Eigen::Index baseline_rows = 200'000;    // baselines train on at most this many rows
    Eigen::Index cv_rows = 10'000;           // held-out slice for the FALKON bandwidth search
    int cv_folds = 5;
    double max_matrix_entries = 2.5e8;       // refuse dense baseline matrices above this size
    int pendulum_steps = 500;
    int horizon = 50;
};

inline BenchmarkOptions default_benchmark_options(BenchmarkKind k, double scale = 1.0) {
    BenchmarkOptions o;
    o.sizes = scaled_sizes(k, scale);
    o.config = benchmark_config(k);
    return o;
}

struct TableRow {
    std::string method;
    int level = 0;
    std::size_t landmarks = 0;
    std::uint64_t samples = 0;
    double mse = 0.0;
    double seconds = 0.0;  // accumulated
};

struct LandmarkRow {
    int level = 0;
    std::size_t landmarks = 0;
    double radius = 0.0;  // r_l of the tree level
    double median_knn = std::numeric_limits<double>::quiet_NaN();
    double mean_knn = std::numeric_limits<double>::quiet_NaN();
    double bridge_fraction = std::numeric_limits<double>::quiet_NaN();
};

struct BenchmarkReport {
    BenchmarkKind kind{};
    RunConfig config;
    std::uint64_t training_samples = 0;
    int knn_k = 2;
    std::vector<TableRow> table;
    std::vector<LandmarkRow> landmarks;
    double uniform_bridge_fraction = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> forecast_mse;  // [T] for the final model, T = 0..horizon
    int falkon_level = -1;
    std::vector<double> falkon_cv_errors;

    std::vector<TableRow> rows(const std::string& method) const {
        std::vector<TableRow> out;
        for (const auto& r : table) {
            if (r.method == method) out.push_back(r);
        }
        return out;
    }
};

inline void check_matrix_size(double rows, double cols, double cap, const std::string& what) {
    if (rows * cols > cap) {
        throw UsageError(what + " needs a " + std::to_string(static_cast<long long>(rows)) + " x " +
                         std::to_string(static_cast<long long>(cols)) + " matrix, above the cap of " +
                         std::to_string(static_cast<long long>(cap)) + " entries");
    }
}

/// Levels l <= last of every model.
inline ModelSet truncate_models(const ModelSet& models, int last) {
    ModelSet out;
    for (const auto& m : models) {
        PyramidModel q(m.dim(), m.r0());
        for (std::size_t i = 0; i < m.level_count(); ++i) {
            if (m.level_at(i).level <= last) q = q.add_level(m.level_at(i));
        }
        out.push_back(std::move(q));
    }
    return out;
}

/// Shared-centre FALKON fit of every output column.
inline std::vector<LevelModel> falkon_fit_outputs(const PointBlock& x, const RowMatrix& y, const PointBlock& centres,
                                                  Bandwidth r, const SolverOptions& opt, int level = 0) {
    const Eigen::Index m = centres.rows();
    Matrix gram = Matrix::Zero(m, m);
    Matrix rhs = Matrix::Zero(m, y.cols());
    constexpr Eigen::Index block = 2048;
    for (Eigen::Index s = 0; s < x.rows(); s += block) {
        const Eigen::Index e = std::min(x.rows(), s + block);
        const Matrix knm = kernel_cross_matrix(x.middleRows(s, e - s), centres, r);
        gram.selfadjointView<Eigen::Lower>().rankUpdate(knm.transpose());
        rhs.noalias() += knm.transpose() * y.middleRows(s, e - s);
    }
    const Matrix full = gram.selfadjointView<Eigen::Lower>();
    const Matrix kmm = kernel_cross_matrix(centres, centres, r);
    const auto n = static_cast<std::uint64_t>(x.rows());
    const auto sols = with_jitter_escalation(kmm, n, opt.lambda, [&](const Preconditioner& pre) {
        std::vector<LevelSolution> out;
        for (Eigen::Index k = 0; k < y.cols(); ++k) out.push_back(solve_sketched(kmm, full, rhs.col(k), n, opt, pre));
        return out;
    });
    std::vector<LevelModel> models;
    for (const auto& s : sols) {
        LevelModel lm;
        lm.level = level;
        lm.bandwidth = r;
        lm.landmarks = centres;
        lm.coefficients = s.coefficients;
        lm.samples = n;
        models.push_back(std::move(lm));
    }
    return models;
}

namespace bench_detail {

using Clock = std::chrono::steady_clock;

inline double since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

/// Scalar targets: plain test rows. Pendulum: initial states and simulated truth.
struct TestSet {
    VectorDataset rows;
    std::vector<PendulumState> starts;
    std::vector<std::vector<PendulumState>> truth;
};

inline double row_mse(const ModelSet& models, const VectorDataset& t) {
    Vector y = t.targets.col(0), yhat(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) yhat[i] = models[0].predict(row_span(t.points, i));
    return mse(y, yhat);
}

/// MSE of the centre-of-mass forecast at each step T, normalised by its range across runs.
inline std::vector<double> forecast_errors(const ModelSet& models, const TestSet& t, int horizon) {
    const std::size_t runs = t.starts.size();
    std::vector<Forecast> fc;
    for (const auto& s : t.starts) fc.push_back(forecast_recursive(models, s, horizon));
    std::vector<double> out(static_cast<std::size_t>(horizon) + 1, 0.0);
    for (int step = 1; step <= horizon; ++step) {
        Vector y(static_cast<Eigen::Index>(runs)), yhat(static_cast<Eigen::Index>(runs));
        bool lost = false;
        for (std::size_t k = 0; k < runs; ++k) {
            y[static_cast<Eigen::Index>(k)] = pendulum_center_of_mass(t.truth[k][static_cast<std::size_t>(step)]);
            if (fc[k].center_of_mass.size() <= static_cast<std::size_t>(step)) {
                lost = true;
                break;
            }
            yhat[static_cast<Eigen::Index>(k)] = fc[k].center_of_mass[static_cast<std::size_t>(step)];
        }
        out[static_cast<std::size_t>(step)] = lost ? std::numeric_limits<double>::infinity() : mse(y, yhat);
    }
    return out;
}

inline double score(BenchmarkKind k, const ModelSet& models, const TestSet& t, int horizon) {
    return is_pendulum(k) ? forecast_errors(models, t, horizon).back() : row_mse(models, t.rows);
}

}  // namespace bench_detail

/// Streams the training set through a sequential pipeline, then scores every trained level and,
/// when enabled, the LP-KRR and FALKON baselines on the same test set.
inline BenchmarkReport run_benchmark(BenchmarkKind kind, const BenchmarkOptions& opt,
                                     const std::function<void(const std::string&)>& progress = {}) {
    using namespace bench_detail;
    auto say = [&](const std::string& s) {
        if (progress) progress(s);
    };
    if (opt.sizes.train < 1 || opt.sizes.test < 1) throw UsageError("benchmark sizes must be positive");
    BenchmarkReport rep;
    rep.kind = kind;
    rep.config = opt.config;
    const std::uint64_t train_seed = mix_seed(opt.seed, 1), test_seed = mix_seed(opt.seed, 2);

    VectorDataset train;
    TestSet test;
    std::vector<Eigen::Index> order;
    switch (kind) {
        case BenchmarkKind::Varsinus:
            train = to_vector_dataset(varsinus_generate(opt.sizes.train, train_seed));
            test.rows = to_vector_dataset(varsinus_generate(opt.sizes.test, test_seed));
            break;
        case BenchmarkKind::Dumbbell:
            train = to_vector_dataset(dumbbell_generate(opt.sizes.train, train_seed));
            test.rows = to_vector_dataset(dumbbell_generate(opt.sizes.test, test_seed));
            break;
        default: {
            const PendulumState base =
                kind == BenchmarkKind::PendulumLow ? pendulum_low_energy() : pendulum_high_energy();
            train = pendulum_dataset(base, static_cast<int>(opt.sizes.train), kTrainingPerturbation,
                                     opt.pendulum_steps, 1, train_seed);
            order = sample_without_replacement(train.size(), train.size(), mix_seed(opt.seed, 3));
            Rng rng(test_seed);
            for (Eigen::Index k = 0; k < opt.sizes.test; ++k) {
                test.starts.push_back(perturbed(base, kTestPerturbation, rng));
                test.truth.push_back(pendulum_simulate(test.starts.back(), opt.horizon));
            }
        }
    }
    if (order.empty()) {
        order.resize(static_cast<std::size_t>(train.size()));
        std::iota(order.begin(), order.end(), Eigen::Index{0});
    }
    const auto dim = static_cast<std::size_t>(train.points.cols());
    const auto outs = static_cast<std::size_t>(train.targets.cols());
    rep.training_samples = static_cast<std::uint64_t>(train.size());
    rep.knn_k = default_knn(dim);
    say(std::string(to_string(kind)) + ": " + std::to_string(train.size()) + " training samples");

    Pipeline pipe(opt.config, dim, outs);
    for (Eigen::Index i : order) pipe.consume(row_span(train.points, i), {train.targets.data() + i * train.targets.cols(), outs});
    pipe.finish();
    if (!pipe.snapshot_model()) throw NumericalError("the stream ended before any level trained");
    const ModelSet models = *pipe.snapshot_model();
    const PyramidModel& m0 = models.front();
    const double r0 = pipe.tree()->r0().value();
    say("streamrak trained " + std::to_string(m0.level_count()) + " levels, r0 = " + std::to_string(r0));

    double bridge_uniform = 0.0;
    if (kind == BenchmarkKind::Dumbbell) {
        for (Eigen::Index i = 0; i < train.size(); ++i) bridge_uniform += on_bridge(row_span(train.points, i));
        rep.uniform_bridge_fraction = bridge_uniform / static_cast<double>(train.size());
    }
    for (const auto& e : pipe.events()) {
        if (e.kind != EventKind::LevelTrained) continue;
        const LevelModel& lm = m0.level(e.level);
        rep.table.push_back({"streamrak", e.level, e.landmarks, e.level_samples,
                             score(kind, truncate_models(models, e.level), test, opt.horizon), e.seconds});
        LandmarkRow lr;
        lr.level = e.level;
        lr.landmarks = static_cast<std::size_t>(lm.landmarks.rows());
        lr.radius = bandwidth_at_level(e.level, Bandwidth(r0)).value();
        const auto knn = knn_mean_distances(lm.landmarks, rep.knn_k);
        if (!knn.empty()) {
            lr.median_knn = median(knn);
            lr.mean_knn = std::accumulate(knn.begin(), knn.end(), 0.0) / static_cast<double>(knn.size());
        }
        if (kind == BenchmarkKind::Dumbbell) {
            double b = 0.0;
            for (Eigen::Index i = 0; i < lm.landmarks.rows(); ++i) b += on_bridge(row_span(lm.landmarks, i));
            lr.bridge_fraction = b / static_cast<double>(lm.landmarks.rows());
        }
        rep.landmarks.push_back(lr);
    }
    if (is_pendulum(kind)) rep.forecast_mse = forecast_errors(models, test, opt.horizon);
    if (!opt.baselines) return rep;

    // Baselines see the first baseline_rows samples of the same stream.
    const Eigen::Index nb = std::min<Eigen::Index>(train.size(), opt.baseline_rows);
    VectorDataset base{PointBlock(nb, train.points.cols()), RowMatrix(nb, train.targets.cols())};
    for (Eigen::Index j = 0; j < nb; ++j) {
        base.points.row(j) = train.points.row(order[static_cast<std::size_t>(j)]);
        base.targets.row(j) = train.targets.row(order[static_cast<std::size_t>(j)]);
    }
    const int lo = m0.first_level(), hi = m0.deepest_level(), levels = hi - lo + 1;
    const Bandwidth rb(r0 * opt.config.bandwidth_scale);
    SolverOptions so = solver_options(opt.config);

    // LP-KRR: sqrt(n) uniform centres shared by all levels, rows split equally between levels.
    {
        const auto m = std::min<Eigen::Index>(nb, std::llround(std::sqrt(static_cast<double>(nb))));
        check_matrix_size(static_cast<double>(m), static_cast<double>(m), opt.max_matrix_entries, "LP-KRR");
        const Eigen::Index per = std::max<Eigen::Index>(1, nb / levels);
        const auto t0 = Clock::now();
        ModelSet lp;
        for (std::size_t k = 0; k < outs; ++k) {
            lp.push_back(lp_krr_fit(base.output(static_cast<Eigen::Index>(k)), rb, levels, so, m,
                                    per * levels <= nb ? std::optional<Eigen::Index>(per) : std::nullopt,
                                    mix_seed(opt.seed, 4), lo));
        }
        const double fit = since(t0);
        for (int l = lo; l <= hi; ++l) {
            rep.table.push_back({"LP-KRR", l, static_cast<std::size_t>(m), static_cast<std::uint64_t>(per),
                                 score(kind, truncate_models(lp, l), test, opt.horizon),
                                 fit * (l - lo + 1) / levels});
        }
        say("LP-KRR done");
    }

    // FALKON: bandwidth by k-fold CV on a held-out slice over the pyramid's level range.
    {
        const auto m = std::min<Eigen::Index>(
            {nb, opt.falkon_max_centres, std::llround(10.0 * std::sqrt(static_cast<double>(nb)))});
        check_matrix_size(static_cast<double>(m), static_cast<double>(m), opt.max_matrix_entries, "FALKON");
        const auto t0 = Clock::now();
        const Eigen::Index ns = std::min<Eigen::Index>(nb, opt.cv_rows);
        const auto slice = sample_without_replacement(nb, ns, mix_seed(opt.seed, 5));
        double best = std::numeric_limits<double>::infinity();
        for (int l = lo; l <= hi; ++l) {
            const Bandwidth r = bandwidth_at_level(l, rb);
            double sse = 0.0;
            for (int f = 0; f < opt.cv_folds; ++f) {
                std::vector<Eigen::Index> tr, te;
                for (std::size_t i = 0; i < slice.size(); ++i)
                    (static_cast<int>(i % static_cast<std::size_t>(opt.cv_folds)) == f ? te : tr).push_back(slice[i]);
                const PointBlock xtr = select_rows(base.points, tr);
                RowMatrix ytr(static_cast<Eigen::Index>(tr.size()), base.targets.cols());
                for (std::size_t i = 0; i < tr.size(); ++i) ytr.row(static_cast<Eigen::Index>(i)) = base.targets.row(tr[i]);
                const auto mf = std::min<Eigen::Index>(
                    {static_cast<Eigen::Index>(tr.size()), m, std::llround(10.0 * std::sqrt(static_cast<double>(tr.size())))});
                const PointBlock c = select_rows(xtr, sample_without_replacement(xtr.rows(), mf, mix_seed(opt.seed, 6 + f)));
                const auto fit = falkon_fit_outputs(xtr, ytr, c, r, so, l);
                for (Eigen::Index i : te) {
                    for (std::size_t k = 0; k < outs; ++k) {
                        const double e = base.targets(i, static_cast<Eigen::Index>(k)) - fit[k].evaluate(row_span(base.points, i));
                        sse += e * e;
                    }
                }
            }
            const double err = sse / static_cast<double>(ns * static_cast<Eigen::Index>(outs));
            rep.falkon_cv_errors.push_back(err);
            if (err < best) {
                best = err;
                rep.falkon_level = l;
            }
        }
        const Bandwidth r = bandwidth_at_level(rep.falkon_level, rb);
        const PointBlock c = select_rows(base.points, sample_without_replacement(nb, m, mix_seed(opt.seed, 7)));
        const auto fit = falkon_fit_outputs(base.points, base.targets, c, r, so, rep.falkon_level);
        ModelSet fm;
        for (const auto& lm : fit) fm.push_back(PyramidModel(dim, r).add_level(lm));
        rep.table.push_back({"FALKON", rep.falkon_level, static_cast<std::size_t>(m), static_cast<std::uint64_t>(nb),
                             score(kind, fm, test, opt.horizon), since(t0)});
        say("FALKON done, CV picked level " + std::to_string(rep.falkon_level));
    }
    return rep;
}

inline void write_table_csv(std::ostream& os, const BenchmarkReport& r) {
    os << "method,level,landmarks,samples,mse,seconds\n" << std::setprecision(6);
    for (const auto& t : r.table)
        os << t.method << ',' << t.level << ',' << t.landmarks << ',' << t.samples << ',' << t.mse << ',' << t.seconds << '\n';
}

inline void write_landmarks_csv(std::ostream& os, const BenchmarkReport& r) {
    os << "level,landmarks,radius,median_knn,mean_knn,bridge_fraction\n" << std::setprecision(6);
    for (const auto& l : r.landmarks)
        os << l.level << ',' << l.landmarks << ',' << l.radius << ',' << l.median_knn << ',' << l.mean_knn << ','
           << l.bridge_fraction << '\n';
}

/// <dir>/<kind>_table.csv, <kind>_landmarks.csv and, for the pendulum runs, <kind>_forecast.csv.
inline std::vector<std::string> write_report(const BenchmarkReport& r, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::string stem = (std::filesystem::path(dir) / to_string(r.kind)).string();
    std::vector<std::string> files;
    auto open = [&](const std::string& suffix) {
        files.push_back(stem + suffix);
        std::ofstream f(files.back());
        if (!f) throw FormatError("cannot create " + files.back());
        return f;
    };
    {
        auto f = open("_table.csv");
        write_table_csv(f, r);
    }
    {
        auto f = open("_landmarks.csv");
        write_landmarks_csv(f, r);
    }
    if (!r.forecast_mse.empty()) {
        auto f = open("_forecast.csv");
        f << "step,mse\n" << std::setprecision(6);
        for (std::size_t t = 1; t < r.forecast_mse.size(); ++t) f << t << ',' << r.forecast_mse[t] << '\n';
    }
    return files;
}

}  // namespace streamrak
