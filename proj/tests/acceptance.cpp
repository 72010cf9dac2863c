// One PASS/FAIL line per acceptance criterion; exit status 1 when any criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "streamrak/accumulator.hpp"
#include "streamrak/baselines.hpp"
#include "streamrak/bench.hpp"
#include "streamrak/benchmark.hpp"
#include "streamrak/dct.hpp"
#include "streamrak/solver.hpp"

using namespace streamrak;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool pass = true;
    std::string detail;
};

int failures = 0;
std::vector<int> failed;

void report(int id, const std::string& name, double limit_s, const std::function<Outcome()>& run) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
        o = run();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double s = std::chrono::duration<double>(Clock::now() - t0).count();
    if (s > limit_s) {
        o.pass = false;
        o.detail += " [runtime " + std::to_string(s) + " s exceeds " + std::to_string(limit_s) + " s]";
    }
    if (!o.pass) {
        ++failures;
        failed.push_back(id);
    }
    std::printf("%s %d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", id, name.c_str(), s, o.detail.c_str());
    std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
    char buf[128];
    std::snprintf(buf, sizeof buf, f, a);
    return buf;
}

PointBlock uniform_block(Eigen::Index n, Eigen::Index dim, Rng& rng) {
    PointBlock p(n, dim);
    for (Eigen::Index i = 0; i < p.size(); ++i) p.data()[i] = uniform01(rng);
    return p;
}

Outcome streaming_equivalence() {
    Rng rng(101);
    double worst = 0.0;
    for (int c = 0; c < 20; ++c) {
        const Eigen::Index dim = std::array<Eigen::Index, 3>{1, 2, 5}[c % 3];
        const PointBlock lm = uniform_block(20, dim, rng);
        const PointBlock x = uniform_block(500, dim, rng);
        Vector d(500);
        for (Eigen::Index i = 0; i < 500; ++i) d[i] = 2 * uniform01(rng) - 1;
        const Bandwidth r(0.2 + uniform01(rng) * std::sqrt(double(dim)));
        LevelAccumulator acc(0, lm, r);
        for (Eigen::Index i = 0; i < 500; ++i) acc.accumulate(row_span(x, i), d[i]);
        const Matrix knm = kernel_cross_matrix(x, lm, r);
        const Matrix g = knm.transpose() * knm;
        const Vector b = knm.transpose() * d;
        worst = std::max(worst, (acc.gram() - g).norm() / g.norm());
        worst = std::max(worst, (acc.rhs() - b).norm() / b.norm());
    }
    return {worst <= 1e-12, fmt("worst relative error %.2e (limit 1e-12) over 20 configurations", worst)};
}

// first m points of x, scanned in order, that lie at least r from every point already kept
PointBlock separated_rows(const PointBlock& x, double r, Eigen::Index m) {
    std::vector<Eigen::Index> keep;
    for (Eigen::Index i = 0; i < x.rows() && static_cast<Eigen::Index>(keep.size()) < m; ++i) {
        bool far = true;
        for (Eigen::Index j : keep) far = far && (x.row(i) - x.row(j)).norm() >= r;
        if (far) keep.push_back(i);
    }
    PointBlock out(static_cast<Eigen::Index>(keep.size()), x.cols());
    for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) = x.row(keep[i]);
    return out;
}

Outcome solver_correctness() {
    Rng rng(202);
    double worst = 0.0, worst_cond = 0.0;
    int worst_iter = 0;
    Eigen::Index fewest = 30;
    const SolverOptions opt;  // lambda 1e-6, max_iter 20, tol 1e-8
    // landmarks separated by the bandwidth, as on a cover-tree level
    const double r = 0.02;
    for (int c = 0; c < 9; ++c) {
        const PointBlock x = uniform_block(300, 1, rng);
        Vector y(300);
        for (Eigen::Index i = 0; i < 300; ++i) y[i] = std::sin(10 * x(i, 0)) + 0.1 * (uniform01(rng) - 0.5);
        const PointBlock lm = separated_rows(x, r, 30);
        fewest = std::min(fewest, lm.rows());
        const Matrix knm = kernel_cross_matrix(x, lm, Bandwidth(r));
        const Matrix kmm = kernel_cross_matrix(lm, lm, Bandwidth(r));
        const Matrix gram = knm.transpose() * knm;
        const Vector z = knm.transpose() * y;
        const LevelSolution sol = solve_sketched(kmm, gram, z, 300, opt);
        const Matrix h = gram + opt.lambda * 300 * kmm;
        const Vector dense = h.ldlt().solve(z);
        const Eigen::SelfAdjointEigenSolver<Matrix> es(kmm);
        worst_cond = std::max(worst_cond, es.eigenvalues().maxCoeff() / es.eigenvalues().minCoeff());
        worst = std::max(worst, (sol.coefficients - dense).norm() / dense.norm());
        worst_iter = std::max(worst_iter, sol.iterations_used);
    }
    return {worst <= 1e-6 && worst_iter <= 20 && fewest == 30,
            fmt("worst relative difference to the dense solve %.2e (limit 1e-6), ", worst) +
                "max CG iterations " + std::to_string(worst_iter) + " (limit 20), m " + std::to_string(fewest) +
                fmt(", worst cond(Kmm) %.1f", worst_cond)};
}

Outcome lp_contraction() {
    Rng rng(303);
    const Eigen::Index n = 200;
    BatchDataset data{uniform_block(n, 1, rng), Vector(n)};
    for (Eigen::Index i = 0; i < n; ++i) data.targets[i] = varsinus_target(data.points(i, 0) * kVarsinusUpper);
    const double lambda = 1e-4, nl = lambda * n;
    const Bandwidth r0(1.0);
    Vector d = data.targets;
    double worst_slack = -1.0, worst_band = -1.0;
    for (int l = 0; l <= 10; ++l) {
        const Bandwidth r = bandwidth_at_level(l, r0);
        const Matrix k = kernel_cross_matrix(data.points, data.points, r);
        Eigen::SelfAdjointEigenSolver<Matrix> es(k);
        const double sigma = es.eigenvalues().minCoeff();
        const double bound = nl / (nl + sigma);
        const Vector a = krr_fit(BatchDataset{data.points, d}, r, lambda);
        const Vector next = d - k * a;
        worst_slack = std::max(worst_slack, next.norm() / d.norm() - bound);

        // band-limited residual: keep eigen-directions with eigenvalue >= the median one
        const Vector& ev = es.eigenvalues();
        const double cut = ev[n / 2];
        Vector coeff = es.eigenvectors().transpose() * d;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (ev[j] < cut) coeff[j] = 0.0;
        }
        const Vector band = es.eigenvectors() * coeff;
        const Vector ab = krr_fit(BatchDataset{data.points, band}, r, lambda);
        worst_band = std::max(worst_band, (band - k * ab).norm() / band.norm() - nl / (nl + cut));
        d = next;
    }
    // the full pyramid helper must reproduce the same residuals
    const PyramidModel p = krr_pyramid_fit(data, r0, 11, lambda);
    double gap = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
        gap = std::max(gap, std::abs((data.targets[i] - p.predict(row_span(data.points, i))) - d[i]));
    }
    const bool ok = worst_slack <= 1e-8 && worst_band <= 1e-8 && gap <= 1e-8;
    return {ok, fmt("max ratio - (1 - eps(l)) = %.2e; ", worst_slack) +
                    fmt("band-limited max ratio - bound = %.2e (limit 1e-8); ", worst_band) +
                    fmt("pyramid residual mismatch %.1e", gap)};
}

std::string dct_violation(const DampedCoverTree& t) {
    std::map<int, std::size_t> count;
    std::vector<NodeId> stack{t.root()};
    std::size_t seen = 0;
    while (!stack.empty()) {
        const NodeId id = stack.back();
        stack.pop_back();
        ++seen;
        const DctNode& nd = t.node(id);
        ++count[nd.level];
        for (std::size_t i = 0; i < nd.children.size(); ++i) {
            const NodeId c = nd.children[i];
            if (t.node(c).level != nd.level + 1 || t.node(c).parent != id) return "broken parent link";
            const double dist = distance(t.point(c), t.point(id));
            // the root admits points outside its ball, which the tree counts as overflow
            if ((nd.level > 0 || dist < t.r0().value()) && !(dist < t.radius(nd.level).value()))
                return "covering violated at level " + std::to_string(nd.level + 1);
            for (std::size_t j = i + 1; j < nd.children.size(); ++j) {
                if (!(distance(t.point(c), t.point(nd.children[j])) > t.radius(nd.level + 1).value()))
                    return "separation violated at level " + std::to_string(nd.level + 1);
            }
            stack.push_back(c);
        }
    }
    if (seen != t.size()) return "unreachable nodes";
    for (int l = 0; l <= t.depth(); ++l) {
        if (count[l] != t.level_size(l)) return "level bookkeeping mismatch";
    }
    return {};
}

Outcome dct_invariants() {
    std::string detail;
    bool ok = true;
    for (std::size_t dim : {1u, 2u, 3u, 8u}) {
        DctParams params;
        params.bypass = false;
        DampedCoverTree t(dim, Bandwidth(2.0 * std::sqrt(double(dim))), params, 5 + dim);
        Rng rng(400 + dim);
        std::vector<double> x(dim);
        std::size_t path_bad = 0, gate_bad = 0;
        for (int i = 0; i < 10000; ++i) {
            for (double& v : x) v = uniform01(rng);
            const int depth = t.depth();
            const auto o = t.insert(Point(x.data(), dim));
            if (static_cast<int>(o.path_length) > depth + 1) ++path_bad;
            if (o.disposition == Disposition::AddedAtLevel && !std::isnan(o.gate_cover_fraction) &&
                o.gate_cover_fraction < params.d_cf)
                ++gate_bad;
        }
        const std::string v = dct_violation(t);
        const bool dim_ok = v.empty() && path_bad == 0 && gate_bad == 0;
        ok = ok && dim_ok;
        detail += "D=" + std::to_string(dim) + ": " + std::to_string(t.size()) + " nodes, depth " +
                  std::to_string(t.depth()) + (v.empty() ? "" : ", " + v) +
                  (path_bad ? ", " + std::to_string(path_bad) + " long paths" : "") +
                  (gate_bad ? ", " + std::to_string(gate_bad) + " gate violations" : "") + "; ";
    }
    return {ok, detail};
}

Outcome memory_plateau() {
    DampedCoverTree t(2, Bandwidth(2.0 * std::sqrt(2.0)), DctParams{}, 3);
    Rng rng(505);
    double x[2];
    for (int i = 0; i < 100000; ++i) {
        x[0] = uniform01(rng);
        x[1] = uniform01(rng);
        t.insert(Point(x, 2));
    }
    const double first = static_cast<double>(t.size());
    for (int i = 0; i < 100000; ++i) {
        x[0] = uniform01(rng);
        x[1] = uniform01(rng);
        t.insert(Point(x, 2));
    }
    const double growth = static_cast<double>(t.size()) / first;
    return {growth < 1.5, fmt("%.0f nodes after 1e5 samples, ", first) +
                              fmt("%.0f after 2e5, ", static_cast<double>(t.size())) +
                              fmt("growth %.3f (limit < 1.5)", growth)};
}

// criteria 6 and 7 share the varsinus run
BenchmarkReport varsinus_report;
bool varsinus_ok = false;

Outcome varsinus_benchmark() {
    BenchmarkOptions opt = default_benchmark_options(BenchmarkKind::Varsinus);
    opt.sizes = {200000, 20000};
    varsinus_report = run_benchmark(BenchmarkKind::Varsinus, opt);
    varsinus_ok = true;
    const auto rows = varsinus_report.rows("streamrak");
    if (rows.empty()) return {false, "no streamrak level trained"};
    bool monotone = true;
    for (std::size_t i = 1; i < rows.size(); ++i) monotone = monotone && rows[i].mse <= 1.1 * rows[i - 1].mse;
    const double final_mse = rows.back().mse;
    double falkon = INFINITY;
    for (const auto& r : varsinus_report.rows("FALKON")) falkon = std::min(falkon, r.mse);
    const bool ok = monotone && final_mse <= 1e-3 && falkon > final_mse;
    return {ok, "levels " + std::to_string(rows.front().level) + ".." + std::to_string(rows.back().level) +
                    fmt(", first MSE %.3e", rows.front().mse) + fmt(", final MSE %.3e (limit 1e-3)", final_mse) +
                    (monotone ? ", non-increasing within 10%" : ", NOT non-increasing within 10%") +
                    fmt(", FALKON best %.3e", falkon)};
}

Outcome landmark_adaptivity() {
    if (!varsinus_ok) varsinus_benchmark();
    std::string detail;
    bool knn_ok = true;
    auto check_knn = [&](const BenchmarkReport& rep, const char* name) {
        double lo = INFINITY, hi = 0.0;
        int checked = 0;
        for (const auto& r : rep.landmarks) {
            if (r.landmarks < 2) continue;
            const double ratio = r.median_knn / r.radius;
            lo = std::min(lo, ratio);
            hi = std::max(hi, ratio);
            ++checked;
            if (!(ratio >= 0.25 && ratio <= 4.0)) {
                knn_ok = false;
                detail += std::string(name) + " level " + std::to_string(r.level) + fmt(" ratio %.2f out of band; ", ratio);
            }
        }
        detail += std::string(name) + ": " + std::to_string(checked) + " levels, median kNN / r_l in " +
                  fmt("[%.2f, ", lo) + fmt("%.2f]; ", hi);
    };
    check_knn(varsinus_report, "varsinus");

    BenchmarkOptions opt = default_benchmark_options(BenchmarkKind::Dumbbell, 0.1);
    opt.baselines = false;
    const BenchmarkReport dumbbell = run_benchmark(BenchmarkKind::Dumbbell, opt);
    check_knn(dumbbell, "dumbbell");

    bool bridge_ok = true;
    int deep = 0;
    for (const auto& r : dumbbell.landmarks) {
        if (r.level < 6) continue;
        ++deep;
        detail += "bridge fraction at level " + std::to_string(r.level) + fmt(" %.3f; ", r.bridge_fraction);
        if (!(r.bridge_fraction > dumbbell.uniform_bridge_fraction)) bridge_ok = false;
    }
    if (deep == 0) {
        bridge_ok = false;
        int deepest = -1;
        for (const auto& r : dumbbell.landmarks) deepest = std::max(deepest, r.level);
        detail += "no dumbbell level >= 6 trained within " + std::to_string(dumbbell.training_samples) +
                  " samples (deepest " + std::to_string(deepest) + ")";
    }
    detail += fmt("; uniform bridge fraction %.3f", dumbbell.uniform_bridge_fraction);
    return {knn_ok && bridge_ok, detail};
}

Outcome pendulum_forecast() {
    // simulator checks first
    const PendulumState s0 = pendulum_low_energy();
    const auto traj = pendulum_simulate(s0, 500);
    double drift = 0.0;
    for (const auto& s : traj) drift = std::max(drift, std::abs(pendulum_energy(s) - pendulum_energy(s0)));
    drift /= std::abs(pendulum_energy(s0));
    double mode_err = 0.0;
    for (const double sign : {1.0, -1.0}) {
        const double w = std::sqrt(kGravity * (2 - sign * std::numbers::sqrt2));
        const auto small = pendulum_simulate({1e-3, sign * 1e-3 * std::numbers::sqrt2, 0, 0}, 20000, {1e-4, 1e-3});
        std::vector<double> cross;
        for (std::size_t i = 1; i < small.size(); ++i) {
            const double a = small[i - 1].theta1, b = small[i].theta1;
            if ((a > 0) != (b > 0)) cross.push_back((static_cast<double>(i) - 1 + a / (a - b)) * 1e-3);
        }
        const double period = 2 * (cross.back() - cross.front()) / static_cast<double>(cross.size() - 1);
        mode_err = std::max(mode_err, std::abs(period * w / (2 * std::numbers::pi) - 1));
    }
    BenchmarkOptions opt = default_benchmark_options(BenchmarkKind::PendulumLow);
    opt.sizes.train = 500;
    opt.baselines = false;
    const BenchmarkReport rep = run_benchmark(BenchmarkKind::PendulumLow, opt);
    const auto rows = rep.rows("streamrak");
    const double t50 = rep.forecast_mse.empty() ? INFINITY : rep.forecast_mse.back();
    const bool ok = drift <= 1e-6 && mode_err <= 0.01 && t50 <= 1e-3;
    return {ok, fmt("MSE(T=50) %.3e (limit 1e-3)", t50) +
                    (rows.empty() ? std::string(", no level trained") : ", deepest level " + std::to_string(rows.back().level)) +
                    fmt("; relative energy drift %.1e (limit 1e-6)", drift) +
                    fmt("; normal-mode period error %.2e (limit 1e-2)", mode_err)};
}

Outcome cover_fraction_estimator() {
    const double alpha = 0.01;
    const int updates = static_cast<int>(10 / alpha);
    std::string detail;
    bool ok = true;
    Rng rng(909);
    for (const double p : {0.3, 0.7, 0.9}) {
        int within = 0;
        for (int rep = 0; rep < 1000; ++rep) {
            double cf = 0.0;
            for (int i = 0; i < updates; ++i) cf = updated_cover_fraction(cf, uniform01(rng) < p, alpha);
            within += std::abs(cf - p) <= 0.1;
        }
        ok = ok && within >= 950;
        detail += fmt("p=%.1f: ", p) + std::to_string(within) + "/1000 within 0.1; ";
    }
    return {ok, detail + "(limit >= 950)"};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app("Acceptance criteria; one PASS/FAIL line per criterion");
    std::vector<int> known;
    app.add_option("--known-failures", known, "criteria expected to fail; only others set the exit code")
        ->delimiter(',');
    CLI11_PARSE(app, argc, argv);
    report(1, "streaming update equivalence", 10, streaming_equivalence);
    report(2, "solver correctness", 10, solver_correctness);
    report(3, "LP contraction", 30, lp_contraction);
    report(4, "DCT invariants", 30, dct_invariants);
    report(5, "memory plateau", 60, memory_plateau);
    report(6, "varsinus multi-resolution benchmark", 600, varsinus_benchmark);
    report(7, "landmark adaptivity", 600, landmark_adaptivity);
    report(8, "double-pendulum forecast", 900, pendulum_forecast);
    report(9, "covering-fraction estimator", 10, cover_fraction_estimator);
    std::printf("%d of 9 criteria failed\n", failures);
    int unexpected = 0;
    for (int id : failed) unexpected += std::find(known.begin(), known.end(), id) == known.end();
    for (int id : known) {
        if (std::find(failed.begin(), failed.end(), id) == failed.end())
            std::printf("note: criterion %d is listed as a known failure but passed\n", id);
    }
    if (!known.empty()) std::printf("%d unexpected failures\n", unexpected);
    return unexpected == 0 ? 0 : 1;
}
