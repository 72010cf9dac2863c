#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "streamrak/baselines.hpp"
#include "streamrak/common.hpp"
#include "streamrak/pyramid.hpp"
#include "streamrak/random.hpp"

namespace streamrak {

/// Standard normal by Box-Muller on uniform01, so datasets match across standard libraries.
inline double standard_normal(Rng& rng) {
    const double u1 = 1.0 - uniform01(rng);  // (0,1]
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

// ---------------------------------------------------------------------------------------------
// varsinus: y = sin(1/(x + 0.01)) on [0, pi/4], x ~ Gamma(shape 1, rate 2) restricted by rejection

inline constexpr double kVarsinusUpper = std::numbers::pi / 4.0;

inline double varsinus_target(double x) { return std::sin(1.0 / (x + 0.01)); }

/// Gamma(1, rate 2) is Exp(2); drawn by inversion and resampled until it lands in [0, pi/4].
inline double varsinus_draw(Rng& rng) {
    while (true) {
        const double x = -std::log(1.0 - uniform01(rng)) / 2.0;
        if (x <= kVarsinusUpper) return x;
    }
}

inline BatchDataset varsinus_generate(Eigen::Index n, std::uint64_t seed) {
    if (n < 1) throw UsageError("n must be >= 1");
    Rng rng(seed);
    BatchDataset d{PointBlock(n, 1), Vector(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
        const double x = varsinus_draw(rng);
        d.points(i, 0) = x;
        d.targets[i] = varsinus_target(x);
    }
    return d;
}

// ---------------------------------------------------------------------------------------------
// dumbbell: two unit 5-balls centred at x1 = 0 and x1 = 4, joined by the rectangle
// 1 <= x1 <= 3, |x2| <= 1, x3 = x4 = x5 = 0

struct DumbbellShape {
    double ball_weight = 1.0 / 3.0;  // probability of each ball; the bridge gets the rest
    double amplitude = 1.0;          // A
    double frequency = 2.0 * std::numbers::pi;  // B
};

inline double dumbbell_target(Point x, const DumbbellShape& s = {}) {
    const double x1 = x[0];
    if (x1 <= 1.0 || x1 >= 3.0) return 1.0;
    const double w = std::sin(std::numbers::pi * (x1 - 1.0) / 2.0);
    return 1.0 + w * w * (s.amplitude * std::sin(s.frequency * x1) + x1 + 1.0);
}

inline bool on_bridge(Point x) { return x[0] > 1.0 && x[0] < 3.0; }

inline BatchDataset dumbbell_generate(Eigen::Index n, std::uint64_t seed, const DumbbellShape& s = {}) {
    if (n < 1) throw UsageError("n must be >= 1");
    if (!(s.ball_weight > 0.0 && s.ball_weight < 0.5)) throw UsageError("ball weight must lie in (0, 1/2)");
    Rng rng(seed);
    BatchDataset d{PointBlock(n, 5), Vector(n)};
    std::array<double, 5> p{};
    for (Eigen::Index i = 0; i < n; ++i) {
        const double u = uniform01(rng);
        if (u < 2.0 * s.ball_weight) {
            // uniform in a 5-ball: Gaussian direction, radius U^(1/5)
            double norm = 0.0;
            for (double& v : p) {
                v = standard_normal(rng);
                norm += v * v;
            }
            norm = std::sqrt(norm);
            const double rad = std::pow(uniform01(rng), 0.2);
            for (double& v : p) v = norm > 0.0 ? v / norm * rad : 0.0;
            if (u >= s.ball_weight) p[0] += 4.0;
        } else {
            p = {1.0 + 2.0 * uniform01(rng), -1.0 + 2.0 * uniform01(rng), 0.0, 0.0, 0.0};
        }
        for (int c = 0; c < 5; ++c) d.points(i, c) = p[static_cast<std::size_t>(c)];
        d.targets[i] = dumbbell_target(row_span(d.points, i), s);
    }
    return d;
}

// ---------------------------------------------------------------------------------------------
// double pendulum, unit masses and rods, g = 10. With D = th1 - th2 the Euler-Lagrange
// equations of L = w1^2 + w2^2/2 + w1 w2 cos D + g (2 cos th1 + cos th2) are
//   2 w1' + cos D w2' = -w2^2 sin D - 2 g sin th1
//   cos D w1' + w2'   =  w1^2 sin D - g sin th2

inline constexpr double kGravity = 10.0;

struct PendulumState {
    double theta1 = 0.0, theta2 = 0.0, omega1 = 0.0, omega2 = 0.0;

    std::array<double, 4> array() const { return {theta1, theta2, omega1, omega2}; }
    static PendulumState from(std::span<const double> v) { return {v[0], v[1], v[2], v[3]}; }
    bool finite() const {
        return std::isfinite(theta1) && std::isfinite(theta2) && std::isfinite(omega1) && std::isfinite(omega2);
    }
};

struct PendulumDerivative {
    double dtheta1, dtheta2, domega1, domega2;
};

inline PendulumDerivative pendulum_rhs(const PendulumState& s) {
    const double d = s.theta1 - s.theta2;
    const double c = std::cos(d), sn = std::sin(d);
    const double f1 = -s.omega2 * s.omega2 * sn - 2.0 * kGravity * std::sin(s.theta1);
    const double f2 = s.omega1 * s.omega1 * sn - kGravity * std::sin(s.theta2);
    const double det = 2.0 - c * c;
    return {s.omega1, s.omega2, (f1 - c * f2) / det, (2.0 * f2 - c * f1) / det};
}

inline double pendulum_energy(const PendulumState& s) {
    const double c = std::cos(s.theta1 - s.theta2);
    return s.omega1 * s.omega1 + 0.5 * s.omega2 * s.omega2 + s.omega1 * s.omega2 * c -
           kGravity * (2.0 * std::cos(s.theta1) + std::cos(s.theta2));
}

/// Horizontal centre of mass (x1 + x2)/2 with x1 = sin th1, x2 = sin th1 + sin th2.
inline double pendulum_center_of_mass(const PendulumState& s) {
    return 0.5 * (2.0 * std::sin(s.theta1) + std::sin(s.theta2));
}

inline PendulumState rk4_step(const PendulumState& s, double dt) {
    auto shift = [](const PendulumState& a, const PendulumDerivative& k, double h) {
        return PendulumState{a.theta1 + h * k.dtheta1, a.theta2 + h * k.dtheta2, a.omega1 + h * k.domega1,
                             a.omega2 + h * k.domega2};
    };
    const auto k1 = pendulum_rhs(s);
    const auto k2 = pendulum_rhs(shift(s, k1, dt / 2));
    const auto k3 = pendulum_rhs(shift(s, k2, dt / 2));
    const auto k4 = pendulum_rhs(shift(s, k3, dt));
    return {s.theta1 + dt / 6 * (k1.dtheta1 + 2 * k2.dtheta1 + 2 * k3.dtheta1 + k4.dtheta1),
            s.theta2 + dt / 6 * (k1.dtheta2 + 2 * k2.dtheta2 + 2 * k3.dtheta2 + k4.dtheta2),
            s.omega1 + dt / 6 * (k1.domega1 + 2 * k2.domega1 + 2 * k3.domega1 + k4.domega1),
            s.omega2 + dt / 6 * (k1.domega2 + 2 * k2.domega2 + 2 * k3.domega2 + k4.domega2)};
}

struct SimulationClock {
    double dt = 1e-3;         // integrator step
    double dt_record = 2e-2;  // time between recorded states
};

/// s0 followed by `steps` recorded states. A negative dt integrates backwards.
inline std::vector<PendulumState> pendulum_simulate(const PendulumState& s0, int steps, SimulationClock clock = {}) {
    if (steps < 0) throw UsageError("steps must be >= 0");
    if (clock.dt == 0.0 || !std::isfinite(clock.dt)) throw UsageError("dt must be non-zero and finite");
    const long per_record = std::max(1L, std::lround(std::abs(clock.dt_record / clock.dt)));
    std::vector<PendulumState> out;
    out.reserve(static_cast<std::size_t>(steps) + 1);
    out.push_back(s0);
    PendulumState s = s0;
    for (int i = 0; i < steps; ++i) {
        for (long j = 0; j < per_record; ++j) s = rk4_step(s, clock.dt);
        if (!s.finite()) throw NumericalError("non-finite pendulum state at recorded step " + std::to_string(i + 1));
        out.push_back(s);
    }
    return out;
}

inline double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

inline PendulumState pendulum_low_energy() { return {deg2rad(-20), deg2rad(-20), 0.0, 0.0}; }
inline PendulumState pendulum_high_energy() { return {deg2rad(-120), deg2rad(-20), deg2rad(-7.57), deg2rad(7.68)}; }

/// Per-component standard deviation as a multiple of |base|.
using PerturbationScale = std::array<double, 4>;
inline constexpr PerturbationScale kTrainingPerturbation{0.025, 0.15, 0.3, 0.3};
inline constexpr PerturbationScale kTestPerturbation{0.01, 0.01, 0.01, 0.01};

inline PendulumState perturbed(const PendulumState& base, const PerturbationScale& sigma, Rng& rng) {
    auto b = base.array();
    for (std::size_t i = 0; i < 4; ++i) b[i] += sigma[i] * std::abs(b[i]) * standard_normal(rng);
    return PendulumState::from(b);
}

/// Multi-output dataset of (s_t, s_{t+stride}) pairs.
struct VectorDataset {
    PointBlock points;
    RowMatrix targets;  // one row per sample, one column per output

    Eigen::Index size() const noexcept { return points.rows(); }
    BatchDataset output(Eigen::Index k) const { return {points, targets.col(k)}; }
};

/// n_pendulums trajectories of `steps` recorded states each, pooled into
/// n_pendulums * (steps - stride) pairs.
inline VectorDataset pendulum_dataset(const PendulumState& base, int n_pendulums, const PerturbationScale& sigma,
                                      int steps, int stride, std::uint64_t seed, SimulationClock clock = {}) {
    if (n_pendulums < 1 || steps < 1) throw UsageError("need at least one pendulum and one step");
    if (stride < 0 || stride >= steps) throw UsageError("stride must lie in [0, steps)");
    Rng rng(seed);
    const Eigen::Index per = steps - stride;
    VectorDataset d{PointBlock(per * n_pendulums, 4), RowMatrix(per * n_pendulums, 4)};
    for (int p = 0; p < n_pendulums; ++p) {
        const auto traj = pendulum_simulate(perturbed(base, sigma, rng), steps - 1, clock);
        for (Eigen::Index t = 0; t < per; ++t) {
            const auto a = traj[static_cast<std::size_t>(t)].array();
            const auto b = traj[static_cast<std::size_t>(t + stride)].array();
            const Eigen::Index row = p * per + t;
            for (int c = 0; c < 4; ++c) {
                d.points(row, c) = a[static_cast<std::size_t>(c)];
                d.targets(row, c) = b[static_cast<std::size_t>(c)];
            }
        }
    }
    return d;
}

struct Forecast {
    std::vector<PendulumState> states;  // s0 first
    std::vector<double> center_of_mass;
    bool truncated = false;
    std::string diagnostic;
};

/// Iterates s <- f(s) with one model per state coordinate.
inline Forecast forecast_recursive(const ModelSet& models, const PendulumState& s0, int horizon) {
    if (models.size() != 4) throw UsageError("forecasting needs one model per state coordinate (4)");
    Forecast f;
    f.states.push_back(s0);
    f.center_of_mass.push_back(pendulum_center_of_mass(s0));
    PendulumState s = s0;
    for (int t = 0; t < horizon; ++t) {
        const auto a = s.array();
        std::array<double, 4> next{};
        for (std::size_t k = 0; k < 4; ++k) next[k] = models[k].predict(Point(a.data(), 4));
        s = PendulumState::from(next);
        if (!s.finite()) {
            f.truncated = true;
            f.diagnostic = "non-finite prediction at step " + std::to_string(t + 1);
            break;
        }
        f.states.push_back(s);
        f.center_of_mass.push_back(pendulum_center_of_mass(s));
    }
    return f;
}

// ---------------------------------------------------------------------------------------------
// metrics

/// (1 / (runs * Lambda)) sum_k (1/n_k) |y_k - yhat_k|^2 with Lambda = max - min over all targets.
inline double mse(const std::vector<std::pair<Vector, Vector>>& runs) {
    if (runs.empty()) throw UsageError("mse needs at least one run");
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& [y, yhat] : runs) {
        if (y.size() != yhat.size() || y.size() == 0)
            throw UsageError("each run needs equally many targets and predictions");
        lo = std::min(lo, y.minCoeff());
        hi = std::max(hi, y.maxCoeff());
    }
    const double range = hi - lo;
    if (!(range > 0.0)) throw UsageError("targets are constant; the normalisation range is zero");
    double s = 0.0;
    for (const auto& [y, yhat] : runs) s += (y - yhat).squaredNorm() / static_cast<double>(y.size());
    return s / (static_cast<double>(runs.size()) * range);
}

inline double mse(const Vector& y, const Vector& yhat) { return mse({{y, yhat}}); }

/// For every point, the mean distance to its k nearest other points (brute force).
inline std::vector<double> knn_mean_distances(const PointBlock& p, int k) {
    const Eigen::Index n = p.rows();
    if (k < 1) throw UsageError("k must be >= 1");
    std::vector<double> out;
    if (n < 2) return out;
    const int kk = static_cast<int>(std::min<Eigen::Index>(k, n - 1));
    std::vector<double> d(static_cast<std::size_t>(n - 1));
    for (Eigen::Index i = 0; i < n; ++i) {
        std::size_t c = 0;
        for (Eigen::Index j = 0; j < n; ++j) {
            if (j != i) d[c++] = distance(row_span(p, i), row_span(p, j));
        }
        std::partial_sort(d.begin(), d.begin() + kk, d.end());
        double s = 0.0;
        for (int q = 0; q < kk; ++q) s += d[static_cast<std::size_t>(q)];
        out.push_back(s / kk);
    }
    return out;
}

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const std::size_t mid = v.size() / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    const double hi = v[mid];
    if (v.size() % 2 == 1) return hi;
    return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

inline int default_knn(std::size_t dim) { return dim <= 1 ? 2 : 7; }

}  // namespace streamrak
