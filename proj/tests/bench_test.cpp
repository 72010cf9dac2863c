#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "streamrak/bench.hpp"

using namespace streamrak;

TEST(Varsinus, TargetAndDomain) {
    EXPECT_EQ(varsinus_target(0.0), std::sin(100.0));
    const BatchDataset d = varsinus_generate(20000, 3);
    EXPECT_GE(d.points.minCoeff(), 0.0);
    EXPECT_LE(d.points.maxCoeff(), kVarsinusUpper);
    for (Eigen::Index i = 0; i < 100; ++i) EXPECT_EQ(d.targets[i], varsinus_target(d.points(i, 0)));
}

TEST(Varsinus, DensityDecreasesLikeTheTruncatedExponential) {
    const BatchDataset d = varsinus_generate(200000, 4);
    std::array<double, 4> counts{};
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        const auto b = std::min<std::size_t>(3, static_cast<std::size_t>(d.points(i, 0) / kVarsinusUpper * 4));
        counts[b] += 1;
    }
    const double z = 1.0 - std::exp(-2.0 * kVarsinusUpper);
    for (std::size_t b = 0; b < 4; ++b) {
        if (b > 0) EXPECT_LT(counts[b], counts[b - 1]);
        const double lo = kVarsinusUpper * b / 4, hi = kVarsinusUpper * (b + 1) / 4;
        const double p = (std::exp(-2 * lo) - std::exp(-2 * hi)) / z;
        EXPECT_NEAR(counts[b] / 200000.0, p, 0.005);
    }
}

TEST(Varsinus, SeedsAreReproducible) {
    EXPECT_EQ(varsinus_generate(100, 1).points, varsinus_generate(100, 1).points);
    EXPECT_NE(varsinus_generate(100, 1).points, varsinus_generate(100, 2).points);
}

TEST(Dumbbell, PointsLieInTheShapeWithBalancedMass) {
    const BatchDataset d = dumbbell_generate(30000, 5);
    int left = 0, right = 0, bridge = 0;
    for (Eigen::Index i = 0; i < d.size(); ++i) {
        const auto x = row_span(d.points, i);
        const double x1 = x[0];
        double tail = 0.0;
        for (int c = 1; c < 5; ++c) tail += x[c] * x[c];
        const bool in_left = x1 * x1 + tail <= 1.0 + 1e-12;
        const bool in_right = (x1 - 4) * (x1 - 4) + tail <= 1.0 + 1e-12;
        const bool in_bridge = x1 >= 1 && x1 <= 3 && std::abs(x[1]) <= 1 && x[2] == 0 && x[3] == 0 && x[4] == 0;
        ASSERT_TRUE(in_left || in_right || in_bridge) << i;
        left += in_left;
        right += in_right;
        bridge += in_bridge && !in_left && !in_right;
    }
    EXPECT_NEAR(left / 30000.0, 1.0 / 3, 0.015);
    EXPECT_NEAR(right / 30000.0, 1.0 / 3, 0.015);
    EXPECT_NEAR(bridge / 30000.0, 1.0 / 3, 0.015);
}

TEST(Dumbbell, TargetIsConstantOnBallsAndC1AcrossJoins) {
    const double in_ball[] = {0.2, 0.3, 0.0, 0.1, 0.0};
    EXPECT_EQ(dumbbell_target(Point(in_ball, 5)), 1.0);
    const double mid[] = {2.0, 0.0, 0.0, 0.0, 0.0};
    EXPECT_NEAR(dumbbell_target(Point(mid, 5)), 1.0 + std::sin(4 * std::numbers::pi) + 3.0, 1e-12);
    auto f = [](double x1) {
        const double x[] = {x1, 0.0, 0.0, 0.0, 0.0};
        return dumbbell_target(Point(x, 5));
    };
    for (double join : {1.0, 3.0}) {
        const double h = 1e-4;
        EXPECT_NEAR(f(join + h), f(join - h), 1e-6);
        const double left = (f(join) - f(join - h)) / h;
        const double right = (f(join + h) - f(join)) / h;
        EXPECT_NEAR(left, right, 1e-3);
    }
    const double on[] = {2.0, 0, 0, 0, 0}, off[] = {0.5, 0, 0, 0, 0};
    EXPECT_TRUE(on_bridge(Point(on, 5)));
    EXPECT_FALSE(on_bridge(Point(off, 5)));
}

TEST(Pendulum, EnergyIsConservedOverFiveHundredSteps) {
    for (const auto& s0 : {pendulum_low_energy(), pendulum_high_energy()}) {
        const auto traj = pendulum_simulate(s0, 500);
        ASSERT_EQ(traj.size(), 501u);
        const double e0 = pendulum_energy(s0);
        for (const auto& s : traj) EXPECT_LE(std::abs(pendulum_energy(s) - e0), 1e-6 * std::abs(e0));
    }
}

TEST(Pendulum, SmallOscillationsFollowTheNormalModes) {
    const double w_slow = std::sqrt(kGravity * (2 - std::numbers::sqrt2));
    const double w_fast = std::sqrt(kGravity * (2 + std::numbers::sqrt2));
    for (const auto& [w, ratio] : {std::pair{w_slow, std::numbers::sqrt2}, std::pair{w_fast, -std::numbers::sqrt2}}) {
        const PendulumState s0{1e-3, 1e-3 * ratio, 0.0, 0.0};
        const SimulationClock clock{1e-4, 1e-3};
        const auto traj = pendulum_simulate(s0, 20000, clock);
        std::vector<double> crossings;
        for (std::size_t i = 1; i < traj.size(); ++i) {
            const double a = traj[i - 1].theta1, b = traj[i].theta1;
            if ((a > 0) != (b > 0)) crossings.push_back((i - 1 + a / (a - b)) * 1e-3);
        }
        ASSERT_GE(crossings.size(), 3u);
        const double period = 2 * (crossings.back() - crossings.front()) / (crossings.size() - 1);
        EXPECT_NEAR(period, 2 * std::numbers::pi / w, 0.01 * 2 * std::numbers::pi / w);
    }
}

TEST(Pendulum, IntegrationIsReversible) {
    const PendulumState s0 = pendulum_high_energy();
    const auto fwd = pendulum_simulate(s0, 100);
    const auto back = pendulum_simulate(fwd.back(), 100, SimulationClock{-1e-3, 2e-2});
    const auto a = back.back().array(), b = s0.array();
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(a[i], b[i], 1e-6);
}

TEST(Pendulum, HighEnergyTrajectoriesBifurcate) {
    const PendulumState s0 = pendulum_high_energy();
    auto v = s0.array();
    // 0.5% on both angular velocities
    v[2] *= 1.005;
    v[3] *= 1.005;
    const auto a = pendulum_simulate(s0, 500), b = pendulum_simulate(PendulumState::from(v), 500);
    auto gap = [&](std::size_t i) {
        const auto p = a[i].array(), q = b[i].array();
        double s = 0.0;
        for (std::size_t c = 0; c < 4; ++c) s += (p[c] - q[c]) * (p[c] - q[c]);
        return std::sqrt(s);
    };
    for (std::size_t i = 0; i <= 5; ++i) EXPECT_LT(gap(i), 1e-2) << i;
    double later = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) later = std::max(later, gap(i));
    EXPECT_GT(later, 1.0);
}

TEST(Pendulum, DatasetShapesAndIdentityStride) {
    const VectorDataset d = pendulum_dataset(pendulum_low_energy(), 3, kTrainingPerturbation, 20, 1, 7);
    EXPECT_EQ(d.size(), 3 * 19);
    const VectorDataset same = pendulum_dataset(pendulum_low_energy(), 2, kTrainingPerturbation, 10, 0, 7);
    EXPECT_EQ(same.size(), 20);
    EXPECT_EQ(same.points, PointBlock(same.targets));
    // consecutive rows of one trajectory chain: target of row t is the input of row t+1
    for (Eigen::Index t = 0; t + 1 < 19; ++t) EXPECT_EQ(d.targets.row(t), d.points.row(t + 1));
    EXPECT_EQ(d.output(2).targets, Vector(d.targets.col(2)));
    EXPECT_THROW(pendulum_dataset(pendulum_low_energy(), 1, kTrainingPerturbation, 5, 5, 1), UsageError);
}

TEST(Pendulum, PerturbationScalesWithTheBaseState) {
    Rng rng(1);
    const PendulumState s = perturbed(pendulum_low_energy(), kTrainingPerturbation, rng);
    EXPECT_EQ(s.omega1, 0.0);
    EXPECT_EQ(s.omega2, 0.0);
    EXPECT_NE(s.theta1, pendulum_low_energy().theta1);
}

TEST(Pendulum, ForecastWithIdentityModelsStaysPut) {
    ModelSet id;
    for (int k = 0; k < 4; ++k) {
        LevelModel lm;
        lm.bandwidth = Bandwidth(1e6);
        lm.landmarks = PointBlock::Zero(1, 4);
        lm.coefficients = Vector::Constant(1, 0.5);
        id.push_back(PyramidModel(4, Bandwidth(1e6)).add_level(lm));
    }
    const Forecast f = forecast_recursive(id, pendulum_low_energy(), 5);
    EXPECT_EQ(f.states.size(), 6u);
    EXPECT_FALSE(f.truncated);
    EXPECT_NEAR(f.states.back().theta1, 0.5, 1e-9);
    EXPECT_EQ(f.center_of_mass.size(), 6u);
    EXPECT_THROW(forecast_recursive(ModelSet(2, PyramidModel(4, Bandwidth(1.0))), pendulum_low_energy(), 1),
                 UsageError);
}

TEST(Metrics, NormalisedMseHandValueAndScaling) {
    Vector y(2), yhat(2);
    y << 0.0, 2.0;
    yhat << 0.0, 0.0;
    EXPECT_DOUBLE_EQ(mse(y, yhat), 1.0);
    EXPECT_DOUBLE_EQ(mse(Vector(3 * y), Vector(3 * yhat)), 3.0);
    EXPECT_THROW(mse(Vector::Ones(2), Vector::Ones(2)), UsageError);
    EXPECT_THROW(mse(y, Vector::Ones(3)), UsageError);
    // runs average their per-run means under one shared range
    Vector y2(1), yhat2(1);
    y2 << 1.0;
    yhat2 << 1.0;
    EXPECT_DOUBLE_EQ(mse({{y, yhat}, {y2, yhat2}}), 0.5);
}

TEST(Metrics, KnnMeanDistancesAndMedian) {
    PointBlock p(4, 1);
    p << 0.0, 1.0, 3.0, 7.0;
    const auto d = knn_mean_distances(p, 2);
    ASSERT_EQ(d.size(), 4u);
    EXPECT_DOUBLE_EQ(d[0], 2.0);
    EXPECT_DOUBLE_EQ(d[1], 1.5);
    EXPECT_DOUBLE_EQ(d[2], 2.5);
    EXPECT_DOUBLE_EQ(d[3], 5.0);
    EXPECT_EQ(knn_mean_distances(PointBlock::Zero(1, 1), 3).size(), 0u);
    EXPECT_EQ(knn_mean_distances(p, 10)[0], 11.0 / 3);
    EXPECT_EQ(median({3.0, 1.0, 2.0}), 2.0);
    EXPECT_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
    EXPECT_TRUE(std::isnan(median({})));
    EXPECT_EQ(default_knn(1), 2);
    EXPECT_EQ(default_knn(5), 7);
}
