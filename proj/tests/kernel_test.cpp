#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "streamrak/kernel.hpp"
#include "streamrak/random.hpp"

using namespace streamrak;

TEST(Bandwidth, RejectsNonPositiveAndNonFinite) {
    EXPECT_THROW(Bandwidth(0.0), UsageError);
    EXPECT_THROW(Bandwidth(-1.0), UsageError);
    EXPECT_THROW(Bandwidth(std::nan("")), UsageError);
    EXPECT_THROW(Bandwidth{std::numeric_limits<double>::infinity()}, UsageError);
    EXPECT_EQ(Bandwidth(0.5).value(), 0.5);
}

TEST(Bandwidth, LevelScheduleHalvesExactly) {
    EXPECT_EQ(bandwidth_at_level(0, Bandwidth(2.0)).value(), 2.0);
    EXPECT_EQ(bandwidth_at_level(3, Bandwidth(2.0)).value(), 0.25);
    EXPECT_EQ(bandwidth_at_level(16, Bandwidth(1.0)).value(), std::ldexp(1.0, -16));
    const Bandwidth r0(1.7320508075688772);
    for (int l = 0; l < 40; ++l) {
        EXPECT_EQ(bandwidth_at_level(l + 1, r0).value(), bandwidth_at_level(l, r0).value() / 2);
    }
}

TEST(GaussianKernel, HandValues) {
    const double a[] = {0.0}, b[] = {1.0};
    EXPECT_EQ(gaussian_kernel(Point(a, 1), Point(a, 1), Bandwidth(0.3)), 1.0);
    EXPECT_NEAR(gaussian_kernel(Point(a, 1), Point(b, 1), Bandwidth(1.0)), std::exp(-0.5), 1e-15);
    const double c[] = {1.0, 2.0}, d[] = {4.0, 6.0};
    EXPECT_NEAR(gaussian_kernel(Point(c, 2), Point(d, 2), Bandwidth(5.0)), std::exp(-25.0 / 50.0), 1e-15);
}

TEST(GaussianKernel, DimensionMismatchThrows) {
    const double a[] = {0.0}, b[] = {1.0, 2.0};
    EXPECT_THROW(gaussian_kernel(Point(a, 1), Point(b, 2), Bandwidth(1.0)), UsageError);
}

TEST(GaussianKernel, PropertiesOnRandomPoints) {
    Rng rng(3);
    for (int t = 0; t < 200; ++t) {
        double x[3], y[3];
        for (int i = 0; i < 3; ++i) {
            x[i] = uniform01(rng) * 4 - 2;
            y[i] = uniform01(rng) * 4 - 2;
        }
        const Bandwidth r(0.1 + uniform01(rng));
        const double kxy = gaussian_kernel(Point(x, 3), Point(y, 3), r);
        EXPECT_EQ(kxy, gaussian_kernel(Point(y, 3), Point(x, 3), r));
        EXPECT_GE(kxy, 0.0);
        EXPECT_LE(kxy, 1.0);
    }
}

TEST(KernelMatrix, MatchesPairwiseAndIsPositiveSemidefinite) {
    Rng rng(5);
    PointBlock a(40, 2), b(7, 2);
    for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = uniform01(rng);
    for (Eigen::Index i = 0; i < b.size(); ++i) b.data()[i] = uniform01(rng);
    const Bandwidth r(0.2);
    const Matrix k = kernel_cross_matrix(a, b, r, 3);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        Vector row(b.rows());
        kernel_row(row_span(a, i), b, r, row);
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            EXPECT_NEAR(k(i, j), gaussian_kernel(row_span(a, i), row_span(b, j), r), 1e-15);
            EXPECT_NEAR(row[j], k(i, j), 1e-15);
        }
    }
    const Matrix kaa = kernel_cross_matrix(a, a, r);
    EXPECT_TRUE(kaa.isApprox(kaa.transpose(), 0.0));
    Eigen::SelfAdjointEigenSolver<Matrix> es(kaa);
    EXPECT_GT(es.eigenvalues().minCoeff(), -1e-12);
}

TEST(KernelMatrix, SmallBandwidthStaysAccurateFarFromOrigin) {
    // the expanded |a|^2 + |b|^2 - 2ab form loses every digit here
    PointBlock a(1, 1), b(1, 1);
    a(0, 0) = 1e4;
    b(0, 0) = 1e4 + 1e-6;
    const Matrix k = kernel_cross_matrix(a, b, Bandwidth(1e-6));
    EXPECT_NEAR(k(0, 0), std::exp(-0.5), 1e-5);
}
