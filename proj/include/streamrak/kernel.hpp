#pragma once

#include <algorithm>
#include <cmath>

#include "streamrak/common.hpp"

namespace streamrak {

/// Positive kernel bandwidth, in the units of the input coordinates.
class Bandwidth {
public:
    explicit Bandwidth(double value) : value_(value) {
        if (!(value > 0.0) || !std::isfinite(value)) {
            throw UsageError("bandwidth must be positive and finite, got " + std::to_string(value));
        }
    }
    double value() const noexcept { return value_; }
    friend bool operator==(Bandwidth a, Bandwidth b) noexcept { return a.value_ == b.value_; }

private:
    double value_;
};

/// count x dim block of points, row-major.
using PointBlock = RowMatrix;

/// r_l = 2^-l r0, computed by exponent shift so that successive levels halve exactly.
inline Bandwidth bandwidth_at_level(int level, Bandwidth r0) {
    return Bandwidth(std::ldexp(r0.value(), -level));
}

inline double gaussian_from_squared(double sq_dist, double r) {
    if (sq_dist < 1e-300) return 1.0;
    return std::exp(-sq_dist / (2.0 * r * r));
}

/// exp(-|x - x2|^2 / 2r^2)
inline double gaussian_kernel(Point x, Point x2, Bandwidth r) {
    return gaussian_from_squared(squared_distance(x, x2), r.value());
}

/// Fill `out` (size b.rows()) with k(x, b_j).
inline void kernel_row(Point x, const PointBlock& b, Bandwidth r, Eigen::Ref<Vector> out) {
    if (static_cast<Eigen::Index>(x.size()) != b.cols()) {
        throw UsageError("dimension mismatch: point has " + std::to_string(x.size()) +
                         " coordinates, block has " + std::to_string(b.cols()));
    }
    const double inv = 1.0 / (2.0 * r.value() * r.value());
    const Eigen::Index dim = b.cols();
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
        const double* row = b.data() + j * dim;
        double s = 0.0;
        for (Eigen::Index k = 0; k < dim; ++k) {
            const double d = x[static_cast<std::size_t>(k)] - row[k];
            s += d * d;
        }
        out[j] = s < 1e-300 ? 1.0 : std::exp(-s * inv);
    }
}

/// K_ij = k(a_i, b_j). Assembled in row tiles of `tile_rows`.
inline Matrix kernel_cross_matrix(const PointBlock& a, const PointBlock& b, Bandwidth r,
                                  Eigen::Index tile_rows = 256) {
    if (a.cols() != b.cols()) {
        throw UsageError("dimension mismatch: " + std::to_string(a.cols()) + " vs " +
                         std::to_string(b.cols()));
    }
    Matrix k(a.rows(), b.rows());
    tile_rows = std::max<Eigen::Index>(tile_rows, 1);
    const double inv = 1.0 / (2.0 * r.value() * r.value());
    const Eigen::Index dim = a.cols();
    // direct differences: the |a|^2 + |b|^2 - 2ab expansion cancels badly at small r
    for (Eigen::Index start = 0; start < a.rows(); start += tile_rows) {
        const Eigen::Index stop = std::min(a.rows(), start + tile_rows);
        for (Eigen::Index j = 0; j < b.rows(); ++j) {
            const double* bj = b.data() + j * dim;
            for (Eigen::Index i = start; i < stop; ++i) {
                const double* ai = a.data() + i * dim;
                double s = 0.0;
                for (Eigen::Index c = 0; c < dim; ++c) {
                    const double d = ai[c] - bj[c];
                    s += d * d;
                }
                k(i, j) = s < 1e-300 ? 1.0 : std::exp(-s * inv);
            }
        }
    }
    return k;
}

}  // namespace streamrak
