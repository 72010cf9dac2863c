#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace streamrak {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
/// Row-major real matrix; one point per row.
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Point = std::span<const double>;

// Error taxonomy. The CLI maps each class onto a distinct exit code.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class StateError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline double squared_distance(Point a, Point b) {
    if (a.size() != b.size()) {
        throw UsageError("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()));
    }
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

inline double distance(Point a, Point b) { return std::sqrt(squared_distance(a, b)); }

inline Point row_span(const RowMatrix& m, Eigen::Index row) {
    return {m.data() + row * m.cols(), static_cast<std::size_t>(m.cols())};
}

inline Point as_span(const Vector& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

inline bool all_finite(Point p) {
    for (double v : p) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

}  // namespace streamrak
