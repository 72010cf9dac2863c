#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <string>

#include "streamrak/common.hpp"
#include "streamrak/kernel.hpp"

namespace streamrak {

enum class AccumulatorPhase { Accumulating, Sufficient, Solved };

struct SufficiencyRule {
    double delta1 = 1e-3;
    double delta2 = 1e-4;
    std::uint64_t delta3 = 200000;
    std::uint64_t cadence = 100;
};

/// Streams K_nm^T K_nm and K_nm^T d for one level. Several outputs can share the
/// landmarks, in which case `rhs` has one column per output.
class LevelAccumulator {
public:
    LevelAccumulator(int level, PointBlock landmarks, Bandwidth bandwidth, std::size_t outputs = 1)
        : level_(level), landmarks_(std::move(landmarks)), bandwidth_(bandwidth) {
        if (landmarks_.rows() == 0) throw UsageError("accumulator needs at least one landmark");
        if (outputs == 0) throw UsageError("accumulator needs at least one output");
        const Eigen::Index m = landmarks_.rows();
        gram_lower_ = Matrix::Zero(m, m);
        rhs_ = Matrix::Zero(m, static_cast<Eigen::Index>(outputs));
        k_ = Vector::Zero(m);
        last_d_ = Vector::Zero(static_cast<Eigen::Index>(outputs));
    }

    int level() const noexcept { return level_; }
    const PointBlock& landmarks() const noexcept { return landmarks_; }
    Bandwidth bandwidth() const noexcept { return bandwidth_; }
    Eigen::Index m() const noexcept { return landmarks_.rows(); }
    std::size_t outputs() const noexcept { return static_cast<std::size_t>(rhs_.cols()); }
    std::uint64_t n_seen() const noexcept { return n_; }
    AccumulatorPhase phase() const noexcept { return phase_; }

    /// Full symmetric gram matrix.
    Matrix gram() const {
        Matrix g = gram_lower_.selfadjointView<Eigen::Lower>();
        return g;
    }
    const Matrix& rhs_matrix() const noexcept { return rhs_; }
    Vector rhs(std::size_t output = 0) const { return rhs_.col(static_cast<Eigen::Index>(output)); }

    void accumulate(Point x, double d) { accumulate(x, std::span<const double>(&d, 1)); }

    void accumulate(Point x, std::span<const double> d) {
        if (phase_ != AccumulatorPhase::Accumulating)
            throw StateError("level " + std::to_string(level_) + " accumulator no longer accepts samples");
        if (d.size() != outputs())
            throw UsageError("expected " + std::to_string(outputs()) + " residuals, got " +
                             std::to_string(d.size()));
        kernel_row(x, landmarks_, bandwidth_, k_);
        gram_lower_.selfadjointView<Eigen::Lower>().rankUpdate(k_);
        for (std::size_t j = 0; j < d.size(); ++j) {
            last_d_[static_cast<Eigen::Index>(j)] = d[j];
            rhs_.col(static_cast<Eigen::Index>(j)) += d[j] * k_;
        }
        ++n_;
    }

    /// ||A_n/n - A_{n-1}/(n-1)||_max and the largest ||b_n/n - b_{n-1}/(n-1)||_2 over outputs,
    /// for the most recent sample. Both equal (k k^T - A_n/n)/(n-1) and (k d - b_n/n)/(n-1).
    std::pair<double, double> last_differences() const {
        if (n_ < 2) throw StateError("difference test needs at least two samples");
        const double n = static_cast<double>(n_);
        double gmax = 0.0;
        const Eigen::Index m = this->m();
        for (Eigen::Index j = 0; j < m; ++j) {
            for (Eigen::Index i = j; i < m; ++i) {
                gmax = std::max(gmax, std::abs(k_[i] * k_[j] - gram_lower_(i, j) / n));
            }
        }
        double bmax = 0.0;
        for (Eigen::Index c = 0; c < rhs_.cols(); ++c) {
            bmax = std::max(bmax, (last_d_[c] * k_ - rhs_.col(c) / n).norm());
        }
        return {gmax / (n - 1.0), bmax / (n - 1.0)};
    }

    /// Evaluates the stopping rule at checkpoints n = c, 2c, ... (c = cadence), comparing the
    /// averages A_n/n and b_n/n against those of the previous checkpoint; n >= delta3 always
    /// suffices. True moves the accumulator to Sufficient.
    bool sufficiency_check(const SufficiencyRule& rule) {
        if (phase_ == AccumulatorPhase::Sufficient) return true;
        if (phase_ == AccumulatorPhase::Solved) return false;
        bool ok = n_ >= rule.delta3;
        const std::uint64_t c = std::max<std::uint64_t>(rule.cadence, 1);
        if (!ok && n_ > 0 && n_ % c == 0 && n_ != checkpoint_n_) {
            const double n = static_cast<double>(n_);
            Matrix avg_gram = gram_lower_.triangularView<Eigen::Lower>();
            avg_gram /= n;
            Matrix avg_rhs = rhs_ / n;
            if (checkpoint_n_ > 0) {
                last_gram_diff_ = (avg_gram - prev_avg_gram_).cwiseAbs().maxCoeff();
                last_rhs_diff_ = (avg_rhs - prev_avg_rhs_).colwise().norm().maxCoeff();
                ok = last_gram_diff_ <= rule.delta1 && last_rhs_diff_ <= rule.delta2;
            }
            prev_avg_gram_ = std::move(avg_gram);
            prev_avg_rhs_ = std::move(avg_rhs);
            checkpoint_n_ = n_;
        }
        if (ok) phase_ = AccumulatorPhase::Sufficient;
        return ok;
    }

    /// Sample count of the most recent checkpoint (0 before the first).
    std::uint64_t checkpoint_n() const noexcept { return checkpoint_n_; }

    double last_gram_diff() const noexcept { return last_gram_diff_; }
    double last_rhs_diff() const noexcept { return last_rhs_diff_; }

    void mark_solved() {
        if (phase_ != AccumulatorPhase::Sufficient)
            throw StateError("level " + std::to_string(level_) + " solved before it was sufficient");
        phase_ = AccumulatorPhase::Solved;
    }

    /// Forces the Sufficient phase (used by batch fits, which see all samples at once).
    void force_sufficient() {
        if (phase_ == AccumulatorPhase::Accumulating) phase_ = AccumulatorPhase::Sufficient;
    }

private:
    int level_;
    PointBlock landmarks_;
    Bandwidth bandwidth_;
    Matrix gram_lower_;
    Matrix rhs_;
    Vector k_;
    Vector last_d_;
    Matrix prev_avg_gram_;
    Matrix prev_avg_rhs_;
    std::uint64_t n_ = 0;
    std::uint64_t checkpoint_n_ = 0;
    AccumulatorPhase phase_ = AccumulatorPhase::Accumulating;
    double last_gram_diff_ = std::numeric_limits<double>::quiet_NaN();
    double last_rhs_diff_ = std::numeric_limits<double>::quiet_NaN();
};

}  // namespace streamrak
