#pragma once

#include <cstdint>
#include <istream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "streamrak/binary_io.hpp"
#include "streamrak/common.hpp"
#include "streamrak/kernel.hpp"

namespace streamrak {

/// s(x) = sum_i alpha_i k(x, landmark_i) at one bandwidth.
struct LevelModel {
    int level = 0;
    Bandwidth bandwidth{1.0};
    PointBlock landmarks;
    Vector coefficients;
    std::uint64_t samples = 0;  // samples the level was trained on

    double evaluate(Point x) const {
        if (static_cast<Eigen::Index>(x.size()) != landmarks.cols()) {
            throw UsageError("dimension mismatch: model has " + std::to_string(landmarks.cols()) +
                             ", point has " + std::to_string(x.size()));
        }
        const double inv = 1.0 / (2.0 * bandwidth.value() * bandwidth.value());
        const Eigen::Index dim = landmarks.cols();
        double s = 0.0;
        for (Eigen::Index j = 0; j < landmarks.rows(); ++j) {
            const double* row = landmarks.data() + j * dim;
            double sq = 0.0;
            for (Eigen::Index c = 0; c < dim; ++c) {
                const double d = x[static_cast<std::size_t>(c)] - row[c];
                sq += d * d;
            }
            s += coefficients[j] * (sq < 1e-300 ? 1.0 : std::exp(-sq * inv));
        }
        return s;
    }

    void check() const {
        if (coefficients.size() != landmarks.rows()) {
            throw UsageError("level " + std::to_string(level) + ": " + std::to_string(coefficients.size()) +
                             " coefficients for " + std::to_string(landmarks.rows()) + " landmarks");
        }
    }
};

/// Sum of consecutive per-level corrections. Immutable: add_level returns a new model that
/// shares the existing levels.
class PyramidModel {
public:
    PyramidModel(std::size_t dim, Bandwidth r0) : dim_(dim), r0_(r0) {
        if (dim == 0) throw UsageError("model dimension must be positive");
    }

    std::size_t dim() const noexcept { return dim_; }
    Bandwidth r0() const noexcept { return r0_; }
    bool empty() const noexcept { return levels_.empty(); }
    std::size_t level_count() const noexcept { return levels_.size(); }
    int first_level() const { return require().front()->level; }
    int deepest_level() const { return require().back()->level; }
    const LevelModel& level_at(std::size_t i) const { return *levels_.at(i); }
    const LevelModel& level(int l) const {
        for (const auto& p : levels_) {
            if (p->level == l) return *p;
        }
        throw UsageError("model has no level " + std::to_string(l));
    }

    std::uint64_t config_hash = 0;

    PyramidModel add_level(LevelModel lm) const {
        lm.check();
        if (static_cast<std::size_t>(lm.landmarks.cols()) != dim_ && lm.landmarks.rows() > 0) {
            throw UsageError("level " + std::to_string(lm.level) + " landmarks have dimension " +
                             std::to_string(lm.landmarks.cols()) + ", model has " + std::to_string(dim_));
        }
        if (!levels_.empty() && lm.level != levels_.back()->level + 1) {
            throw UsageError("cannot append level " + std::to_string(lm.level) + " to a pyramid ending at " +
                             std::to_string(levels_.back()->level));
        }
        if (lm.level < 0) throw UsageError("negative level");
        PyramidModel next = *this;
        next.levels_.push_back(std::make_shared<const LevelModel>(std::move(lm)));
        return next;
    }

    /// sum of s^(l)(x) for l <= up_to (default: all levels)
    double predict(Point x, std::optional<int> up_to = std::nullopt) const {
        require();
        const int last = resolve(up_to);
        double s = 0.0;
        for (const auto& p : levels_) {
            if (p->level > last) break;
            s += p->evaluate(x);
        }
        return s;
    }

    /// Cumulative predictions, one entry per level.
    std::vector<double> predict_levels(Point x) const {
        require();
        std::vector<double> out;
        double s = 0.0;
        for (const auto& p : levels_) {
            s += p->evaluate(x);
            out.push_back(s);
        }
        return out;
    }

    // "SMRK", version u32, dim u32, r0 f64, level count u32, then per level: level u16,
    // bandwidth f64, m u32, landmarks f64 x dim x m, coefficients f64 x m.
    static constexpr std::uint32_t kFormatVersion = 1;

    void write(std::ostream& os) const {
        io::Writer w(os);
        w.magic("SMRK");
        w.put<std::uint32_t>(kFormatVersion);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(dim_));
        w.put<double>(r0_.value());
        w.put<std::uint32_t>(static_cast<std::uint32_t>(levels_.size()));
        for (const auto& p : levels_) {
            w.put<std::uint16_t>(static_cast<std::uint16_t>(p->level));
            w.put<double>(p->bandwidth.value());
            w.put<std::uint32_t>(static_cast<std::uint32_t>(p->landmarks.rows()));
            w.doubles(p->landmarks.data(), static_cast<std::size_t>(p->landmarks.size()));
            w.doubles(p->coefficients.data(), static_cast<std::size_t>(p->coefficients.size()));
        }
    }

    static PyramidModel read(std::istream& is) {
        io::Reader r(is);
        return read(r);
    }

    static PyramidModel read(io::Reader& r) {
        const auto start = r.offset();
        r.expect_magic("SMRK");
        const auto version = r.get<std::uint32_t>();
        if (version != kFormatVersion)
            r.fail("unsupported model format version " + std::to_string(version), start + 4);
        const auto dim = r.get<std::uint32_t>();
        if (dim == 0) r.fail("zero dimension", start + 8);
        const double r0 = r.get<double>();
        if (!(r0 > 0.0) || !std::isfinite(r0)) r.fail("invalid r0", start + 12);
        const auto count = r.get<std::uint32_t>();
        PyramidModel model(dim, Bandwidth(r0));
        for (std::uint32_t i = 0; i < count; ++i) {
            const auto at = r.offset();
            LevelModel lm;
            lm.level = r.get<std::uint16_t>();
            const double bw = r.get<double>();
            if (!(bw > 0.0) || !std::isfinite(bw)) r.fail("invalid bandwidth", at + 2);
            lm.bandwidth = Bandwidth(bw);
            const auto m = r.get<std::uint32_t>();
            if (m > (1u << 26)) r.fail("implausible landmark count " + std::to_string(m), at + 10);
            lm.landmarks.resize(m, dim);
            r.doubles(lm.landmarks.data(), std::size_t{m} * dim);
            lm.coefficients.resize(m);
            r.doubles(lm.coefficients.data(), m);
            if (!model.levels_.empty() && lm.level != model.levels_.back()->level + 1)
                r.fail("non-consecutive level " + std::to_string(lm.level), at);
            model.levels_.push_back(std::make_shared<const LevelModel>(std::move(lm)));
        }
        return model;
    }

private:
    const std::vector<std::shared_ptr<const LevelModel>>& require() const {
        if (levels_.empty()) throw StateError("model has no trained levels");
        return levels_;
    }

    int resolve(std::optional<int> up_to) const {
        if (!up_to) return levels_.back()->level;
        if (*up_to > levels_.back()->level) {
            throw UsageError("level " + std::to_string(*up_to) + " exceeds deepest trained level " +
                             std::to_string(levels_.back()->level));
        }
        if (*up_to < levels_.front()->level) {
            throw UsageError("level " + std::to_string(*up_to) + " precedes first trained level " +
                             std::to_string(levels_.front()->level));
        }
        return *up_to;
    }

    std::size_t dim_;
    Bandwidth r0_;
    std::vector<std::shared_ptr<const LevelModel>> levels_;
};

/// y for an empty model, otherwise y - f(x).
inline double residual(double y, const PyramidModel& model, Point x) {
    return model.empty() ? y : y - model.predict(x);
}

/// One pyramid per output coordinate.
using ModelSet = std::vector<PyramidModel>;

/// Multi-output files are the per-output records back to back.
inline void write_models(std::ostream& os, const ModelSet& models) {
    for (const auto& m : models) m.write(os);
}

inline ModelSet read_models(std::istream& is) {
    io::Reader r(is);
    ModelSet out;
    while (!r.at_end()) out.push_back(PyramidModel::read(r));
    if (out.empty()) throw FormatError("empty model file");
    for (const auto& m : out) {
        if (m.dim() != out.front().dim()) throw FormatError("model records disagree on dimension");
    }
    return out;
}

}  // namespace streamrak
