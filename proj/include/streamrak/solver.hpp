#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "streamrak/accumulator.hpp"
#include "streamrak/common.hpp"
#include "streamrak/kernel.hpp"

namespace streamrak {

struct SolverOptions {
    double lambda = 1e-6;
    int max_iter = 20;
    double tol = 1e-8;
};

/// B = (1/sqrt n) T^-1 A^-1 with T^T T = Kmm (+ jitter) and A^T A = T T^T / m + lambda I,
/// so that B B^T = (n/m Kmm^2 + lambda n Kmm)^-1.
class Preconditioner {
public:
    static constexpr double kMinJitter = 1e-12;  // relative to trace(Kmm) / m
    static constexpr double kMaxJitter = 1e-6;

    Preconditioner(const Matrix& kmm, std::uint64_t n, double lambda, double min_jitter = kMinJitter) {
        const Eigen::Index m = kmm.rows();
        if (m == 0 || kmm.cols() != m) throw UsageError("Kmm must be square and non-empty");
        if (n < 1) throw UsageError("preconditioner needs n >= 1");
        if (!(lambda > 0.0)) throw UsageError("lambda must be positive");
        n_ = static_cast<double>(n);
        const double scale = std::max(kmm.trace() / static_cast<double>(m), 1e-300);
        bool ok = false;
        for (double eps = min_jitter; eps <= kMaxJitter * (1 + 1e-9); eps *= 10.0) {
            jitter_ = eps * scale;
            relative_jitter_ = eps;
            Matrix shifted = kmm;
            shifted.diagonal().array() += jitter_;
            Eigen::LLT<Matrix> llt(shifted);
            if (llt.info() != Eigen::Success) continue;
            t_ = llt.matrixU();
            if (!(t_.diagonal().array() > 0.0).all() || !t_.allFinite()) continue;
            ok = true;
            break;
        }
        if (!ok) {
            std::ostringstream os;
            os << "Cholesky of the landmark kernel matrix failed (m=" << m << ", trace/m=" << scale
               << ") even with jitter " << jitter_
               << "; landmarks are nearly coincident at this bandwidth";
            throw NumericalError(os.str());
        }
        Matrix inner = t_ * t_.transpose() / static_cast<double>(m);
        inner.diagonal().array() += lambda;
        Eigen::LLT<Matrix> llt(inner);
        if (llt.info() != Eigen::Success) throw NumericalError("Cholesky of the inner preconditioner matrix failed");
        a_ = llt.matrixU();
    }

    Eigen::Index m() const noexcept { return t_.rows(); }
    double jitter() const noexcept { return jitter_; }
    double relative_jitter() const noexcept { return relative_jitter_; }
    const Matrix& t() const noexcept { return t_; }
    const Matrix& a() const noexcept { return a_; }

    Vector apply(const Vector& v) const {
        Vector w = a_.triangularView<Eigen::Upper>().solve(v);
        w = t_.triangularView<Eigen::Upper>().solve(w);
        return w / std::sqrt(n_);
    }

    Vector apply_transpose(const Vector& v) const {
        Vector w = t_.triangularView<Eigen::Upper>().transpose().solve(v);
        w = a_.triangularView<Eigen::Upper>().transpose().solve(w);
        return w / std::sqrt(n_);
    }

    /// Dense B, for inspection and tests.
    Matrix matrix() const {
        const Eigen::Index m = this->m();
        Matrix b(m, m);
        for (Eigen::Index j = 0; j < m; ++j) b.col(j) = apply(Vector::Unit(m, j));
        return b;
    }

private:
    double n_ = 1.0;
    double jitter_ = 0.0;
    double relative_jitter_ = 0.0;
    Matrix t_;
    Matrix a_;
};

inline Preconditioner build_preconditioner(const Matrix& kmm, std::uint64_t n, double lambda) {
    return Preconditioner(kmm, n, lambda);
}

struct CgResult {
    Vector x;
    int iterations = 0;
    double relative_residual = 0.0;
};

using LinearOperator = std::function<Vector(const Vector&)>;

inline CgResult conjugate_gradient(const LinearOperator& apply, const Vector& rhs, int max_iter, double tol) {
    CgResult res;
    res.x = Vector::Zero(rhs.size());
    const double bnorm = rhs.norm();
    if (!std::isfinite(bnorm)) throw NumericalError("non-finite right-hand side");
    if (bnorm == 0.0) return res;
    Vector r = rhs;
    Vector p = r;
    double rr = r.squaredNorm();
    res.relative_residual = 1.0;
    for (int it = 0; it < max_iter; ++it) {
        const Vector ap = apply(p);
        const double pap = p.dot(ap);
        if (!std::isfinite(pap)) throw NumericalError("non-finite value in conjugate gradient");
        if (pap <= 0.0) {
            throw NumericalError("conjugate gradient breakdown: non-positive curvature " +
                                 std::to_string(pap) + " at iteration " + std::to_string(it));
        }
        const double step = rr / pap;
        res.x += step * p;
        r -= step * ap;
        ++res.iterations;
        const double rr_new = r.squaredNorm();
        res.relative_residual = std::sqrt(rr_new) / bnorm;
        if (res.relative_residual <= tol) break;
        p = r + (rr_new / rr) * p;
        rr = rr_new;
    }
    res.relative_residual = (apply(res.x) - rhs).norm() / bnorm;
    if (!res.x.allFinite()) throw NumericalError("non-finite conjugate gradient iterate");
    return res;
}

struct LevelSolution {
    Vector coefficients;
    int iterations_used = 0;
    double final_relative_residual = 0.0;
};

/// Solves (gram + lambda n Kmm) alpha = rhs through B^T H B beta = B^T rhs, alpha = B beta.
/// With T^T T = Kmm + jitter, B^T H B = A^-T (T^-T gram T^-1 / n + lambda I) A^-1, applied by
/// triangular solves and one product with gram; the jittered Kmm stands in for Kmm in H.
inline LevelSolution solve_sketched(const Matrix& kmm, const Matrix& gram, const Vector& rhs, std::uint64_t n,
                                    const SolverOptions& opt, const Preconditioner& pre) {
    if (!gram.allFinite() || !rhs.allFinite()) throw NumericalError("non-finite accumulated system");
    if (kmm.rows() != pre.m() || gram.rows() != pre.m() || rhs.size() != pre.m())
        throw UsageError("system and preconditioner sizes disagree");
    const double inv_n = 1.0 / static_cast<double>(n);
    const auto t = pre.t().triangularView<Eigen::Upper>();
    const auto a = pre.a().triangularView<Eigen::Upper>();
    auto op = [&](const Vector& beta) -> Vector {
        const Vector w = a.solve(beta);
        const Vector u = t.solve(w);
        Vector g = t.transpose().solve(gram * u);
        g *= inv_n;
        g.noalias() += opt.lambda * w;
        return a.transpose().solve(g);
    };
    const CgResult cg = conjugate_gradient(op, pre.apply_transpose(rhs), opt.max_iter, opt.tol);
    LevelSolution sol;
    sol.coefficients = pre.apply(cg.x);
    sol.iterations_used = cg.iterations;
    sol.final_relative_residual = cg.relative_residual;
    if (!sol.coefficients.allFinite()) throw NumericalError("non-finite coefficients");
    return sol;
}

/// Escalates the preconditioner jitter (x10 up to Preconditioner::kMaxJitter) while the
/// factorization or conjugate gradient breaks down on a near-singular landmark kernel matrix.
template <typename Solve>
auto with_jitter_escalation(const Matrix& kmm, std::uint64_t n, double lambda, Solve&& solve) {
    double eps = Preconditioner::kMinJitter;
    while (true) {
        const Preconditioner pre(kmm, n, lambda, eps);
        try {
            return solve(pre);
        } catch (const NumericalError&) {
            eps = pre.relative_jitter() * 10.0;
            if (eps > Preconditioner::kMaxJitter * (1 + 1e-9)) throw;
        }
    }
}

inline LevelSolution solve_sketched(const Matrix& kmm, const Matrix& gram, const Vector& rhs, std::uint64_t n,
                                    const SolverOptions& opt) {
    return with_jitter_escalation(kmm, n, opt.lambda, [&](const Preconditioner& pre) {
        return solve_sketched(kmm, gram, rhs, n, opt, pre);
    });
}

/// One solution per accumulator output; all outputs share the preconditioner.
inline std::vector<LevelSolution> solve_level(LevelAccumulator& acc, const SolverOptions& opt) {
    if (acc.phase() != AccumulatorPhase::Sufficient)
        throw StateError("level " + std::to_string(acc.level()) + " is not sufficient yet");
    if (acc.n_seen() == 0) throw StateError("level " + std::to_string(acc.level()) + " has no samples");
    const Matrix kmm = kernel_cross_matrix(acc.landmarks(), acc.landmarks(), acc.bandwidth());
    const Matrix gram = acc.gram();
    auto out = with_jitter_escalation(kmm, acc.n_seen(), opt.lambda, [&](const Preconditioner& pre) {
        std::vector<LevelSolution> sols;
        for (std::size_t k = 0; k < acc.outputs(); ++k) {
            sols.push_back(solve_sketched(kmm, gram, acc.rhs(k), acc.n_seen(), opt, pre));
        }
        return sols;
    });
    acc.mark_solved();
    return out;
}

}  // namespace streamrak
