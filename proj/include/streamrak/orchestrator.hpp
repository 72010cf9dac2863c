#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "streamrak/accumulator.hpp"
#include "streamrak/config.hpp"
#include "streamrak/dct.hpp"
#include "streamrak/pyramid.hpp"
#include "streamrak/solver.hpp"

namespace streamrak {

enum class EventKind { TreeStarted, LandmarksExtracted, LevelSufficient, LevelTrained, ModelPublished };

inline const char* to_string(EventKind k) {
    switch (k) {
        case EventKind::TreeStarted: return "TreeStarted";
        case EventKind::LandmarksExtracted: return "LandmarksExtracted";
        case EventKind::LevelSufficient: return "LevelSufficient";
        case EventKind::LevelTrained: return "LevelTrained";
        case EventKind::ModelPublished: return "ModelPublished";
    }
    return "?";
}

struct LifecycleEvent {
    EventKind kind;
    int level = -1;
    std::uint64_t samples_seen = 0;   // stream position when the event fired
    std::uint64_t level_samples = 0;  // samples accumulated into the level
    std::size_t landmarks = 0;
    std::size_t tree_nodes = 0;
    int cg_iterations = 0;            // largest over outputs
    double cg_residual = 0.0;         // largest over outputs
    double gram_diff = 0.0;
    double rhs_diff = 0.0;
    double r0 = 0.0;
    double seconds = 0.0;             // since the pipeline started
};

inline DctParams dct_params(const RunConfig& c) {
    return DctParams{c.alpha, c.d_cf, c.d_level, c.h, c.bypass};
}

inline SufficiencyRule sufficiency_rule(const RunConfig& c) {
    return SufficiencyRule{c.delta1, c.delta2, c.delta3, c.sufficiency_cadence};
}

inline SolverOptions solver_options(const RunConfig& c) {
    return SolverOptions{c.lambda, c.max_cg_iter, c.cg_tol};
}

/// r0 = factor * max distance from the first buffered point (1 when all points coincide).
inline double derive_r0(const std::vector<double>& xs, std::size_t dim, double factor) {
    double best = 0.0;
    const std::size_t n = xs.size() / dim;
    const Point first(xs.data(), dim);
    for (std::size_t i = 1; i < n; ++i) best = std::max(best, distance(first, Point(xs.data() + i * dim, dim)));
    return best > 0.0 ? factor * best : 1.0;
}

/// Whether level l may extract its landmarks now: the level is ready, the pool is non-empty and
/// either holds min_pool_fraction of min(target m, |Q_l|) or `waited` reached pool_patience.
inline bool landmarks_due(const DampedCoverTree& tree, int l, const RunConfig& c, std::uint64_t waited) {
    if (!tree.level_ready(l)) return false;
    const std::size_t pool = tree.landmark_pool(l).size();
    if (pool == 0) return false;
    if (c.pool_patience > 0 && waited >= c.pool_patience) return true;
    const double want =
        static_cast<double>(std::min(tree.target_landmark_count(l, c.delta0), tree.level_size(l)));
    return static_cast<double>(pool) >= c.min_pool_fraction * want;
}

/// Sequential pipeline: every step of consume runs inline, so a fixed stream, seed and
/// configuration give a bit-identical model.
class Pipeline {
public:
    Pipeline(RunConfig cfg, std::size_t dim, std::size_t outputs = 1)
        : cfg_(std::move(cfg)), dim_(dim), outputs_(outputs), start_(std::chrono::steady_clock::now()) {
        cfg_.validate();
        if (dim == 0 || outputs == 0) throw UsageError("pipeline needs positive input and output dimensions");
        next_level_ = cfg_.first_level;
        if (cfg_.r0 > 0.0) start_tree(cfg_.r0);
    }

    const RunConfig& config() const noexcept { return cfg_; }
    std::size_t dim() const noexcept { return dim_; }
    std::size_t outputs() const noexcept { return outputs_; }

    /// Tree, or nullptr while the warm-up buffer is filling.
    const DampedCoverTree* tree() const noexcept { return tree_ ? &*tree_ : nullptr; }
    const LevelAccumulator* active_accumulator() const noexcept { return acc_ ? &*acc_ : nullptr; }
    std::shared_ptr<const ModelSet> snapshot_model() const { return published_; }
    std::uint64_t samples_seen() const noexcept { return seen_; }
    std::uint64_t samples_dropped() const noexcept { return dropped_; }
    const std::map<int, std::uint64_t>& samples_routed() const noexcept { return routed_; }
    std::uint64_t total_routed() const {
        std::uint64_t s = 0;
        for (const auto& [l, n] : routed_) s += n;
        return s;
    }
    int levels_trained() const noexcept { return trained_; }
    const std::vector<LifecycleEvent>& events() const noexcept { return log_; }
    bool finished() const noexcept { return finished_; }

    /// Called for every lifecycle event as it happens.
    std::function<void(const LifecycleEvent&)> on_event;

    std::vector<LifecycleEvent> consume(Point x, std::span<const double> y) {
        if (finished_) throw StateError("pipeline already finished");
        if (x.size() != dim_ || y.size() != outputs_) {
            throw UsageError("sample has " + std::to_string(x.size()) + " inputs and " + std::to_string(y.size()) +
                             " outputs, expected " + std::to_string(dim_) + " and " + std::to_string(outputs_));
        }
        if (!all_finite(x) || !all_finite(y)) throw UsageError("non-finite sample value");
        pending_.clear();
        if (!tree_) {
            warm_x_.insert(warm_x_.end(), x.begin(), x.end());
            warm_y_.insert(warm_y_.end(), y.begin(), y.end());
            if (warm_x_.size() / dim_ >= cfg_.warmup) flush_warmup();
            return std::move(pending_);
        }
        live(x, y);
        return std::move(pending_);
    }

    /// End of stream: replays an incomplete warm-up buffer. A level still accumulating is left
    /// untrained.
    std::vector<LifecycleEvent> finish() {
        pending_.clear();
        if (!finished_ && !tree_ && !warm_x_.empty()) flush_warmup();
        finished_ = true;
        return std::move(pending_);
    }

    /// Runs the lifecycle gates once; consume calls it after every sample.
    std::vector<LifecycleEvent> try_advance() {
        pending_.clear();
        advance();
        return std::move(pending_);
    }

    /// Models to publish, or an empty set when nothing trained yet.
    ModelSet model_or_empty() const {
        if (published_) return *published_;
        ModelSet empty;
        const double r0 = tree_ ? tree_->r0().value() : 1.0;
        for (std::size_t k = 0; k < outputs_; ++k) empty.emplace_back(dim_, Bandwidth(r0));
        return empty;
    }

private:
    void flush_warmup() {
        start_tree(derive_r0(warm_x_, dim_, cfg_.r0_factor));
        std::vector<double> xs, ys;
        xs.swap(warm_x_);
        ys.swap(warm_y_);
        const std::size_t n = xs.size() / dim_;
        for (std::size_t i = 0; i < n; ++i) {
            live(Point(xs.data() + i * dim_, dim_), std::span<const double>(ys.data() + i * outputs_, outputs_));
        }
    }

    void start_tree(double r0) {
        tree_.emplace(dim_, Bandwidth(r0), dct_params(cfg_), mix_seed(cfg_.seed, 0x7e3));
        ModelSet empty;
        for (std::size_t k = 0; k < outputs_; ++k) {
            empty.emplace_back(dim_, Bandwidth(r0));
            empty.back().config_hash = cfg_.hash();
        }
        model_ = std::move(empty);
        LifecycleEvent e = base_event(EventKind::TreeStarted, -1);
        e.r0 = r0;
        emit(e);
    }

    void live(Point x, std::span<const double> y) {
        ++seen_;
        tree_->insert(x);
        if (acc_) {
            for (std::size_t k = 0; k < outputs_; ++k) d_[k] = residual(y[k], model_[k], x);
            acc_->accumulate(x, std::span<const double>(d_.data(), outputs_));
            ++routed_[acc_->level()];
        } else {
            ++dropped_;
            if (trained_ < cfg_.max_levels && tree_->level_ready(next_level_)) ++waited_;
        }
        advance();
    }

    void advance() {
        if (!tree_) return;
        if (acc_) {
            if (!acc_->sufficiency_check(sufficiency_rule(cfg_))) return;
            LifecycleEvent s = base_event(EventKind::LevelSufficient, acc_->level());
            s.level_samples = acc_->n_seen();
            s.landmarks = static_cast<std::size_t>(acc_->m());
            s.gram_diff = acc_->last_gram_diff();
            s.rhs_diff = acc_->last_rhs_diff();
            emit(s);
            train_active();
            return;
        }
        if (trained_ >= cfg_.max_levels) return;
        const int l = next_level_;
        if (!landmarks_due(*tree_, l, cfg_, waited_)) return;
        waited_ = 0;
        PointBlock lm = tree_->extract_landmarks(l, cfg_.delta0, cfg_.seed);
        const Bandwidth bw(bandwidth_at_level(l, tree_->r0()).value() * cfg_.bandwidth_scale);
        acc_.emplace(l, std::move(lm), bw, outputs_);
        d_.assign(outputs_, 0.0);
        LifecycleEvent e = base_event(EventKind::LandmarksExtracted, l);
        e.landmarks = static_cast<std::size_t>(acc_->m());
        emit(e);
    }

    void train_active() {
        const int l = acc_->level();
        std::vector<LevelSolution> sols;
        try {
            sols = solve_level(*acc_, solver_options(cfg_));
        } catch (const NumericalError& err) {
            throw NumericalError("level " + std::to_string(l) + ": " + err.what());
        }
        LifecycleEvent t = base_event(EventKind::LevelTrained, l);
        t.level_samples = acc_->n_seen();
        t.landmarks = static_cast<std::size_t>(acc_->m());
        ModelSet next;
        for (std::size_t k = 0; k < outputs_; ++k) {
            LevelModel lm;
            lm.level = l;
            lm.bandwidth = acc_->bandwidth();
            lm.landmarks = acc_->landmarks();
            lm.coefficients = std::move(sols[k].coefficients);
            lm.samples = acc_->n_seen();
            t.cg_iterations = std::max(t.cg_iterations, sols[k].iterations_used);
            t.cg_residual = std::max(t.cg_residual, sols[k].final_relative_residual);
            next.push_back(model_[k].add_level(std::move(lm)));
        }
        emit(t);
        model_ = std::move(next);
        published_ = std::make_shared<const ModelSet>(model_);
        acc_.reset();
        ++trained_;
        next_level_ = l + 1;
        LifecycleEvent p = base_event(EventKind::ModelPublished, l);
        emit(p);
    }

    LifecycleEvent base_event(EventKind k, int level) const {
        LifecycleEvent e{k};
        e.level = level;
        e.samples_seen = seen_;
        e.tree_nodes = tree_ ? tree_->size() : 0;
        e.r0 = tree_ ? tree_->r0().value() : 0.0;
        e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        return e;
    }

    void emit(const LifecycleEvent& e) {
        log_.push_back(e);
        pending_.push_back(e);
        if (on_event) on_event(e);
    }

    RunConfig cfg_;
    std::size_t dim_;
    std::size_t outputs_;
    std::chrono::steady_clock::time_point start_;
    std::optional<DampedCoverTree> tree_;
    std::optional<LevelAccumulator> acc_;
    ModelSet model_;
    std::shared_ptr<const ModelSet> published_;
    std::vector<double> warm_x_, warm_y_, d_;
    std::uint64_t seen_ = 0;
    std::uint64_t dropped_ = 0;
    std::uint64_t waited_ = 0;  // samples since the next level became ready
    std::map<int, std::uint64_t> routed_;
    int trained_ = 0;
    int next_level_ = 0;
    bool finished_ = false;
    std::vector<LifecycleEvent> log_;
    std::vector<LifecycleEvent> pending_;
};

/// Bounded multi-producer multi-consumer queue; push blocks when full, pop blocks when empty.
template <typename T>
class BlockingQueue {
public:
    explicit BlockingQueue(std::size_t capacity = 4096) : capacity_(std::max<std::size_t>(capacity, 1)) {}

    void push(T v) {
        std::unique_lock lock(mu_);
        not_full_.wait(lock, [&] { return q_.size() < capacity_ || closed_; });
        if (closed_) return;
        q_.push_back(std::move(v));
        not_empty_.notify_one();
    }

    /// nullopt once closed and drained.
    std::optional<T> pop() {
        std::unique_lock lock(mu_);
        not_empty_.wait(lock, [&] { return !q_.empty() || closed_; });
        if (q_.empty()) return std::nullopt;
        T v = std::move(q_.front());
        q_.pop_front();
        not_full_.notify_one();
        return v;
    }

    void close() {
        std::lock_guard lock(mu_);
        closed_ = true;
        not_empty_.notify_all();
        not_full_.notify_all();
    }

private:
    std::size_t capacity_;
    std::deque<T> q_;
    bool closed_ = false;
    std::mutex mu_;
    std::condition_variable not_empty_, not_full_;
};

/// Sub-sampling worker (sole owner of the tree) and training worker (owner of the accumulator
/// and the solver) connected by message queues. Readers take model snapshots at any time.
class ConcurrentPipeline {
public:
    ConcurrentPipeline(RunConfig cfg, std::size_t dim, std::size_t outputs = 1)
        : cfg_(std::move(cfg)), dim_(dim), outputs_(outputs), start_(std::chrono::steady_clock::now()) {
        cfg_.validate();
        if (dim == 0 || outputs == 0) throw UsageError("pipeline needs positive input and output dimensions");
        wanted_level_ = cfg_.first_level;
        sampler_ = std::thread([this] { sampler_loop(); });
        trainer_ = std::thread([this] { trainer_loop(); });
    }

    ConcurrentPipeline(const ConcurrentPipeline&) = delete;
    ConcurrentPipeline& operator=(const ConcurrentPipeline&) = delete;

    ~ConcurrentPipeline() {
        try {
            finish();
        } catch (...) {
        }
    }

    void consume(Point x, std::span<const double> y) {
        if (x.size() != dim_ || y.size() != outputs_) {
            throw UsageError("sample has " + std::to_string(x.size()) + " inputs and " + std::to_string(y.size()) +
                             " outputs, expected " + std::to_string(dim_) + " and " + std::to_string(outputs_));
        }
        if (!all_finite(x) || !all_finite(y)) throw UsageError("non-finite sample value");
        rethrow_if_failed();
        Sample s;
        s.x.assign(x.begin(), x.end());
        s.y.assign(y.begin(), y.end());
        in_.push(std::move(s));
    }

    /// Closes the input, drains both workers and rethrows any worker error.
    void finish() {
        if (joined_) return;
        in_.close();
        if (sampler_.joinable()) sampler_.join();
        if (trainer_.joinable()) trainer_.join();
        joined_ = true;
        rethrow_if_failed();
    }

    std::shared_ptr<const ModelSet> snapshot_model() const {
        std::lock_guard lock(model_mu_);
        return published_;
    }

    std::vector<LifecycleEvent> events() const {
        std::lock_guard lock(event_mu_);
        return log_;
    }

    std::uint64_t samples_seen() const noexcept { return seen_.load(); }
    std::uint64_t samples_routed() const noexcept { return routed_.load(); }
    std::uint64_t samples_dropped() const noexcept { return dropped_.load(); }
    double r0() const noexcept { return r0_.load(); }
    std::size_t tree_nodes() const noexcept { return tree_nodes_.load(); }

    std::function<void(const LifecycleEvent&)> on_event;

private:
    struct Sample {
        std::vector<double> x, y;
    };
    struct Landmarks {
        int level;
        std::shared_ptr<const PointBlock> points;
        Bandwidth bandwidth;
    };
    using Message = std::variant<Sample, Landmarks>;

    void sampler_loop() {
        try {
            std::optional<DampedCoverTree> tree;
            std::vector<Sample> warm;
            auto go_live = [&](double r0) {
                tree.emplace(dim_, Bandwidth(r0), dct_params(cfg_), mix_seed(cfg_.seed, 0x7e3));
                r0_ = r0;
                LifecycleEvent e = base_event(EventKind::TreeStarted, -1);
                e.r0 = r0;
                emit(e);
                to_trainer_.push(Message{Landmarks{-1, nullptr, Bandwidth(r0)}});
            };
            std::uint64_t waited = 0;
            auto feed = [&](Sample s) {
                tree->insert(Point(s.x.data(), dim_));
                ++seen_;
                tree_nodes_ = tree->size();
                to_trainer_.push(Message{std::move(s)});
                const int l = wanted_level_.load();
                if (l < 0 || !tree->level_ready(l)) return;
                if (!landmarks_due(*tree, l, cfg_, ++waited)) return;
                waited = 0;
                auto block = std::make_shared<const PointBlock>(tree->extract_landmarks(l, cfg_.delta0, cfg_.seed));
                wanted_level_ = -1;
                LifecycleEvent e = base_event(EventKind::LandmarksExtracted, l);
                e.landmarks = static_cast<std::size_t>(block->rows());
                e.tree_nodes = tree->size();
                emit(e);
                const Bandwidth bw(bandwidth_at_level(l, tree->r0()).value() * cfg_.bandwidth_scale);
                to_trainer_.push(Message{Landmarks{l, std::move(block), bw}});
            };
            if (cfg_.r0 > 0.0) go_live(cfg_.r0);
            while (auto s = in_.pop()) {
                if (!tree) {
                    warm.push_back(std::move(*s));
                    if (warm.size() >= cfg_.warmup) {
                        go_live(derive_warm(warm));
                        for (auto& w : warm) feed(std::move(w));
                        warm.clear();
                    }
                    continue;
                }
                feed(std::move(*s));
            }
            if (!tree && !warm.empty()) {
                go_live(derive_warm(warm));
                for (auto& w : warm) feed(std::move(w));
            }
        } catch (...) {
            fail(std::current_exception());
            in_.close();
        }
        to_trainer_.close();
    }

    double derive_warm(const std::vector<Sample>& warm) const {
        std::vector<double> xs;
        for (const auto& w : warm) xs.insert(xs.end(), w.x.begin(), w.x.end());
        return derive_r0(xs, dim_, cfg_.r0_factor);
    }

    void trainer_loop() {
        std::optional<LevelAccumulator> acc;
        ModelSet model;
        int trained = 0;
        std::vector<double> d(outputs_);
        // keeps draining after a failure so that the sampler never blocks on a full queue
        while (auto msg = to_trainer_.pop()) {
            if (failed()) continue;
            try {
                if (auto* lm = std::get_if<Landmarks>(&*msg)) {
                    if (lm->level < 0) {
                        for (std::size_t k = 0; k < outputs_; ++k) {
                            model.emplace_back(dim_, lm->bandwidth);
                            model.back().config_hash = cfg_.hash();
                        }
                        continue;
                    }
                    acc.emplace(lm->level, *lm->points, lm->bandwidth, outputs_);
                    continue;
                }
                auto& s = std::get<Sample>(*msg);
                const Point x(s.x.data(), dim_);
                if (!acc) {
                    ++dropped_;
                    continue;
                }
                for (std::size_t k = 0; k < outputs_; ++k) d[k] = residual(s.y[k], model[k], x);
                acc->accumulate(x, std::span<const double>(d.data(), outputs_));
                ++routed_;
                if (!acc->sufficiency_check(sufficiency_rule(cfg_))) continue;
                const int l = acc->level();
                LifecycleEvent se = base_event(EventKind::LevelSufficient, l);
                se.level_samples = acc->n_seen();
                se.landmarks = static_cast<std::size_t>(acc->m());
                se.gram_diff = acc->last_gram_diff();
                se.rhs_diff = acc->last_rhs_diff();
                emit(se);
                std::vector<LevelSolution> sols;
                try {
                    sols = solve_level(*acc, solver_options(cfg_));
                } catch (const NumericalError& err) {
                    throw NumericalError("level " + std::to_string(l) + ": " + err.what());
                }
                LifecycleEvent te = base_event(EventKind::LevelTrained, l);
                te.level_samples = acc->n_seen();
                te.landmarks = static_cast<std::size_t>(acc->m());
                ModelSet next;
                for (std::size_t k = 0; k < outputs_; ++k) {
                    LevelModel level_model;
                    level_model.level = l;
                    level_model.bandwidth = acc->bandwidth();
                    level_model.landmarks = acc->landmarks();
                    level_model.coefficients = std::move(sols[k].coefficients);
                    level_model.samples = acc->n_seen();
                    te.cg_iterations = std::max(te.cg_iterations, sols[k].iterations_used);
                    te.cg_residual = std::max(te.cg_residual, sols[k].final_relative_residual);
                    next.push_back(model[k].add_level(std::move(level_model)));
                }
                emit(te);
                model = std::move(next);
                {
                    std::lock_guard lock(model_mu_);
                    published_ = std::make_shared<const ModelSet>(model);
                }
                emit(base_event(EventKind::ModelPublished, l));
                acc.reset();
                ++trained;
                if (trained < cfg_.max_levels) wanted_level_ = l + 1;
            } catch (...) {
                fail(std::current_exception());
                in_.close();
            }
        }
    }

    LifecycleEvent base_event(EventKind k, int level) const {
        LifecycleEvent e{k};
        e.level = level;
        e.samples_seen = seen_.load();
        e.tree_nodes = tree_nodes_.load();
        e.r0 = r0_.load();
        e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
        return e;
    }

    void emit(const LifecycleEvent& e) {
        std::lock_guard lock(event_mu_);
        log_.push_back(e);
        if (on_event) on_event(e);
    }

    void fail(std::exception_ptr p) {
        std::lock_guard lock(error_mu_);
        if (!error_) error_ = p;
    }
    bool failed() const {
        std::lock_guard lock(error_mu_);
        return error_ != nullptr;
    }
    void rethrow_if_failed() {
        std::exception_ptr p;
        {
            std::lock_guard lock(error_mu_);
            p = error_;
        }
        if (p) std::rethrow_exception(p);
    }

    RunConfig cfg_;
    std::size_t dim_;
    std::size_t outputs_;
    std::chrono::steady_clock::time_point start_;
    BlockingQueue<Sample> in_;
    BlockingQueue<Message> to_trainer_;
    std::atomic<int> wanted_level_{0};
    std::atomic<std::uint64_t> seen_{0}, routed_{0}, dropped_{0};
    std::atomic<double> r0_{0.0};
    std::atomic<std::size_t> tree_nodes_{0};
    mutable std::mutex model_mu_;
    std::shared_ptr<const ModelSet> published_;
    mutable std::mutex event_mu_;
    std::vector<LifecycleEvent> log_;
    mutable std::mutex error_mu_;
    std::exception_ptr error_;
    std::thread sampler_;
    std::thread trainer_;
    bool joined_ = false;
};

}  // namespace streamrak
