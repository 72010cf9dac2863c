#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "streamrak/binary_io.hpp"
#include "streamrak/common.hpp"
#include "streamrak/kernel.hpp"
#include "streamrak/random.hpp"

namespace streamrak {

using NodeId = std::uint32_t;
inline constexpr NodeId kNoNode = std::numeric_limits<NodeId>::max();

struct DctParams {
    double alpha = 0.01;
    double d_cf = 0.7;
    double d_level = 0.8;
    double h = 10.0;
    bool bypass = true;
};

struct DctNode {
    NodeId parent = kNoNode;
    int level = 0;
    double cover_fraction = 0.0;
    std::vector<NodeId> children;
};

enum class Disposition { BecameRoot, AddedAtLevel, DiscardedDamped, DiscardedDuplicate };

inline const char* to_string(Disposition d) {
    switch (d) {
        case Disposition::BecameRoot: return "BecameRoot";
        case Disposition::AddedAtLevel: return "AddedAtLevel";
        case Disposition::DiscardedDamped: return "DiscardedDamped";
        case Disposition::DiscardedDuplicate: return "DiscardedDuplicate";
    }
    return "?";
}

struct InsertOutcome {
    Disposition disposition = Disposition::BecameRoot;
    int level = 0;                 // level of the new node, or of the node that rejected x
    std::size_t path_length = 0;   // nodes whose children were examined
    NodeId node = kNoNode;         // new node when added
    NodeId parent = kNoNode;
    // cover fraction of the node whose damping gate decided a leaf extension; NaN otherwise
    double gate_cover_fraction = std::numeric_limits<double>::quiet_NaN();
    bool bypassed = false;
    bool root_overflow = false;
};

struct LevelStats {
    std::size_t nodes = 0;
    std::size_t eligible = 0;  // cover_fraction >= d_cf
    double level_cover_fraction = 0.0;
    std::vector<std::size_t> children_histogram;  // [k] = nodes with k children
};

struct TreeStats {
    std::size_t total_nodes = 0;
    int depth = -1;  // deepest populated level, -1 when empty
    std::vector<LevelStats> levels;
    std::uint64_t samples_seen = 0;
    std::uint64_t discarded_damped = 0;
    std::uint64_t discarded_duplicate = 0;
    std::uint64_t root_overflow = 0;
    std::uint64_t bypassed = 0;
};

/// cf <- (1 - alpha) cf + alpha [covered]
inline double updated_cover_fraction(double cf, bool covered, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw UsageError("alpha must lie in (0,1)");
    return std::clamp((1.0 - alpha) * cf + (covered ? alpha : 0.0), 0.0, 1.0);
}

/// q = 1 / (1 + exp(-h tan(pi (dist/r - 1/2)))), increasing from 0 at dist=0 to 1 at dist=r.
inline double separation_bypass_probability(double dist, Bandwidth r, double h) {
    if (!(h > 0.0)) throw UsageError("h must be positive");
    if (!(dist >= 0.0 && dist <= r.value())) {
        throw UsageError("distance " + std::to_string(dist) + " outside [0, " +
                         std::to_string(r.value()) + "]");
    }
    if (dist == 0.0) return 0.0;
    if (dist == r.value()) return 1.0;
    const double t = std::tan(std::numbers::pi * (dist / r.value() - 0.5));
    if (std::isinf(h)) return t > 0.0 ? 1.0 : (t < 0.0 ? 0.0 : 0.5);
    return 1.0 / (1.0 + std::exp(-h * t));
}

class DampedCoverTree {
public:
    DampedCoverTree(std::size_t dim, Bandwidth r0, DctParams params = {}, std::uint64_t seed = 1)
        : dim_(dim), r0_(r0), params_(params), rng_(seed) {
        if (dim == 0) throw UsageError("dimension must be positive");
        if (!(params.alpha > 0.0 && params.alpha < 1.0)) throw UsageError("alpha must lie in (0,1)");
        if (!(params.d_cf > 0.0 && params.d_cf < 1.0)) throw UsageError("d_cf must lie in (0,1)");
        if (!(params.d_level > 0.0 && params.d_level < 1.0))
            throw UsageError("d_level must lie in (0,1)");
        if (!(params.h > 0.0)) throw UsageError("h must be positive");
    }

    std::size_t dim() const noexcept { return dim_; }
    Bandwidth r0() const noexcept { return r0_; }
    Bandwidth radius(int level) const { return bandwidth_at_level(level, r0_); }
    const DctParams& params() const noexcept { return params_; }
    bool empty() const noexcept { return nodes_.empty(); }
    std::size_t size() const noexcept { return nodes_.size(); }
    NodeId root() const noexcept { return nodes_.empty() ? kNoNode : 0; }
    /// Deepest populated level; -1 when empty.
    int depth() const noexcept { return static_cast<int>(level_nodes_.size()) - 1; }

    const DctNode& node(NodeId id) const { return nodes_.at(id); }
    Point point(NodeId id) const { return {points_.data() + std::size_t{id} * dim_, dim_}; }
    const std::vector<NodeId>& level_nodes(int level) const { return level_nodes_.at(level); }
    std::size_t level_size(int level) const {
        return level >= 0 && level < static_cast<int>(level_nodes_.size()) ? level_nodes_[level].size() : 0;
    }

    double level_cover_fraction(int level) const {
        return level >= 0 && level < static_cast<int>(level_cf_.size()) ? level_cf_[level] : 0.0;
    }
    bool level_ready(int level) const {
        return level_size(level) > 0 && level_cover_fraction(level) >= params_.d_level;
    }

    std::uint64_t samples_seen() const noexcept { return samples_seen_; }
    std::uint64_t discarded_damped() const noexcept { return discarded_damped_; }
    std::uint64_t discarded_duplicate() const noexcept { return discarded_duplicate_; }
    std::uint64_t root_overflow() const noexcept { return root_overflow_; }

    double update_cover_fraction(NodeId id, bool covered) {
        auto& n = nodes_.at(id);
        n.cover_fraction = updated_cover_fraction(n.cover_fraction, covered, params_.alpha);
        return n.cover_fraction;
    }

    double update_level_cover_fraction(int level, bool covered) {
        if (level < 0 || level > static_cast<int>(level_nodes_.size()))
            throw UsageError("level " + std::to_string(level) + " is neither populated nor next");
        if (static_cast<int>(level_cf_.size()) <= level) level_cf_.resize(level + 1, 0.0);
        level_cf_[level] = updated_cover_fraction(level_cf_[level], covered, params_.alpha);
        return level_cf_[level];
    }

    InsertOutcome insert(Point x) {
        if (x.size() != dim_) {
            throw UsageError("dimension mismatch: tree has " + std::to_string(dim_) + ", point has " +
                             std::to_string(x.size()));
        }
        if (!all_finite(x)) throw UsageError("non-finite coordinate in inserted point");
        ++samples_seen_;
        InsertOutcome out;
        if (nodes_.empty()) {
            out.node = add_node(x, kNoNode, 0);
            out.disposition = Disposition::BecameRoot;
            return out;
        }

        track_level_coverage(x);

        const double root_sq = squared_distance(x, point(0));
        if (root_sq == 0.0) return duplicate(out, 0, 1);
        if (root_sq >= r0_.value() * r0_.value()) {
            ++root_overflow_;
            out.root_overflow = true;
        }

        NodeId p = 0;
        int l = 0;
        while (true) {
            ++out.path_length;
            const double r_next = radius(l + 1).value();
            // descent follows the first conflicting child; the bypass trial uses the nearest one
            NodeId conflict = kNoNode;
            double nearest_sq = r_next * r_next;
            for (NodeId c : nodes_[p].children) {
                const double sq = squared_distance(x, point(c));
                if (sq < r_next * r_next) {
                    if (conflict == kNoNode) conflict = c;
                    nearest_sq = std::min(nearest_sq, sq);
                    if (!params_.bypass || sq == 0.0) break;
                }
            }
            if (conflict == kNoNode) return add_child(out, x, p, l + 1);
            if (nearest_sq == 0.0) return duplicate(out, l + 1, out.path_length);
            if (params_.bypass) {
                const double d = std::min(std::sqrt(nearest_sq), r_next);
                if (uniform01(rng_) < separation_bypass_probability(d, Bandwidth(r_next), params_.h)) {
                    ++bypassed_;
                    out.bypassed = true;
                    return add_child(out, x, p, l + 1);
                }
            }
            if (nodes_[conflict].children.empty()) {
                ++out.path_length;
                out.gate_cover_fraction = nodes_[p].cover_fraction;
                if (nodes_[p].cover_fraction >= params_.d_cf) {
                    out.node = add_node(x, conflict, l + 2);
                    out.parent = conflict;
                    out.level = l + 2;
                    out.disposition = Disposition::AddedAtLevel;
                    return out;
                }
                update_cover_fraction(p, true);
                ++discarded_damped_;
                out.disposition = Disposition::DiscardedDamped;
                out.parent = p;
                out.level = l + 1;
                return out;
            }
            p = conflict;
            ++l;
        }
    }

    /// Candidate landmarks of a level: nodes whose cover fraction reached d_cf.
    std::vector<NodeId> landmark_pool(int level) const {
        std::vector<NodeId> pool;
        if (level < 0 || level >= static_cast<int>(level_nodes_.size())) return pool;
        for (NodeId id : level_nodes_[level]) {
            if (nodes_[id].cover_fraction >= params_.d_cf) pool.push_back(id);
        }
        return pool;
    }

    /// ceil(delta0 sqrt(|Q_l|)), before capping by the pool size.
    std::size_t target_landmark_count(int level, double delta0) const {
        return static_cast<std::size_t>(
            std::ceil(delta0 * std::sqrt(static_cast<double>(level_size(level))) - 1e-9));
    }

    /// Uniform sample without replacement of min(ceil(delta0 sqrt|Q_l|), |pool|) pool nodes.
    std::vector<NodeId> sample_landmarks(int level, double delta0, std::uint64_t seed) const {
        if (!(delta0 > 0.0)) throw UsageError("delta0 must be positive");
        if (!level_ready(level)) {
            throw StateError("level " + std::to_string(level) + " is not sufficiently covered (cf " +
                             std::to_string(level_cover_fraction(level)) + " < " +
                             std::to_string(params_.d_level) + ")");
        }
        std::vector<NodeId> pool = landmark_pool(level);
        if (pool.empty()) {
            throw StateError("level " + std::to_string(level) + " has " +
                             std::to_string(level_size(level)) +
                             " nodes but none with cover fraction >= " + std::to_string(params_.d_cf));
        }
        const std::size_t m = std::min(target_landmark_count(level, delta0), pool.size());
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(level)));
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t j = i + uniform_index(rng, pool.size() - i);
            std::swap(pool[i], pool[j]);
        }
        pool.resize(m);
        return pool;
    }

    PointBlock extract_landmarks(int level, double delta0, std::uint64_t seed) const {
        return gather(sample_landmarks(level, delta0, seed));
    }

    PointBlock gather(const std::vector<NodeId>& ids) const {
        PointBlock block(static_cast<Eigen::Index>(ids.size()), static_cast<Eigen::Index>(dim_));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            const Point p = point(ids[i]);
            std::copy(p.begin(), p.end(), block.data() + i * dim_);
        }
        return block;
    }

    PointBlock level_points(int level) const { return gather(level_nodes(level)); }

    TreeStats stats() const {
        TreeStats s;
        s.samples_seen = samples_seen_;
        s.discarded_damped = discarded_damped_;
        s.discarded_duplicate = discarded_duplicate_;
        s.root_overflow = root_overflow_;
        s.bypassed = bypassed_;
        if (nodes_.empty()) return s;
        std::vector<NodeId> stack{0};
        while (!stack.empty()) {
            const NodeId id = stack.back();
            stack.pop_back();
            const DctNode& n = nodes_[id];
            if (static_cast<int>(s.levels.size()) <= n.level) s.levels.resize(n.level + 1);
            LevelStats& ls = s.levels[n.level];
            ++ls.nodes;
            if (n.cover_fraction >= params_.d_cf) ++ls.eligible;
            if (ls.children_histogram.size() <= n.children.size()) ls.children_histogram.resize(n.children.size() + 1, 0);
            ++ls.children_histogram[n.children.size()];
            ++s.total_nodes;
            for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
        }
        for (std::size_t l = 0; l < s.levels.size(); ++l) s.levels[l].level_cover_fraction = level_cover_fraction(static_cast<int>(l));
        s.depth = static_cast<int>(s.levels.size()) - 1;
        return s;
    }

    // Binary layout: "SMRT", version u32, dim u32, r0 f64, node count u64, then nodes in
    // pre-order as (level u16, cover_fraction f64, child count u32, point f64 x dim).
    static constexpr std::uint32_t kFormatVersion = 1;

    void write(std::ostream& os) const {
        io::Writer w(os);
        w.magic("SMRT");
        w.put<std::uint32_t>(kFormatVersion);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(dim_));
        w.put<double>(r0_.value());
        w.put<std::uint64_t>(nodes_.size());
        if (nodes_.empty()) return;
        std::vector<NodeId> stack{0};
        while (!stack.empty()) {
            const NodeId id = stack.back();
            stack.pop_back();
            const DctNode& n = nodes_[id];
            w.put<std::uint16_t>(static_cast<std::uint16_t>(n.level));
            w.put<double>(n.cover_fraction);
            w.put<std::uint32_t>(static_cast<std::uint32_t>(n.children.size()));
            w.doubles(points_.data() + std::size_t{id} * dim_, dim_);
            for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
        }
    }

    /// Structure, points and node cover fractions are restored; counters and level fractions are not.
    static DampedCoverTree read(std::istream& is, DctParams params = {}) {
        io::Reader r(is);
        r.expect_magic("SMRT");
        const auto version = r.get<std::uint32_t>();
        if (version != kFormatVersion) r.fail("unsupported tree format version " + std::to_string(version), 4);
        const auto dim = r.get<std::uint32_t>();
        if (dim == 0) r.fail("zero dimension", 8);
        const auto r0_at = r.offset();
        const double r0 = r.get<double>();
        if (!(r0 > 0.0) || !std::isfinite(r0)) r.fail("invalid r0", r0_at);
        const auto count = r.get<std::uint64_t>();
        if (count >= kNoNode) r.fail("node count too large", r.offset() - 8);
        DampedCoverTree tree(dim, Bandwidth(r0), params);
        if (count == 0) return tree;
        // (node, children still to read)
        std::vector<std::pair<NodeId, std::uint32_t>> open;
        std::vector<double> p(dim);
        for (std::uint64_t i = 0; i < count; ++i) {
            const auto at = r.offset();
            const auto level = r.get<std::uint16_t>();
            const double cf = r.get<double>();
            const auto nchild = r.get<std::uint32_t>();
            r.doubles(p.data(), dim);
            NodeId parent = kNoNode;
            if (i == 0) {
                if (level != 0) r.fail("root record has level " + std::to_string(level), at);
            } else {
                while (!open.empty() && open.back().second == 0) open.pop_back();
                if (open.empty()) r.fail("node record without a parent", at);
                parent = open.back().first;
                --open.back().second;
                if (level != tree.nodes_[parent].level + 1)
                    r.fail("child level " + std::to_string(level) + " under parent level " +
                               std::to_string(tree.nodes_[parent].level), at);
            }
            if (!(cf >= 0.0 && cf <= 1.0)) r.fail("cover fraction outside [0,1]", at + 2);
            const NodeId id = tree.add_node(Point(p.data(), dim), parent, level);
            tree.nodes_[id].cover_fraction = cf;
            open.emplace_back(id, nchild);
        }
        while (!open.empty() && open.back().second == 0) open.pop_back();
        if (!open.empty()) r.fail("tree records end before all children were read", r.offset());
        tree.samples_seen_ = count;
        return tree;
    }

private:
    NodeId add_node(Point x, NodeId parent, int level) {
        const auto id = static_cast<NodeId>(nodes_.size());
        if (id == kNoNode) throw StateError("node capacity exhausted");
        DctNode n;
        n.parent = parent;
        n.level = level;
        nodes_.push_back(std::move(n));
        points_.insert(points_.end(), x.begin(), x.end());
        if (parent != kNoNode) nodes_[parent].children.push_back(id);
        if (static_cast<int>(level_nodes_.size()) <= level) level_nodes_.resize(level + 1);
        level_nodes_[level].push_back(id);
        return id;
    }

    InsertOutcome& add_child(InsertOutcome& out, Point x, NodeId p, int level) {
        out.node = add_node(x, p, level);
        out.parent = p;
        out.level = level;
        out.disposition = Disposition::AddedAtLevel;
        update_cover_fraction(p, false);
        return out;
    }

    InsertOutcome& duplicate(InsertOutcome& out, int level, std::size_t path) {
        ++discarded_duplicate_;
        out.disposition = Disposition::DiscardedDuplicate;
        out.level = level;
        out.path_length = path;
        return out;
    }

    // Level-wide indicator "x lies within r_l of some level-l node", exact for every populated
    // level plus the next empty one. A level-l node within r_l of x has its level-k ancestor
    // within 2 r_k, so only children of such candidates need examining.
    void track_level_coverage(Point x) {
        const int levels = static_cast<int>(level_nodes_.size());
        frontier_.assign(1, 0);
        for (int k = 0; k <= levels; ++k) {
            bool covered = false;
            if (k < levels && !frontier_.empty()) {
                const double rk = radius(k).value();
                const double rk1 = radius(k + 1).value();
                next_.clear();
                for (NodeId id : frontier_) {
                    if (!covered && squared_distance(x, point(id)) < rk * rk) covered = true;
                    for (NodeId c : nodes_[id].children) {
                        if (squared_distance(x, point(c)) < 4.0 * rk1 * rk1) next_.push_back(c);
                    }
                }
                frontier_.swap(next_);
            }
            update_level_cover_fraction(k, covered);
        }
    }

    std::size_t dim_;
    Bandwidth r0_;
    DctParams params_;
    Rng rng_;
    std::vector<DctNode> nodes_;
    std::vector<double> points_;
    std::vector<std::vector<NodeId>> level_nodes_;
    std::vector<double> level_cf_;
    std::uint64_t samples_seen_ = 0;
    std::uint64_t discarded_damped_ = 0;
    std::uint64_t discarded_duplicate_ = 0;
    std::uint64_t root_overflow_ = 0;
    std::uint64_t bypassed_ = 0;
    std::vector<NodeId> frontier_, next_;
};

}  // namespace streamrak
