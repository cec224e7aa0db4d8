#pragma once

// Finite filtrations as refining partition trees, with exact conditional
// expectations, the Doob-Meyer decomposition and dual projections.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "deftime/errors.hpp"

namespace deftime {

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

/// Tolerance of the supermartingale test and of the Doob-Meyer uniqueness check.
inline constexpr double kSupermartingaleTol = 1e-12;
/// Masses and increments below this are treated as zero.
inline constexpr double kNullMass = 1e-14;

/// Strictly increasing time points t_0 = 0 < t_1 < ... < t_n, plus the
/// sentinel point at infinity. Grid index n+1 denotes infinity.
class TimeGrid {
public:
    TimeGrid() = default;

    /// `horizon` is the index playing the role of T: levels k < horizon form
    /// [0,T). Omitted means T = infinity (all finite levels).
    explicit TimeGrid(std::vector<double> times, std::optional<std::size_t> horizon = std::nullopt)
        : times_(std::move(times)) {
        if (times_.empty()) throw InvalidSpec("time grid is empty");
        if (times_.front() != 0.0) throw InvalidSpec("time grid must start at 0");
        for (std::size_t i = 1; i < times_.size(); ++i) {
            if (!(times_[i] > times_[i - 1])) throw InvalidSpec("time grid must be strictly increasing");
        }
        horizon_ = horizon.value_or(times_.size());
        if (horizon_ > times_.size()) throw InvalidSpec("horizon index out of range");
    }

    /// Number of finite grid points (= number of tree levels).
    [[nodiscard]] std::size_t size() const noexcept { return times_.size(); }
    /// Index of the last finite level.
    [[nodiscard]] std::size_t last() const noexcept { return times_.size() - 1; }
    /// Grid index standing for u = infinity.
    [[nodiscard]] std::size_t infinity() const noexcept { return times_.size(); }
    /// Number of points on the u axis, infinity included.
    [[nodiscard]] std::size_t u_size() const noexcept { return times_.size() + 1; }
    [[nodiscard]] std::size_t horizon() const noexcept { return horizon_; }
    [[nodiscard]] double time(std::size_t u) const { return u >= times_.size() ? kInfinity : times_.at(u); }
    [[nodiscard]] const std::vector<double>& times() const noexcept { return times_; }

private:
    std::vector<double> times_{0.0};
    std::size_t horizon_ = 1;
};

/// One atom of F_{t_k}. Leaves covered by a node form a contiguous range.
struct TreeNode {
    std::size_t parent = 0;
    std::size_t first_leaf = 0;
    std::size_t end_leaf = 0;
    std::size_t first_child = 0;
    std::size_t end_child = 0;
    double mass = 0.0;
    std::string label;
};

/// A finite filtered probability space. Leaves are the atoms of Omega; level k
/// holds the partition generating F_{t_k}. The last level may be coarser than
/// the leaves, in which case part of the randomness is never revealed.
class ScenarioTree {
public:
    ScenarioTree() = default;

    ScenarioTree(TimeGrid grid, std::vector<std::vector<TreeNode>> levels, std::vector<double> leaf_mass,
                 std::vector<std::string> leaf_label)
        : grid_(std::move(grid)), levels_(std::move(levels)), leaf_mass_(std::move(leaf_mass)),
          leaf_label_(std::move(leaf_label)) {
        validate();
        leaf_node_.assign(levels_.size(), std::vector<std::size_t>(leaf_mass_.size(), 0));
        for (std::size_t k = 0; k < levels_.size(); ++k) {
            for (std::size_t i = 0; i < levels_[k].size(); ++i) {
                for (std::size_t l = levels_[k][i].first_leaf; l < levels_[k][i].end_leaf; ++l) leaf_node_[k][l] = i;
            }
        }
    }

    [[nodiscard]] const TimeGrid& grid() const noexcept { return grid_; }
    [[nodiscard]] std::size_t num_levels() const noexcept { return levels_.size(); }
    [[nodiscard]] std::size_t last_level() const noexcept { return levels_.size() - 1; }
    [[nodiscard]] std::size_t num_nodes(std::size_t k) const { return levels_.at(k).size(); }
    [[nodiscard]] std::size_t num_leaves() const noexcept { return leaf_mass_.size(); }
    [[nodiscard]] const TreeNode& node(std::size_t k, std::size_t i) const { return levels_.at(k).at(i); }
    [[nodiscard]] const std::vector<TreeNode>& level(std::size_t k) const { return levels_.at(k); }
    [[nodiscard]] double leaf_mass(std::size_t leaf) const { return leaf_mass_.at(leaf); }
    [[nodiscard]] const std::vector<double>& leaf_masses() const noexcept { return leaf_mass_; }
    [[nodiscard]] const std::string& leaf_label(std::size_t leaf) const { return leaf_label_.at(leaf); }
    /// Index of the level-k node containing `leaf`.
    [[nodiscard]] std::size_t node_of(std::size_t k, std::size_t leaf) const { return leaf_node_[k][leaf]; }
    /// Level-j ancestor of node i at level k (j <= k).
    [[nodiscard]] std::size_t ancestor(std::size_t k, std::size_t i, std::size_t j) const {
        return leaf_node_[j][levels_[k][i].first_leaf];
    }

    [[nodiscard]] std::optional<std::size_t> find_leaf(const std::string& label) const {
        for (std::size_t l = 0; l < leaf_label_.size(); ++l)
            if (leaf_label_[l] == label) return l;
        return std::nullopt;
    }
    [[nodiscard]] std::optional<std::size_t> find_node(std::size_t k, const std::string& label) const {
        for (std::size_t i = 0; i < levels_.at(k).size(); ++i)
            if (levels_[k][i].label == label) return i;
        return std::nullopt;
    }

private:
    void validate() const {
        if (levels_.size() != grid_.size()) throw InvalidSpec("tree depth does not match the time grid");
        if (levels_[0].size() != 1) throw InvalidSpec("level 0 must hold a single node");
        if (std::abs(levels_[0][0].mass - 1.0) > 1e-9) throw InvalidSpec("root mass must be 1");
        for (std::size_t k = 0; k < levels_.size(); ++k) {
            std::size_t expected_first = 0;
            for (const auto& n : levels_[k]) {
                if (!(n.mass > 0.0)) throw InvalidSpec("node masses must be positive");
                if (n.first_leaf != expected_first || n.end_leaf <= n.first_leaf)
                    throw InvalidSpec("level does not partition the leaves");
                double s = 0.0;
                for (std::size_t l = n.first_leaf; l < n.end_leaf; ++l) s += leaf_mass_.at(l);
                if (std::abs(s - n.mass) > 1e-9) throw InvalidSpec("node mass differs from its leaves");
                expected_first = n.end_leaf;
                if (k > 0) {
                    const auto& p = levels_[k - 1].at(n.parent);
                    if (n.first_leaf < p.first_leaf || n.end_leaf > p.end_leaf)
                        throw InvalidSpec("level does not refine its predecessor");
                }
            }
            if (expected_first != leaf_mass_.size()) throw InvalidSpec("level does not cover every leaf");
        }
    }

    TimeGrid grid_;
    std::vector<std::vector<TreeNode>> levels_;
    std::vector<double> leaf_mass_;
    std::vector<std::string> leaf_label_;
    std::vector<std::vector<std::size_t>> leaf_node_;
};

/// Recursive description of a tree: conditional branch probabilities and labels.
/// A node at the last level may still carry children; those are leaves of
/// Omega that the filtration never separates.
struct NodeSpec {
    std::string label;
    double prob = 1.0;
    std::vector<NodeSpec> children;
};

struct TreeSpec {
    std::vector<double> times;
    std::optional<std::size_t> horizon;
    NodeSpec root;
};

namespace detail {

inline void build_recursive(const NodeSpec& spec, std::size_t depth, std::size_t parent, double mass,
                            const std::string& label, std::size_t n, std::vector<std::vector<TreeNode>>& levels,
                            std::vector<double>& leaf_mass, std::vector<std::string>& leaf_label) {
    if (depth > n) {
        leaf_mass.push_back(mass);
        leaf_label.push_back(label);
        return;
    }
    const std::size_t index = levels[depth].size();
    TreeNode node;
    node.parent = parent;
    node.mass = mass;
    node.label = label;
    node.first_leaf = leaf_mass.size();
    levels[depth].push_back(node);

    if (spec.children.empty()) {
        if (depth < n) throw InvalidSpec("branch '" + label + "' ends before the last level");
        leaf_mass.push_back(mass);
        leaf_label.push_back(label);
    } else {
        double total = 0.0;
        for (const auto& c : spec.children) {
            if (!(c.prob > 0.0)) throw InvalidSpec("branch probabilities must be positive at '" + label + "'");
            total += c.prob;
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw InvalidSpec("children of '" + label + "' carry total probability " + std::to_string(total));
        if (depth < n) levels[depth].at(index).first_child = levels[depth + 1].size();
        for (const auto& c : spec.children) {
            build_recursive(c, depth + 1, index, mass * c.prob / total, label + c.label, n, levels, leaf_mass,
                            leaf_label);
        }
        if (depth < n) levels[depth].at(index).end_child = levels[depth + 1].size();
    }
    levels[depth].at(index).end_leaf = leaf_mass.size();
}

}  // namespace detail

/// Validates a tree description and builds the immutable tree.
inline ScenarioTree build_tree(const TreeSpec& spec) {
    TimeGrid grid(spec.times, spec.horizon);
    const std::size_t n = grid.last();
    std::vector<std::vector<TreeNode>> levels(grid.size());
    std::vector<double> leaf_mass;
    std::vector<std::string> leaf_label;
    detail::build_recursive(spec.root, 0, 0, 1.0, spec.root.label, n, levels, leaf_mass, leaf_label);
    // Node masses were accumulated as products; recompute them from the leaves.
    for (auto& level : levels)
        for (auto& node : level) {
            double s = 0.0;
            for (std::size_t l = node.first_leaf; l < node.end_leaf; ++l) s += leaf_mass[l];
            node.mass = s;
        }
    return ScenarioTree(std::move(grid), std::move(levels), std::move(leaf_mass), std::move(leaf_label));
}

/// Independent branching: `branch_probs[k]` are the conditional probabilities
/// of the step from level k to k+1, identical at every node. `hidden_probs`
/// optionally splits every terminal node into unrevealed leaves.
inline TreeSpec product_spec(std::vector<double> times, const std::vector<std::vector<double>>& branch_probs,
                             const std::vector<std::vector<std::string>>& branch_labels = {},
                             const std::vector<double>& hidden_probs = {},
                             const std::vector<std::string>& hidden_labels = {}) {
    if (branch_probs.size() + 1 != times.size()) throw InvalidSpec("branching does not match the grid");
    auto label_of = [](const std::vector<std::vector<std::string>>& labels, std::size_t k, std::size_t j) {
        if (k < labels.size() && j < labels[k].size()) return labels[k][j];
        return std::to_string(j);
    };
    std::vector<NodeSpec> layer;
    for (std::size_t j = 0; j < hidden_probs.size(); ++j) {
        layer.push_back(NodeSpec{j < hidden_labels.size() ? hidden_labels[j] : "#" + std::to_string(j),
                                 hidden_probs[j],
                                 {}});
    }
    for (std::size_t kk = branch_probs.size(); kk-- > 0;) {
        std::vector<NodeSpec> next;
        for (std::size_t j = 0; j < branch_probs[kk].size(); ++j) {
            next.push_back(NodeSpec{label_of(branch_labels, kk, j), branch_probs[kk][j], layer});
        }
        layer = std::move(next);
    }
    TreeSpec spec;
    spec.times = std::move(times);
    spec.root = NodeSpec{"", 1.0, std::move(layer)};
    return spec;
}

/// Values of an F-adapted process: one real per (level, node).
struct AdaptedProcess {
    std::vector<std::vector<double>> values;

    AdaptedProcess() = default;
    explicit AdaptedProcess(const ScenarioTree& tree, double fill = 0.0) {
        values.resize(tree.num_levels());
        for (std::size_t k = 0; k < tree.num_levels(); ++k) values[k].assign(tree.num_nodes(k), fill);
    }

    [[nodiscard]] double operator()(std::size_t k, std::size_t node) const { return values[k][node]; }
    double& operator()(std::size_t k, std::size_t node) { return values[k][node]; }
    [[nodiscard]] std::size_t levels() const noexcept { return values.size(); }
    /// Value seen on `leaf` at level k.
    [[nodiscard]] double at_leaf(const ScenarioTree& tree, std::size_t k, std::size_t leaf) const {
        return values[k][tree.node_of(k, leaf)];
    }
};

/// Raw (non-adapted) process: one real per (level, leaf).
using PathFamily = std::vector<std::vector<double>>;

/// A random time valued in the grid or at infinity, one grid index per leaf.
struct RandomTime {
    std::vector<std::size_t> index;

    [[nodiscard]] std::size_t operator[](std::size_t leaf) const { return index[leaf]; }
    /// The stopped value tau -|- t_k: tau if tau <= t_k, infinity otherwise.
    [[nodiscard]] std::size_t stopped(const TimeGrid& grid, std::size_t leaf, std::size_t k) const {
        return index[leaf] <= k ? index[leaf] : grid.infinity();
    }
};

/// A nondecreasing adapted process together with its value at infinity,
/// which is measurable with respect to the terminal information.
struct IncreasingProcess {
    AdaptedProcess values;
    std::vector<double> at_infinity;  // per leaf

    /// Increment at grid index u (u = infinity allowed) seen on `leaf`. A_{0-} = 0.
    [[nodiscard]] double increment(const ScenarioTree& tree, std::size_t u, std::size_t leaf) const {
        const std::size_t n = tree.last_level();
        if (u > n) return at_infinity[leaf] - values.at_leaf(tree, n, leaf);
        const double prev = u == 0 ? 0.0 : values.at_leaf(tree, u - 1, leaf);
        return values.at_leaf(tree, u, leaf) - prev;
    }
    /// Increment at grid index u <= k seen from node i at level k.
    [[nodiscard]] double increment_at(const ScenarioTree& tree, std::size_t k, std::size_t i, std::size_t u) const {
        const std::size_t a = tree.ancestor(k, i, u);
        const double prev = u == 0 ? 0.0 : values(u - 1, tree.ancestor(k, i, u - 1));
        return values(u, a) - prev;
    }
};

/// Extends a nondecreasing process to [0,infinity] with A_infinity = 1.
inline IncreasingProcess extend_to_one(const ScenarioTree& tree, AdaptedProcess A) {
    const std::size_t n = tree.last_level();
    for (std::size_t i = 0; i < tree.num_nodes(n); ++i)
        if (A(n, i) > 1.0 + 1e-12) throw BadNormalization("process exceeds 1 before infinity");
    return IncreasingProcess{std::move(A), std::vector<double>(tree.num_leaves(), 1.0)};
}

// ---------------------------------------------------------------------------
// Conditional expectations

/// E[X | F_{t_k}] for a leaf-indexed X, one value per level-k node.
inline std::vector<double> cond_expect(const ScenarioTree& tree, std::span<const double> leaf_values,
                                       std::size_t k) {
    if (leaf_values.size() != tree.num_leaves()) throw LevelMismatch("leaf vector has the wrong size");
    if (k >= tree.num_levels()) throw LevelMismatch("level out of range");
    std::vector<double> out(tree.num_nodes(k), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const auto& n = tree.node(k, i);
        double s = 0.0;
        for (std::size_t l = n.first_leaf; l < n.end_leaf; ++l) s += tree.leaf_mass(l) * leaf_values[l];
        out[i] = s / n.mass;
    }
    return out;
}

/// E[X | F_{t_k}] for X measurable at level s >= k (one value per level-s node).
inline std::vector<double> cond_expect(const ScenarioTree& tree, std::span<const double> level_values,
                                       std::size_t s, std::size_t k) {
    if (s >= tree.num_levels() || k > s) throw LevelMismatch("conditioning level above the data level");
    if (level_values.size() != tree.num_nodes(s)) throw LevelMismatch("level vector has the wrong size");
    std::vector<double> out(tree.num_nodes(k), 0.0);
    for (std::size_t j = 0; j < tree.num_nodes(s); ++j) {
        const std::size_t a = tree.ancestor(s, j, k);
        out[a] += tree.node(s, j).mass * level_values[j];
    }
    for (std::size_t i = 0; i < out.size(); ++i) out[i] /= tree.node(k, i).mass;
    return out;
}

/// Expands level-k node values to leaves.
inline std::vector<double> to_leaves(const ScenarioTree& tree, std::span<const double> level_values, std::size_t k) {
    std::vector<double> out(tree.num_leaves());
    for (std::size_t l = 0; l < out.size(); ++l) out[l] = level_values[tree.node_of(k, l)];
    return out;
}

/// Projects a raw path family onto the filtration level by level.
inline AdaptedProcess optional_projection(const ScenarioTree& tree, const PathFamily& raw) {
    AdaptedProcess out(tree);
    for (std::size_t k = 0; k < tree.num_levels(); ++k) out.values[k] = cond_expect(tree, raw.at(k), k);
    return out;
}

/// max |E[X_{k+1} | F_k] - X_k| over nodes and levels k >= from.
inline double martingale_defect(const ScenarioTree& tree, const AdaptedProcess& X, std::size_t from = 0) {
    double worst = 0.0;
    for (std::size_t k = from; k + 1 < tree.num_levels(); ++k) {
        auto e = cond_expect(tree, X.values[k + 1], k + 1, k);
        for (std::size_t i = 0; i < e.size(); ++i) worst = std::max(worst, std::abs(e[i] - X(k, i)));
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Doob-Meyer decomposition

/// Z = M - A with M a martingale and A predictable nondecreasing, A_0 = 0.
struct Decomposition {
    AdaptedProcess Z;
    AdaptedProcess M;
    AdaptedProcess A;

    [[nodiscard]] double dA(const ScenarioTree& tree, std::size_t k, std::size_t i) const {
        return k == 0 ? A(0, i) : A(k, i) - A(k - 1, tree.node(k, i).parent);
    }
    [[nodiscard]] double dM(const ScenarioTree& tree, std::size_t k, std::size_t i) const {
        return k == 0 ? 0.0 : M(k, i) - M(k - 1, tree.node(k, i).parent);
    }
    /// Predictable projection of 1 - Z at level k >= 1: 1 - Z_{k-1} + dA_k.
    [[nodiscard]] double predictable_one_minus_z(const ScenarioTree& tree, std::size_t k, std::size_t i) const {
        return 1.0 - Z(k - 1, tree.node(k, i).parent) + dA(tree, k, i);
    }
    /// The compensator as an increasing process extended by A_infinity = 1.
    [[nodiscard]] IncreasingProcess compensator(const ScenarioTree& tree) const { return extend_to_one(tree, A); }
};

inline Decomposition doob_meyer(const ScenarioTree& tree, const AdaptedProcess& Z,
                                double tol = kSupermartingaleTol) {
    if (Z.levels() != tree.num_levels()) throw LevelMismatch("process does not span the tree");
    Decomposition d{Z, AdaptedProcess(tree), AdaptedProcess(tree)};
    d.M.values[0] = Z.values[0];
    for (std::size_t k = 1; k < tree.num_levels(); ++k) {
        auto e = cond_expect(tree, Z.values[k], k, k - 1);
        for (std::size_t p = 0; p < e.size(); ++p) {
            const double dA = Z(k - 1, p) - e[p];
            if (dA < -tol) throw NotSupermartingale(k, p, -dA);
            const auto& parent = tree.node(k - 1, p);
            for (std::size_t c = parent.first_child; c < parent.end_child; ++c) {
                d.A(k, c) = d.A(k - 1, p) + dA;
                d.M(k, c) = Z(k, c) + d.A(k, c);
            }
        }
    }
    return d;
}

// ---------------------------------------------------------------------------
// Dual projections

enum class ProjectionMode { optional, predictable };

/// Dual projection of a leaf-indexed cumulative path family. Optional mode
/// conditions each increment on F_k, predictable mode on F_{k-1}.
/// With `require_increasing` false the input may be any finite-variation path.
inline AdaptedProcess dual_projection(const ScenarioTree& tree, const PathFamily& raw, ProjectionMode mode,
                                      bool require_increasing = true) {
    if (raw.size() != tree.num_levels()) throw LevelMismatch("path family does not span the tree");
    if (require_increasing) {
        for (std::size_t k = 0; k < raw.size(); ++k)
            for (std::size_t l = 0; l < tree.num_leaves(); ++l) {
                if ((k == 0 && raw[0][l] < -1e-15) || (k > 0 && raw[k][l] < raw[k - 1][l] - 1e-15))
                    throw NotIncreasing("raw path decreases at level " + std::to_string(k));
            }
    }
    AdaptedProcess out(tree);
    out.values[0] = cond_expect(tree, raw[0], 0);
    for (std::size_t k = 1; k < tree.num_levels(); ++k) {
        std::vector<double> inc(tree.num_leaves());
        for (std::size_t l = 0; l < inc.size(); ++l) inc[l] = raw[k][l] - raw[k - 1][l];
        if (mode == ProjectionMode::optional) {
            auto e = cond_expect(tree, inc, k);
            for (std::size_t i = 0; i < e.size(); ++i) out(k, i) = out(k - 1, tree.node(k, i).parent) + e[i];
        } else {
            auto e = cond_expect(tree, inc, k - 1);
            for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
                const std::size_t p = tree.node(k, i).parent;
                out(k, i) = out(k - 1, p) + e[p];
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// First zero of a nonnegative supermartingale

struct FirstZeroReport {
    bool pass = true;
    std::size_t checked = 0;  // number of (level, node) pairs where Y_{k-1} = Y_k = 0
    std::optional<std::pair<std::size_t, std::size_t>> offending;  // (level, node)
};

/// At every node where a nonnegative supermartingale is 0 after having been 0
/// one level earlier, its compensator must not move.
inline FirstZeroReport check_first_zero(const ScenarioTree& tree, const AdaptedProcess& Y) {
    for (const auto& level : Y.values)
        for (double v : level)
            if (v < -kSupermartingaleTol) throw NotSupermartingale(0, 0, -v);
    const auto d = doob_meyer(tree, Y);
    FirstZeroReport r;
    constexpr double zero = 1e-15;
    for (std::size_t k = 1; k < tree.num_levels(); ++k) {
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
            const std::size_t p = tree.node(k, i).parent;
            if (std::abs(Y(k, i)) > zero || std::abs(Y(k - 1, p)) > zero) continue;
            ++r.checked;
            if (std::abs(d.dA(tree, k, i)) > kSupermartingaleTol && r.pass) {
                r.pass = false;
                r.offending = std::make_pair(k, i);
            }
        }
    }
    return r;
}

}  // namespace deftime
