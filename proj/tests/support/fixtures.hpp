#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "deftime/filtration.hpp"
#include "deftime/im_family.hpp"

namespace fixtures {

using namespace deftime;

/// Two-step binomial tree, p = 1/2 everywhere; leaves uu, ud, du, dd.
inline ScenarioTree t2_tree() {
    return build_tree(product_spec({0.0, 1.0, 2.0}, {{0.5, 0.5}, {0.5, 0.5}}, {{"u", "d"}, {"u", "d"}}));
}

/// tau(uu) = inf, tau(ud) = 2, tau(du) = 1, tau(dd) = 2.
inline RandomTime t2_tau(const ScenarioTree& tree) {
    RandomTime tau;
    tau.index.resize(tree.num_leaves());
    const std::size_t inf = tree.grid().infinity();
    for (std::size_t l = 0; l < tree.num_leaves(); ++l) {
        const auto& s = tree.leaf_label(l);
        tau.index[l] = s == "uu" ? inf : (s == "du" ? 1 : 2);
    }
    return tau;
}

inline std::size_t leaf(const ScenarioTree& tree, const std::string& label) { return *tree.find_leaf(label); }
inline std::size_t node(const ScenarioTree& tree, std::size_t k, const std::string& label) {
    return *tree.find_node(k, label);
}

/// Single path on three dates.
inline ScenarioTree d3_tree() {
    TreeSpec s;
    s.times = {0.0, 1.0, 2.0};
    s.root = NodeSpec{"", 1.0, {NodeSpec{"a", 1.0, {NodeSpec{"b", 1.0, {}}}}}};
    return build_tree(s);
}

/// A = (0, .3, .6), remaining .4 at infinity.
inline IncreasingProcess d3_A(const ScenarioTree& tree) {
    AdaptedProcess A(tree);
    A(1, 0) = 0.3;
    A(2, 0) = 0.6;
    return extend_to_one(tree, A);
}

/// Deterministic survival 1 - A on any tree with three levels.
inline AdaptedProcess deterministic_survival(const ScenarioTree& tree, const std::vector<double>& a) {
    AdaptedProcess Z(tree);
    for (std::size_t k = 0; k < tree.num_levels(); ++k)
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) Z(k, i) = 1.0 - a[k];
    return Z;
}

}  // namespace fixtures
