#pragma once

// Randomized small trees with random times: at most 4 levels and 16 leaves.

#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "deftime/change_of_variable.hpp"
#include "deftime/filtration.hpp"
#include "deftime/im_family.hpp"

namespace corpus {

using namespace deftime;

struct Case {
    ScenarioTree tree;
    RandomTime tau;
    bool cox = false;  // time realized from an increasing process
    std::uint64_t seed = 0;
};

namespace detail {

inline NodeSpec random_node(std::mt19937_64& rng, std::size_t depth, std::size_t last, bool hidden,
                            const std::string& label, double prob) {
    NodeSpec n{label, prob, {}};
    std::size_t branches = 0;
    if (depth < last) branches = std::uniform_int_distribution<std::size_t>(1, 3)(rng);
    else if (hidden) branches = std::uniform_int_distribution<std::size_t>(0, 2)(rng);
    if (branches == 1 && depth >= last) branches = 0;
    std::vector<double> w(branches);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    double s = 0.0;
    for (auto& x : w) s += (x = u(rng));
    for (std::size_t j = 0; j < branches; ++j)
        n.children.push_back(random_node(rng, depth + 1, last, hidden, std::string(1, char('a' + j)), w[j] / s));
    return n;
}

inline std::size_t count_leaves(const NodeSpec& n) {
    if (n.children.empty()) return 1;
    std::size_t c = 0;
    for (const auto& ch : n.children) c += count_leaves(ch);
    return c;
}

inline ScenarioTree random_tree(std::mt19937_64& rng, std::size_t max_leaves) {
    for (;;) {
        const std::size_t levels = std::uniform_int_distribution<std::size_t>(2, 4)(rng);
        const bool hidden = std::bernoulli_distribution(0.3)(rng);
        TreeSpec s;
        for (std::size_t k = 0; k < levels; ++k) s.times.push_back(static_cast<double>(k));
        s.root = random_node(rng, 0, levels - 1, hidden, "", 1.0);
        if (count_leaves(s.root) <= max_leaves) return build_tree(s);
    }
}

}  // namespace detail

/// Random nondecreasing adapted process, A_0 = 0 and A < 1.
inline IncreasingProcess random_increasing(std::mt19937_64& rng, const ScenarioTree& tree) {
    AdaptedProcess A(tree);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t k = 1; k < tree.num_levels(); ++k)
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
            const double prev = A(k - 1, tree.node(k, i).parent);
            // Some steps carry no atom at all.
            const double step = u(rng) < 0.25 ? 0.0 : u(rng) * (0.95 - prev) * 0.6;
            A(k, i) = prev + step;
        }
    return extend_to_one(tree, A);
}

inline Case make_case(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Case c;
    c.seed = seed;
    c.cox = std::bernoulli_distribution(0.3)(rng);
    if (c.cox) {
        const auto base = detail::random_tree(rng, 4);
        auto r = realize_cox(base, random_increasing(rng, base));
        c.tree = std::move(r.tree);
        c.tau = std::move(r.tau);
        return c;
    }
    c.tree = detail::random_tree(rng, 16);
    const std::size_t n = c.tree.last_level();
    std::uniform_int_distribution<std::size_t> pick(1, n + 1);  // n + 1 is infinity
    c.tau.index.resize(c.tree.num_leaves());
    for (auto& t : c.tau.index) t = pick(rng);
    return c;
}

inline std::vector<Case> make(std::size_t count = 200, std::uint64_t seed = 20240611) {
    std::vector<Case> out;
    out.reserve(count);
    for (std::size_t j = 0; j < count; ++j) out.push_back(make_case(seed + 7919 * j));
    return out;
}

/// Compensator of the Azema supermartingale, renormalised when it reaches 1.
inline IncreasingProcess reference_A(const ScenarioTree& tree, const Decomposition& d) {
    const std::size_t n = tree.last_level();
    double top = 0.0;
    for (std::size_t i = 0; i < tree.num_nodes(n); ++i) top = std::max(top, d.A(n, i));
    if (top < 1.0 - 1e-9) return d.compensator(tree);
    return normalize_A(tree, d.A).A;
}

}  // namespace corpus
