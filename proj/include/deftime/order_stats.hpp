#pragma once

// Order statistics of several random times: ranking maps, the
// inclusion-exclusion law of the i-th smallest time, and its density with
// respect to a common increasing process.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <vector>

#include "deftime/copula.hpp"
#include "deftime/errors.hpp"
#include "deftime/filtration.hpp"
#include "deftime/im_family.hpp"

namespace deftime {

inline constexpr std::size_t kMaxOrderDimension = 6;

/// Ranks with ties broken by index: rank[i] in 1..k, rho[r-1] the index of rank r.
struct RankMap {
    std::vector<double> values;
    std::vector<std::size_t> rank;
    std::vector<std::size_t> rho;
    std::vector<double> sorted;
};

inline RankMap order_stats(const std::vector<double>& a) {
    const std::size_t k = a.size();
    if (k == 0) throw InvalidSpec("order statistics need at least one value");
    RankMap r{a, std::vector<std::size_t>(k), std::vector<std::size_t>(k), std::vector<double>(k)};
    for (std::size_t i = 0; i < k; ++i) {
        std::size_t R = 1;
        for (std::size_t j = 0; j < k; ++j) R += (a[j] < a[i]) + (j < i && a[j] == a[i]);
        r.rank[i] = R;
        r.rho[R - 1] = i;
    }
    for (std::size_t q = 0; q < k; ++q) r.sorted[q] = a[r.rho[q]];
    return r;
}

/// coef[J] = sum over nonempty S of i-subsets with union J of (-1)^(1+|S|),
/// so that Q[sigma_i <= u] = sum_J coef[J] Q[B_J].
inline std::vector<int> inclusion_exclusion_coefficients(std::size_t k, std::size_t i) {
    if (k > kMaxOrderDimension) throw CombinatorialOverflow("at most " + std::to_string(kMaxOrderDimension) + " times");
    if (i == 0 || i > k) throw InvalidSpec("order index out of range");
    static std::map<std::pair<std::size_t, std::size_t>, std::vector<int>> cache;
    static std::mutex lock;
    std::lock_guard<std::mutex> guard(lock);
    if (auto it = cache.find({k, i}); it != cache.end()) return it->second;
    std::vector<unsigned> subsets;
    for (unsigned J = 0; J < (1u << k); ++J)
        if (static_cast<std::size_t>(__builtin_popcount(J)) == i) subsets.push_back(J);
    std::vector<int> coef(1u << k, 0);
    const std::uint64_t count = std::uint64_t{1} << subsets.size();
    for (std::uint64_t S = 1; S < count; ++S) {
        unsigned J = 0;
        int size = 0;
        for (std::size_t b = 0; b < subsets.size(); ++b)
            if (S & (std::uint64_t{1} << b)) {
                J |= subsets[b];
                ++size;
            }
        coef[J] += size % 2 ? 1 : -1;
    }
    cache.emplace(std::make_pair(k, i), coef);
    return coef;
}

/// k iM families coupled by a copula given F_T, differentiable against a common A.
struct JointModel {
    std::vector<IMFamily> marginals;
    std::shared_ptr<Copula> copula;
    IncreasingProcess A;
    std::size_t horizon = 0;  // level playing T

    [[nodiscard]] std::size_t k() const { return marginals.size(); }
    /// Marginal distribution values M^{j,u}_T at a horizon node.
    [[nodiscard]] std::vector<double> at(std::size_t u, std::size_t node) const {
        std::vector<double> x(k());
        for (std::size_t j = 0; j < x.size(); ++j) x[j] = marginals[j](u, horizon, node);
        return x;
    }
};

/// Q[B_J | F_t] = E[C_J(M^{., u}_T) | F_t] for every J, per node at level t.
inline std::vector<std::vector<double>> joint_default_probabilities(const ScenarioTree& tree, const JointModel& jm,
                                                                    std::size_t u, std::size_t t) {
    const std::size_t k = jm.k();
    if (t > jm.horizon) throw LevelMismatch("conditioning level above the copula horizon");
    std::vector<std::vector<double>> out(1u << k);
    for (unsigned J = 1; J < (1u << k); ++J) {
        std::vector<double> at_T(tree.num_nodes(jm.horizon));
        for (std::size_t i = 0; i < at_T.size(); ++i) at_T[i] = jm.copula->marginal(jm.at(u, i), J);
        out[J] = cond_expect(tree, at_T, jm.horizon, t);
    }
    return out;
}

/// Q[sigma_i <= u | F_t] by inclusion-exclusion (i is 1-based).
inline std::vector<double> order_cdf(const ScenarioTree& tree, const JointModel& jm, std::size_t i, std::size_t u,
                                     std::size_t t) {
    const auto coef = inclusion_exclusion_coefficients(jm.k(), i);
    const auto PB = joint_default_probabilities(tree, jm, u, t);
    std::vector<double> out(tree.num_nodes(t), 0.0);
    for (unsigned J = 1; J < coef.size(); ++J)
        if (coef[J] != 0)
            for (std::size_t n = 0; n < out.size(); ++n) out[n] += coef[J] * PB[J][n];
    return out;
}

/// Inclusion-exclusion over times realised on the leaves of a tree.
inline std::vector<double> order_cdf(const ScenarioTree& tree, const std::vector<RandomTime>& taus, std::size_t i,
                                     std::size_t u, std::size_t t) {
    const auto coef = inclusion_exclusion_coefficients(taus.size(), i);
    std::vector<double> out(tree.num_nodes(t), 0.0);
    for (unsigned J = 1; J < coef.size(); ++J) {
        if (coef[J] == 0) continue;
        std::vector<double> ind(tree.num_leaves());
        for (std::size_t l = 0; l < ind.size(); ++l) {
            bool all = true;
            for (std::size_t j = 0; j < taus.size(); ++j)
                if ((J & (1u << j)) && taus[j][l] > u) all = false;
            ind[l] = all ? 1.0 : 0.0;
        }
        const auto e = cond_expect(tree, ind, t);
        for (std::size_t n = 0; n < out.size(); ++n) out[n] += coef[J] * e[n];
    }
    return out;
}

/// Direct enumeration: conditional expectation of 1{sigma_i <= u} leaf by leaf.
inline std::vector<double> order_cdf_direct(const ScenarioTree& tree, const std::vector<RandomTime>& taus,
                                            std::size_t i, std::size_t u, std::size_t t) {
    std::vector<double> ind(tree.num_leaves());
    std::vector<double> a(taus.size());
    for (std::size_t l = 0; l < ind.size(); ++l) {
        for (std::size_t j = 0; j < a.size(); ++j) a[j] = static_cast<double>(taus[j][l]);
        ind[l] = order_stats(a).sorted[i - 1] <= static_cast<double>(u) ? 1.0 : 0.0;
    }
    return cond_expect(tree, ind, t);
}

/// Enlarges the leaves with the k-tuple of times drawn from the copula law
/// given the horizon information; the filtration is unchanged.
struct RealizedJoint {
    ScenarioTree tree;
    std::vector<RandomTime> taus;
};

inline RealizedJoint realize_joint(const ScenarioTree& tree, const JointModel& jm) {
    if (jm.horizon != tree.last_level()) throw LevelMismatch("realisation needs the horizon at the last level");
    const std::size_t k = jm.k();
    const std::size_t U = tree.grid().u_size();
    std::vector<double> mass;
    std::vector<std::string> label;
    RealizedJoint out;
    out.taus.assign(k, RandomTime{});
    std::vector<std::size_t> start(tree.num_leaves() + 1);
    for (std::size_t l = 0; l < tree.num_leaves(); ++l) {
        start[l] = mass.size();
        const std::size_t node = tree.node_of(jm.horizon, l);
        std::vector<std::vector<double>> cdf(k, std::vector<double>(U));
        for (std::size_t j = 0; j < k; ++j)
            for (std::size_t u = 0; u < U; ++u) cdf[j][u] = jm.marginals[j](u, jm.horizon, node);
        const auto law = grid_law(*jm.copula, cdf);
        for (std::size_t c = 0; c < law.size(); ++c) {
            if (law[c] <= kNullMass) continue;
            mass.push_back(tree.leaf_mass(l) * law[c]);
            std::string name = tree.leaf_label(l);
            std::size_t rest = c;
            std::vector<std::size_t> u(k);
            for (std::size_t j = k; j-- > 0;) {
                u[j] = rest % U;
                rest /= U;
            }
            for (std::size_t j = 0; j < k; ++j) {
                out.taus[j].index.push_back(u[j]);
                name += "/" + std::to_string(u[j]);
            }
            label.push_back(name);
        }
    }
    start[tree.num_leaves()] = mass.size();
    std::vector<std::vector<TreeNode>> levels;
    for (std::size_t lv = 0; lv < tree.num_levels(); ++lv) {
        auto nodes = tree.level(lv);
        for (auto& n : nodes) {
            n.first_leaf = start[n.first_leaf];
            n.end_leaf = start[n.end_leaf];
            double s = 0.0;
            for (std::size_t l = n.first_leaf; l < n.end_leaf; ++l) s += mass[l];
            n.mass = s;
        }
        levels.push_back(std::move(nodes));
    }
    out.tree = ScenarioTree(tree.grid(), std::move(levels), std::move(mass), std::move(label));
    return out;
}

/// Draws k-tuples of grid indices for one horizon node.
inline std::vector<std::vector<std::size_t>> sample_joint(const ScenarioTree& tree, const JointModel& jm,
                                                          std::size_t node, std::uint64_t seed, std::size_t draws) {
    const std::size_t U = tree.grid().u_size();
    std::vector<std::vector<double>> cdf(jm.k(), std::vector<double>(U));
    for (std::size_t j = 0; j < jm.k(); ++j)
        for (std::size_t u = 0; u < U; ++u) cdf[j][u] = jm.marginals[j](u, jm.horizon, node);
    const auto law = grid_law(*jm.copula, cdf);
    std::mt19937_64 rng(seed);
    std::vector<std::vector<std::size_t>> out(draws);
    for (auto& d : out) d = sample_grid_law(law, jm.k(), U, rng);
    return out;
}

// ---------------------------------------------------------------------------
// Densities

/// xi_J at horizon node `node` and atom s: jump ratio of C_J(M^{., s}_T).
/// Marginals must be differentiable against A, and the copula differentiable.
inline double xi_value(const ScenarioTree& tree, const JointModel& jm, unsigned J, std::size_t node, std::size_t s) {
    if (!jm.copula->differentiable())
        throw NotDifferentiableMarginal("copula '" + jm.copula->name() + "' has no continuous partials");
    const double dA = jm.A.increment_at(tree, jm.horizon, node, s);
    if (dA <= kNullMass) return std::numeric_limits<double>::quiet_NaN();
    const double hi = jm.copula->marginal(jm.at(s, node), J);
    const double lo = s == 0 ? 0.0 : jm.copula->marginal(jm.at(s - 1, node), J);
    return (hi - lo) / dA;
}

/// Derivative branch for atomless A: sum_j dC_J/dx_j(x) p_j.
inline double xi_derivative(const Copula& C, unsigned J, const std::vector<double>& x, const std::vector<double>& p) {
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j)
        if (J & (1u << j)) s += C.marginal_partial(x, J, j) * p[j];
    return s;
}

/// Checks every marginal family is differentiable at the horizon against A.
inline void require_differentiable_marginals(const ScenarioTree& tree, const JointModel& jm) {
    if (!jm.copula->differentiable())
        throw NotDifferentiableMarginal("copula '" + jm.copula->name() + "' has no continuous partials");
    for (std::size_t j = 0; j < jm.k(); ++j) {
        try {
            (void)differentiate(tree, jm.marginals[j], jm.A, jm.horizon + 1);
        } catch (const NotDifferentiable& e) {
            throw NotDifferentiableMarginal("marginal " + std::to_string(j) + ": " + e.what());
        }
    }
}

/// xi_J(s) for every horizon node and atom s <= horizon (NaN off atoms).
inline std::vector<std::vector<double>> xi_density(const ScenarioTree& tree, const JointModel& jm, unsigned J) {
    require_differentiable_marginals(tree, jm);
    std::vector<std::vector<double>> out(tree.num_nodes(jm.horizon), std::vector<double>(jm.horizon + 1));
    for (std::size_t n = 0; n < out.size(); ++n)
        for (std::size_t s = 0; s <= jm.horizon; ++s) out[n][s] = xi_value(tree, jm, J, n, s);
    return out;
}

/// Density of sigma_i against A given F_t: [node at t][s], s <= t, NaN off atoms.
inline std::vector<std::vector<double>> order_density(const ScenarioTree& tree, const JointModel& jm, std::size_t i,
                                                      std::size_t t) {
    if (t > jm.horizon) throw LevelMismatch("conditioning level above the copula horizon");
    const auto coef = inclusion_exclusion_coefficients(jm.k(), i);
    require_differentiable_marginals(tree, jm);
    const std::size_t NT = tree.num_nodes(jm.horizon);
    std::vector<std::vector<double>> out(tree.num_nodes(t), std::vector<double>(t + 1, 0.0));
    for (std::size_t s = 0; s <= t; ++s) {
        // Atoms of A at s are F_s-measurable, so NaN never mixes with numbers below a level-t node.
        std::vector<double> q(NT, 0.0);
        for (unsigned J = 1; J < coef.size(); ++J) {
            if (coef[J] == 0) continue;
            for (std::size_t n = 0; n < NT; ++n) q[n] += coef[J] * xi_value(tree, jm, J, n, s);
        }
        const auto e = cond_expect(tree, q, jm.horizon, t);
        for (std::size_t n = 0; n < out.size(); ++n) out[n][s] = e[n];
    }
    return out;
}

}  // namespace deftime
