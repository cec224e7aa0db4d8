#pragma once

// The product space Omega x grid: image measure of (omega, tau), Cox measure
// of an increasing process, and the density between them.

#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include "deftime/errors.hpp"
#include "deftime/filtration.hpp"
#include "deftime/im_family.hpp"

namespace deftime {

enum class MeasureTag { image, cox, other };

/// Mass per (leaf, u), u over the grid and infinity.
struct ProductMeasure {
    std::vector<std::vector<double>> weights;
    MeasureTag tag = MeasureTag::other;

    [[nodiscard]] double operator()(std::size_t leaf, std::size_t u) const { return weights[leaf][u]; }
    [[nodiscard]] double total() const {
        double s = 0.0;
        for (const auto& row : weights)
            for (double w : row) s += w;
        return s;
    }
    template <class H>
    [[nodiscard]] double expectation(H&& h) const {
        double s = 0.0;
        for (std::size_t l = 0; l < weights.size(); ++l)
            for (std::size_t u = 0; u < weights[l].size(); ++u)
                if (weights[l][u] != 0.0) s += weights[l][u] * h(l, u);
        return s;
    }
};

inline ProductMeasure image_measure(const ScenarioTree& tree, const RandomTime& tau) {
    check_time(tree, tau);
    ProductMeasure q{std::vector<std::vector<double>>(tree.num_leaves(), std::vector<double>(tree.grid().u_size())),
                     MeasureTag::image};
    for (std::size_t l = 0; l < tree.num_leaves(); ++l) q.weights[l][tau[l]] = tree.leaf_mass(l);
    return q;
}

/// weight(omega, u) = mass(omega) dA_u(omega); needs A_infinity = 1 on every leaf.
inline ProductMeasure cox_measure(const ScenarioTree& tree, const IncreasingProcess& A) {
    const std::size_t U = tree.grid().u_size();
    ProductMeasure q{std::vector<std::vector<double>>(tree.num_leaves(), std::vector<double>(U)), MeasureTag::cox};
    for (std::size_t l = 0; l < tree.num_leaves(); ++l) {
        if (std::abs(A.at_infinity.at(l) - 1.0) > 1e-12)
            throw BadNormalization("A_infinity = " + std::to_string(A.at_infinity[l]) + " on leaf " + std::to_string(l));
        for (std::size_t u = 0; u < U; ++u) {
            const double d = A.increment(tree, u, l);
            if (d < -kSupermartingaleTol) throw NotIncreasing("A decreases at u=" + std::to_string(u));
            q.weights[l][u] = tree.leaf_mass(l) * std::max(d, 0.0);
        }
    }
    return q;
}

/// max |Q0[u' <= u | F_t] - A_u| over u <= t: the defining property of a Cox measure.
inline double cox_property_residual(const ScenarioTree& tree, const ProductMeasure& q, const IncreasingProcess& A) {
    double worst = 0.0;
    for (std::size_t t = 0; t < tree.num_levels(); ++t)
        for (std::size_t i = 0; i < tree.num_nodes(t); ++i) {
            const auto& n = tree.node(t, i);
            double acc = 0.0;
            for (std::size_t u = 0; u <= t; ++u) {
                for (std::size_t l = n.first_leaf; l < n.end_leaf; ++l) acc += q(l, u);
                worst = std::max(worst, std::abs(acc / n.mass - A.values(u, tree.ancestor(t, i, u))));
            }
        }
    return worst;
}

/// Density on the atoms of the product filtration at one level: atom (node, u)
/// for u <= level, and (node, lump) with lump = level + 1 standing for u > level.
/// NaN marks atoms that carry no reference mass.
struct DensityProcess {
    std::size_t level = 0;
    std::vector<std::vector<double>> value;  // [node][0..level+1]

    [[nodiscard]] static std::size_t atom(std::size_t level, std::size_t u) { return u <= level ? u : level + 1; }
    [[nodiscard]] double at(const ScenarioTree& tree, std::size_t leaf, std::size_t u) const {
        return value[tree.node_of(level, leaf)][atom(level, u)];
    }
};

namespace detail {
/// Atom masses of a product measure at level k: [node][atom].
inline std::vector<std::vector<double>> atom_masses(const ScenarioTree& tree, const ProductMeasure& q, std::size_t k) {
    std::vector<std::vector<double>> m(tree.num_nodes(k), std::vector<double>(k + 2, 0.0));
    for (std::size_t l = 0; l < tree.num_leaves(); ++l) {
        auto& row = m[tree.node_of(k, l)];
        for (std::size_t u = 0; u < q.weights[l].size(); ++u) row[DensityProcess::atom(k, u)] += q(l, u);
    }
    return m;
}
}  // namespace detail

/// dQ/dQ0 restricted to the product filtration at level k, atom by atom.
inline DensityProcess radon_nikodym(const ScenarioTree& tree, const ProductMeasure& q, const ProductMeasure& q0,
                                    std::size_t k) {
    if (k >= tree.num_levels()) throw LevelMismatch("level out of range");
    if (q.weights.size() != tree.num_leaves() || q0.weights.size() != tree.num_leaves())
        throw LevelMismatch("measures live on a different tree");
    const auto num = detail::atom_masses(tree, q, k);
    const auto den = detail::atom_masses(tree, q0, k);
    DensityProcess P{k, std::vector<std::vector<double>>(tree.num_nodes(k),
                                                        std::vector<double>(k + 2, std::numeric_limits<double>::quiet_NaN()))};
    for (std::size_t i = 0; i < tree.num_nodes(k); ++i)
        for (std::size_t a = 0; a < k + 2; ++a) {
            if (den[i][a] > kNullMass) {
                P.value[i][a] = num[i][a] / den[i][a];
            } else if (num[i][a] > kNullMass) {
                const auto& n = tree.node(k, i);
                std::size_t witness = n.first_leaf;
                for (std::size_t l = n.first_leaf; l < n.end_leaf; ++l) {
                    double s = 0.0;
                    for (std::size_t u = 0; u < q.weights[l].size(); ++u)
                        if (DensityProcess::atom(k, u) == a) s += q(l, u);
                    if (s > kNullMass) {
                        witness = l;
                        break;
                    }
                }
                throw NotAbsolutelyContinuous(k, i, a, witness);
            }
        }
    return P;
}

/// 1{k<u} Z_k / (1 - A_k) + 1{u<=k} p_k(u) on atoms with reference mass.
inline DensityProcess closed_form_density(const ScenarioTree& tree, const AdaptedProcess& Z, const IncreasingProcess& A,
                                          const DensityField& p, std::size_t k) {
    DensityProcess P{k, std::vector<std::vector<double>>(tree.num_nodes(k),
                                                        std::vector<double>(k + 2, std::numeric_limits<double>::quiet_NaN()))};
    for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
        for (std::size_t u = 0; u <= k; ++u)
            if (p.is_atom(k, i, u)) P.value[i][u] = p(k, i, u);
        const double rest = 1.0 - A.values(k, i);
        if (rest > kNullMass) P.value[i][k + 1] = Z(k, i) / rest;
    }
    return P;
}

/// max difference over atoms defined in both; a NaN in only one of them counts as infinite.
inline double density_distance(const DensityProcess& a, const DensityProcess& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.value.size(); ++i)
        for (std::size_t j = 0; j < a.value[i].size(); ++j) {
            const double x = a.value[i][j], y = b.value[i][j];
            if (std::isnan(x) && std::isnan(y)) continue;
            if (std::isnan(x) || std::isnan(y)) return kInfinity;
            worst = std::max(worst, std::abs(x - y));
        }
    return worst;
}

struct DifferentiabilityWitness {
    std::size_t level = 0;
    std::size_t node = 0;
    std::size_t leaf = 0;
    std::size_t u = 0;
};

struct DifferentiabilityDecision {
    bool differentiable = false;
    std::optional<DensityField> density;
    std::optional<DifferentiabilityWitness> witness;
};

/// Absolute continuity of the image measure against the Cox measure, level by
/// level below the horizon. On success the density is read off the atoms u <= k.
inline DifferentiabilityDecision decide_differentiable(const ScenarioTree& tree, const RandomTime& tau,
                                                       const IncreasingProcess& A,
                                                       std::optional<std::size_t> horizon = std::nullopt) {
    const auto q = image_measure(tree, tau);
    const auto q0 = cox_measure(tree, A);
    const std::size_t H = clamp_horizon(tree, horizon);
    DifferentiabilityDecision out;
    DensityField field;
    field.p.resize(H);
    for (std::size_t k = 0; k < H; ++k) {
        try {
            const auto P = radon_nikodym(tree, q, q0, k);
            field.p[k].resize(tree.num_nodes(k));
            for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
                field.p[k][i].assign(P.value[i].begin(), P.value[i].begin() + static_cast<std::ptrdiff_t>(k + 1));
            }
        } catch (const NotAbsolutelyContinuous& e) {
            out.witness = DifferentiabilityWitness{e.level, e.node, e.leaf, e.u};
            return out;
        }
    }
    out.differentiable = true;
    out.density = std::move(field);
    return out;
}

/// max |sum_{v<=k} p_v(v) dA_v - optional dual projection of 1{tau <= k}|.
inline double dual_projection_identity(const ScenarioTree& tree, const RandomTime& tau, const IncreasingProcess& A,
                                       const DensityField& p) {
    PathFamily raw(p.levels(), std::vector<double>(tree.num_leaves()));
    for (std::size_t k = 0; k < p.levels(); ++k) raw[k] = defaulted_by(tau, k);
    for (std::size_t k = p.levels(); k < tree.num_levels(); ++k) raw.push_back(defaulted_by(tau, k));
    const auto proj = dual_projection(tree, raw, ProjectionMode::optional);
    double worst = 0.0;
    for (std::size_t k = 0; k < p.levels(); ++k)
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
            double acc = 0.0;
            for (std::size_t v = 0; v <= k; ++v) {
                const std::size_t a = tree.ancestor(k, i, v);
                acc += p.value_or_zero(v, a, v) * A.increment_at(tree, k, i, v);
            }
            worst = std::max(worst, std::abs(acc - proj(k, i)));
        }
    return worst;
}

}  // namespace deftime
