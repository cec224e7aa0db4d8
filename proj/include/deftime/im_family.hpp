#pragma once

// Families of conditional distribution functions M^u_t = Q[tau <= u | F_t],
// their axioms, and the density with respect to an increasing process.

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "deftime/errors.hpp"
#include "deftime/filtration.hpp"

namespace deftime {

inline constexpr double kExactTol = 1e-12;

/// M[u] is the whole process t -> M^u_t, for u in the grid and u = infinity.
struct IMFamily {
    std::vector<AdaptedProcess> M;

    [[nodiscard]] double operator()(std::size_t u, std::size_t k, std::size_t node) const { return M[u](k, node); }
    /// Increment in u: M^u_k - M^{u-1}_k, with M^{-1} = 0.
    [[nodiscard]] double du(std::size_t u, std::size_t k, std::size_t node) const {
        return M[u](k, node) - (u == 0 ? 0.0 : M[u - 1](k, node));
    }
};

/// Indicator 1{tau <= u} per leaf.
inline std::vector<double> defaulted_by(const RandomTime& tau, std::size_t u) {
    std::vector<double> out(tau.index.size());
    for (std::size_t l = 0; l < out.size(); ++l) out[l] = tau[l] <= u ? 1.0 : 0.0;
    return out;
}

inline void check_time(const ScenarioTree& tree, const RandomTime& tau) {
    if (tau.index.size() != tree.num_leaves()) throw LevelMismatch("random time does not cover the leaves");
    for (auto u : tau.index)
        if (u > tree.grid().infinity()) throw InvalidSpec("random time off the grid");
}

/// M^u_t = E[1{tau <= u} | F_t]; complete by construction.
inline IMFamily im_from_time(const ScenarioTree& tree, const RandomTime& tau) {
    check_time(tree, tau);
    const auto& g = tree.grid();
    IMFamily im;
    im.M.reserve(g.u_size());
    for (std::size_t u = 0; u < g.u_size(); ++u) {
        AdaptedProcess p(tree);
        const auto ind = defaulted_by(tau, u);
        for (std::size_t k = 0; k < tree.num_levels(); ++k) p.values[k] = cond_expect(tree, ind, k);
        im.M.push_back(std::move(p));
    }
    return im;
}

/// Azema supermartingale Z_t = Q[t < tau | F_t].
inline AdaptedProcess azema(const ScenarioTree& tree, const RandomTime& tau) {
    check_time(tree, tau);
    AdaptedProcess Z(tree);
    for (std::size_t k = 0; k < tree.num_levels(); ++k) {
        std::vector<double> alive(tree.num_leaves());
        for (std::size_t l = 0; l < alive.size(); ++l) alive[l] = tau[l] > k ? 1.0 : 0.0;
        Z.values[k] = cond_expect(tree, alive, k);
    }
    return Z;
}

struct CheckReport {
    bool pass = true;
    std::vector<std::string> violations;

    void fail(std::string what) {
        pass = false;
        if (violations.size() < 64) violations.push_back(std::move(what));
    }
};

namespace detail {
inline std::string at(std::size_t u, std::size_t k, std::size_t node) {
    return "u=" + std::to_string(u) + " level=" + std::to_string(k) + " node=" + std::to_string(node);
}
}  // namespace detail

/// Axioms of an iM family: martingale in t on [u, inf] (all levels when
/// `complete`), nondecreasing in u, values in [0,1], M^inf terminal = 1.
inline CheckReport check_axioms(const ScenarioTree& tree, const IMFamily& im, bool complete = false,
                                double tol = kExactTol) {
    CheckReport r;
    const auto& g = tree.grid();
    if (im.M.size() != g.u_size()) {
        r.fail("family does not cover the u grid");
        return r;
    }
    const std::size_t n = tree.last_level();
    for (std::size_t u = 0; u < g.u_size(); ++u) {
        if (im.M[u].levels() != tree.num_levels()) {
            r.fail("family member " + std::to_string(u) + " does not span the tree");
            return r;
        }
        for (std::size_t k = 0; k < tree.num_levels(); ++k)
            for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
                const double v = im(u, k, i);
                if (v < -tol || v > 1.0 + tol) r.fail("value outside [0,1] at " + detail::at(u, k, i));
                if (u > 0 && v < im(u - 1, k, i) - tol) r.fail("decreasing in u at " + detail::at(u, k, i));
            }
        const std::size_t from = complete ? 0 : std::min(u, n);
        for (std::size_t k = from; k < n; ++k) {
            auto e = cond_expect(tree, im.M[u].values[k + 1], k + 1, k);
            for (std::size_t i = 0; i < e.size(); ++i)
                if (std::abs(e[i] - im(u, k, i)) > tol) r.fail("martingale defect at " + detail::at(u, k, i));
        }
    }
    for (std::size_t i = 0; i < tree.num_nodes(n); ++i)
        if (std::abs(im(g.infinity(), n, i) - 1.0) > tol) r.fail("terminal mass differs from 1 at node " + std::to_string(i));
    return r;
}

/// M^u_u = 1 - Z_u and M^u_t <= 1 - Z_t for u <= t.
inline CheckReport check_imz(const ScenarioTree& tree, const IMFamily& im, const AdaptedProcess& Z,
                             double tol = kExactTol) {
    CheckReport r;
    if (Z.levels() != tree.num_levels() || im.M.size() != tree.grid().u_size()) {
        r.fail("dimension mismatch");
        return r;
    }
    for (std::size_t u = 0; u < tree.num_levels(); ++u)
        for (std::size_t k = u; k < tree.num_levels(); ++k)
            for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
                const double bound = 1.0 - Z(k, i);
                if (k == u && std::abs(im(u, k, i) - bound) > tol) r.fail("M^u_u != 1-Z_u at " + detail::at(u, k, i));
                if (im(u, k, i) > bound + tol) r.fail("M^u_t > 1-Z_t at " + detail::at(u, k, i));
            }
    return r;
}

// ---------------------------------------------------------------------------
// Density with respect to an increasing process

/// p[k][node][v] for v <= k; NaN where A has no atom on the node's path.
struct DensityField {
    std::vector<std::vector<std::vector<double>>> p;

    [[nodiscard]] std::size_t levels() const noexcept { return p.size(); }
    [[nodiscard]] double operator()(std::size_t k, std::size_t node, std::size_t v) const { return p[k][node][v]; }
    [[nodiscard]] bool is_atom(std::size_t k, std::size_t node, std::size_t v) const {
        return !std::isnan(p[k][node][v]);
    }
    /// Density with zero in place of non-atoms; convenient for sums against dA.
    [[nodiscard]] double value_or_zero(std::size_t k, std::size_t node, std::size_t v) const {
        return is_atom(k, node, v) ? p[k][node][v] : 0.0;
    }
};

inline std::size_t clamp_horizon(const ScenarioTree& tree, std::optional<std::size_t> horizon) {
    return std::min(horizon.value_or(tree.grid().horizon()), tree.num_levels());
}

/// p_k(v) = (M^v_k - M^{v-1}_k) / dA_v at each atom v <= k of A, for levels
/// below the horizon. Any increment of M^.(k) off the atoms of A is fatal.
inline DensityField differentiate(const ScenarioTree& tree, const IMFamily& im, const IncreasingProcess& A,
                                  std::optional<std::size_t> horizon = std::nullopt, double tol = kExactTol) {
    const std::size_t H = clamp_horizon(tree, horizon);
    DensityField d;
    d.p.resize(H);
    for (std::size_t k = 0; k < H; ++k) {
        d.p[k].assign(tree.num_nodes(k), std::vector<double>(k + 1, std::numeric_limits<double>::quiet_NaN()));
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i)
            for (std::size_t v = 0; v <= k; ++v) {
                const double dA = A.increment_at(tree, k, i, v);
                const double dM = im.du(v, k, i);
                if (dA > kNullMass) {
                    d.p[k][i][v] = dM / dA;
                } else if (std::abs(dM) > tol) {
                    throw NotDifferentiable(k, i, v);
                }
            }
    }
    return d;
}

/// max |M^u_k - sum_{v<=u} p_k(v) dA_v| over u <= k < horizon.
inline double reconstruction_residual(const ScenarioTree& tree, const IMFamily& im, const IncreasingProcess& A,
                                      const DensityField& d) {
    double worst = 0.0;
    for (std::size_t k = 0; k < d.levels(); ++k)
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
            double acc = 0.0;
            for (std::size_t u = 0; u <= k; ++u) {
                acc += d.value_or_zero(k, i, u) * A.increment_at(tree, k, i, u);
                worst = std::max(worst, std::abs(acc - im(u, k, i)));
            }
        }
    return worst;
}

struct MintResult {
    double lhs = 0.0;  // E[f(tau)]
    double rhs = 0.0;  // E[sum_u f(u) d_u M^u_t]
    [[nodiscard]] double residual() const { return std::abs(lhs - rhs); }
};

/// f(node at level t, u) with u ranging over the grid and infinity.
template <class F>
MintResult verify_mint(const ScenarioTree& tree, const RandomTime& tau, const IMFamily& im, F&& f, std::size_t t) {
    MintResult r;
    for (std::size_t l = 0; l < tree.num_leaves(); ++l)
        r.lhs += tree.leaf_mass(l) * f(tree.node_of(t, l), tau[l]);
    for (std::size_t i = 0; i < tree.num_nodes(t); ++i) {
        double s = 0.0;
        for (std::size_t u = 0; u < tree.grid().u_size(); ++u) s += f(i, u) * im.du(u, t, i);
        r.rhs += tree.node(t, i).mass * s;
    }
    return r;
}

// ---------------------------------------------------------------------------
// Realisation on an enlarged set of leaves

/// A tree whose leaves are (omega, u) pairs, together with the time u.
struct RealizedTime {
    ScenarioTree tree;
    RandomTime tau;
    std::vector<std::size_t> origin;  // original leaf of each new leaf
};

/// Splits every leaf omega into the points u with weight[omega][u] > 0; the
/// filtration is unchanged, so u is revealed only through its own indicator.
/// weight[omega][.] is a probability on the u grid.
inline RealizedTime realize(const ScenarioTree& tree, const std::vector<std::vector<double>>& weight) {
    const std::size_t U = tree.grid().u_size();
    std::vector<double> mass;
    std::vector<std::string> label;
    RealizedTime out;
    std::vector<std::size_t> start(tree.num_leaves() + 1, 0);
    for (std::size_t l = 0; l < tree.num_leaves(); ++l) {
        start[l] = mass.size();
        double total = 0.0;
        for (std::size_t u = 0; u < U; ++u) total += weight.at(l).at(u);
        if (std::abs(total - 1.0) > 1e-9) throw BadNormalization("conditional law of leaf " + std::to_string(l) + " has mass " + std::to_string(total));
        bool any = false;
        for (std::size_t u = 0; u < U; ++u) {
            if (weight[l][u] <= kNullMass) continue;
            any = true;
            mass.push_back(tree.leaf_mass(l) * weight[l][u] / total);
            label.push_back(tree.leaf_label(l) + "@" + (u == tree.grid().infinity() ? std::string("inf") : std::to_string(u)));
            out.tau.index.push_back(u);
            out.origin.push_back(l);
        }
        if (!any) throw BadNormalization("leaf without mass on the u grid");
    }
    start[tree.num_leaves()] = mass.size();
    std::vector<std::vector<TreeNode>> levels;
    for (std::size_t k = 0; k < tree.num_levels(); ++k) {
        std::vector<TreeNode> lv = tree.level(k);
        for (auto& n : lv) {
            n.first_leaf = start[n.first_leaf];
            n.end_leaf = start[n.end_leaf];
            double s = 0.0;
            for (std::size_t l = n.first_leaf; l < n.end_leaf; ++l) s += mass[l];
            n.mass = s;
        }
        levels.push_back(std::move(lv));
    }
    out.tree = ScenarioTree(tree.grid(), std::move(levels), std::move(mass), std::move(label));
    return out;
}

/// Terminal conditional law d_u M^u_n(omega) of an iM family, per leaf.
inline std::vector<std::vector<double>> terminal_law(const ScenarioTree& tree, const IMFamily& im) {
    const std::size_t n = tree.last_level();
    std::vector<std::vector<double>> w(tree.num_leaves(), std::vector<double>(tree.grid().u_size()));
    for (std::size_t l = 0; l < tree.num_leaves(); ++l)
        for (std::size_t u = 0; u < w[l].size(); ++u) w[l][u] = std::max(0.0, im.du(u, n, tree.node_of(n, l)));
    return w;
}

/// Random time on enlarged leaves whose conditional law given the terminal
/// information is d_u M^u; it reproduces M^u_t for u <= t.
inline RealizedTime realize_im(const ScenarioTree& tree, const IMFamily& im) {
    auto r = check_axioms(tree, im);
    if (!r.pass) throw AxiomViolation(r.violations.front());
    return realize(tree, terminal_law(tree, im));
}

/// Cox time: conditional law dA_u, A extended by A_infinity = 1.
inline RealizedTime realize_cox(const ScenarioTree& tree, const IncreasingProcess& A) {
    const std::size_t U = tree.grid().u_size();
    std::vector<std::vector<double>> w(tree.num_leaves(), std::vector<double>(U));
    for (std::size_t l = 0; l < tree.num_leaves(); ++l)
        for (std::size_t u = 0; u < U; ++u) w[l][u] = A.increment(tree, u, l);
    return realize(tree, w);
}

/// The Cox family M^u_t = E[A_u | F_t] (= A_u for u <= t), complete.
inline IMFamily cox_family(const ScenarioTree& tree, const IncreasingProcess& A) {
    const std::size_t n = tree.last_level();
    IMFamily im;
    for (std::size_t u = 0; u < tree.grid().u_size(); ++u) {
        AdaptedProcess p(tree);
        std::vector<double> Au(tree.num_leaves());
        for (std::size_t l = 0; l < Au.size(); ++l) Au[l] = u > n ? A.at_infinity[l] : A.values.at_leaf(tree, u, l);
        for (std::size_t k = 0; k < tree.num_levels(); ++k) p.values[k] = cond_expect(tree, Au, k);
        im.M.push_back(std::move(p));
    }
    return im;
}

/// Draws (leaf, u) pairs: leaf by mass, then u from the terminal law.
inline std::vector<std::pair<std::size_t, std::size_t>> sample_from_im(const ScenarioTree& tree, const IMFamily& im,
                                                                        std::uint64_t seed, std::size_t draws) {
    auto r = check_axioms(tree, im);
    if (!r.pass) throw AxiomViolation(r.violations.front());
    const auto law = terminal_law(tree, im);
    std::mt19937_64 rng(seed);
    std::discrete_distribution<std::size_t> leaf(tree.leaf_masses().begin(), tree.leaf_masses().end());
    std::vector<std::discrete_distribution<std::size_t>> time;
    for (const auto& w : law) time.emplace_back(w.begin(), w.end());
    std::vector<std::pair<std::size_t, std::size_t>> out(draws);
    for (auto& d : out) {
        d.first = leaf(rng);
        d.second = time[d.first](rng);
    }
    return out;
}

}  // namespace deftime
