#pragma once

// Progressive enlargement of a tree filtration by a random time: conditional
// expectations given G_k, the optional splitting of G-adapted processes, and
// the drift that turns an F-martingale into a G-martingale.

#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "deftime/errors.hpp"
#include "deftime/filtration.hpp"
#include "deftime/im_family.hpp"

namespace deftime {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Atom index of G_k inside a level-k node: u for tau = u <= k, k+1 for tau > k.
inline std::size_t g_atom(std::size_t k, std::size_t u) { return u <= k ? u : k + 1; }

/// A process of the enlarged filtration stored on G-atoms: v[k][node][atom].
/// NaN marks atoms that carry no mass.
struct GProcess {
    std::vector<std::vector<std::vector<double>>> v;

    [[nodiscard]] double at(const ScenarioTree& tree, const RandomTime& tau, std::size_t k, std::size_t leaf) const {
        return v[k][tree.node_of(k, leaf)][g_atom(k, tau[leaf])];
    }
    [[nodiscard]] std::size_t levels() const noexcept { return v.size(); }
};

inline GProcess empty_gprocess(const ScenarioTree& tree, std::size_t levels, double fill = kNaN) {
    GProcess g;
    g.v.resize(levels);
    for (std::size_t k = 0; k < levels; ++k)
        g.v[k].assign(tree.num_nodes(k), std::vector<double>(k + 2, fill));
    return g;
}

/// Q-mass of every G-atom at level k.
inline std::vector<std::vector<double>> g_atom_masses(const ScenarioTree& tree, const RandomTime& tau, std::size_t k) {
    std::vector<std::vector<double>> m(tree.num_nodes(k), std::vector<double>(k + 2, 0.0));
    for (std::size_t l = 0; l < tree.num_leaves(); ++l) m[tree.node_of(k, l)][g_atom(k, tau[l])] += tree.leaf_mass(l);
    return m;
}

/// Leaf-indexed process X[k][leaf] read as a G-process; it must be constant on G-atoms.
inline GProcess g_process_from_leaves(const ScenarioTree& tree, const RandomTime& tau, const PathFamily& X,
                                      double tol = 1e-12) {
    GProcess g = empty_gprocess(tree, X.size());
    for (std::size_t k = 0; k < X.size(); ++k)
        for (std::size_t l = 0; l < tree.num_leaves(); ++l) {
            double& slot = g.v[k][tree.node_of(k, l)][g_atom(k, tau[l])];
            if (std::isnan(slot)) slot = X[k][l];
            else if (std::abs(slot - X[k][l]) > tol)
                throw NotGAdapted("process is not constant on a G-atom at level " + std::to_string(k) + ", leaf " +
                                  tree.leaf_label(l));
        }
    return g;
}

/// An F-adapted process seen in G (same value on every atom of a node).
inline GProcess lift(const ScenarioTree& tree, const AdaptedProcess& X, std::size_t levels) {
    GProcess g = empty_gprocess(tree, levels);
    for (std::size_t k = 0; k < levels; ++k)
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) g.v[k][i].assign(k + 2, X(k, i));
    return g;
}

/// E[Y_leaf | G_k] by direct enumeration of G-atoms; NaN on null atoms.
inline std::vector<std::vector<double>> g_conditional(const ScenarioTree& tree, const RandomTime& tau,
                                                      const std::vector<double>& Y, std::size_t k) {
    auto mass = g_atom_masses(tree, tau, k);
    std::vector<std::vector<double>> s(tree.num_nodes(k), std::vector<double>(k + 2, 0.0));
    for (std::size_t l = 0; l < tree.num_leaves(); ++l) s[tree.node_of(k, l)][g_atom(k, tau[l])] += tree.leaf_mass(l) * Y[l];
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t a = 0; a < s[i].size(); ++a) s[i][a] = mass[i][a] > kNullMass ? s[i][a] / mass[i][a] : kNaN;
    return s;
}

// ---------------------------------------------------------------------------
// Parametered optional projection

/// oF[k][node][u] = E[F(., u) | F_k].
struct ParamProjection {
    std::vector<std::vector<std::vector<double>>> v;
    [[nodiscard]] double operator()(std::size_t k, std::size_t node, std::size_t u) const { return v[k][node][u]; }
};

/// F[leaf][u] over the grid and infinity.
inline ParamProjection parametered_projection(const ScenarioTree& tree, const std::vector<std::vector<double>>& F) {
    const std::size_t U = tree.grid().u_size();
    ParamProjection out;
    out.v.resize(tree.num_levels());
    std::vector<double> column(tree.num_leaves());
    for (std::size_t k = 0; k < tree.num_levels(); ++k) {
        out.v[k].assign(tree.num_nodes(k), std::vector<double>(U));
        for (std::size_t u = 0; u < U; ++u) {
            for (std::size_t l = 0; l < column.size(); ++l) column[l] = F.at(l).at(u);
            const auto e = cond_expect(tree, column, k);
            for (std::size_t i = 0; i < e.size(); ++i) out.v[k][i][u] = e[i];
        }
    }
    return out;
}

/// |E[sum_{u<=t} f(u) F(u) dA_u] - E[sum_{u<=t} f(u) oF_t(u) dA_u]| for f(node at t, u).
template <class Fn>
double projection_identity_residual(const ScenarioTree& tree, const std::vector<std::vector<double>>& F,
                                    const ParamProjection& oF, const IncreasingProcess& A, Fn&& f, std::size_t t) {
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t l = 0; l < tree.num_leaves(); ++l) {
        const std::size_t i = tree.node_of(t, l);
        for (std::size_t u = 0; u <= t; ++u) {
            const double w = tree.leaf_mass(l) * f(i, u) * A.increment(tree, u, l);
            lhs += w * F[l][u];
            rhs += w * oF(t, i, u);
        }
    }
    return std::abs(lhs - rhs);
}

// ---------------------------------------------------------------------------
// Conditional expectations given G_k

/// E[H 1{k < tau} | F_k] / Z_k per node; empty where Z_k = 0.
inline std::vector<std::optional<double>> key_lemma(const ScenarioTree& tree, const RandomTime& tau,
                                                    const std::vector<double>& H, std::size_t k) {
    std::vector<double> alive(tree.num_leaves()), weighted(tree.num_leaves());
    for (std::size_t l = 0; l < alive.size(); ++l) {
        alive[l] = tau[l] > k ? 1.0 : 0.0;
        weighted[l] = alive[l] * H[l];
    }
    const auto Z = cond_expect(tree, alive, k);
    const auto num = cond_expect(tree, weighted, k);
    std::vector<std::optional<double>> out(Z.size());
    for (std::size_t i = 0; i < Z.size(); ++i)
        if (Z[i] > kNullMass) out[i] = num[i] / Z[i];
    return out;
}

/// Pre-default formula at one node; a vanishing Z_k there is an error.
inline double key_lemma_at(const ScenarioTree& tree, const RandomTime& tau, const std::vector<double>& H,
                           std::size_t k, std::size_t node) {
    const auto v = key_lemma(tree, tau, H, k);
    if (!v.at(node)) throw ZeroAzema("Z vanishes at level " + std::to_string(k) + ", node " + std::to_string(node));
    return *v[node];
}

/// E[f(omega, tau) | G_k] for f measurable at level b >= k on the product space:
/// pre-default formula before the default, oF(f p_b)_k(tau) / p_k(tau) after it.
/// Result on G-atoms [node][atom]; NaN on null atoms.
inline std::vector<std::vector<double>> conditional_expectation(const ScenarioTree& tree, const RandomTime& tau,
                                                                const DensityField& p,
                                                                const std::vector<std::vector<double>>& f,
                                                                std::size_t k, std::size_t b) {
    if (k > b || b >= p.levels()) throw LevelMismatch("need k <= b below the differentiability horizon");
    const auto mass = g_atom_masses(tree, tau, k);
    std::vector<std::vector<double>> out(tree.num_nodes(k), std::vector<double>(k + 2, kNaN));
    std::vector<double> H(tree.num_leaves());
    for (std::size_t l = 0; l < H.size(); ++l) H[l] = f[l][tau[l]];
    const auto pre = key_lemma(tree, tau, H, k);
    for (std::size_t i = 0; i < out.size(); ++i)
        if (pre[i] && mass[i][k + 1] > kNullMass) out[i][k + 1] = *pre[i];
    std::vector<double> column(tree.num_leaves());
    for (std::size_t u = 0; u <= k; ++u) {
        for (std::size_t l = 0; l < column.size(); ++l) {
            const std::size_t nb = tree.node_of(b, l);
            column[l] = f[l][u] * p.value_or_zero(b, nb, u);
        }
        const auto num = cond_expect(tree, column, k);
        for (std::size_t i = 0; i < out.size(); ++i) {
            if (mass[i][u] <= kNullMass) continue;
            const double den = p.value_or_zero(k, i, u);
            if (!(den > 0.0))
                throw ZeroDensity("density vanishes on a charged post-default atom: level " + std::to_string(k) +
                                  ", node " + std::to_string(i) + ", u " + std::to_string(u));
            out[i][u] = num[i] / den;
        }
    }
    return out;
}

struct DensityVersionReport {
    double max_residual = 0.0;         // |p_k(u) - E[p_b(u) | F_k]| on charged post-default atoms
    std::size_t zero_on_charged = 0;   // charged post-default atoms with p_k(u) = 0
};

/// On {tau <= k}, p_k(tau) is positive and equals the projection of p_b(tau).
inline DensityVersionReport density_versions(const ScenarioTree& tree, const RandomTime& tau, const DensityField& p,
                                             std::size_t k, std::size_t b) {
    DensityVersionReport r;
    const auto mass = g_atom_masses(tree, tau, k);
    std::vector<double> column(tree.num_nodes(b));
    for (std::size_t u = 0; u <= k; ++u) {
        for (std::size_t j = 0; j < column.size(); ++j) column[j] = p.value_or_zero(b, j, u);
        const auto proj = cond_expect(tree, column, b, k);
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
            if (mass[i][u] <= kNullMass) continue;
            const double pk = p.value_or_zero(k, i, u);
            if (!(pk > 0.0)) ++r.zero_on_charged;
            r.max_residual = std::max(r.max_residual, std::abs(pk - proj[i]));
        }
    }
    return r;
}

// ---------------------------------------------------------------------------
// Optional splitting

/// X[k][leaf][u]: a process on the product space.
using ProductProcess = std::vector<std::vector<std::vector<double>>>;

/// X' before the default and X''(u) after it; X''_k(node, u) is NaN for u > k.
struct SplitPair {
    AdaptedProcess pre;
    std::vector<std::vector<std::vector<double>>> post;  // [k][node][u]

    /// Value of the split on a leaf of the original space at level k.
    [[nodiscard]] double reconstruct(const ScenarioTree& tree, const RandomTime& tau, std::size_t k,
                                     std::size_t leaf) const {
        const std::size_t i = tree.node_of(k, leaf);
        return tau[leaf] <= k ? post[k][i][tau[leaf]] : pre(k, i);
    }
};

/// Splits a product-space process adapted to F_k x sigma(u -|- t_k) for k below the horizon.
inline SplitPair optional_split(const ScenarioTree& tree, const ProductProcess& X,
                                std::optional<std::size_t> horizon = std::nullopt, double tol = 1e-12) {
    const std::size_t H = clamp_horizon(tree, horizon);
    if (X.size() < H) throw LevelMismatch("process does not reach the horizon");
    const std::size_t U = tree.grid().u_size();
    SplitPair s{AdaptedProcess(tree, kNaN), {}};
    s.post.resize(H);
    for (std::size_t k = 0; k < H; ++k) {
        s.post[k].assign(tree.num_nodes(k), std::vector<double>(U, kNaN));
        auto grid = empty_gprocess(tree, k + 1).v[k];
        for (std::size_t l = 0; l < tree.num_leaves(); ++l)
            for (std::size_t u = 0; u < U; ++u) {
                double& slot = grid[tree.node_of(k, l)][g_atom(k, u)];
                const double x = X[k].at(l).at(u);
                if (std::isnan(slot)) slot = x;
                else if (std::abs(slot - x) > tol)
                    throw NotGAdapted("process varies inside a G-atom at level " + std::to_string(k) + ", leaf " +
                                      tree.leaf_label(l) + ", u " + std::to_string(u));
            }
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
            s.pre(k, i) = grid[i][k + 1];
            for (std::size_t u = 0; u <= k; ++u) s.post[k][i][u] = grid[i][u];
        }
    }
    return s;
}

/// Splits a G-process given on the original space; null atoms stay NaN.
inline SplitPair optional_split(const ScenarioTree& tree, const GProcess& X) {
    const std::size_t U = tree.grid().u_size();
    SplitPair s{AdaptedProcess(tree, kNaN), {}};
    s.post.resize(X.levels());
    for (std::size_t k = 0; k < X.levels(); ++k) {
        s.post[k].assign(tree.num_nodes(k), std::vector<double>(U, kNaN));
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
            s.pre(k, i) = X.v[k][i][k + 1];
            for (std::size_t u = 0; u <= k; ++u) s.post[k][i][u] = X.v[k][i][u];
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Drifts

struct GTestResult {
    double max_residual = 0.0;
    bool pass = true;
    std::optional<std::string> worst_atom;
};

/// max |E[Y_k | G_{k-1}] - Y_{k-1}| over charged atoms.
inline GTestResult g_martingale_test(const ScenarioTree& tree, const RandomTime& tau, const GProcess& Y,
                                     double tol = 1e-10) {
    GTestResult r;
    for (std::size_t k = 1; k < Y.levels(); ++k) {
        std::vector<double> next(tree.num_leaves());
        for (std::size_t l = 0; l < next.size(); ++l) next[l] = Y.at(tree, tau, k, l);
        const auto e = g_conditional(tree, tau, next, k - 1);
        for (std::size_t i = 0; i < e.size(); ++i)
            for (std::size_t a = 0; a < e[i].size(); ++a) {
                if (std::isnan(e[i][a])) continue;
                const double d = std::abs(e[i][a] - Y.v[k - 1][i][a]);
                if (d > r.max_residual) {
                    r.max_residual = d;
                    r.worst_atom = "level " + std::to_string(k - 1) + ", node " + tree.node(k - 1, i).label +
                                   (a == k ? std::string(", before default") : ", default at index " + std::to_string(a));
                }
            }
    }
    r.pass = r.max_residual <= tol;
    return r;
}

/// Drift terms per step k >= 1, indexed by the level-(k-1) node.
struct DriftReport {
    std::vector<std::vector<double>> bracket;   // <M,X> increment
    std::vector<std::vector<double>> jump;      // B^X increment
    std::vector<std::vector<double>> pre;       // (bracket + jump) / Z_{k-1}
    std::vector<std::vector<std::vector<double>>> post;  // [k][node][u]: <X,p(u)> increment / p_{k-1}(u)
    GProcess compensated;
    GTestResult test;
};

namespace detail {
inline void require_martingale(const ScenarioTree& tree, const AdaptedProcess& X) {
    if (martingale_defect(tree, X) > 1e-10) throw InvalidSpec("process to compensate is not an F-martingale");
}

inline double increment(const ScenarioTree& tree, const AdaptedProcess& X, std::size_t k, std::size_t i) {
    return X(k, i) - X(k - 1, tree.node(k, i).parent);
}

/// Compensated X on G-atoms for levels below `levels`.
inline GProcess compensate(const ScenarioTree& tree, const AdaptedProcess& X, const DriftReport& d,
                           std::size_t levels) {
    GProcess g = empty_gprocess(tree, levels);
    for (std::size_t k = 0; k < levels; ++k)
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i)
            for (std::size_t a = 0; a <= k + 1; ++a) {
                double D = 0.0;
                bool ok = true;
                for (std::size_t j = 1; j <= k; ++j) {
                    const std::size_t q = tree.ancestor(k, i, j - 1);
                    if (a == k + 1 || a >= j) {
                        D += d.pre[j][q];
                    } else {
                        const double v = d.post.empty() ? 0.0 : d.post[j][q][a];
                        if (std::isnan(v)) ok = false;
                        D += v;
                    }
                }
                g.v[k][i][a] = ok ? X(k, i) - D : kNaN;
            }
    return g;
}
}  // namespace detail

/// Pre-default compensator (<M,X> + B^X) / Z_{k-1} of an F-martingale X.
/// The test runs on the stopped process.
inline DriftReport jeulin_yor_drift(const ScenarioTree& tree, const RandomTime& tau, const Decomposition& d,
                                    const AdaptedProcess& X) {
    detail::require_martingale(tree, X);
    const std::size_t L = tree.num_levels();
    DriftReport r;
    r.bracket.resize(L);
    r.jump.resize(L);
    r.pre.resize(L);
    for (std::size_t k = 1; k < L; ++k) {
        std::vector<double> prod(tree.num_leaves()), at_tau(tree.num_leaves());
        for (std::size_t l = 0; l < prod.size(); ++l) {
            const std::size_t i = tree.node_of(k, l);
            const double dX = detail::increment(tree, X, k, i);
            prod[l] = dX * d.dM(tree, k, i);
            at_tau[l] = tau[l] == k ? dX : 0.0;
        }
        r.bracket[k] = cond_expect(tree, prod, k - 1);
        r.jump[k] = cond_expect(tree, at_tau, k - 1);
        r.pre[k].assign(tree.num_nodes(k - 1), 0.0);
        for (std::size_t q = 0; q < r.pre[k].size(); ++q) {
            const double num = r.bracket[k][q] + r.jump[k][q];
            const double Z = d.Z(k - 1, q);
            if (Z > kNullMass) r.pre[k][q] = num / Z;
            else if (std::abs(num) > kNullMass)
                throw ZeroAzemaPredictable("Z vanishes where the drift is charged: level " + std::to_string(k - 1));
        }
    }
    // Stopped process X_{k ^ tau} minus the stopped drift.
    GProcess g = empty_gprocess(tree, L);
    for (std::size_t k = 0; k < L; ++k)
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i)
            for (std::size_t a = 0; a <= k + 1; ++a) {
                const std::size_t stop = a == k + 1 ? k : a;
                double D = 0.0;
                for (std::size_t j = 1; j <= stop; ++j) D += r.pre[j][tree.ancestor(k, i, j - 1)];
                g.v[k][i][a] = X(stop, tree.ancestor(k, i, stop)) - D;
            }
    r.compensated = std::move(g);
    r.test = g_martingale_test(tree, tau, r.compensated);
    return r;
}

/// Full G-drift of an F-martingale below the differentiability horizon
/// (the levels of p): pre-default Jeulin-Yor term, post-default
/// <X, p(tau)> / p_{k-1}(tau).
inline DriftReport full_drift(const ScenarioTree& tree, const RandomTime& tau, const Decomposition& d,
                              const DensityField& p, const AdaptedProcess& X) {
    DriftReport r = jeulin_yor_drift(tree, tau, d, X);
    const std::size_t H = p.levels();
    r.post.assign(tree.num_levels(), {});
    for (std::size_t k = 1; k < H; ++k) {
        const auto mass = g_atom_masses(tree, tau, k - 1);
        r.post[k].assign(tree.num_nodes(k - 1), std::vector<double>(k, kNaN));
        for (std::size_t u = 0; u + 1 <= k; ++u) {
            std::vector<double> prod(tree.num_nodes(k));
            for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
                const std::size_t q = tree.node(k, i).parent;
                if (!p.is_atom(k, i, u) || !p.is_atom(k - 1, q, u)) {
                    prod[i] = 0.0;
                    continue;
                }
                prod[i] = detail::increment(tree, X, k, i) * (p(k, i, u) - p(k - 1, q, u));
            }
            const auto br = cond_expect(tree, prod, k, k - 1);
            for (std::size_t q = 0; q < tree.num_nodes(k - 1); ++q) {
                if (!p.is_atom(k - 1, q, u)) continue;
                const double pk = p(k - 1, q, u);
                if (pk > 0.0) r.post[k][q][u] = br[q] / pk;
                else if (mass[q][u] > kNullMass)
                    throw ZeroDensityPredictable("density vanishes on a charged atom: level " + std::to_string(k - 1) +
                                                 ", u " + std::to_string(u));
                else r.post[k][q][u] = 0.0;
            }
        }
    }
    r.compensated = detail::compensate(tree, X, r, H);
    r.test = g_martingale_test(tree, tau, r.compensated);
    return r;
}

}  // namespace deftime
