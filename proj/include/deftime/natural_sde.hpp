#pragma once

// The natural-equation construction on scenario trees: the normalised
// martingale m~, pairs (F, Y), their flows, the resulting iM_Z family and its
// density with respect to the compensator of Z.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "deftime/errors.hpp"
#include "deftime/filtration.hpp"
#include "deftime/im_family.hpp"

namespace deftime {

/// Increments dm~_k = -dM_k / p(1-Z)_k per (level, node); level 0 is zero.
struct MTilde {
    AdaptedProcess dm;
    bool hyz_holds = true;              // 1-Z_k > 0 and 1-Z_{k-1} > 0 for k >= 1
    std::vector<std::string> hyz_failures;
};

/// Requires the predictable projection of 1-Z to be positive wherever M moves.
/// With `strict_hyz` a failure of 1-Z > 0 on (0, inf) is an error instead of a flag.
inline MTilde build_mtilde(const ScenarioTree& tree, const Decomposition& d, bool strict_hyz = false) {
    MTilde out{AdaptedProcess(tree), true, {}};
    for (std::size_t k = 1; k < tree.num_levels(); ++k)
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
            const std::size_t p = tree.node(k, i).parent;
            if (1.0 - d.Z(k, i) <= 0.0 || 1.0 - d.Z(k - 1, p) <= 0.0) {
                if (strict_hyz)
                    throw HyZViolated("1-Z vanishes at level " + std::to_string(k) + ", node " + std::to_string(i));
                out.hyz_holds = false;
                if (out.hyz_failures.size() < 32)
                    out.hyz_failures.push_back("level " + std::to_string(k) + " node " + tree.node(k, i).label);
            }
            const double pp = d.predictable_one_minus_z(tree, k, i);
            const double dM = d.dM(tree, k, i);
            if (pp < kNullMass) {
                if (std::abs(dM) > kNullMass)
                    throw ZeroPredictableProjection("p(1-Z) = 0 with a martingale jump at level " + std::to_string(k) +
                                                    ", node " + std::to_string(i));
                continue;
            }
            out.dm(k, i) = -dM / pp;
        }
    return out;
}

/// Shaping function phi with phi(x) = x on [0,1].
struct Shaping {
    std::function<double(double)> phi;
    std::function<double(double)> dphi;

    /// x/(1-x) below 0, identity on [0,1], 2 - 1/x above 1: increasing, C^1,
    /// |phi| <= 2 and |phi(x)/x| <= 1.
    static Shaping standard() {
        return {[](double x) { return x < 0.0 ? x / (1.0 - x) : (x <= 1.0 ? x : 2.0 - 1.0 / x); },
                [](double x) { return x < 0.0 ? 1.0 / ((1.0 - x) * (1.0 - x)) : (x <= 1.0 ? 1.0 : 1.0 / (x * x)); }};
    }
};

/// Vector valued coefficient g(t, x) and its x-derivative.
struct Coefficient {
    std::size_t m = 1;
    std::function<std::vector<double>(double, double)> g;
    std::function<std::vector<double>(double, double)> dg;

    static Coefficient constant(std::vector<double> c) {
        const std::size_t m = c.size();
        return {m, [c](double, double) { return c; },
                [m](double, double) { return std::vector<double>(m, 0.0); }};
    }
};

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += a[j] * b[j];
    return s;
}

/// The pair (F, Y) on a tree. F is predictable: it sees the level, the parent
/// node and the pre-jump state. dY[k][node] is the driver jump into `node`.
struct NaturalPair {
    std::size_t m = 1;
    std::function<std::vector<double>(std::size_t, std::size_t, double)> F;
    std::function<std::vector<double>(std::size_t, std::size_t, double)> dF;
    std::vector<std::vector<std::vector<double>>> dY;

    [[nodiscard]] std::vector<double> jump(std::size_t k, std::size_t node) const {
        if (dY.empty()) return std::vector<double>(m, 0.0);
        return dY[k][node];
    }
};

/// Everything the flow needs on a tree.
struct NaturalModel {
    Decomposition decomp;
    MTilde mtilde;
    NaturalPair pair;
};

/// Zero driver jumps on every node.
inline std::vector<std::vector<std::vector<double>>> zero_drivers(const ScenarioTree& tree, std::size_t m) {
    std::vector<std::vector<std::vector<double>>> dY(tree.num_levels());
    for (std::size_t k = 0; k < tree.num_levels(); ++k) dY[k].assign(tree.num_nodes(k), std::vector<double>(m, 0.0));
    return dY;
}

/// Membership in the admissible jump set G_t of the Markovian pair, checked on an x lattice.
class JumpSetOracle {
public:
    JumpSetOracle(const ScenarioTree& tree, const Decomposition& d, const MTilde& mt, Coefficient g, Shaping phi,
                  double x_lo = -2.0, double x_hi = 3.0, std::size_t x_points = 501)
        : tree_(&tree), d_(&d), mt_(&mt), g_(std::move(g)), phi_(std::move(phi)), x_lo_(x_lo), x_hi_(x_hi),
          x_points_(x_points) {}

    /// Tests condition o: 2|g(t,x).z| < 1 + dm~.
    [[nodiscard]] bool first_condition(std::size_t k, std::size_t node, const std::vector<double>& z) const {
        const double room = room_at(k, node);
        const double t = tree_->grid().time(k);
        for (std::size_t j = 0; j < x_points_; ++j) {
            const double x = lattice(j);
            if (!(2.0 * std::abs(dot(g_.g(t, x), z)) < room)) return false;
        }
        return true;
    }

    /// Tests condition oo: dF(x).z > -(1 + dm~), with p(1-Z)_t inside phi'.
    [[nodiscard]] bool second_condition(std::size_t k, std::size_t node, const std::vector<double>& z) const {
        const double room = room_at(k, node);
        const double t = tree_->grid().time(k);
        const double pp = d_->predictable_one_minus_z(*tree_, k, node);
        for (std::size_t j = 0; j < x_points_; ++j) {
            const double x = lattice(j);
            const auto g = g_.g(t, x);
            const auto dg = g_.dg(t, x);
            double s = 0.0;
            for (std::size_t c = 0; c < g.size(); ++c) {
                const double dF = -phi_.dphi(pp - x) * phi_.phi(x) * g[c] + phi_.phi(pp - x) * phi_.dphi(x) * g[c] +
                                  phi_.phi(pp - x) * phi_.phi(x) * dg[c];
                s += dF * z[c];
            }
            if (!(s > -room)) return false;
        }
        return true;
    }

    [[nodiscard]] bool contains(std::size_t k, std::size_t node, const std::vector<double>& z) const {
        return first_condition(k, node, z) && second_condition(k, node, z);
    }

private:
    [[nodiscard]] double room_at(std::size_t k, std::size_t node) const {
        const double room = 1.0 + mt_->dm(k, node);
        if (room <= 0.0)
            throw EmptyJumpSetAtStep("no admissible driver jump at level " + std::to_string(k) + ", node " +
                                     std::to_string(node) + " (1 + dm~ = " + std::to_string(room) + ")");
        return room;
    }
    [[nodiscard]] double lattice(std::size_t j) const {
        return x_lo_ + (x_hi_ - x_lo_) * static_cast<double>(j) / static_cast<double>(x_points_ - 1);
    }

    const ScenarioTree* tree_;
    const Decomposition* d_;
    const MTilde* mt_;
    Coefficient g_;
    Shaping phi_;
    double x_lo_, x_hi_;
    std::size_t x_points_;
};

/// F(X)_t = phi(p(1-Z)_t - X_{t-}) phi(X_{t-}) g(t, X_{t-}). Nonzero driver
/// jumps must lie in the admissible set; zero jumps are always accepted.
inline NaturalPair markov_pair(const ScenarioTree& tree, const Decomposition& d, const MTilde& mt, Coefficient g,
                               Shaping phi = Shaping::standard(),
                               std::vector<std::vector<std::vector<double>>> dY = {}) {
    NaturalPair pair;
    pair.m = g.m;
    const ScenarioTree* tp = &tree;
    // The predictable projection only depends on (level, parent).
    std::vector<std::vector<double>> pp(tree.num_levels());
    for (std::size_t k = 1; k < tree.num_levels(); ++k) {
        pp[k].assign(tree.num_nodes(k - 1), 0.0);
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i)
            pp[k][tree.node(k, i).parent] = d.predictable_one_minus_z(tree, k, i);
    }
    pair.F = [g, phi, pp, tp](std::size_t k, std::size_t parent, double x) {
        auto v = g.g(tp->grid().time(k), x);
        const double s = phi.phi(pp[k][parent] - x) * phi.phi(x);
        for (auto& c : v) c *= s;
        return v;
    };
    pair.dF = [g, phi, pp, tp](std::size_t k, std::size_t parent, double x) {
        const double t = tp->grid().time(k);
        auto v = g.g(t, x);
        const auto dv = g.dg(t, x);
        const double p = pp[k][parent];
        for (std::size_t c = 0; c < v.size(); ++c)
            v[c] = -phi.dphi(p - x) * phi.phi(x) * v[c] + phi.phi(p - x) * phi.dphi(x) * v[c] +
                   phi.phi(p - x) * phi.phi(x) * dv[c];
        return v;
    };
    if (dY.empty()) dY = zero_drivers(tree, g.m);
    JumpSetOracle oracle(tree, d, mt, g, phi);
    for (std::size_t k = 1; k < tree.num_levels(); ++k)
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
            bool zero = true;
            for (double z : dY[k][i]) zero = zero && z == 0.0;
            if (!zero && !oracle.contains(k, i, dY[k][i]))
                throw ConditionViolated("o,oo", "driver jump at level " + std::to_string(k) + ", node " + std::to_string(i));
        }
    pair.dY = std::move(dY);
    return pair;
}

// ---------------------------------------------------------------------------
// Pair validation

struct PairReport {
    bool pass = true;
    bool integrability_vacuous = true;  // finite sums on a tree
    bool boundary_attained = false;     // some inequality holds with equality
    std::vector<std::string> boundary_locations;
};

/// Checks conditions (i)-(iii) at every node, for states on an x lattice over
/// [0,1] (pairs of lattice points for (iii)). Violations raise ConditionViolated
/// listing every failed condition at the first failing node.
inline PairReport validate_pair(const ScenarioTree& tree, const NaturalModel& model, std::size_t x_points = 41,
                                double tol = 1e-12) {
    PairReport report;
    const auto& d = model.decomp;
    const auto& pair = model.pair;
    std::vector<double> xs(x_points);
    for (std::size_t j = 0; j < x_points; ++j) xs[j] = static_cast<double>(j) / static_cast<double>(x_points - 1);
    for (std::size_t k = 1; k < tree.num_levels(); ++k)
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
            const std::size_t parent = tree.node(k, i).parent;
            const double dm = model.mtilde.dm(k, i);
            const double pp = d.predictable_one_minus_z(tree, k, i);
            const auto dY = pair.jump(k, i);
            std::vector<double> Fx(x_points);
            for (std::size_t j = 0; j < x_points; ++j) Fx[j] = dot(pair.F(k, parent, xs[j]), dY);
            double worst[3] = {kInfinity, kInfinity, kInfinity};
            for (std::size_t j = 0; j < x_points; ++j) {
                const double x = xs[j];
                const double gap = pp - x;
                worst[0] = std::min(worst[0], dm - (gap != 0.0 ? Fx[j] / gap : 0.0));
                worst[1] = std::min(worst[1], dm + (x != 0.0 ? Fx[j] / x : 0.0));
                for (std::size_t j2 = 0; j2 < x_points; ++j2)
                    if (j2 != j) worst[2] = std::min(worst[2], dm + (Fx[j] - Fx[j2]) / (x - xs[j2]));
                    else worst[2] = std::min(worst[2], dm);
            }
            std::string failed;
            static const char* names[3] = {"i", "ii", "iii"};
            for (int c = 0; c < 3; ++c) {
                if (worst[c] < -1.0 - tol) failed += failed.empty() ? names[c] : std::string(",") + names[c];
                else if (worst[c] <= -1.0 + tol) {
                    report.boundary_attained = true;
                    if (report.boundary_locations.size() < 32)
                        report.boundary_locations.push_back(std::string(names[c]) + " at level " + std::to_string(k) +
                                                            " node " + tree.node(k, i).label);
                }
            }
            if (!failed.empty())
                throw ConditionViolated(failed, "level " + std::to_string(k) + ", node " + std::to_string(i) +
                                                    " (" + tree.node(k, i).label + ")");
        }
    return report;
}

// ---------------------------------------------------------------------------
// Flows

/// Solution of the natural equation started at level `start`, one start value
/// per start node; X and DX are meaningful on levels >= start.
struct FlowSolution {
    std::size_t start = 0;
    AdaptedProcess X;
    AdaptedProcess DX;
};

inline FlowSolution solve_flow(const ScenarioTree& tree, const NaturalModel& model, std::size_t start,
                               const std::vector<double>& x0, double band_guard = 0.5) {
    if (start >= tree.num_levels()) throw LevelMismatch("start level out of range");
    if (x0.size() != tree.num_nodes(start)) throw LevelMismatch("one start value per start node is required");
    FlowSolution s{start, AdaptedProcess(tree, std::numeric_limits<double>::quiet_NaN()),
                   AdaptedProcess(tree, std::numeric_limits<double>::quiet_NaN())};
    s.X.values[start] = x0;
    s.DX.values[start].assign(x0.size(), 1.0);
    for (std::size_t k = start + 1; k < tree.num_levels(); ++k)
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
            const std::size_t p = tree.node(k, i).parent;
            const double x = s.X(k - 1, p);
            const auto dY = model.pair.jump(k, i);
            const double dm = model.mtilde.dm(k, i);
            s.X(k, i) = x * (1.0 + dm) + dot(model.pair.F(k, p, x), dY);
            s.DX(k, i) = s.DX(k - 1, p) * (1.0 + dm + dot(model.pair.dF(k, p, x), dY));
            if (s.X(k, i) < -band_guard || s.X(k, i) > 1.0 + band_guard)
                throw SchemeUnstable("flow left the band at level " + std::to_string(k) + ", node " + std::to_string(i));
        }
    return s;
}

/// Flows L^v started from 1 - Z_v at every level v.
inline std::vector<FlowSolution> natural_flows(const ScenarioTree& tree, const NaturalModel& model) {
    std::vector<FlowSolution> L;
    for (std::size_t v = 0; v < tree.num_levels(); ++v) {
        std::vector<double> x0(tree.num_nodes(v));
        for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = 1.0 - model.decomp.Z(v, i);
        L.push_back(solve_flow(tree, model, v, x0));
    }
    return L;
}

/// M^u_t = min_{u<=v<=t} (L^v_t)^+ ^ (1 - Z_t) for u <= t; for t < u the
/// family is completed by E[1 - Z_u | F_t]; M^inf = 1.
inline IMFamily build_imz(const ScenarioTree& tree, const NaturalModel& model) {
    const auto L = natural_flows(tree, model);
    const auto& Z = model.decomp.Z;
    IMFamily im;
    for (std::size_t u = 0; u < tree.num_levels(); ++u) {
        AdaptedProcess Mu(tree);
        std::vector<double> top(tree.num_nodes(u));
        for (std::size_t i = 0; i < top.size(); ++i) top[i] = 1.0 - Z(u, i);
        for (std::size_t t = 0; t < u; ++t) Mu.values[t] = cond_expect(tree, top, u, t);
        Mu.values[u] = top;
        for (std::size_t t = u + 1; t < tree.num_levels(); ++t)
            for (std::size_t i = 0; i < tree.num_nodes(t); ++i) {
                double m = 1.0 - Z(t, i);
                for (std::size_t v = u; v <= t; ++v) m = std::min(m, std::max(L[v].X(t, i), 0.0));
                Mu(t, i) = m;
            }
        im.M.push_back(std::move(Mu));
    }
    im.M.emplace_back(tree, 1.0);
    return im;
}

/// kappa_v = 1 + dm~_v - (1 - Z_{v-}) g(1 - Z_{v-}).dY_v, read off the pair as
/// F(1-Z_{v-}) = dA_v (1-Z_{v-}) g(...) when phi is the identity on [0,1].
inline AdaptedProcess kappa(const ScenarioTree& tree, const NaturalModel& model, const Coefficient& g) {
    AdaptedProcess out(tree, 1.0);
    for (std::size_t k = 1; k < tree.num_levels(); ++k)
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
            const std::size_t p = tree.node(k, i).parent;
            const double x = 1.0 - model.decomp.Z(k - 1, p);
            out(k, i) = 1.0 + model.mtilde.dm(k, i) - x * dot(g.g(tree.grid().time(k), x), model.pair.jump(k, i));
        }
    return out;
}

/// p_t(u) from the flow: jump ratio [Xi^u_t(1-Z_u) - Xi^u_t(1-Z_u - kappa_u dA_u)] / dA_u
/// at atoms of A, DX^u_t(1-Z_u) elsewhere (reported where A has no atom as well).
struct FlowDensity {
    DensityField at_atoms;                                // NaN off atoms, as in differentiate()
    std::vector<std::vector<std::vector<double>>> slope;  // DX^u_t(1-Z_u) for every u <= t
};

inline FlowDensity density_from_flow(const ScenarioTree& tree, const NaturalModel& model, const Coefficient& g) {
    const auto& d = model.decomp;
    const auto L = natural_flows(tree, model);
    const auto kap = kappa(tree, model, g);
    FlowDensity out;
    out.at_atoms.p.resize(tree.num_levels());
    out.slope.resize(tree.num_levels());
    for (std::size_t t = 0; t < tree.num_levels(); ++t) {
        out.at_atoms.p[t].assign(tree.num_nodes(t), std::vector<double>(t + 1, std::numeric_limits<double>::quiet_NaN()));
        out.slope[t].assign(tree.num_nodes(t), std::vector<double>(t + 1, 0.0));
    }
    for (std::size_t u = 0; u < tree.num_levels(); ++u) {
        // Second flow from the left-shifted start 1 - Z_u - kappa_u dA_u.
        std::vector<double> shifted(tree.num_nodes(u));
        std::vector<double> dA(tree.num_nodes(u));
        for (std::size_t i = 0; i < shifted.size(); ++i) {
            dA[i] = d.dA(tree, u, i);
            shifted[i] = 1.0 - d.Z(u, i) - kap(u, i) * dA[i];
        }
        const auto low = solve_flow(tree, model, u, shifted);
        for (std::size_t t = u; t < tree.num_levels(); ++t)
            for (std::size_t i = 0; i < tree.num_nodes(t); ++i) {
                const std::size_t a = tree.ancestor(t, i, u);
                out.slope[t][i][u] = L[u].DX(t, i);
                if (dA[a] > kNullMass) out.at_atoms.p[t][i][u] = (L[u].X(t, i) - low.X(t, i)) / dA[a];
            }
    }
    return out;
}

}  // namespace deftime
