// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "deftime/cox_product.hpp"
#include "deftime/enlargement.hpp"
#include "deftime/natural_mc.hpp"
#include "deftime/natural_sde.hpp"
#include "deftime/order_stats.hpp"
#include "deftime/runner.hpp"
#include "support/corpus.hpp"
#include "support/fixtures.hpp"

using namespace deftime;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;

    void need(bool ok, const std::string& what) {
        if (!ok && pass) {
            pass = false;
            detail = what;
        }
    }
};

std::string num(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", x);
    return buf;
}

bool close_or_both_nan(double a, double b, double tol) {
    if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
    return std::abs(a - b) <= tol;
}

struct Prepared {
    corpus::Case c;
    Decomposition d;
    IncreasingProcess A;
    DensityField p;
};

const std::vector<corpus::Case>& cases() {
    static const auto c = corpus::make(200);
    return c;
}

const std::vector<Prepared>& prepared() {
    static const auto out = [] {
        std::vector<Prepared> v;
        for (const auto& c : cases()) {
            auto d = doob_meyer(c.tree, azema(c.tree, c.tau));
            auto A = corpus::reference_A(c.tree, d);
            auto p = differentiate(c.tree, im_from_time(c.tree, c.tau), A);
            v.push_back({c, std::move(d), std::move(A), std::move(p)});
        }
        return v;
    }();
    return out;
}

AdaptedProcess random_martingale(std::mt19937_64& rng, const ScenarioTree& tree) {
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    const std::size_t n = tree.last_level();
    std::vector<double> last(tree.num_nodes(n));
    for (double& v : last) v = U(rng);
    AdaptedProcess X(tree);
    for (std::size_t k = 0; k <= n; ++k) X.values[k] = cond_expect(tree, last, n, k);
    return X;
}

// f[leaf][u] measurable at level b.
std::vector<std::vector<double>> random_payoff(std::mt19937_64& rng, const ScenarioTree& tree, std::size_t b) {
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    std::vector<std::vector<double>> by_node(tree.num_nodes(b), std::vector<double>(tree.grid().u_size()));
    for (auto& row : by_node)
        for (double& v : row) v = U(rng);
    std::vector<std::vector<double>> f(tree.num_leaves());
    for (std::size_t l = 0; l < f.size(); ++l) f[l] = by_node[tree.node_of(b, l)];
    return f;
}

// 1 -----------------------------------------------------------------------
Outcome axioms() {
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    std::size_t checked = 0;
    for (const auto& c : corpus::make(200)) {
        o.need(c.tree.num_levels() <= 4 && c.tree.num_leaves() <= 16, "corpus tree too large");
        const auto im = im_from_time(c.tree, c.tau);
        const auto r = check_axioms(c.tree, im, true, 1e-12);
        o.need(r.pass, "seed " + std::to_string(c.seed) + (r.violations.empty() ? "" : ": " + r.violations.front()));
        o.need(check_imz(c.tree, im, azema(c.tree, c.tau)).pass, "seed " + std::to_string(c.seed) + " not iM_Z");
        ++checked;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.need(secs < 10.0, "took " + num(secs) + " s");
    if (o.pass) o.detail = std::to_string(checked) + " trees, " + num(secs) + " s";
    return o;
}

// 2 -----------------------------------------------------------------------
Outcome differentiability() {
    Outcome o;
    double worst = 0.0;
    std::size_t agree = 0, yes = 0;
    for (const auto& c : cases()) {
        const auto d = doob_meyer(c.tree, azema(c.tree, c.tau));
        std::mt19937_64 rng(c.seed ^ 0x5eed);
        for (const auto& A : {corpus::reference_A(c.tree, d), corpus::random_increasing(rng, c.tree)}) {
            const auto decision = decide_differentiable(c.tree, c.tau, A);
            std::optional<DensityField> direct;
            try {
                direct = differentiate(c.tree, im_from_time(c.tree, c.tau), A);
            } catch (const NotDifferentiable&) {
            }
            o.need(decision.differentiable == direct.has_value(), "decision disagrees, seed " + std::to_string(c.seed));
            if (decision.differentiable != direct.has_value()) continue;
            ++agree;
            if (!direct) continue;
            ++yes;
            for (std::size_t k = 0; k < direct->levels(); ++k)
                for (std::size_t i = 0; i < c.tree.num_nodes(k); ++i)
                    for (std::size_t v = 0; v <= k; ++v) {
                        const bool a = direct->is_atom(k, i, v);
                        o.need(a == decision.density->is_atom(k, i, v), "support differs, seed " + std::to_string(c.seed));
                        if (a && decision.density->is_atom(k, i, v))
                            worst = std::max(worst, std::abs((*direct)(k, i, v) - (*decision.density)(k, i, v)));
                    }
        }
    }
    o.need(worst <= 1e-10, "value residual " + num(worst));
    o.need(yes > 0 && yes < agree, "both outcomes must occur");
    if (o.pass) o.detail = std::to_string(agree) + " agree (" + std::to_string(yes) + " differentiable), residual " + num(worst);
    return o;
}

// 3 -----------------------------------------------------------------------
Outcome change_of_measure() {
    Outcome o;
    double worst = 0.0;
    std::size_t indicators = 0;
    for (const auto& P : prepared()) {
        const auto& c = P.c;
        const auto q = image_measure(c.tree, c.tau);
        const auto q0 = cox_measure(c.tree, P.A);
        const std::size_t n = c.tree.last_level();
        std::vector<DensityProcess> dens;
        for (std::size_t k = 0; k <= n; ++k) {
            dens.push_back(closed_form_density(c.tree, P.d.Z, P.A, P.p, k));
            worst = std::max(worst, density_distance(radon_nikodym(c.tree, q, q0, k), dens.back()));
        }
        for (std::size_t k = 0; k <= n; ++k)
            for (std::size_t i = 0; i < c.tree.num_nodes(k); ++i)
                for (std::size_t a = 0; a < k + 2; ++a) {
                    auto h = [&](std::size_t l, std::size_t u) {
                        return c.tree.node_of(k, l) == i && DensityProcess::atom(k, u) == a ? 1.0 : 0.0;
                    };
                    const double rhs = q0.expectation([&](std::size_t l, std::size_t u) {
                        const double v = dens[k].at(c.tree, l, u);
                        return h(l, u) * (std::isnan(v) ? 0.0 : v);
                    });
                    worst = std::max(worst, std::abs(q.expectation(h) - rhs));
                    ++indicators;
                }
    }
    o.need(worst <= 1e-12, "residual " + num(worst));
    if (o.pass) o.detail = std::to_string(indicators) + " indicators, residual " + num(worst);
    return o;
}

// 4 -----------------------------------------------------------------------
Outcome cox_collapse() {
    Outcome o;
    double worst = 0.0;
    std::size_t models = 0;
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> U(0.0, 1.0);
    for (const auto& c : cases()) {
        std::vector<double> a{0.0};
        for (std::size_t k = 1; k < c.tree.num_levels(); ++k) a.push_back(a.back() + (0.9 - a.back()) * U(rng) * 0.5);
        const auto Z = fixtures::deterministic_survival(c.tree, a);
        for (double g : {0.0, 0.1, 0.3}) {
            auto d = doob_meyer(c.tree, Z);
            auto mt = build_mtilde(c.tree, d);
            auto pair = markov_pair(c.tree, d, mt, Coefficient::constant({g}), Shaping::standard(), {});
            const NaturalModel m{std::move(d), std::move(mt), std::move(pair)};
            const auto im = build_imz(c.tree, m);
            const auto fd = density_from_flow(c.tree, m, Coefficient::constant({g}));
            for (std::size_t k = 0; k < c.tree.num_levels(); ++k)
                for (std::size_t i = 0; i < c.tree.num_nodes(k); ++i)
                    for (std::size_t u = 0; u <= k; ++u) {
                        worst = std::max(worst, std::abs(im(u, k, i) - a[u]));
                        if (u > 0 || a[0] > 0.0) worst = std::max(worst, std::abs(fd.at_atoms(k, i, u) - 1.0));
                    }
            ++models;
        }
    }
    o.need(worst <= 1e-12, "tree residual " + num(worst));

    const auto t0 = std::chrono::steady_clock::now();
    mc::Model m;
    m.sigma = 0.0;
    m.g = 0.0;
    m.delta = 1e-3;
    m.steps = 1000;
    m.paths = 10000;
    const auto r = mc::cox_collapse(m, 50);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.need(r.max_family_error <= 1e-8 && r.max_density_error <= 1e-8,
           "mc family " + num(r.max_family_error) + ", density " + num(r.max_density_error));
    o.need(secs < 60.0, "mc took " + num(secs) + " s");
    if (o.pass)
        o.detail = std::to_string(models) + " tree models exact to " + num(worst) + "; mc " + num(r.max_density_error) + " in " +
                   num(secs) + " s";
    return o;
}

// 5 -----------------------------------------------------------------------
Outcome flow_fidelity() {
    Outcome o;
    mc::Model m;
    m.delta = 1e-3;
    m.steps = 500;
    m.paths = 1000;
    const auto fd = mc::fd_check(m, 100, 500, 1e-4);
    o.need(fd.paths == 1000, "finite difference used " + std::to_string(fd.paths) + " paths");
    o.need(fd.max_rel_error <= 1e-3, "finite difference relative error " + num(fd.max_rel_error));
    m.steps = 200;
    m.paths = 100000;
    const auto dc = mc::density_check(m, 100, 200);
    o.need(dc.gap() <= 3.0 * dc.se(), "density integral off by " + num(dc.gap() / dc.se()) + " SE");
    if (o.pass)
        o.detail = "fd rel error " + num(fd.max_rel_error) + "; integral gap " + num(dc.gap() / dc.se()) + " SE at 1e5 paths";
    return o;
}

// 6 -----------------------------------------------------------------------
Outcome order_statistics() {
    Outcome o;
    double enum_gap = 0.0;
    for (const auto& c : cases()) {
        std::mt19937_64 rng(c.seed + 11);
        std::uniform_int_distribution<std::size_t> pick(0, c.tree.grid().infinity());
        std::vector<RandomTime> taus{c.tau};
        for (std::size_t k = 1; k <= 3; ++k) {
            if (k > 1) {
                RandomTime t;
                for (std::size_t l = 0; l < c.tree.num_leaves(); ++l) t.index.push_back(pick(rng));
                taus.push_back(std::move(t));
            }
            for (std::size_t i = 1; i <= k; ++i)
                for (std::size_t u = 0; u < c.tree.grid().u_size(); ++u)
                    for (std::size_t t = 0; t < c.tree.num_levels(); ++t) {
                        const auto a = order_cdf(c.tree, taus, i, u, t);
                        const auto b = order_cdf_direct(c.tree, taus, i, u, t);
                        for (std::size_t n = 0; n < a.size(); ++n) enum_gap = std::max(enum_gap, std::abs(a[n] - b[n]));
                    }
        }
    }
    o.need(enum_gap <= 1e-12, "enumeration gap " + num(enum_gap));

    const auto tree = fixtures::d3_tree();
    const auto A = fixtures::d3_A(tree);
    const JointModel jm{{cox_family(tree, A), cox_family(tree, A)}, std::make_shared<ProductCopula>(), A, 2};
    const double lo = order_cdf(tree, jm, 1, 1, 2)[0], hi = order_cdf(tree, jm, 2, 1, 2)[0];
    o.need(std::abs(lo - 0.51) <= 1e-12 && std::abs(hi - 0.09) <= 1e-12, "D3 gives " + num(lo) + " / " + num(hi));

    const std::vector<std::shared_ptr<Copula>> copulas{std::make_shared<ProductCopula>(), std::make_shared<ClaytonCopula>(2.0),
                                                       std::make_shared<GumbelCopula>(1.5), std::make_shared<FGMCopula>(0.7)};
    double int_gap = 0.0;
    for (const auto& P : prepared()) {
        const auto& c = P.c;
        const std::size_t k = 2 + c.seed % 2;
        std::vector<IMFamily> marg;
        for (std::size_t j = 0; j < k; ++j) marg.push_back(j % 2 ? cox_family(c.tree, P.A) : im_from_time(c.tree, c.tau));
        const JointModel m{std::move(marg), copulas[(c.seed / 2) % copulas.size()], P.A, c.tree.last_level()};
        for (std::size_t i = 1; i <= k; ++i)
            for (std::size_t t = 0; t <= m.horizon; ++t) {
                const auto dens = order_density(c.tree, m, i, t);
                for (std::size_t n = 0; n < dens.size(); ++n) {
                    double acc = 0.0;
                    for (std::size_t u = 0; u <= t; ++u) {
                        const double dA = m.A.increment_at(c.tree, t, n, u);
                        if (dA > kNullMass) acc += dens[n][u] * dA;
                        int_gap = std::max(int_gap, std::abs(acc - order_cdf(c.tree, m, i, u, t)[n]));
                    }
                }
            }
    }
    o.need(int_gap <= 1e-10, "density integral gap " + num(int_gap));
    if (o.pass)
        o.detail = "enumeration " + num(enum_gap) + ", D3 " + num(lo) + " / " + num(hi) + ", integral " + num(int_gap);
    return o;
}

// 7 -----------------------------------------------------------------------
Outcome conditional_expectations() {
    Outcome o;
    double worst = 0.0;
    std::size_t compared = 0;
    for (const auto& P : prepared()) {
        const auto& c = P.c;
        const std::string at = "seed " + std::to_string(c.seed);
        std::mt19937_64 rng(c.seed + 4);
        for (std::size_t b = 0; b < P.p.levels(); ++b) {
            const auto f = random_payoff(rng, c.tree, b);
            std::vector<double> Y(c.tree.num_leaves());
            for (std::size_t l = 0; l < Y.size(); ++l) Y[l] = f[l][c.tau[l]];
            for (std::size_t k = 0; k <= b; ++k) {
                const auto got = conditional_expectation(c.tree, c.tau, P.p, f, k, b);
                const auto want = g_conditional(c.tree, c.tau, Y, k);
                for (std::size_t i = 0; i < got.size(); ++i)
                    for (std::size_t a = 0; a < got[i].size(); ++a) {
                        o.need(close_or_both_nan(got[i][a], want[i][a], 1e-12), at + ": conditional expectation");
                        if (!std::isnan(want[i][a]) && !std::isnan(got[i][a])) {
                            worst = std::max(worst, std::abs(got[i][a] - want[i][a]));
                            ++compared;
                        }
                    }
                const auto dv = density_versions(c.tree, c.tau, P.p, k, b);
                o.need(dv.zero_on_charged == 0 && dv.max_residual <= 1e-12, at + ": density versions");
                worst = std::max(worst, dv.max_residual);
            }
        }
        // Pre-default formula and the parametered projection identity.
        std::vector<double> H(c.tree.num_leaves());
        for (std::size_t l = 0; l < H.size(); ++l) H[l] = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
        for (std::size_t k = 0; k < c.tree.num_levels(); ++k) {
            const auto v = key_lemma(c.tree, c.tau, H, k);
            const auto e = g_conditional(c.tree, c.tau, H, k);
            for (std::size_t i = 0; i < v.size(); ++i) {
                o.need(v[i].has_value() == !std::isnan(e[i][k + 1]), at + ": pre-default support");
                if (v[i] && !std::isnan(e[i][k + 1])) worst = std::max(worst, std::abs(*v[i] - e[i][k + 1]));
            }
        }
        const auto F = random_payoff(rng, c.tree, c.tree.last_level());
        const auto oF = parametered_projection(c.tree, F);
        for (std::size_t t = 0; t < c.tree.num_levels(); ++t)
            for (std::size_t i = 0; i < c.tree.num_nodes(t); ++i)
                for (std::size_t v = 0; v <= t; ++v) {
                    auto ind = [&](std::size_t node, std::size_t u) { return node == i && u == v ? 1.0 : 0.0; };
                    worst = std::max(worst, projection_identity_residual(c.tree, F, oF, P.A, ind, t));
                }
    }
    o.need(worst <= 1e-12, "residual " + num(worst));
    if (o.pass) o.detail = std::to_string(compared) + " G-atoms, residual " + num(worst);
    return o;
}

// 8 -----------------------------------------------------------------------
Outcome splitting() {
    Outcome o;
    std::size_t processes = 0;
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (const auto& c : cases()) {
        std::mt19937_64 rng(c.seed + 5);
        const std::size_t L = c.tree.num_levels(), W = c.tree.grid().u_size();
        for (int rep = 0; rep < 3; ++rep) {
            ProductProcess X(L, std::vector<std::vector<double>>(c.tree.num_leaves(), std::vector<double>(W)));
            PathFamily onleaves(L, std::vector<double>(c.tree.num_leaves()));
            for (std::size_t k = 0; k < L; ++k) {
                std::vector<std::vector<double>> atom(c.tree.num_nodes(k), std::vector<double>(k + 2));
                for (auto& row : atom)
                    for (double& v : row) v = U(rng);
                for (std::size_t l = 0; l < c.tree.num_leaves(); ++l) {
                    for (std::size_t u = 0; u < W; ++u) X[k][l][u] = atom[c.tree.node_of(k, l)][g_atom(k, u)];
                    onleaves[k][l] = X[k][l][c.tau[l]];
                }
            }
            const auto s = optional_split(c.tree, X);
            const auto g = optional_split(c.tree, g_process_from_leaves(c.tree, c.tau, onleaves));
            for (std::size_t k = 0; k < L; ++k)
                for (std::size_t l = 0; l < c.tree.num_leaves(); ++l)
                    o.need(s.reconstruct(c.tree, c.tau, k, l) == onleaves[k][l] &&
                               g.reconstruct(c.tree, c.tau, k, l) == onleaves[k][l],
                           "seed " + std::to_string(c.seed) + " not reconstructed");
            ++processes;
        }
    }
    if (o.pass) o.detail = std::to_string(processes) + " G-adapted processes rebuilt exactly";
    return o;
}

// 9 -----------------------------------------------------------------------
Outcome drift() {
    Outcome o;
    double worst = 0.0;
    std::size_t runs = 0;
    for (const auto& P : prepared()) {
        const auto& c = P.c;
        std::mt19937_64 rng(c.seed + 6);
        std::vector<AdaptedProcess> xs{P.d.M};
        for (int j = 0; j < 3; ++j) xs.push_back(random_martingale(rng, c.tree));
        for (const auto& X : xs) {
            const auto r = full_drift(c.tree, c.tau, P.d, P.p, X);
            o.need(r.test.pass, "seed " + std::to_string(c.seed) + " compensated process fails");
            worst = std::max(worst, r.test.max_residual);
            ++runs;
        }
    }
    o.need(worst <= 1e-10, "tree residual " + num(worst));

    // Immersed case: deterministic hazard on the fixture tree.
    double immersed = 0.0;
    {
        const auto tree = fixtures::t2_tree();
        AdaptedProcess a(tree);
        a.values[1].assign(2, 0.25);
        a.values[2].assign(4, 0.5);
        const auto A = extend_to_one(tree, a);
        const auto real = realize_cox(tree, A);
        const IncreasingProcess Ar{A.values, std::vector<double>(real.tree.num_leaves(), 1.0)};
        const auto d = doob_meyer(real.tree, azema(real.tree, real.tau));
        const auto p = differentiate(real.tree, im_from_time(real.tree, real.tau), Ar);
        std::mt19937_64 rng(8);
        for (int j = 0; j < 5; ++j) {
            const auto r = full_drift(real.tree, real.tau, d, p, random_martingale(rng, real.tree));
            for (std::size_t k = 1; k < r.pre.size(); ++k)
                for (std::size_t q = 0; q < r.pre[k].size(); ++q) {
                    immersed = std::max({immersed, std::abs(r.pre[k][q]), std::abs(r.bracket[k][q]), std::abs(r.jump[k][q])});
                    for (double x : r.post[k][q])
                        if (!std::isnan(x)) immersed = std::max(immersed, std::abs(x));
                }
        }
    }
    o.need(immersed <= 1e-15, "immersed drift " + num(immersed));

    mc::Model m;
    m.steps = 200;
    m.paths = 100000;
    const auto t = mc::drift_test(m, 1.0, 1.0, 5);
    o.need(t.max_abs_t <= 3.0, "mc max |t| " + num(t.max_abs_t));
    if (o.pass)
        o.detail = std::to_string(runs) + " tree runs, residual " + num(worst) + "; mc max |t| " + num(t.max_abs_t) + " (" +
                   std::to_string(t.defaults) + " defaults)";
    return o;
}

// 10 ----------------------------------------------------------------------
Outcome determinism() {
    Outcome o;
    std::size_t runs = 0;
    for (const char* f : {"t2.json", "cox_t2.json", "d3_copula.json", "natural_t2.json", "mc_natural.json"}) {
        const auto cfg = runner::load_config(std::string(DEFTIME_SOURCE_DIR) + "/scenarios/" + f);
        runner::validate(cfg);
        const auto a = runner::run(cfg), b = runner::run(cfg);
        o.need(a.to_json().dump(2) == b.to_json().dump(2), std::string(f) + ": report differs");
        o.need(a.artifacts == b.artifacts, std::string(f) + ": artifacts differ");
        ++runs;
    }
    if (o.pass) o.detail = std::to_string(runs) + " scenarios repeated byte-identically";
    return o;
}

}  // namespace

int main() {
    const std::vector<std::function<Outcome()>> criteria{axioms,          differentiability, change_of_measure, cox_collapse,
                                                         flow_fidelity,   order_statistics,  conditional_expectations,
                                                         splitting,       drift,             determinism};
    int failed = 0;
    for (std::size_t j = 0; j < criteria.size(); ++j) {
        Outcome o;
        try {
            o = criteria[j]();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail = std::string("error: ") + e.what();
        }
        failed += !o.pass;
        std::printf("criterion %zu: %s  %s\n", j + 1, o.pass ? "PASS" : "FAIL", o.detail.c_str());
        std::fflush(stdout);
    }
    return failed ? 1 : 0;
}
