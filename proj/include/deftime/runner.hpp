#pragma once

// Scenario files, verification suites and report/CSV emission.
//
// A scenario is one JSON document. Trees are either nested nodes
// ({"times": [...], "root": {"label", "prob", "children"}}) or a product of
// per-level branchings ({"times", "probs", "labels"}). Random times are
// given per leaf label as a grid index or "inf"; increasing processes as
// one array of node values per level.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "deftime/change_of_variable.hpp"
#include "deftime/cox_product.hpp"
#include "deftime/enlargement.hpp"
#include "deftime/errors.hpp"
#include "deftime/filtration.hpp"
#include "deftime/im_family.hpp"
#include "deftime/natural_mc.hpp"
#include "deftime/natural_sde.hpp"
#include "deftime/order_stats.hpp"

namespace deftime::runner {

using json = nlohmann::json;

inline const std::vector<std::string>& artifact_names() {
    static const std::vector<std::string> names{"density", "order-cdf", "drift"};
    return names;
}

struct ScenarioConfig {
    std::string name = "scenario";
    std::string engine;  // tree | mc
    std::string model;   // explicit-tree | cox | natural | copula
    std::optional<std::uint64_t> seed;
    std::size_t paths = 10000;
    double step = 1e-3;
    std::vector<std::string> suites;
    json body;  // model parameters as read
};

namespace detail {

[[noreturn]] inline void bad(const std::string& what) { throw ConfigError(what); }

inline const json& need(const json& j, const char* key, const std::string& where) {
    if (!j.is_object() || !j.contains(key)) bad(where + ": missing '" + key + "'");
    return j.at(key);
}

inline double number(const json& j, const std::string& where) {
    if (!j.is_number()) bad(where + ": expected a number");
    return j.get<double>();
}

inline NodeSpec node_spec(const json& j, const std::string& where) {
    if (!j.is_object()) bad(where + ": node must be an object");
    NodeSpec n;
    n.label = j.value("label", std::string{});
    n.prob = j.contains("prob") ? number(j.at("prob"), where + ".prob") : 1.0;
    if (j.contains("children")) {
        if (!j.at("children").is_array()) bad(where + ".children: expected an array");
        for (std::size_t c = 0; c < j.at("children").size(); ++c)
            n.children.push_back(node_spec(j.at("children")[c], where + ".children[" + std::to_string(c) + "]"));
    }
    return n;
}

inline TreeSpec tree_spec(const json& j) {
    const auto& times = need(j, "times", "tree");
    if (!times.is_array()) bad("tree.times: expected an array");
    std::vector<double> t;
    for (const auto& x : times) t.push_back(number(x, "tree.times"));
    if (j.contains("probs")) {
        auto probs = j.at("probs").get<std::vector<std::vector<double>>>();
        auto labels = j.contains("labels") ? j.at("labels").get<std::vector<std::vector<std::string>>>()
                                           : std::vector<std::vector<std::string>>{};
        auto hidden = j.value("hidden_probs", std::vector<double>{});
        auto hidden_labels = j.value("hidden_labels", std::vector<std::string>{});
        auto s = product_spec(std::move(t), probs, labels, hidden, hidden_labels);
        if (j.contains("horizon")) s.horizon = j.at("horizon").get<std::size_t>();
        return s;
    }
    TreeSpec s;
    s.times = std::move(t);
    if (j.contains("horizon")) s.horizon = j.at("horizon").get<std::size_t>();
    s.root = node_spec(need(j, "root", "tree"), "tree.root");
    return s;
}

inline RandomTime random_time(const ScenarioTree& tree, const json& j) {
    if (!j.is_object()) bad("tau: expected an object keyed by leaf label");
    RandomTime tau;
    tau.index.assign(tree.num_leaves(), 0);
    for (std::size_t l = 0; l < tree.num_leaves(); ++l) {
        const auto& label = tree.leaf_label(l);
        if (!j.contains(label)) bad("tau: no value for leaf '" + label + "'");
        const auto& v = j.at(label);
        if (v.is_string()) {
            if (v.get<std::string>() != "inf") bad("tau." + label + ": only \"inf\" is accepted as text");
            tau.index[l] = tree.grid().infinity();
        } else if (v.is_number_unsigned()) {
            tau.index[l] = v.get<std::size_t>();
            if (tau.index[l] > tree.grid().last()) bad("tau." + label + ": index beyond the grid");
        } else {
            bad("tau." + label + ": expected a grid index or \"inf\"");
        }
    }
    return tau;
}

inline IncreasingProcess increasing(const ScenarioTree& tree, const json& j) {
    if (!j.is_array() || j.size() != tree.num_levels()) bad("A: need one array per level");
    AdaptedProcess A(tree);
    for (std::size_t k = 0; k < tree.num_levels(); ++k) {
        if (!j[k].is_array() || j[k].size() != tree.num_nodes(k))
            bad("A[" + std::to_string(k) + "]: need one value per node");
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) A(k, i) = number(j[k][i], "A");
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i) {
            const double prev = k == 0 ? 0.0 : A(k - 1, tree.node(k, i).parent);
            if (A(k, i) < prev - 1e-15 || A(k, i) < 0.0)
                throw NotIncreasing("A decreases at level " + std::to_string(k) + ", node " + tree.node(k, i).label);
        }
    }
    return extend_to_one(tree, std::move(A));
}

/// Compensator of the Azema supermartingale, renormalised when it reaches 1.
inline IncreasingProcess reference_process(const ScenarioTree& tree, const Decomposition& d) {
    const std::size_t n = tree.last_level();
    double top = 0.0;
    for (std::size_t i = 0; i < tree.num_nodes(n); ++i) top = std::max(top, d.A(n, i));
    if (top < 1.0 - 1e-9) return d.compensator(tree);
    return normalize_A(tree, d.A).A;
}

inline std::string fmt(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.12g", x);
    return buf;
}

inline std::string time_label(const TimeGrid& g, std::size_t u) {
    return u >= g.size() ? std::string("inf") : fmt(g.time(u));
}

}  // namespace detail

inline std::vector<std::string> allowed_suites(const std::string& engine, const std::string& model) {
    if (engine == "mc") return {"natural", "enlargement"};
    if (model == "copula") return {"im", "copula"};
    if (model == "natural") return {"im", "cox", "natural", "enlargement"};
    return {"im", "cox", "enlargement"};
}

inline ScenarioConfig parse_config(const json& j) {
    if (!j.is_object()) detail::bad("scenario must be a JSON object");
    ScenarioConfig c;
    c.body = j;
    c.name = j.value("name", c.name);
    c.engine = j.value("engine", std::string{});
    c.model = j.value("model", std::string{});
    if (c.engine != "tree" && c.engine != "mc") detail::bad("engine must be 'tree' or 'mc'");
    static const std::vector<std::string> models{"explicit-tree", "cox", "natural", "copula"};
    if (std::find(models.begin(), models.end(), c.model) == models.end())
        detail::bad("model must be one of explicit-tree, cox, natural, copula");
    if (c.engine == "mc" && c.model != "natural") detail::bad("the mc engine runs the natural model only");
    if (j.contains("seed")) {
        if (!j.at("seed").is_number_unsigned()) detail::bad("seed must be a non-negative integer");
        c.seed = j.at("seed").get<std::uint64_t>();
    }
    if (j.contains("paths")) c.paths = j.at("paths").get<std::size_t>();
    if (j.contains("step")) c.step = detail::number(j.at("step"), "step");
    c.suites = j.contains("suites") ? j.at("suites").get<std::vector<std::string>>() : allowed_suites(c.engine, c.model);
    const auto ok = allowed_suites(c.engine, c.model);
    for (const auto& s : c.suites)
        if (std::find(ok.begin(), ok.end(), s) == ok.end())
            detail::bad("suite '" + s + "' is not available for engine " + c.engine + ", model " + c.model);
    if (c.engine == "tree") {
        (void)detail::need(j, "tree", "scenario");
        if (c.model != "copula") (void)detail::need(j, c.model == "cox" ? "A" : "tau", "scenario");
        if (c.model == "copula") {
            (void)detail::need(j, "A", "scenario");
            (void)detail::need(detail::need(j, "copula", "scenario"), "marginals", "copula");
        }
    }
    return c;
}

/// Command line overrides are applied before validation of the mc fields.
inline void apply_overrides(ScenarioConfig& c, std::optional<std::uint64_t> seed, std::optional<std::size_t> paths,
                            std::optional<double> step) {
    if (seed) c.seed = seed;
    if (paths) c.paths = *paths;
    if (step) c.step = *step;
}

inline void validate(const ScenarioConfig& c) {
    if (c.engine == "mc") {
        if (!c.seed) detail::bad("the mc engine needs a seed");
        if (c.paths == 0) detail::bad("paths must be positive");
        if (!(c.step > 0.0)) detail::bad("step must be positive");
    }
}

inline ScenarioConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) detail::bad("cannot open scenario file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        detail::bad(path + ": " + e.what());
    }
    return parse_config(j);
}

// ---------------------------------------------------------------------------
// Scenario construction

struct TreeScenario {
    ScenarioTree tree;
    RandomTime tau;
    Decomposition d;
    IncreasingProcess A;
    std::optional<NaturalModel> natural;
    double g = 0.0;
    std::optional<JointModel> joint;
};

inline TreeScenario build_tree_scenario(const ScenarioConfig& c) {
    TreeScenario s;
    const auto& j = c.body;
    const auto base = build_tree(detail::tree_spec(j.at("tree")));
    if (c.model == "cox") {
        const auto A = detail::increasing(base, j.at("A"));
        auto r = realize_cox(base, A);
        s.tree = std::move(r.tree);
        s.tau = std::move(r.tau);
        s.A = IncreasingProcess{A.values, std::vector<double>(s.tree.num_leaves(), 1.0)};
        s.d = doob_meyer(s.tree, azema(s.tree, s.tau));
        return s;
    }
    s.tree = base;
    if (c.model == "copula") {
        s.A = detail::increasing(s.tree, j.at("A"));
        const auto& cj = j.at("copula");
        JointModel jm;
        jm.copula = make_copula(cj.value("name", std::string("product")), cj.value("theta", 0.0));
        jm.A = s.A;
        jm.horizon = s.tree.last_level();
        for (const auto& m : cj.at("marginals")) {
            const std::string kind = m.is_string() ? m.get<std::string>() : m.value("kind", std::string{});
            if (kind == "cox") jm.marginals.push_back(cox_family(s.tree, s.A));
            else if (kind == "time") jm.marginals.push_back(im_from_time(s.tree, detail::random_time(s.tree, m.at("tau"))));
            else detail::bad("copula marginal kind must be 'cox' or 'time'");
        }
        if (jm.marginals.empty()) detail::bad("copula needs at least one marginal");
        s.joint = std::move(jm);
        return s;
    }
    s.tau = detail::random_time(s.tree, j.at("tau"));
    s.d = doob_meyer(s.tree, azema(s.tree, s.tau));
    s.A = j.contains("A") ? detail::increasing(s.tree, j.at("A")) : detail::reference_process(s.tree, s.d);
    if (c.model == "natural") {
        const json nat = j.value("natural", json::object());
        s.g = nat.value("g", 0.0);
        auto dY = zero_drivers(s.tree, 1);
        if (nat.contains("drivers"))
            for (const auto& [label, v] : nat.at("drivers").items()) {
                bool found = false;
                for (std::size_t k = 1; k < s.tree.num_levels(); ++k)
                    if (auto i = s.tree.find_node(k, label)) {
                        dY[k][*i][0] = v.get<double>();
                        found = true;
                    }
                if (!found) detail::bad("natural.drivers: no node labelled '" + label + "'");
            }
        auto mt = build_mtilde(s.tree, s.d);
        auto pair = markov_pair(s.tree, s.d, mt, Coefficient::constant({s.g}), Shaping::standard(), std::move(dY));
        s.natural = NaturalModel{s.d, std::move(mt), std::move(pair)};
    }
    return s;
}

inline mc::Model build_mc_model(const ScenarioConfig& c) {
    validate(c);
    const json p = c.body.value("natural", json::object());
    mc::Model m;
    m.lambda = p.value("lambda", m.lambda);
    m.sigma = p.value("sigma", m.sigma);
    m.g = p.value("g", m.g);
    m.z0 = p.value("z0", m.z0);
    m.delta = c.step;
    const double horizon = p.value("horizon", 0.2);
    m.steps = static_cast<std::size_t>(std::llround(horizon / c.step));
    if (m.steps < 10) detail::bad("horizon must cover at least 10 steps");
    m.paths = c.paths;
    m.seed = *c.seed;
    return m;
}

// ---------------------------------------------------------------------------
// Suites

struct SuiteResult {
    std::string name;
    bool pass = true;
    json metrics = json::object();
    std::vector<std::string> failures;

    void check(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            failures.push_back(what);
        }
    }
};

struct Report {
    std::string scenario;
    std::string engine;
    std::string model;
    std::optional<std::uint64_t> seed;
    std::vector<SuiteResult> suites;
    std::map<std::string, std::string> artifacts;  // name -> CSV text
    std::vector<std::string> files;  // names relative to the output directory

    [[nodiscard]] bool pass() const {
        return std::all_of(suites.begin(), suites.end(), [](const SuiteResult& s) { return s.pass; });
    }
    [[nodiscard]] json to_json() const {
        json j;
        j["scenario"] = scenario;
        j["engine"] = engine;
        j["model"] = model;
        j["seed"] = seed ? json(*seed) : json(nullptr);
        j["pass"] = pass();
        j["suites"] = json::array();
        for (const auto& s : suites)
            j["suites"].push_back({{"name", s.name}, {"pass", s.pass}, {"metrics", s.metrics}, {"failures", s.failures}});
        j["artifacts"] = json::array();
        for (const auto& [k, v] : artifacts) j["artifacts"].push_back(k);
        j["files"] = files;
        return j;
    }
};

namespace detail {

inline std::string density_csv(const ScenarioTree& tree, const DensityField& p) {
    std::ostringstream o;
    o << "level,node,u,time,value\n";
    for (std::size_t k = 0; k < p.levels(); ++k)
        for (std::size_t i = 0; i < tree.num_nodes(k); ++i)
            for (std::size_t u = 0; u <= k; ++u)
                if (p.is_atom(k, i, u))
                    o << k << ',' << tree.node(k, i).label << ',' << u << ',' << time_label(tree.grid(), u) << ','
                      << fmt(p(k, i, u)) << '\n';
    return o.str();
}

inline std::string first(const CheckReport& r) { return r.violations.empty() ? "" : ": " + r.violations.front(); }

inline SuiteResult suite_im(const TreeScenario& s, Report& report) {
    SuiteResult r;
    r.name = "im";
    if (s.joint) {
        for (std::size_t j = 0; j < s.joint->k(); ++j) {
            const auto ax = check_axioms(s.tree, s.joint->marginals[j], true);
            r.check(ax.pass, "marginal " + std::to_string(j) + " violates the family axioms" + first(ax));
        }
        r.metrics["marginals"] = s.joint->k();
        return r;
    }
    const auto im = im_from_time(s.tree, s.tau);
    const auto ax = check_axioms(s.tree, im, true);
    r.check(ax.pass, "increasing family of the random time violates the axioms" + first(ax));
    const auto imz = check_imz(s.tree, im, s.d.Z);
    r.check(imz.pass, "family is not pinned to the survival process" + first(imz));
    r.metrics["axiom_violations"] = ax.violations.size();
    try {
        const auto p = differentiate(s.tree, im, s.A);
        const double res = reconstruction_residual(s.tree, im, s.A, p);
        r.metrics["differentiable"] = true;
        r.metrics["reconstruction_residual"] = res;
        r.check(res <= 1e-12, "density does not reconstruct the family");
        report.artifacts["density"] = density_csv(s.tree, p);
    } catch (const NotDifferentiable& e) {
        r.metrics["differentiable"] = false;
        r.metrics["reason"] = e.what();
    }
    return r;
}

inline SuiteResult suite_cox(const TreeScenario& s) {
    SuiteResult r;
    r.name = "cox";
    const auto decision = decide_differentiable(s.tree, s.tau, s.A);
    bool direct = true;
    DensityField p;
    try {
        p = differentiate(s.tree, im_from_time(s.tree, s.tau), s.A);
    } catch (const NotDifferentiable&) {
        direct = false;
    }
    r.metrics["differentiable"] = decision.differentiable;
    r.check(decision.differentiable == direct, "absolute continuity decision disagrees with direct differentiation");
    if (!decision.differentiable || !direct) {
        if (decision.witness)
            r.metrics["witness"] = {{"leaf", s.tree.leaf_label(decision.witness->leaf)}, {"u", decision.witness->u}};
        return r;
    }
    double value_gap = 0.0;
    for (std::size_t k = 0; k < p.levels(); ++k)
        for (std::size_t i = 0; i < s.tree.num_nodes(k); ++i)
            for (std::size_t v = 0; v <= k; ++v)
                if (p.is_atom(k, i, v)) value_gap = std::max(value_gap, std::abs(p(k, i, v) - (*decision.density)(k, i, v)));
    r.metrics["density_value_gap"] = value_gap;
    r.check(value_gap <= 1e-10, "density from the measure comparison differs from direct differentiation");
    const auto q = image_measure(s.tree, s.tau);
    const auto q0 = cox_measure(s.tree, s.A);
    double rn = 0.0, girsanov = 0.0;
    const std::size_t n = s.tree.last_level();
    std::vector<DensityProcess> P;
    for (std::size_t k = 0; k < s.tree.num_levels(); ++k) {
        P.push_back(closed_form_density(s.tree, s.d.Z, s.A, p, k));
        rn = std::max(rn, density_distance(radon_nikodym(s.tree, q, q0, k), P.back()));
    }
    for (std::size_t i = 0; i < s.tree.num_nodes(n); ++i)
        for (std::size_t a = 0; a < n + 2; ++a) {
            auto h = [&](std::size_t l, std::size_t u) {
                return s.tree.node_of(n, l) == i && DensityProcess::atom(n, u) == a ? 1.0 : 0.0;
            };
            const double rhs = q0.expectation([&](std::size_t l, std::size_t u) {
                const double v = P[n].at(s.tree, l, u);
                return h(l, u) * (std::isnan(v) ? 0.0 : v);
            });
            girsanov = std::max(girsanov, std::abs(q.expectation(h) - rhs));
        }
    const double dual = dual_projection_identity(s.tree, s.tau, s.A, p);
    r.metrics["radon_nikodym_residual"] = rn;
    r.metrics["change_of_measure_residual"] = girsanov;
    r.metrics["dual_projection_residual"] = dual;
    r.check(rn <= 1e-12, "Radon-Nikodym density differs from the two-branch closed form");
    r.check(girsanov <= 1e-12, "expectations under the two product measures do not match");
    r.check(dual <= 1e-12, "dual projection of the default indicator is not the density integral");
    return r;
}

inline SuiteResult suite_natural_tree(const TreeScenario& s, Report& report) {
    SuiteResult r;
    r.name = "natural";
    const auto& m = *s.natural;
    r.metrics["survival_positive"] = m.mtilde.hyz_holds;
    try {
        const auto pr = validate_pair(s.tree, m);
        r.metrics["boundary_attained"] = pr.boundary_attained;
    } catch (const ConditionViolated& e) {
        r.check(false, std::string("pair conditions fail: ") + e.what());
        return r;
    }
    const auto im = build_imz(s.tree, m);
    const auto ax = check_axioms(s.tree, im);
    r.check(ax.pass, "flow family violates the axioms" + first(ax));
    const auto imz = check_imz(s.tree, im, m.decomp.Z);
    r.check(imz.pass, "flow family is not pinned to the survival process" + first(imz));
    const IncreasingProcess A{m.decomp.A, std::vector<double>(s.tree.num_leaves(), 1.0)};
    const auto fd = density_from_flow(s.tree, m, Coefficient::constant({s.g}));
    try {
        const auto p = differentiate(s.tree, im, A);
        double gap = 0.0;
        for (std::size_t k = 0; k < p.levels(); ++k)
            for (std::size_t i = 0; i < s.tree.num_nodes(k); ++i)
                for (std::size_t u = 0; u <= k; ++u)
                    if (p.is_atom(k, i, u)) gap = std::max(gap, std::abs(fd.at_atoms(k, i, u) - p(k, i, u)));
        r.metrics["flow_density_gap"] = gap;
        r.check(gap <= 1e-10, "flow density differs from the derivative of the flow family");
        if (!report.artifacts.count("density")) report.artifacts["density"] = density_csv(s.tree, fd.at_atoms);
    } catch (const NotDifferentiable& e) {
        r.check(false, std::string("flow family is not differentiable: ") + e.what());
    }
    return r;
}

inline SuiteResult suite_copula(const TreeScenario& s, Report& report) {
    SuiteResult r;
    r.name = "copula";
    const auto& jm = *s.joint;
    const auto real = realize_joint(s.tree, jm);
    std::ostringstream csv;
    csv << "i,u,time,level,node,value\n";
    double gap = 0.0;
    for (std::size_t i = 1; i <= jm.k(); ++i)
        for (std::size_t u = 0; u < s.tree.grid().u_size(); ++u)
            for (std::size_t t = 0; t < s.tree.num_levels(); ++t) {
                const auto a = order_cdf(s.tree, jm, i, u, t);
                const auto b = order_cdf_direct(real.tree, real.taus, i, u, t);
                for (std::size_t n = 0; n < a.size(); ++n) {
                    gap = std::max(gap, std::abs(a[n] - b[n]));
                    csv << i << ',' << u << ',' << time_label(s.tree.grid(), u) << ',' << t << ','
                        << s.tree.node(t, n).label << ',' << fmt(a[n]) << '\n';
                }
            }
    report.artifacts["order-cdf"] = csv.str();
    r.metrics["enumeration_gap"] = gap;
    r.check(gap <= 1e-12, "inclusion-exclusion law of the order statistics differs from enumeration");
    if (!jm.copula->differentiable()) {
        r.metrics["density"] = "copula has no continuous partials";
        return r;
    }
    std::ostringstream dcsv;
    dcsv << "i,level,node,u,time,value\n";
    double integral = 0.0;
    try {
        for (std::size_t i = 1; i <= jm.k(); ++i)
            for (std::size_t t = 0; t <= jm.horizon; ++t) {
                const auto dens = order_density(s.tree, jm, i, t);
                for (std::size_t n = 0; n < dens.size(); ++n) {
                    double acc = 0.0;
                    for (std::size_t u = 0; u <= t; ++u) {
                        const double dA = jm.A.increment_at(s.tree, t, n, u);
                        if (dA > kNullMass) {
                            acc += dens[n][u] * dA;
                            dcsv << i << ',' << t << ',' << s.tree.node(t, n).label << ',' << u << ','
                                 << time_label(s.tree.grid(), u) << ',' << fmt(dens[n][u]) << '\n';
                        }
                        integral = std::max(integral, std::abs(acc - order_cdf(s.tree, jm, i, u, t)[n]));
                    }
                }
            }
    } catch (const NotDifferentiableMarginal& e) {
        r.check(false, std::string("order statistics are not differentiable: ") + e.what());
        return r;
    }
    report.artifacts["density"] = dcsv.str();
    r.metrics["density_integral_gap"] = integral;
    r.check(integral <= 1e-10, "integrated order-statistic density differs from the distribution function");
    return r;
}

inline std::string drift_csv(const ScenarioTree& tree, const DriftReport& d) {
    std::ostringstream o;
    o << "step,parent_level,node,branch,u,value\n";
    for (std::size_t k = 1; k < d.pre.size(); ++k)
        for (std::size_t q = 0; q < d.pre[k].size(); ++q) {
            const auto& label = tree.node(k - 1, q).label;
            o << k << ',' << k - 1 << ',' << label << ",pre,," << fmt(d.pre[k][q]) << '\n';
            if (k < d.post.size() && !d.post[k].empty())
                for (std::size_t u = 0; u < d.post[k][q].size(); ++u)
                    if (!std::isnan(d.post[k][q][u]))
                        o << k << ',' << k - 1 << ',' << label << ",post," << u << ',' << fmt(d.post[k][q][u]) << '\n';
        }
    return o.str();
}

inline SuiteResult suite_enlargement_tree(const TreeScenario& s, Report& report) {
    SuiteResult r;
    r.name = "enlargement";
    DensityField p;
    try {
        p = differentiate(s.tree, im_from_time(s.tree, s.tau), s.A);
    } catch (const NotDifferentiable& e) {
        r.check(false, std::string("random time is not differentiable against the reference process: ") + e.what());
        return r;
    }
    // Exhaustive indicator payoffs 1{level-b node = j, u = v}.
    const std::size_t W = s.tree.grid().u_size();
    double cond = 0.0, versions = 0.0;
    std::size_t zero_density = 0;
    for (std::size_t b = 0; b < p.levels(); ++b) {
        for (std::size_t k = 0; k <= b; ++k) {
            const auto dv = density_versions(s.tree, s.tau, p, k, b);
            versions = std::max(versions, dv.max_residual);
            zero_density += dv.zero_on_charged;
        }
        for (std::size_t j = 0; j < s.tree.num_nodes(b); ++j)
            for (std::size_t v = 0; v < W; ++v) {
                std::vector<std::vector<double>> f(s.tree.num_leaves(), std::vector<double>(W, 0.0));
                std::vector<double> Y(s.tree.num_leaves());
                for (std::size_t l = 0; l < f.size(); ++l) {
                    if (s.tree.node_of(b, l) == j) f[l][v] = 1.0;
                    Y[l] = f[l][s.tau[l]];
                }
                for (std::size_t k = 0; k <= b; ++k) {
                    const auto got = conditional_expectation(s.tree, s.tau, p, f, k, b);
                    const auto want = g_conditional(s.tree, s.tau, Y, k);
                    for (std::size_t i = 0; i < got.size(); ++i)
                        for (std::size_t a = 0; a < got[i].size(); ++a)
                            if (!std::isnan(want[i][a])) cond = std::max(cond, std::abs(got[i][a] - want[i][a]));
                }
            }
    }
    r.metrics["conditional_expectation_gap"] = cond;
    r.metrics["density_version_gap"] = versions;
    r.check(cond <= 1e-12, "conditional expectation given the enlarged filtration differs from atom enumeration");
    r.check(versions <= 1e-12 && zero_density == 0, "density versions disagree on the post-default atoms");
    // Drift of M and of the indicator martingales of last-level nodes.
    const std::size_t n = s.tree.last_level();
    std::vector<AdaptedProcess> xs{s.d.M};
    for (std::size_t j = 0; j < s.tree.num_nodes(n); ++j) {
        std::vector<double> last(s.tree.num_nodes(n), 0.0);
        last[j] = 1.0;
        AdaptedProcess X(s.tree);
        for (std::size_t k = 0; k <= n; ++k) X.values[k] = cond_expect(s.tree, last, n, k);
        xs.push_back(std::move(X));
    }
    double worst = 0.0, split = 0.0;
    std::string where;
    for (std::size_t x = 0; x < xs.size(); ++x) {
        const auto d = full_drift(s.tree, s.tau, s.d, p, xs[x]);
        if (x == 0) report.artifacts["drift"] = drift_csv(s.tree, d);
        if (d.test.max_residual > worst) {
            worst = d.test.max_residual;
            where = d.test.worst_atom.value_or("");
        }
        const auto sp = optional_split(s.tree, d.compensated);
        for (std::size_t k = 0; k < d.compensated.levels(); ++k)
            for (std::size_t l = 0; l < s.tree.num_leaves(); ++l) {
                const double v = d.compensated.at(s.tree, s.tau, k, l), w = sp.reconstruct(s.tree, s.tau, k, l);
                if (!std::isnan(v)) split = std::max(split, std::abs(v - w));
            }
    }
    r.metrics["martingales_tested"] = xs.size();
    r.metrics["compensated_residual"] = worst;
    r.metrics["split_residual"] = split;
    r.check(worst <= 1e-10, "compensated process is not a martingale of the enlarged filtration at " + where);
    r.check(split == 0.0, "optional splitting does not rebuild the process");
    return r;
}

inline SuiteResult suite_natural_mc(const mc::Model& m, Report& report) {
    SuiteResult r;
    r.name = "natural";
    auto fd_model = m;
    fd_model.paths = std::min<std::size_t>(m.paths, 1000);
    const auto fd = mc::fd_check(fd_model, m.steps / 3, m.steps, 1e-4);
    r.metrics["fd_max_relative_error"] = fd.max_rel_error;
    r.metrics["fd_paths"] = fd.paths;
    r.check(fd.max_rel_error <= 1e-3, "flow derivative differs from the finite-difference oracle");

    auto cox = m;
    cox.sigma = 0.0;
    cox.g = 0.0;
    const auto cc = mc::cox_collapse(cox, std::max<std::size_t>(1, m.steps / 10));
    r.metrics["cox_family_error"] = cc.max_family_error;
    r.metrics["cox_density_error"] = cc.max_density_error;
    r.check(cc.max_family_error <= 1e-8 && cc.max_density_error <= 1e-8,
            "deterministic survival does not collapse the flow family to the Cox family");

    const std::size_t u_star = m.steps / 2;
    const auto dc = mc::density_check(m, u_star, m.steps);
    r.metrics["density_integral"] = dc.integral.mean;
    r.metrics["density_family"] = dc.family.mean;
    r.metrics["density_exact"] = dc.exact;
    r.metrics["density_gap_in_se"] = dc.se() > 0.0 ? dc.gap() / dc.se() : 0.0;
    r.check(dc.gap() <= 3.0 * dc.se(), "integrated flow density differs from the family by more than 3 standard errors");
    std::ostringstream o;
    o << "u_step,t_step,integral_mean,integral_se,family_mean,family_se,exact\n";
    o << u_star << ',' << m.steps << ',' << fmt(dc.integral.mean) << ',' << fmt(dc.integral.se()) << ','
      << fmt(dc.family.mean) << ',' << fmt(dc.family.se()) << ',' << fmt(dc.exact) << '\n';
    report.artifacts["density"] = o.str();

    const auto ts = mc::mtilde_tstats(m, 5);
    double tmax = 0.0;
    for (double t : ts) tmax = std::max(tmax, std::abs(t));
    r.metrics["mtilde_max_abs_t"] = tmax;
    r.check(tmax <= 3.0, "normalised martingale increments are not centred");
    return r;
}

inline SuiteResult suite_enlargement_mc(const mc::Model& m, Report& report) {
    SuiteResult r;
    r.name = "enlargement";
    const auto d = mc::drift_test(m, 1.0, 1.0, 5);
    r.metrics["max_abs_t"] = d.max_abs_t;
    r.metrics["max_abs_t_uncompensated"] = d.max_abs_t_raw;
    r.metrics["defaults"] = d.defaults;
    r.check(d.max_abs_t <= 3.0, "compensated increments fail the enlarged-filtration martingale test");
    std::ostringstream o;
    o << "bucket_weight,t_compensated,t_raw\n";
    for (std::size_t i = 0; i < d.labels.size(); ++i)
        o << d.labels[i] << ',' << fmt(d.t_compensated[i]) << ',' << fmt(d.t_raw[i]) << '\n';
    report.artifacts["drift"] = o.str();
    return r;
}

}  // namespace detail

/// Runs the configured suites. Suite errors are reported as failures with the suite name.
inline Report run(const ScenarioConfig& c) {
    validate(c);
    Report report{c.name, c.engine, c.model, c.seed, {}, {}, {}};
    auto guarded = [&](const std::string& name, auto&& body) {
        try {
            report.suites.push_back(body());
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception& e) {
            SuiteResult s;
            s.name = name;
            s.check(false, std::string("error: ") + e.what());
            report.suites.push_back(std::move(s));
        }
    };
    if (c.engine == "mc") {
        const auto m = build_mc_model(c);
        for (const auto& s : c.suites) {
            if (s == "natural") guarded(s, [&] { return detail::suite_natural_mc(m, report); });
            if (s == "enlargement") guarded(s, [&] { return detail::suite_enlargement_mc(m, report); });
        }
        return report;
    }
    const auto sc = build_tree_scenario(c);
    for (const auto& s : c.suites) {
        if (s == "im") guarded(s, [&] { return detail::suite_im(sc, report); });
        if (s == "cox") guarded(s, [&] { return detail::suite_cox(sc); });
        if (s == "natural") guarded(s, [&] { return detail::suite_natural_tree(sc, report); });
        if (s == "copula") guarded(s, [&] { return detail::suite_copula(sc, report); });
        if (s == "enlargement") guarded(s, [&] { return detail::suite_enlargement_tree(sc, report); });
    }
    return report;
}

/// Suites that produce a given artifact for this kind of scenario.
inline std::vector<std::string> suites_for(const ScenarioConfig& c, const std::string& what) {
    if (what == "density") {
        if (c.engine == "mc" || c.model == "natural") return {"natural"};
        return {c.model == "copula" ? "copula" : "im"};
    }
    if (what == "order-cdf") return {"copula"};
    if (what == "drift") return {"enlargement"};
    throw MissingArtifact("unknown artifact '" + what + "'");
}

inline std::string write_file(const std::filesystem::path& path, const std::string& text) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << text;
    return path.string();
}

/// Writes <out>/<what>.csv.
inline std::string emit_plotdata(Report& report, const std::string& what, const std::filesystem::path& out_dir) {
    if (std::find(artifact_names().begin(), artifact_names().end(), what) == artifact_names().end())
        throw MissingArtifact("unknown artifact '" + what + "'");
    const auto it = report.artifacts.find(what);
    if (it == report.artifacts.end()) throw MissingArtifact("the run produced no '" + what + "' data");
    const std::string name = what + ".csv";
    if (std::find(report.files.begin(), report.files.end(), name) == report.files.end()) report.files.push_back(name);
    return write_file(out_dir / name, it->second);
}

/// Writes every artifact and then report.json (which lists them).
inline std::string write_report(Report& report, const std::filesystem::path& out_dir) {
    for (const auto& [name, text] : report.artifacts) emit_plotdata(report, name, out_dir);
    return write_file(out_dir / "report.json", report.to_json().dump(2) + "\n");
}

}  // namespace deftime::runner
