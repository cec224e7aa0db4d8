#include <gtest/gtest.h>

#include <random>

#include "deftime/filtration.hpp"
#include "deftime/im_family.hpp"
#include "support/corpus.hpp"
#include "support/fixtures.hpp"

using namespace deftime;
using fixtures::leaf;
using fixtures::node;

TEST(BuildTree, TwoPeriodBinary) {
    const auto t = fixtures::t2_tree();
    EXPECT_EQ(t.num_leaves(), 4u);
    EXPECT_EQ(t.num_levels(), 3u);
    for (double m : t.leaf_masses()) EXPECT_DOUBLE_EQ(m, 0.25);
    EXPECT_EQ(t.num_nodes(1), 2u);
    EXPECT_DOUBLE_EQ(t.node(0, 0).mass, 1.0);
}

TEST(BuildTree, SinglePath) {
    const auto t = fixtures::d3_tree();
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(t.num_nodes(k), 1u);
    EXPECT_EQ(t.num_leaves(), 1u);
}

TEST(BuildTree, RejectsDeficientChildren) {
    TreeSpec s;
    s.times = {0.0, 1.0};
    s.root = NodeSpec{"", 1.0, {NodeSpec{"u", 0.5, {}}, NodeSpec{"d", 0.4, {}}}};
    EXPECT_THROW(build_tree(s), InvalidSpec);
}

TEST(BuildTree, RejectsShortBranch) {
    TreeSpec s;
    s.times = {0.0, 1.0, 2.0};
    s.root = NodeSpec{"", 1.0, {NodeSpec{"u", 0.5, {}}, NodeSpec{"d", 0.5, {NodeSpec{"x", 1.0, {}}}}}};
    EXPECT_THROW(build_tree(s), InvalidSpec);
}

TEST(BuildTree, HiddenLeavesBelowLastLevel) {
    const auto t = build_tree(product_spec({0.0, 1.0}, {{0.5, 0.5}}, {{"u", "d"}}, {0.25, 0.75}, {"x", "y"}));
    EXPECT_EQ(t.num_leaves(), 4u);
    EXPECT_EQ(t.num_nodes(1), 2u);
    EXPECT_NEAR(t.leaf_mass(leaf(t, "dy")), 0.375, 1e-15);
}

TEST(TimeGrid, RejectsNonIncreasing) {
    EXPECT_THROW(TimeGrid({0.0, 1.0, 1.0}), InvalidSpec);
    EXPECT_THROW(TimeGrid({0.0, 1.0}, 5), InvalidSpec);
}

TEST(RandomTime, StoppedValue) {
    const auto t = fixtures::t2_tree();
    const auto tau = fixtures::t2_tau(t);
    EXPECT_EQ(tau.stopped(t.grid(), leaf(t, "du"), 1), 1u);
    EXPECT_EQ(tau.stopped(t.grid(), leaf(t, "dd"), 1), t.grid().infinity());
    EXPECT_EQ(tau.stopped(t.grid(), leaf(t, "dd"), 2), 2u);
}

TEST(CondExpect, FixtureIndicator) {
    const auto t = fixtures::t2_tree();
    const auto tau = fixtures::t2_tau(t);
    const auto e = cond_expect(t, defaulted_by(tau, 1), 1);
    EXPECT_DOUBLE_EQ(e[node(t, 1, "u")], 0.0);
    EXPECT_DOUBLE_EQ(e[node(t, 1, "d")], 0.5);
}

TEST(CondExpect, IdentityAndConstants) {
    const auto t = fixtures::t2_tree();
    std::vector<double> x{0.3, -1.0, 2.0, 5.0};
    const auto same = cond_expect(t, x, 2, 2);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(same[i], x[i]);
    std::vector<double> c(4, 7.5);
    for (std::size_t k = 0; k < 3; ++k)
        for (double v : cond_expect(t, c, k)) EXPECT_DOUBLE_EQ(v, 7.5);
    EXPECT_THROW(cond_expect(t, std::vector<double>(3, 0.0), 1), LevelMismatch);
    EXPECT_THROW(cond_expect(t, x, 1, 2), LevelMismatch);
}

TEST(CondExpect, TowerPropertyOnCorpus) {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    for (const auto& c : corpus::make(60)) {
        std::vector<double> x(c.tree.num_leaves());
        for (auto& v : x) v = n01(rng);
        for (std::size_t s = 0; s < c.tree.num_levels(); ++s) {
            const auto xs = cond_expect(c.tree, x, s);
            for (std::size_t k = 0; k <= s; ++k) {
                const auto a = cond_expect(c.tree, xs, s, k);
                const auto b = cond_expect(c.tree, x, k);
                for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-13);
            }
        }
    }
}

TEST(DoobMeyer, FixtureAzema) {
    const auto t = fixtures::t2_tree();
    const auto Z = azema(t, fixtures::t2_tau(t));
    const auto d = doob_meyer(t, Z);
    const auto u = node(t, 1, "u"), dn = node(t, 1, "d");
    EXPECT_NEAR(d.A(1, u), 0.25, 1e-15);
    EXPECT_NEAR(d.A(1, dn), 0.25, 1e-15);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(d.dA(t, 2, i), 0.5, 1e-15);
    EXPECT_NEAR(d.M(1, u), 1.25, 1e-15);
    EXPECT_NEAR(d.M(1, dn), 0.75, 1e-15);
    EXPECT_NEAR(d.M(2, node(t, 2, "uu")), 1.75, 1e-15);
    EXPECT_NEAR(d.M(2, node(t, 2, "dd")), 0.75, 1e-15);
    EXPECT_LE(martingale_defect(t, d.M), 1e-15);
}

TEST(DoobMeyer, DeterministicSurvival) {
    const auto t = fixtures::d3_tree();
    const auto d = doob_meyer(t, fixtures::deterministic_survival(t, {0.0, 0.3, 0.6}));
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(d.M(k, 0), 1.0, 1e-15);
    EXPECT_NEAR(d.A(2, 0), 0.6, 1e-15);
}

TEST(DoobMeyer, MartingaleHasNoCompensator) {
    const auto t = fixtures::t2_tree();
    AdaptedProcess X(t);
    X.values = {{0.5}, {0.7, 0.3}, {0.9, 0.5, 0.4, 0.2}};
    const auto d = doob_meyer(t, X);
    for (const auto& lv : d.A.values)
        for (double a : lv) EXPECT_NEAR(a, 0.0, 1e-15);
}

TEST(DoobMeyer, RejectsSubmartingaleStep) {
    const auto t = fixtures::t2_tree();
    AdaptedProcess X(t);
    X.values = {{0.5}, {0.7, 0.6}, {0.9, 0.5, 0.4, 0.2}};
    try {
        (void)doob_meyer(t, X);
        FAIL() << "expected NotSupermartingale";
    } catch (const NotSupermartingale& e) {
        EXPECT_EQ(e.level, 1u);
        EXPECT_EQ(e.node, 0u);
    }
}

TEST(DoobMeyer, PredictableIncreasingOnCorpus) {
    for (const auto& c : corpus::make(200)) {
        const auto Z = azema(c.tree, c.tau);
        const auto d = doob_meyer(c.tree, Z);
        EXPECT_LE(martingale_defect(c.tree, d.M), 1e-13);
        for (std::size_t k = 1; k < c.tree.num_levels(); ++k)
            for (std::size_t i = 0; i < c.tree.num_nodes(k); ++i) {
                EXPECT_GE(d.dA(c.tree, k, i), -1e-13);
                EXPECT_NEAR(d.Z(k, i), d.M(k, i) - d.A(k, i), 1e-14);
                // Independent recomputation of the increment.
                const std::size_t p = c.tree.node(k, i).parent;
                const auto e = cond_expect(c.tree, defaulted_by(c.tau, k - 1), k - 1);
                const auto f = cond_expect(c.tree, defaulted_by(c.tau, k), k - 1);
                EXPECT_NEAR(d.dA(c.tree, k, i), f[p] - e[p], 1e-12);
            }
    }
}

namespace {

// E[sum_k K_k dR_k] for a leaf-valued cumulative family R and node-valued K.
double pairing_raw(const ScenarioTree& t, const PathFamily& R, std::size_t kk, std::size_t node, bool predictable) {
    double s = 0.0;
    for (std::size_t l = 0; l < t.num_leaves(); ++l) {
        const std::size_t at = predictable ? t.node_of(kk - 1, l) : t.node_of(kk, l);
        if (at != node) continue;
        s += t.leaf_mass(l) * (R[kk][l] - (kk == 0 ? 0.0 : R[kk - 1][l]));
    }
    return s;
}

double pairing_proj(const ScenarioTree& t, const AdaptedProcess& P, std::size_t kk, std::size_t node,
                    bool predictable) {
    double s = 0.0;
    for (std::size_t l = 0; l < t.num_leaves(); ++l) {
        const std::size_t at = predictable ? t.node_of(kk - 1, l) : t.node_of(kk, l);
        if (at != node) continue;
        s += t.leaf_mass(l) * (P.at_leaf(t, kk, l) - (kk == 0 ? 0.0 : P.at_leaf(t, kk - 1, l)));
    }
    return s;
}

void sweep(const ScenarioTree& t, const PathFamily& raw) {
    for (const bool predictable : {false, true}) {
        const auto P = dual_projection(t, raw, predictable ? ProjectionMode::predictable : ProjectionMode::optional);
        for (std::size_t k = 1; k < t.num_levels(); ++k) {
            const std::size_t nodes = t.num_nodes(predictable ? k - 1 : k);
            for (std::size_t i = 0; i < nodes; ++i)
                EXPECT_NEAR(pairing_raw(t, raw, k, i, predictable), pairing_proj(t, P, k, i, predictable), 1e-14);
        }
    }
}

}  // namespace

TEST(DualProjection, FixtureDefaultIndicator) {
    const auto t = fixtures::t2_tree();
    const auto tau = fixtures::t2_tau(t);
    PathFamily raw;
    for (std::size_t k = 0; k < 3; ++k) raw.push_back(defaulted_by(tau, k));
    const auto P = dual_projection(t, raw, ProjectionMode::optional);
    EXPECT_NEAR(P(1, node(t, 1, "u")), 0.0, 1e-15);
    EXPECT_NEAR(P(1, node(t, 1, "d")), 0.5, 1e-15);
    EXPECT_NEAR(P(2, node(t, 2, "uu")), 0.0, 1e-15);
    EXPECT_NEAR(P(2, node(t, 2, "ud")), 1.0, 1e-15);
    EXPECT_NEAR(P(2, node(t, 2, "du")), 0.5, 1e-15);
    EXPECT_NEAR(P(2, node(t, 2, "dd")), 1.5, 1e-15);
    sweep(t, raw);
}

TEST(DualProjection, DeterministicAndConstant) {
    const auto t = fixtures::t2_tree();
    PathFamily raw{{0.0, 0.0, 0.0, 0.0}, {0.2, 0.2, 0.2, 0.2}, {0.7, 0.7, 0.7, 0.7}};
    for (auto mode : {ProjectionMode::optional, ProjectionMode::predictable}) {
        const auto P = dual_projection(t, raw, mode);
        for (std::size_t k = 0; k < 3; ++k)
            for (double v : P.values[k]) EXPECT_NEAR(v, raw[k][0], 1e-15);
    }
    PathFamily flat(3, std::vector<double>(4, 0.0));
    const auto B = dual_projection(t, flat, ProjectionMode::predictable);
    for (const auto& lv : B.values)
        for (double v : lv) EXPECT_EQ(v, 0.0);
}

TEST(DualProjection, RejectsDecreasing) {
    const auto t = fixtures::t2_tree();
    PathFamily raw{{0.0, 0.0, 0.0, 0.0}, {0.2, 0.2, 0.2, 0.2}, {0.1, 0.7, 0.7, 0.7}};
    EXPECT_THROW(dual_projection(t, raw, ProjectionMode::optional), NotIncreasing);
}

TEST(DualProjection, ExhaustiveSweepOnCorpus) {
    for (const auto& c : corpus::make(100)) {
        PathFamily raw;
        for (std::size_t k = 0; k < c.tree.num_levels(); ++k) raw.push_back(defaulted_by(c.tau, k));
        sweep(c.tree, raw);
    }
}

TEST(FirstZero, FixtureAndTrivialCases) {
    const auto t = fixtures::t2_tree();
    EXPECT_TRUE(check_first_zero(t, azema(t, fixtures::t2_tau(t))).pass);
    const auto z = check_first_zero(t, AdaptedProcess(t, 0.0));
    EXPECT_TRUE(z.pass);
    EXPECT_GT(z.checked, 0u);
    const auto pos = check_first_zero(t, AdaptedProcess(t, 0.4));
    EXPECT_TRUE(pos.pass);
    EXPECT_EQ(pos.checked, 0u);
}

TEST(FirstZero, NegativeInputRejected) {
    const auto t = fixtures::t2_tree();
    AdaptedProcess Y(t);
    Y.values = {{0.0}, {0.0, 0.0}, {0.0, 0.0, 0.0, 0.0}};
    EXPECT_TRUE(check_first_zero(t, Y).pass);
    AdaptedProcess W(t);
    W.values = {{-0.5}, {0.0, 0.0}, {0.0, 0.0, 0.0, 0.0}};
    EXPECT_THROW(check_first_zero(t, W), NotSupermartingale);
}
