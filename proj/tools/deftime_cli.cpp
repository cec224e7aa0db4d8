// deftime: validate scenarios, run verification suites, emit plot data.
//
// Exit status: 0 all requested suites pass, 1 a suite failed, 2 bad input.

#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "deftime/runner.hpp"

using namespace deftime;
using namespace deftime::runner;

namespace {

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> paths;
    std::optional<double> step;
    std::string out_dir = "out";
};

void add_common(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config, "scenario JSON file")->required()->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "master seed (mc engine)");
    cmd->add_option("--paths", o.paths, "number of Monte Carlo paths")->check(CLI::PositiveNumber);
    cmd->add_option("--step", o.step, "Euler step size")->check(CLI::PositiveNumber);
    cmd->add_option("--out-dir", o.out_dir, "directory for report.json and CSV files");
}

ScenarioConfig load(const Options& o) {
    auto c = load_config(o.config);
    apply_overrides(c, o.seed, o.paths, o.step);
    validate(c);
    return c;
}

void print_summary(const Report& r) {
    for (const auto& s : r.suites) {
        std::cout << (s.pass ? "PASS " : "FAIL ") << s.name;
        for (const auto& [k, v] : s.metrics.items()) std::cout << "  " << k << "=" << v.dump();
        std::cout << '\n';
        for (const auto& f : s.failures) std::cout << "     " << f << '\n';
    }
}

int build(const Options& o) {
    const auto c = load(o);
    if (c.engine == "tree") {
        const auto s = build_tree_scenario(c);
        std::cout << "scenario " << c.name << ": tree with " << s.tree.num_levels() << " levels, "
                  << s.tree.num_leaves() << " leaves\n";
    } else {
        const auto m = build_mc_model(c);
        std::cout << "scenario " << c.name << ": " << m.paths << " paths of " << m.steps << " steps, seed " << m.seed
                  << '\n';
    }
    return 0;
}

int verify(const Options& o, bool summary) {
    const auto c = load(o);
    auto r = run(c);
    const auto path = write_report(r, o.out_dir);
    if (summary) print_summary(r);
    std::cout << (r.pass() ? "PASS" : "FAIL") << " " << path << '\n';
    return r.pass() ? 0 : 1;
}

int artifact(const Options& o, const std::string& what) {
    auto c = load(o);
    c.suites = suites_for(c, what);
    const auto allowed = allowed_suites(c.engine, c.model);
    for (const auto& s : c.suites)
        if (std::find(allowed.begin(), allowed.end(), s) == allowed.end())
            throw MissingArtifact("'" + what + "' is not produced for model " + c.model);
    auto r = run(c);
    std::cout << emit_plotdata(r, what, o.out_dir) << '\n';
    return r.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Default-time toolkit: scenario trees, density checks and enlargement drifts"};
    app.require_subcommand(1);
    Options o;
    auto* b = app.add_subcommand("build", "validate a scenario and build its model");
    auto* v = app.add_subcommand("verify", "run the scenario's verification suites");
    auto* d = app.add_subcommand("density", "write density.csv");
    auto* s = app.add_subcommand("order-stats", "write order-cdf.csv");
    auto* dr = app.add_subcommand("drift", "write drift.csv");
    auto* rp = app.add_subcommand("report", "run all suites, write every artifact and print a summary");
    for (auto* cmd : {b, v, d, s, dr, rp}) add_common(cmd, o);
    CLI11_PARSE(app, argc, argv);
    try {
        if (b->parsed()) return build(o);
        if (v->parsed()) return verify(o, false);
        if (rp->parsed()) return verify(o, true);
        if (d->parsed()) return artifact(o, "density");
        if (s->parsed()) return artifact(o, "order-cdf");
        if (dr->parsed()) return artifact(o, "drift");
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const MissingArtifact& e) {
        std::cerr << "missing artifact: " << e.what() << '\n';
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
