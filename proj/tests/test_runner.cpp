#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "deftime/runner.hpp"

using namespace deftime;
using namespace deftime::runner;
using json = nlohmann::json;

namespace {

std::string scenario(const std::string& name) { return std::string(DEFTIME_SOURCE_DIR) + "/scenarios/" + name; }

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("deftime_test_" + name);
    std::filesystem::remove_all(p);
    return p;
}

ScenarioConfig small_mc() {
    auto c = load_config(scenario("mc_natural.json"));
    apply_overrides(c, std::nullopt, 400, std::nullopt);
    validate(c);
    return c;
}

}  // namespace

TEST(Scenarios, TreeScenariosPass) {
    for (const char* f : {"t2.json", "cox_t2.json", "d3_copula.json", "natural_t2.json"}) {
        const auto r = run(load_config(scenario(f)));
        EXPECT_TRUE(r.pass()) << f << "\n" << r.to_json().dump(2);
        EXPECT_EQ(r.suites.size(), load_config(scenario(f)).suites.size());
    }
}

TEST(Scenarios, CoxDensityIsIdenticallyOne) {
    const auto r = run(load_config(scenario("cox_t2.json")));
    std::istringstream in(r.artifacts.at("density"));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "level,node,u,time,value");
    int rows = 0;
    while (std::getline(in, line)) {
        EXPECT_EQ(line.substr(line.rfind(',') + 1), "1") << line;
        ++rows;
    }
    EXPECT_GT(rows, 0);
}

TEST(Scenarios, ProductCopulaOrderCdf) {
    const auto r = run(load_config(scenario("d3_copula.json")));
    const auto& csv = r.artifacts.at("order-cdf");
    EXPECT_NE(csv.find("\n1,1,1,0,,0.51\n"), std::string::npos);
    EXPECT_NE(csv.find("\n2,1,1,0,,0.09\n"), std::string::npos);
    EXPECT_NE(r.artifacts.at("density").find("\n1,2,ab,2,2,1.1\n"), std::string::npos);
}

TEST(Scenarios, MonteCarloRunIsByteIdentical) {
    const auto c = small_mc();
    auto a = run(c), b = run(c);
    const auto da = scratch("mc_a"), db = scratch("mc_b");
    write_report(a, da);
    write_report(b, db);
    EXPECT_EQ(slurp(da / "report.json"), slurp(db / "report.json"));
    for (const auto& f : a.files) EXPECT_EQ(slurp(da / f), slurp(db / f)) << f;
    EXPECT_EQ(a.to_json().at("seed"), 42);
}

TEST(Scenarios, SeedChangesMonteCarloOutput) {
    auto c = small_mc();
    const auto a = run(c);
    c.seed = 43;
    const auto b = run(c);
    EXPECT_NE(a.artifacts.at("drift"), b.artifacts.at("drift"));
}

TEST(Scenarios, ReportListsWrittenFiles) {
    auto r = run(load_config(scenario("t2.json")));
    const auto dir = scratch("t2");
    write_report(r, dir);
    const auto j = json::parse(slurp(dir / "report.json"));
    EXPECT_TRUE(j.at("pass").get<bool>());
    EXPECT_EQ(j.at("files").size(), j.at("artifacts").size());
    for (const auto& f : j.at("files")) EXPECT_TRUE(std::filesystem::exists(dir / f.get<std::string>())) << f;
    EXPECT_TRUE(std::filesystem::exists(dir / "drift.csv"));
}

TEST(Config, MonteCarloNeedsSeed) {
    auto j = json::parse(slurp(scenario("mc_natural.json")));
    j.erase("seed");
    auto c = parse_config(j);
    EXPECT_THROW(validate(c), ConfigError);
    apply_overrides(c, 5, std::nullopt, std::nullopt);
    EXPECT_NO_THROW(validate(c));
}

TEST(Config, RejectsBadInput) {
    EXPECT_THROW(parse_config(json::array()), ConfigError);
    EXPECT_THROW(parse_config(json{{"engine", "lattice"}, {"model", "cox"}}), ConfigError);
    EXPECT_THROW(parse_config(json{{"engine", "mc"}, {"model", "cox"}, {"seed", 1}}), ConfigError);
    auto j = json::parse(slurp(scenario("t2.json")));
    j["suites"] = {"copula"};
    EXPECT_THROW(parse_config(j), ConfigError);
    j = json::parse(slurp(scenario("t2.json")));
    j.erase("tau");
    EXPECT_THROW(parse_config(j), ConfigError);
    j = json::parse(slurp(scenario("cox_t2.json")));
    j["A"] = {{0.0}, {0.5, 0.4}, {0.3, 0.5, 0.6, 0.7}};
    EXPECT_THROW(build_tree_scenario(parse_config(j)), Error);
    EXPECT_THROW(load_config(scenario("no_such_file.json")), ConfigError);
}

TEST(Config, MonteCarloStepSetsGrid) {
    auto c = small_mc();
    const auto m = build_mc_model(c);
    EXPECT_EQ(m.steps, 200u);
    EXPECT_EQ(m.paths, 400u);
    c.step = 0.1;
    EXPECT_THROW(build_mc_model(c), ConfigError);
}

TEST(Artifacts, UnknownOrAbsentArtifactRaises) {
    auto r = run(load_config(scenario("t2.json")));
    const auto dir = scratch("art");
    EXPECT_THROW(emit_plotdata(r, "histogram", dir), MissingArtifact);
    EXPECT_THROW(emit_plotdata(r, "order-cdf", dir), MissingArtifact);
    EXPECT_THROW(suites_for(load_config(scenario("t2.json")), "histogram"), MissingArtifact);
    const auto p = emit_plotdata(r, "density", dir);
    EXPECT_EQ(slurp(p), r.artifacts.at("density"));
}

TEST(Artifacts, SuitesForSelectsProducer) {
    const auto nat = load_config(scenario("natural_t2.json"));
    EXPECT_EQ(suites_for(nat, "density"), std::vector<std::string>{"natural"});
    const auto cop = load_config(scenario("d3_copula.json"));
    EXPECT_EQ(suites_for(cop, "density"), std::vector<std::string>{"copula"});
    EXPECT_EQ(suites_for(cop, "order-cdf"), std::vector<std::string>{"copula"});
}
