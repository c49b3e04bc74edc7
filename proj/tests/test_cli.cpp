#include <gtest/gtest.h>

#include <sys/wait.h>

#include "loopflow/pipeline.hpp"

using namespace loopflow;
namespace fs = std::filesystem;

namespace {

std::string cli() {
    const char* p = std::getenv("LOOPFLOW_CLI");
    return p ? p : "loopflow";
}

fs::path configs() {
    const char* p = std::getenv("LOOPFLOW_CONFIGS");
    return p ? p : "configs";
}

fs::path scratch(const std::string& name) {
    fs::path d = fs::temp_directory_path() / ("loopflow_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

// Runs the CLI; stdout and stderr go to files in `dir`.
int run(const std::string& args, const fs::path& dir, const std::string& env = "") {
    const std::string cmd = env + " " + cli() + " " + args + " > " + (dir / "stdout.txt").string() + " 2> " +
                            (dir / "stderr.txt").string();
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

const char* kMinimal = R"(
schema = 1
name = "minimal"
[manifold]
kind = "circle"
[perturbation]
kind = "cosine"
amplitude = 0.1
[grid]
n = 32
)";

} // namespace

TEST(Config, MinimalConfigTakesDefaults) {
    const RunConfig c = parse_config(kMinimal);
    EXPECT_EQ(c.n, 32);
    EXPECT_EQ(c.h_s, 1e-3);
    EXPECT_EQ(c.tol.tol_conv, 1e-8);
    EXPECT_FALSE(c.reference_betti.has_value());
    EXPECT_EQ(c.hash.size(), 16u);
    const Session s(c);
    EXPECT_NEAR(s.iota(), 0.5, 1e-15);
}

TEST(Config, HashIgnoresFormattingButNotContent) {
    const RunConfig a = parse_config(kMinimal);
    const RunConfig b = parse_config(std::string("# a comment\n") + kMinimal + "\n\n");
    EXPECT_EQ(a.hash, b.hash);
    std::string changed = kMinimal;
    changed.replace(changed.find("0.1"), 3, "0.2");
    EXPECT_NE(parse_config(changed).hash, a.hash);
}

TEST(Config, InvalidConfigsAreUsageErrors) {
    const std::vector<std::string> bad = {
        "name = 'x'",                                   // no schema
        "schema = 2",                                   // unknown version
        "schema = 1\n[grid]\nn = 48",                   // not a power of two
        "schema = 1\n[grid]\nh_s = -1.0",               // nonpositive step
        "schema = 1\n[tolerances]\ntol_conv = 0.0",     // nonpositive tolerance
        "schema = 1\n[grid]\nnn = 32",                  // unknown key
        "schema = 1\n[manifold]\nkind = 'klein'",       // unknown manifold
        "schema = 1\n[grid\n",                          // syntax
    };
    for (const auto& text : bad) {
        try {
            parse_config(text);
            ADD_FAILURE() << "accepted: " << text;
        } catch (const Error& e) {
            EXPECT_EQ(e.kind(), ErrorKind::usage) << text;
        }
    }
}

TEST(Cli, HomologyOnCirclePendulum) {
    const fs::path d = scratch("homology");
    ASSERT_EQ(run("homology --config " + (configs() / "circle_pendulum.toml").string() + " --out " + d.string(), d), 0)
        << slurp(d / "stderr.txt");
    const json cx = load(d / "complex.json");
    EXPECT_EQ(cx["betti"], json({1, 1}));
    EXPECT_EQ(cx["torsion"], json({json::array(), json::array()}));
    EXPECT_EQ(cx["reference_match"]["status"], "match");
    EXPECT_TRUE(cx["boundary"].empty()); // the two orbit signs cancel
    EXPECT_EQ(cx["generators"].size(), 2u);
    const std::string hash = cx["config_hash"];
    EXPECT_EQ(hash.size(), 16u);
    EXPECT_EQ(load(d / "orbits.json")["config_hash"], hash);
    EXPECT_EQ(load(d / "crit.json")["config_hash"], hash);
    EXPECT_TRUE(cx["tolerances"].contains("tol_conv"));
}

TEST(Cli, MalformedConfigExitsTwo) {
    const fs::path d = scratch("malformed");
    {
        std::ofstream os(d / "bad.toml");
        os << "schema = 1\n[grid\nn = 64\n";
    }
    EXPECT_EQ(run("crit --config " + (d / "bad.toml").string() + " --out " + d.string(), d), 2);
    const std::string err = slurp(d / "stderr.txt");
    EXPECT_NE(err.find("config-parse"), std::string::npos);
    EXPECT_NE(err.find("bad.toml:2"), std::string::npos);
    EXPECT_EQ(run("crit --config " + (d / "missing.toml").string(), d), 2);
    EXPECT_EQ(run("crit", d), 2);
}

TEST(Cli, BrokenToleranceFailsCheckWithInvariantNamed) {
    const fs::path d = scratch("broken");
    EXPECT_EQ(run("check --config " + (configs() / "circle_broken_tolerance.toml").string() + " --out " + d.string(), d), 1);
    EXPECT_NE(slurp(d / "stderr.txt").find("energy-identity"), std::string::npos);
    const json rep = load(d / "check_report.json");
    EXPECT_FALSE(rep["passed"].get<bool>());
}

TEST(Cli, CheckPassesOnCircle) {
    const fs::path d = scratch("check");
    EXPECT_EQ(run("check --config " + (configs() / "circle_fast.toml").string() + " --out " + d.string(), d), 0)
        << slurp(d / "stdout.txt");
    EXPECT_TRUE(load(d / "check_report.json")["passed"].get<bool>());
}

TEST(Cli, ArtifactsDoNotDependOnThreadCount) {
    const fs::path a = scratch("threads1"), b = scratch("threads3");
    const std::string cfg = (configs() / "circle_fast.toml").string();
    ASSERT_EQ(run("moduli --config " + cfg + " --threads 1 --out " + (a / "o").string(), a), 0);
    ASSERT_EQ(run("moduli --config " + cfg + " --out " + (b / "o").string(), b, "LOOPFLOW_THREADS=3"), 0);
    size_t files = 0;
    for (const auto& e : fs::directory_iterator(a / "o")) {
        ++files;
        EXPECT_EQ(slurp(e.path()), slurp(b / "o" / e.path().filename())) << e.path().filename();
    }
    EXPECT_GE(files, 6u);
}

TEST(Cli, FlowWritesMonitors) {
    const fs::path d = scratch("flow");
    ASSERT_EQ(run("flow --config " + (configs() / "circle_fast.toml").string() + " --out " + d.string(), d), 0);
    const json j = load(d / "flow.json");
    EXPECT_EQ(j["status"], "converged");
    EXPECT_EQ(j["limit"], 0);
    std::ifstream in(d / "flow_monitors.csv");
    std::string banner, header;
    std::getline(in, banner);
    std::getline(in, header);
    EXPECT_EQ(banner.rfind("# config_hash=", 0), 0u);
    EXPECT_EQ(header, "s,action,dsu_l2,dtu_sup,nabla_t_dtu_sup");
}

TEST(Cli, AdmissibleReportsRadiusAndControl) {
    const fs::path d = scratch("admissible");
    ASSERT_EQ(run("admissible --config " + (configs() / "circle_fast.toml").string() + " --out " + d.string(), d), 0)
        << slurp(d / "stderr.txt");
    const json j = load(d / "admissible.json");
    EXPECT_DOUBLE_EQ(j["delta"].get<double>(), 0.45);
    EXPECT_LE(j["r"].get<double>(), 0.5 * j["kappa"].get<double>() + 1e-15);
    EXPECT_TRUE(j["bump"]["outside_U"].get<bool>());
    EXPECT_TRUE(j["bump"]["inclusions"]["ok"].get<bool>());
    EXPECT_TRUE(j["negative_control"]["detected"].get<bool>());
}
