// Runs the cloopid executable end to end and checks files and exit codes.

#include <sys/wait.h>

#include <cstdlib>
#include <functional>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "cloopid/campaign.hpp"

using namespace cloopid;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = fs::path(CLOOPID_SOURCE_DIR) / "configs";

fs::path scratch(const std::string& name)
{
    const fs::path d = fs::temp_directory_path() / ("cloopid_test_cli_" + name);
    fs::remove_all(d);
    return d;
}

/// Exit status of `cloopid <args>`, output discarded unless `capture` is given.
int run(const std::string& args, const fs::path& capture = {})
{
    const std::string sink = capture.empty() ? std::string("/dev/null") : capture.string();
    const std::string cmd = std::string("\"") + CLOOPID_CLI + "\" " + args + " >\"" + sink + "\" 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

/// smoke.json with edits applied, written next to the test's outputs.
fs::path edited_config(const fs::path& dir, const std::function<void(nlohmann::json&)>& edit)
{
    std::ifstream in(kConfigs / "smoke.json");
    nlohmann::json j;
    in >> j;
    edit(j);
    fs::create_directories(dir);
    const fs::path p = dir / "config.json";
    std::ofstream(p) << j.dump(2);
    return p;
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

} // namespace

TEST(Cli, ArgumentAndConfigErrorsExitWithTwo)
{
    EXPECT_EQ(run(""), 2);
    EXPECT_EQ(run("simulate --no-such-flag"), 2);
    EXPECT_EQ(run("simulate --config /nonexistent/config.json"), 2);
    EXPECT_EQ(run("identify --config " + q(kConfigs / "smoke.json") + " --method n4sid"), 2);
    EXPECT_EQ(run("freqresp --config " + q(kConfigs / "smoke.json") + " --system K_missing"), 2);
    const fs::path dir = scratch("bad_config");
    fs::create_directories(dir);
    std::ofstream(dir / "broken.json") << "{ \"schema_version\": 1, ";
    EXPECT_EQ(run("simulate --config " + q(dir / "broken.json")), 2);
}

TEST(Cli, HelpExitsWithZero) { EXPECT_EQ(run("--help"), 0); }

TEST(Cli, SimulateCreatesTheOutputDirectoryAndWritesEveryStep)
{
    const fs::path out = scratch("simulate") / "nested" / "dir";
    ASSERT_EQ(run("simulate --config " + q(kConfigs / "maglev.json") + " --seed 3 --out " + q(out)), 0);
    const CsvTable t = read_csv_table(out / "dataset.csv");
    EXPECT_EQ(t.header, (std::vector<std::string>{"t", "r", "u", "y"}));
    ASSERT_EQ(t.rows.size(), 10001u);
    EXPECT_EQ(parse_cell(t.rows.front()[0]), 0.0);
    EXPECT_NEAR(parse_cell(t.rows.back()[0]), 1.0, 1e-12);
}

TEST(Cli, NoiseFreeSimulationIsBitExactAcrossRuns)
{
    const fs::path dir = scratch("noise_free");
    const fs::path cfg = edited_config(dir, [](nlohmann::json& j) { j["experiment"]["noise"] = {{"sigma_w", 0.0}, {"sigma_xi", 0.0}}; });
    ASSERT_EQ(run("simulate --config " + q(cfg) + " --seed 1 --out " + q(dir / "a")), 0);
    ASSERT_EQ(run("simulate --config " + q(cfg) + " --seed 99 --out " + q(dir / "b")), 0);
    // Without noise the seed has nothing to act on.
    EXPECT_EQ(slurp(dir / "a" / "dataset.csv"), slurp(dir / "b" / "dataset.csv"));
    EXPECT_GT(slurp(dir / "a" / "dataset.csv").size(), 1000u);
}

TEST(Cli, UnstableLoopExitsWithThree)
{
    const fs::path dir = scratch("unstable");
    // A unit static controller does not stabilize the maglev plant.
    const fs::path cfg = edited_config(dir, [](nlohmann::json& j) {
        j["controllers"]["unit"] = {{"tf", {{"num", {1.0}}, {"den", {1.0}}}}};
        j["experiment"]["controller"] = "unit";
    });
    EXPECT_EQ(run("simulate --config " + q(cfg) + " --out " + q(dir / "o")), 3);
    EXPECT_FALSE(fs::exists(dir / "o" / "dataset.csv"));
}

TEST(Cli, RankDeficientDataExitsWithFive)
{
    const fs::path dir = scratch("rank");
    const fs::path cfg = edited_config(dir, [](nlohmann::json& j) {
        j["experiment"]["pulse"]["height"] = 0.0;
        j["experiment"]["noise"] = {{"sigma_w", 0.0}, {"sigma_xi", 0.0}};
    });
    EXPECT_EQ(run("identify --config " + q(cfg) + " --method arx --out " + q(dir / "o")), 5);
}

TEST(Cli, IdentifyArxOnASavedDatasetRecoversANoiseFreeFit)
{
    const fs::path dir = scratch("identify");
    const fs::path cfg = edited_config(dir, [](nlohmann::json& j) { j["experiment"]["noise"] = {{"sigma_w", 0.0}, {"sigma_xi", 0.0}}; });
    ASSERT_EQ(run("simulate --config " + q(cfg) + " --out " + q(dir)), 0);
    ASSERT_EQ(run("identify --config " + q(cfg) + " --method arx --data " + q(dir / "dataset.csv") + " --out " + q(dir),
                  dir / "stdout.txt"),
              0);
    std::ifstream in(dir / "identify_arx.json");
    nlohmann::json rec;
    in >> rec;
    EXPECT_EQ(rec.at("method"), "arx");
    EXPECT_EQ(rec.at("dataset"), (dir / "dataset.csv").string());
    // Sampled plant and controller are both exact ARX structures of the
    // loop, so the equation error vanishes to rounding.
    EXPECT_LT(rec.at("cost").get<double>(), 1e-20);
    EXPECT_TRUE(rec.at("parameters").contains("a1"));
    const std::string text = slurp(dir / "stdout.txt");
    EXPECT_NE(text.find("selected order (AIC)"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "trace_arx.csv"));
}

TEST(Cli, FreqrespWritesTheRequestedGrid)
{
    const fs::path dir = scratch("freqresp");
    ASSERT_EQ(run("freqresp --config " + q(kConfigs / "smoke.json") + " --system unit --lo 1 --hi 100 --points 3 --out " + q(dir)), 0);
    const CsvTable unit = read_csv_table(dir / "bode_unit.csv");
    ASSERT_EQ(unit.rows.size(), 3u);
    for (const auto& r : unit.rows) {
        EXPECT_EQ(parse_cell(r[1]), 1.0);
        EXPECT_EQ(parse_cell(r[2]), 0.0);
    }
    EXPECT_NEAR(parse_cell(unit.rows[1][0]), 10.0, 1e-12);

    ASSERT_EQ(run("freqresp --config " + q(kConfigs / "smoke.json") + " --theta=-7.148,13.34,-494.4,-6593 --lo 1 --hi 1 --points 2 --out " + q(dir)), 2);
    ASSERT_EQ(run("freqresp --config " + q(kConfigs / "smoke.json") + " --theta=-7.148,13.34,-494.4,-6593 --lo 1 --hi 10 --points 2 --out " + q(dir)), 0);
    const CsvTable theta = read_csv_table(dir / "bode_theta.csv");
    // |P(j1)| = 7.148 / |(-6593 - 13.34) + j(-494.4 - 1)|.
    EXPECT_NEAR(parse_cell(theta.rows[0][1]), 7.148 / std::abs(Complex(-6593.0 - 13.34, -494.4 - 1.0)), 1e-15);
}

TEST(Cli, MontecarloTwiceGivesIdenticalFiles)
{
    const fs::path dir = scratch("montecarlo");
    const fs::path cfg = edited_config(dir, [](nlohmann::json& j) { j["runs"] = 2; });
    ASSERT_EQ(run("montecarlo --config " + q(cfg) + " --out " + q(dir / "a")), 0);
    ASSERT_EQ(run("montecarlo --config " + q(cfg) + " --out " + q(dir / "b")), 0);
    std::size_t files = 0;
    for (const auto& e : fs::directory_iterator(dir / "a")) {
        ++files;
        EXPECT_EQ(slurp(e.path()), slurp(dir / "b" / e.path().filename())) << e.path().filename();
    }
    EXPECT_EQ(files, 7u);
    // Rerunning from the meta file reproduces the campaign.
    ASSERT_EQ(run("montecarlo --config " + q(dir / "a" / "campaign.meta") + " --out " + q(dir / "c")), 0);
    EXPECT_EQ(slurp(dir / "a" / "summary.csv"), slurp(dir / "c" / "summary.csv"));
    EXPECT_EQ(slurp(dir / "a" / "campaign.meta"), slurp(dir / "c" / "campaign.meta"));
}

TEST(Cli, MontecarloMethodFilter)
{
    const fs::path dir = scratch("filter");
    const fs::path cfg = edited_config(dir, [](nlohmann::json& j) { j["runs"] = 1; });
    ASSERT_EQ(run("montecarlo --config " + q(cfg) + " --method arx --out " + q(dir / "o")), 0);
    EXPECT_TRUE(fs::exists(dir / "o" / "theta_arx.csv"));
    EXPECT_FALSE(fs::exists(dir / "o" / "theta_spem_graybox2_K_PID.csv"));
}
