#include <lrim/io.hpp>

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <string>

namespace fs = std::filesystem;
using lrim::json;

namespace {

const fs::path& work_dir() {
    static const fs::path dir = [] {
        auto d = fs::temp_directory_path() / "lrim_test_cli";
        fs::remove_all(d);
        fs::create_directories(d);
        return d;
    }();
    return dir;
}

int run(const std::string& args) {
    const std::string cmd = "LRIM_CACHE_DIR='" + (work_dir() / "cache").string() + "' '" LRIM_CLI_PATH "' --quiet " +
                            args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string out_path(const std::string& name) { return (work_dir() / name).string(); }

std::string slurp(const std::string& path) { return lrim::read_file(path).value_or(""); }

std::string header_value(const std::string& text, const std::string& key) {
    const auto at = text.find("# " + key + "=");
    if (at == std::string::npos) return "";
    const auto start = at + key.size() + 3;
    return text.substr(start, text.find('\n', start) - start);
}

} // namespace

TEST(Cli, DensityAtAlphaZeroIsConstant) {
    ASSERT_EQ(run("density --alpha 0 --mesh 1024 --out " + out_path("d0.csv")), 0);
    const auto text = slurp(out_path("d0.csv"));
    EXPECT_EQ(header_value(text, "converged"), "true");
    EXPECT_LE(std::stod(header_value(text, "residual")), 1e-14);
    EXPECT_LE(std::abs(std::stod(header_value(text, "envelope_ratio")) - 1.0), 1e-12);
    EXPECT_EQ(header_value(text, "config_hash").size(), 64u);
}

TEST(Cli, SecondRunReadsTheCacheAndMatchesBitForBit) {
    ASSERT_EQ(run("density --alpha 0.2 --mesh 512 --out " + out_path("a.csv")), 0);
    const auto entries = std::distance(fs::directory_iterator(work_dir() / "cache"), fs::directory_iterator{});
    ASSERT_EQ(run("density --alpha 0.2 --mesh 512 --out " + out_path("b.csv")), 0);
    EXPECT_EQ(std::distance(fs::directory_iterator(work_dir() / "cache"), fs::directory_iterator{}), entries);
    EXPECT_EQ(slurp(out_path("a.csv")), slurp(out_path("b.csv")));
}

TEST(Cli, AlphaOneIsADomainError) {
    EXPECT_EQ(run("density --alpha 1.0 --mesh 256"), 1);
    EXPECT_EQ(run("density --mesh 10"), 1);
    EXPECT_EQ(run("nonsense"), 1);
    EXPECT_EQ(run("response --alpha 0.2 --mesh 256 --obs banana"), 1);
}

TEST(Cli, ConstantObservableHasZeroResponse) {
    ASSERT_EQ(run("response --alpha 0 --obs const --mesh 1024 --format json --out " + out_path("r.json")), 0);
    const auto j = json::parse(slurp(out_path("r.json")));
    EXPECT_LE(std::abs(j["summary"]["value"].get<double>()), 1e-12);
    EXPECT_EQ(j["metadata"]["schema_version"].get<int>(), lrim::schema_version);
}

TEST(Cli, ValidateGateDecidesTheExitCode) {
    EXPECT_EQ(run("validate --alpha 0.25 --obs x --mesh 2048 --points 0 --eps 1e-2,5e-3 --gate 0.03"), 0);
    EXPECT_EQ(run("validate --alpha 0.25 --obs x --mesh 2048 --points 0 --eps 1e-2,5e-3 --gate 1e-9"), 2);
}

TEST(Cli, OmegaFactorsAreOneAtAlphaZero) {
    ASSERT_EQ(run("cones --alpha 0 --cone omega --grid 512 --format json --out " + out_path("o.json")), 0);
    const auto j = json::parse(slurp(out_path("o.json")));
    ASSERT_EQ(j["rows"].size(), 512u);
    for (const auto& row : j["rows"]) {
        EXPECT_NEAR(row[1].get<double>(), 1.0, 1e-12);
        EXPECT_NEAR(row[2].get<double>(), 1.0, 1e-12);
    }
}

TEST(Cli, ConfigFileRoundTripsAndFlagsOverrideIt) {
    const auto cfg = out_path("run.toml");
    ASSERT_EQ(run("decay --kind orbit --alpha 0.4 --ell-max 50 --write-config " + cfg), 0);
    ASSERT_EQ(run("--config " + cfg + " decay --write-config " + out_path("run2.toml")), 0);
    EXPECT_EQ(slurp(cfg), slurp(out_path("run2.toml")));
    ASSERT_EQ(run("--config " + cfg + " decay --out " + out_path("o1.csv")), 0);
    ASSERT_EQ(run("decay --kind orbit --alpha 0.4 --ell-max 50 --out " + out_path("o2.csv")), 0);
    EXPECT_EQ(slurp(out_path("o1.csv")), slurp(out_path("o2.csv")));
    ASSERT_EQ(run("--config " + cfg + " decay --alpha 0.5 --out " + out_path("o3.csv")), 0);
    EXPECT_EQ(header_value(slurp(out_path("o3.csv")), "alpha"), "0.5");
}

TEST(Cli, ConeFailuresExitWithGateCode) {
    EXPECT_EQ(run("cones --alpha 0.25 --mesh 1024 --cone C2 --k 3"), 2);
    EXPECT_EQ(run("cones --alpha 0.25 --mesh 1024 --cone Cstar --k 3"), 0);
}

TEST(Cli, SweepRejectsAlphaOutsideTheFamily) {
    EXPECT_EQ(run("sweep --alphas 0.1,1.2 --mesh 256"), 1);
    ASSERT_EQ(run("sweep --alphas 0.1,0.2 --mesh 512 --tol 1e-9 --out " + out_path("s.csv")), 0);
    EXPECT_NE(slurp(out_path("s.csv")).find("alpha,d_alpha_expectation"), std::string::npos);
}
