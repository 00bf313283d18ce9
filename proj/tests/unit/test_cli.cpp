#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <sstream>

#include "headlamp/config.hpp"
#include "headlamp/store.hpp"
#include "test_util.hpp"

using namespace headlamp;

namespace {

#ifdef HEADLAMP_CLI_PATH
const char* kCli = HEADLAMP_CLI_PATH;
#else
const char* kCli = nullptr;
#endif

int run(const std::string& args, const std::filesystem::path& log) {
    const std::string cmd = std::string(kCli) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::filesystem::path small_config(const std::filesystem::path& dir) {
    const auto path = dir / "small.json";
    write_text(path, R"({
  "seed": 5,
  "model": {"kind": "induction", "seed": 7, "heads_per_layer": 4, "max_context": 256},
  "task": {"kind": "toy_niah", "lengths": [40, 64], "depths": [0.0, 1.0], "runs": 1, "samples": 3},
  "ablation": {"conditions": ["none", "dynamic"], "k_values": [0, 1], "runs": 2, "length": 40}
})");
    return path;
}

std::vector<std::string> csv_lines(const std::filesystem::path& p) {
    std::vector<std::string> out;
    std::istringstream in(read_text(p));
    for (std::string l; std::getline(in, l);)
        if (!l.empty() && l[0] != '#') out.push_back(l);
    return out;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
    if (!kCli) GTEST_SKIP() << "CLI not built";
    const auto dir = testutil::temp_dir("cli_usage");
    EXPECT_EQ(run("stats --config " + (dir / "missing.json").string() + " --out " + dir.string(), dir / "log1"), 2);
    EXPECT_EQ(run("stats --config " + small_config(dir).string() + " --bogus", dir / "log2"), 2);
    EXPECT_EQ(run("not-a-command", dir / "log3"), 2);
    write_text(dir / "unknown.json", R"({"seeed": 1})");
    EXPECT_EQ(run("stats --config " + (dir / "unknown.json").string() + " --out " + dir.string(), dir / "log4"), 2);
    EXPECT_NE(read_text(dir / "log4").find("seeed"), std::string::npos);
}

TEST(Cli, StatsWritesProvenancedCsv) {
    if (!kCli) GTEST_SKIP() << "CLI not built";
    const auto dir = testutil::temp_dir("cli_stats");
    const auto cfg = small_config(dir);
    ASSERT_EQ(run("gen-traces --config " + cfg.string() + " --out " + dir.string(), dir / "log1"), 0)
        << read_text(dir / "log1");
    ASSERT_TRUE(std::filesystem::exists(dir / "traces.jsonl"));
    ASSERT_EQ(run("stats --config " + cfg.string() + " --out " + dir.string(), dir / "log2"), 0) << read_text(dir / "log2");

    const auto text = read_text(dir / "dynamism.csv");
    const auto hash = RunConfig::load(cfg).hash();
    EXPECT_EQ(text.rfind("# config_hash=" + hash + " master_seed=5\n", 0), 0u) << text;
    const auto rows = csv_lines(dir / "dynamism.csv");
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0].rfind("model,jaccard_with_static", 0), 0u);
    EXPECT_TRUE(std::filesystem::exists(dir / "static_ranking.csv"));
    EXPECT_TRUE(std::filesystem::exists(dir / "ranking.json"));

    // Same inputs, same bytes.
    const auto again = testutil::temp_dir("cli_stats_again");
    ASSERT_EQ(run("stats --config " + cfg.string() + " --out " + again.string(), again / "log"), 0);
    EXPECT_EQ(read_text(again / "dynamism.csv"), text);

    // Overriding the seed changes the provenance line.
    ASSERT_EQ(run("stats --config " + cfg.string() + " --seed 6 --out " + again.string(), again / "log"), 0);
    EXPECT_NE(read_text(again / "dynamism.csv").find("master_seed=6"), std::string::npos);
}

TEST(Cli, GridAndReportMatrix) {
    if (!kCli) GTEST_SKIP() << "CLI not built";
    const auto dir = testutil::temp_dir("cli_grid");
    const auto cfg = small_config(dir);
    ASSERT_EQ(run("ablate-grid --config " + cfg.string() + " --out " + dir.string(), dir / "log1"), 0)
        << read_text(dir / "log1");
    ASSERT_EQ(run("report --config " + cfg.string() + " --out " + dir.string(), dir / "log2"), 0) << read_text(dir / "log2");
    for (const char* cond : {"none", "dynamic"}) {
        const auto rows = csv_lines(dir / (std::string("fig2_") + cond + ".csv"));
        ASSERT_EQ(rows.size(), 3u) << cond;  // header plus two depths
        EXPECT_EQ(rows[0], "depth,40,64");
        for (std::size_t r = 1; r < rows.size(); ++r)
            EXPECT_EQ(std::count(rows[r].begin(), rows[r].end(), ','), 2) << rows[r];
    }
    const auto none = csv_lines(dir / "fig2_none.csv");
    EXPECT_EQ(none[1], "0.000000,1.000000,1.000000");
    const auto dyn = csv_lines(dir / "fig2_dynamic.csv");
    EXPECT_EQ(dyn[1], "0.000000,0.000000,0.000000");
    EXPECT_TRUE(std::filesystem::exists(dir / "report.json"));
}
