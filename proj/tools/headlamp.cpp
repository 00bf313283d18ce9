#include <CLI11.hpp>

#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <optional>

#include "headlamp/pipeline.hpp"

using namespace headlamp;

namespace {

struct Command {
    const char* name;
    const char* help;
    std::function<std::vector<std::filesystem::path>(const Workspace&)> run;
};

std::filesystem::path default_out() {
    if (const char* env = std::getenv("HEADLAMP_OUT"); env && *env) return env;
    return "headlamp-out";
}

}  // namespace

int main(int argc, char** argv) {
    const std::vector<Command> commands{
        {"gen-traces", "Generate unablated traces with per-step head scores", run_gen_traces},
        {"stats", "Static ranking, dynamism table and variance heatmap", run_stats},
        {"ablate-grid", "Length x depth ablation grid for each condition", run_ablate_grid},
        {"ablate-progressive", "Progressive top-k ablation with compensation tracking", run_ablate_progressive},
        {"cca", "Hidden-state vs head-score CCA over temporal offsets", run_cca},
        {"probe-train", "Train the head-score probe", run_probe_train},
        {"probe-eval", "Evaluate a trained probe on the test split", run_probe_eval},
        {"dynrag", "Run the head-driven retrieval loop per policy", run_dynrag},
        {"report", "Collect grid results into figure-shaped CSV matrices", run_report},
    };

    CLI::App app{"headlamp: retrieval-head dynamics lab"};
    app.require_subcommand(1);
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::map<std::string, CLI::App*> subs;
    for (const auto& c : commands) {
        auto* sub = app.add_subcommand(c.name, c.help);
        sub->add_option("--config", config_path, "Run configuration (JSON)");
        sub->add_option("--seed", seed, "Master seed; overrides the config");
        sub->add_option("--out", out_dir, "Output directory (default $HEADLAMP_OUT or ./headlamp-out)");
        subs[c.name] = sub;
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "headlamp: " << e.what() << "\n\n" << app.help();
        return 2;
    }

    const Command* chosen = nullptr;
    for (const auto& c : commands)
        if (subs[c.name]->parsed()) chosen = &c;

    std::optional<Workspace> ws;
    try {
        RunConfig config = config_path.empty() ? RunConfig{} : RunConfig::load(config_path);
        if (seed) config.seed = *seed;
        config.validate();
        ws.emplace(std::move(config), out_dir.empty() ? default_out() : std::filesystem::path(out_dir));
    } catch (const ConfigError& e) {
        std::cerr << "headlamp: config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "headlamp: error: " << e.what() << "\n";
        return 3;
    }

    try {
        for (const auto& p : chosen->run(*ws)) std::cout << p.string() << "\n";
    } catch (const ConfigError& e) {
        std::cerr << "headlamp: config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "headlamp: error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
