#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "datesort/pipeline.hpp"

namespace {

using datesort::CommandOutcome;
using datesort::RunConfig;

struct Options {
    std::string config_path;
    std::string out_dir;
    bool force = false;
    std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Options& opt) {
    cmd->add_option("--config", opt.config_path, "run configuration JSON document")
        ->required();
    cmd->add_option("--out", opt.out_dir, "run directory override (default: output_dir from the config)");
    cmd->add_flag("--force", opt.force, "replace an existing non-empty stage directory");
    cmd->add_option("--seed", opt.seed, "root seed override; every stage seed derives from it");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"synthetic date-fruit sorting pipeline"};
    app.require_subcommand(1);

    Options opt;
    CLI::App* gen = app.add_subcommand("gen", "generate the synthetic dataset");
    CLI::App* train = app.add_subcommand("train", "train the sorting model");
    CLI::App* evolve = app.add_subcommand("evolve", "evolve hyperparameters and feature mask");
    CLI::App* simulate = app.add_subcommand("simulate", "run the drift A/B conveyor simulation");
    CLI::App* eval = app.add_subcommand("eval", "evaluate the model on the held-out split");
    for (CLI::App* cmd : {gen, train, evolve, simulate, eval}) add_common(cmd, opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;  // usage problems are validation failures
    }

    try {
        RunConfig config = datesort::load_run_config(opt.config_path);
        if (opt.seed) {
            config.seed = *opt.seed;
            datesort::finalize_run_config(config);
        }
        const std::filesystem::path run_root =
            opt.out_dir.empty() ? std::filesystem::path(config.output_dir)
                                : std::filesystem::path(opt.out_dir);

        CommandOutcome outcome;
        if (gen->parsed()) outcome = datesort::cmd_gen(config, run_root, opt.force);
        else if (train->parsed()) outcome = datesort::cmd_train(config, run_root, opt.force);
        else if (evolve->parsed()) outcome = datesort::cmd_evolve(config, run_root, opt.force);
        else if (simulate->parsed()) outcome = datesort::cmd_simulate(config, run_root, opt.force);
        else outcome = datesort::cmd_eval(config, run_root, opt.force);

        std::cout << outcome.summary;
        std::cout << "artifacts: " << outcome.artifacts.size() << " files, manifest "
                  << (outcome.dir / "run_manifest.json").string() << "\n";
        return 0;
    } catch (const datesort::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 2;
    }
}
