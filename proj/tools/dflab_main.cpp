#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dflab/acceptance.hpp"
#include "dflab/experiments.hpp"

int main(int argc, char** argv) {
    CLI::App app{"numerical laboratory for the measure-valued diffusion on the torus"};
    app.require_subcommand(1);

    std::string manifest_path;
    std::string out_dir = ".";
    std::uint64_t seed = 0;
    std::size_t workers = 0;
    CLI::App* run = app.add_subcommand("run", "execute one experiment manifest");
    run->add_option("--manifest", manifest_path, "manifest JSON path")->required();
    CLI::Option* seed_opt = run->add_option("--seed", seed, "override master_seed");
    run->add_option("--workers", workers, "override the worker count");
    run->add_option("--out", out_dir, "directory for results.json / manifest.json / tables.csv");

    std::vector<std::string> subset;
    CLI::App* acc = app.add_subcommand("acceptance", "run the acceptance suite");
    acc->add_option("criteria", subset, "criterion names, or 'all'");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    if (acc->parsed()) return dflab::acceptance_cli(subset, std::cout);

    std::ifstream in(manifest_path);
    if (!in) {
        std::cerr << "manifest: cannot open '" << manifest_path << "'\n";
        return 1;
    }
    dflab::Json manifest;
    try {
        manifest = dflab::Json::parse(in);
    } catch (const std::exception& e) {
        std::cerr << "manifest: " << e.what() << '\n';
        return 1;
    }
    if (seed_opt->count() > 0) manifest["master_seed"] = seed;
    if (workers > 0) manifest["workers"] = workers;

    dflab::RunOutcome outcome = dflab::run_manifest(manifest);
    std::string results_path;
    try {
        results_path = dflab::write_run_files(outcome, out_dir);
    } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
        return 1;
    }
    if (outcome.exit_code != 0) std::cerr << outcome.error << '\n';
    std::cout << (outcome.exit_code == 0 ? "pass" : "fail") << "  " << results_path << '\n';
    return outcome.exit_code;
}
