// ibc-lab: run experiments from a config file, or compare a report to a baseline.
//
//   ibc-lab run --config <file> [--out <dir>] [--seed <u64>] [--experiment <tag>]
//   ibc-lab verify <report> <baseline>
//
// Exit status: 0 success, 1 failed checks or regressions, 2 configuration or schema
// errors, 3 computation failures.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "ibclab/cli.hpp"

namespace cli = ibclab::cli;

namespace {

int do_run(const std::string& config_path, const std::optional<std::string>& out_dir, const std::optional<std::uint64_t>& seed,
           const std::optional<std::string>& experiment) {
    try {
        auto cfg = cli::load_config(config_path);
        if (out_dir) cfg.output_dir = *out_dir;
        if (seed) cfg.seed = *seed;
        if (experiment) cfg.experiment = *experiment;
        const auto outcome = cli::run(cfg);
        for (const auto& [name, block] : outcome.report["results"].items()) {
            for (const auto& c : block["checks"])
                std::printf("%-10s %-48s %s\n", name.c_str(), c["name"].get<std::string>().c_str(),
                            c["pass"].get<bool>() ? "pass" : "FAIL");
        }
        std::printf("report written to %s/report.json\n", cfg.output_dir.c_str());
        return outcome.all_passed ? cli::kOk : cli::kChecksFailed;
    } catch (const ibclab::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return cli::kConfigFailure;
    } catch (const cli::ExperimentError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return cli::kComputeFailure;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "computation failed: %s\n", e.what());
        return cli::kComputeFailure;
    }
}

int do_verify(const std::string& report, const std::string& baseline) {
    try {
        const auto v = cli::verify(cli::load_json(report), cli::load_json(baseline));
        for (const auto& r : v.regressions) std::printf("REGRESSION %s\n", r.c_str());
        std::printf("%d values compared, %zu regressions\n", v.compared, v.regressions.size());
        return v.regressions.empty() ? cli::kOk : cli::kChecksFailed;
    } catch (const cli::VersionError& e) {
        std::fprintf(stderr, "version error: %s\n", e.what());
        return cli::kConfigFailure;
    } catch (const ibclab::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return cli::kConfigFailure;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ibc-lab: numerical checks for interior-boundary condition operators"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "run experiments and write report.json plus CSV files");
    std::string config_path;
    std::optional<std::string> out_dir, experiment;
    std::optional<std::uint64_t> seed;
    run->add_option("--config", config_path, "flat key = value configuration file")->required();
    run->add_option("--out", out_dir, "output directory (overrides output_dir)");
    run->add_option("--seed", seed, "random seed (overrides seed)");
    run->add_option("--experiment", experiment, "experiment tag (overrides experiment)");

    auto* ver = app.add_subcommand("verify", "compare a report against a baseline report");
    std::string report, baseline;
    ver->add_option("report", report, "report.json to check")->required();
    ver->add_option("baseline", baseline, "baseline report.json")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : cli::kConfigFailure;
    }
    if (*run) return do_run(config_path, out_dir, seed, experiment);
    return do_verify(report, baseline);
}
