#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fathom/config.hpp"
#include "fathom/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kDiverged = 3;

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> algo;
    std::optional<std::size_t> rounds;
    std::optional<std::string> out;
};

fathom::RunConfig load_with(const std::string& path, const Overrides& o) {
    auto cfg = fathom::load_config(path);
    if (o.seed) cfg.seed = *o.seed;
    if (o.algo) {
        try {
            cfg.algorithm = fathom::protocol_from_string(*o.algo);
        } catch (const std::invalid_argument& e) {
            throw fathom::ConfigError(0, e.what());
        }
    }
    if (o.rounds) cfg.rounds = *o.rounds;
    if (o.out) cfg.output_dir = *o.out;
    cfg.validate();
    return cfg;
}

int cmd_run(const std::string& config, const Overrides& o) {
    const auto cfg = load_with(config, o);
    const auto data = fathom::prepare_data(cfg);
    for (const auto& w : data.federation.warnings) std::cerr << "warning: " << w << '\n';
    const auto result = fathom::run_experiment(cfg, data);
    fathom::write_run_outputs(cfg.output_dir, cfg, data, result);
    const auto& s = result.summary;
    std::cout << "rounds " << s.rounds_completed << "/" << s.rounds_planned;
    if (s.final_eval_loss) std::cout << "  final eval_loss " << *s.final_eval_loss;
    if (s.rounds_to_target_loss) std::cout << "  loss target at t=" << *s.rounds_to_target_loss;
    if (s.rounds_to_target_accuracy) std::cout << "  accuracy target at t=" << *s.rounds_to_target_accuracy;
    std::cout << "\nwrote " << cfg.output_dir << '\n';
    if (s.diverged) {
        std::cerr << s.divergence << '\n';
        return kDiverged;
    }
    return kOk;
}

int cmd_grid(const std::string& config, const Overrides& o, const std::vector<double>& etas,
             const std::vector<double>& batches, unsigned threads) {
    const auto cfg = load_with(config, o);
    for (double v : etas) {
        if (!(v > 0.0)) throw fathom::ConfigError(0, "--eta values must be > 0");
    }
    for (double v : batches) {
        if (!(v > 0.0)) throw fathom::ConfigError(0, "--batch values must be > 0");
    }
    const auto grid = fathom::grid_search(cfg, etas, batches, threads);
    std::filesystem::create_directories(cfg.output_dir);
    fathom::write_json(std::filesystem::path(cfg.output_dir) / "grid.json", fathom::grid_json(grid));
    for (const auto& c : grid.cells) {
        std::cout << "eta=" << c.eta << " batch=" << c.batch << " to_loss=";
        if (c.summary.rounds_to_target_loss) std::cout << *c.summary.rounds_to_target_loss;
        else std::cout << "NA";
        std::cout << " final_eval_loss=";
        if (c.summary.final_eval_loss) std::cout << *c.summary.final_eval_loss;
        else std::cout << "NA";
        std::cout << (c.summary.diverged ? " diverged" : "") << '\n';
    }
    const auto& best = grid.cells[grid.best];
    std::cout << "best eta=" << best.eta << " batch=" << best.batch
              << (grid.fallback ? " (no cell reached the target; lowest final eval_loss)" : "") << '\n';
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Federated optimization simulator"};
    app.require_subcommand(1);

    std::string config;
    Overrides o;
    std::uint64_t seed = 0;
    std::string algo;
    std::size_t rounds = 0;
    std::string out;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "master seed");
        sub->add_option("--algo", algo, "fathom or fedavg");
        sub->add_option("--rounds", rounds, "number of rounds")->check(CLI::PositiveNumber);
        sub->add_option("--out", out, "output directory");
    };

    auto* run = app.add_subcommand("run", "run one experiment");
    add_common(run);

    auto* grid = app.add_subcommand("grid", "static FedAvg grid search");
    add_common(grid);
    std::vector<double> etas;
    std::vector<double> batches;
    unsigned threads = 1;
    grid->add_option("--eta", etas, "learning rates")->required()->delimiter(',');
    grid->add_option("--batch", batches, "batch sizes")->required()->delimiter(',');
    grid->add_option("--threads", threads, "cells run concurrently");

    auto* report = app.add_subcommand("report", "rounds-to-target table");
    std::string in_dir;
    report->add_option("--in", in_dir, "directory with run outputs")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kConfigError;
    }

    auto pick = [](CLI::App* sub, Overrides& ov, std::uint64_t s, const std::string& a, std::size_t r,
                   const std::string& d) {
        if (sub->count("--seed")) ov.seed = s;
        if (sub->count("--algo")) ov.algo = a;
        if (sub->count("--rounds")) ov.rounds = r;
        if (sub->count("--out")) ov.out = d;
    };

    try {
        if (*run) {
            pick(run, o, seed, algo, rounds, out);
            return cmd_run(config, o);
        }
        if (*grid) {
            pick(grid, o, seed, algo, rounds, out);
            return cmd_grid(config, o, etas, batches, threads);
        }
        std::cout << fathom::report_table(in_dir);
        return kOk;
    } catch (const fathom::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
