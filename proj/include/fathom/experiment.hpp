#pragma once

// Experiment orchestration: end-to-end runs, static grid search, metric files
// and rounds-to-target summaries.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "fathom/config.hpp"
#include "fathom/datagen.hpp"
#include "fathom/federation.hpp"
#include "fathom/objectives.hpp"

namespace fathom {

struct RoundRecord {
    std::size_t t = 0;
    double train_loss = 0.0;            // size-weighted loss of the sampled clients at x_{t+1}
    std::optional<double> eval_loss;    // present on evaluation rounds
    std::optional<double> eval_accuracy;
    double eta = 0.0; // hyperparameters used in round t
    double epochs = 0.0;
    double batch = 0.0;
    double mean_k = 0.0;
    double h_bar = 0.0;
    double g_bar = 0.0;
    std::uint64_t floats_up = 0; // cumulative
    std::uint64_t floats_down = 0;
    std::uint64_t cum_grad_evals = 0;
};

enum class TargetKind { eval_loss, eval_accuracy };

struct Target {
    TargetKind kind = TargetKind::eval_loss;
    double value = 0.0;
};

/// First t whose evaluation meets the target, or nullopt.
std::optional<std::size_t> rounds_to_target(std::span<const RoundRecord> records, const Target& target);

struct RunSummary {
    Protocol algorithm = Protocol::fathom;
    std::uint64_t seed = 0;
    std::size_t rounds_planned = 0;
    std::size_t rounds_completed = 0;
    bool diverged = false;
    std::string divergence;
    std::optional<std::size_t> rounds_to_target_loss;
    std::optional<std::size_t> rounds_to_target_accuracy;
    double initial_eval_loss = 0.0;
    double final_train_loss = 0.0;
    std::optional<double> final_eval_loss;
    std::optional<double> final_eval_accuracy;
    std::uint64_t total_floats_up = 0;
    std::uint64_t total_floats_down = 0;
    std::uint64_t total_grad_evals = 0;
    std::vector<double> eta;
    std::vector<double> epochs;
    std::vector<double> batch;
    std::vector<double> mean_k;
};

struct RunResult {
    std::vector<RoundRecord> records;
    RunSummary summary;
    ParamVector model;
};

/// Objective and synthetic federation of a config. Runs that share a data
/// seed can share one instance.
struct ExperimentData {
    Objective objective;
    Federation federation;
};

ExperimentData prepare_data(const RunConfig& cfg);

using RoundObserver = std::function<void(const RoundRecord&)>;

/// Executes cfg.rounds rounds. In fedavg mode hyperparameters stay at their
/// initial values. A divergence ends the run early; the records produced so
/// far are returned and the summary is marked diverged.
RunResult run_experiment(const RunConfig& cfg, const ExperimentData& data, const RoundObserver& observer = {});
RunResult run_experiment(const RunConfig& cfg);

/// Held-out loss and accuracy (accuracy only for classifiers). Falls back to
/// the training population when there is no holdout.
struct Evaluation {
    double loss = 0.0;
    std::optional<double> accuracy;
};
Evaluation evaluate(const ExperimentData& data, std::span<const double> x);

struct GridCell {
    double eta = 0.0;
    double batch = 0.0;
    RunSummary summary;
};

struct GridResult {
    std::vector<GridCell> cells; // eta-major order
    std::size_t best = 0;
    bool fallback = false; // no cell reached the target; best = lowest final eval loss
};

/// Static FedAvg over every (eta, batch) cell with the config's seed, so all
/// cells see the same client samples. Picks the fewest rounds to target, then
/// fewer gradient evaluations, then the smaller eta.
GridResult grid_search(const RunConfig& cfg, std::span<const double> etas, std::span<const double> batches,
                       const ExperimentData& data, unsigned threads = 1);
GridResult grid_search(const RunConfig& cfg, std::span<const double> etas, std::span<const double> batches,
                       unsigned threads = 1);

std::optional<Target> config_target(const RunConfig& cfg);

inline constexpr const char* kCsvHeader =
    "t,train_loss,eval_loss,eval_acc,eta,epochs,batch,mean_k,h_bar,g_bar,floats_up,floats_down,cum_grad_evals";

std::string csv_row(const RoundRecord& r);
void write_csv(std::ostream& out, std::span<const RoundRecord> records);
void write_csv(const std::filesystem::path& path, std::span<const RoundRecord> records);

nlohmann::json summary_json(const RunConfig& cfg, const RunSummary& summary);
nlohmann::json grid_json(const GridResult& grid);

/// Bound evaluations along the run's trajectory with constants estimated
/// from the data at the initial model.
nlohmann::json bounds_json(const RunConfig& cfg, const ExperimentData& data, const RunSummary& summary);

/// Writes metrics.csv, summary.json, config.toml and, if cfg.bounds,
/// bounds.json into dir.
void write_run_outputs(const std::filesystem::path& dir, const RunConfig& cfg, const ExperimentData& data,
                       const RunResult& result);

/// Rounds-to-target table over every summary.json under dir.
std::string report_table(const std::filesystem::path& dir);

void write_json(const std::filesystem::path& path, const nlohmann::json& value);

} // namespace fathom
