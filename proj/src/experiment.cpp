#include "fathom/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <thread>

#include "fathom/controller.hpp"
#include "fathom/rng.hpp"
#include "fathom/theory.hpp"
#include "format.hpp"

namespace fathom {

using nlohmann::json;

namespace {

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }
json optional_json(const std::optional<std::size_t>& v) { return v ? json(*v) : json(nullptr); }

double sampled_loss(const Objective& obj, std::span<const double> x, std::span<const ClientDataset> clients,
                    std::span<const ClientReport> reports) {
    double weighted = 0.0;
    double total = 0.0;
    for (const auto& r : reports) {
        const double nu = static_cast<double>(r.nu);
        weighted += nu * loss(obj, x, clients[r.client_id]);
        total += nu;
    }
    return weighted / total;
}

std::uint64_t init_seed(std::uint64_t master) { return derive_seed(master, tag_of("init")); }

} // namespace

std::optional<std::size_t> rounds_to_target(std::span<const RoundRecord> records, const Target& target) {
    for (const auto& r : records) {
        if (target.kind == TargetKind::eval_loss) {
            if (r.eval_loss && *r.eval_loss <= target.value) return r.t;
        } else if (r.eval_accuracy && *r.eval_accuracy >= target.value) {
            return r.t;
        }
    }
    return std::nullopt;
}

ExperimentData prepare_data(const RunConfig& cfg) {
    auto objective = cfg.make_objective();
    auto federation = synth_federation(cfg.federation_spec(), objective);
    return ExperimentData{std::move(objective), std::move(federation)};
}

Evaluation evaluate(const ExperimentData& data, std::span<const double> x) {
    const auto& obj = data.objective;
    Evaluation ev;
    if (!data.federation.holdout.empty()) {
        ev.loss = loss(obj, x, data.federation.holdout);
        if (obj.is_classifier()) ev.accuracy = accuracy(obj, x, data.federation.holdout);
        return ev;
    }
    const std::span<const ClientDataset> clients = data.federation.clients;
    ev.loss = global_loss(obj, x, clients, Weighting::size_weighted);
    if (obj.is_classifier()) {
        double correct = 0.0;
        double total = 0.0;
        for (const auto& c : clients) {
            correct += accuracy(obj, x, c) * static_cast<double>(c.size());
            total += static_cast<double>(c.size());
        }
        ev.accuracy = correct / total;
    }
    return ev;
}

RunResult run_experiment(const RunConfig& cfg, const ExperimentData& data, const RoundObserver& observer) {
    cfg.validate();
    const auto& obj = data.objective;
    const std::span<const ClientDataset> clients = data.federation.clients;
    if (clients.size() != cfg.federation.clients) {
        throw std::invalid_argument("data does not match the configured client count");
    }

    HyperState state;
    state.eta = cfg.eta0;
    state.epochs = cfg.epochs0;
    state.batch = cfg.batch0;
    state.alpha = cfg.alpha;
    state.gamma_eta = cfg.gamma_eta;
    state.gamma_epochs = cfg.gamma_epochs;
    state.gamma_batch = cfg.gamma_batch;
    if (cfg.guard_rails) {
        GuardRails guard;
        std::size_t nu_max = 1;
        for (const auto& c : clients) nu_max = std::max(nu_max, c.size());
        guard.batch_max = static_cast<double>(nu_max);
        state.guard = guard;
    }
    state.validate();

    RunResult result;
    auto& summary = result.summary;
    summary.algorithm = cfg.algorithm;
    summary.seed = cfg.seed;
    summary.rounds_planned = cfg.rounds;

    ParamVector x = obj.initial_point(init_seed(cfg.seed));
    state.delta_sm.assign(x.size(), 0.0);
    summary.initial_eval_loss = evaluate(data, x).loss;

    const auto target_loss = cfg.target_loss;
    const auto target_acc = cfg.target_accuracy;
    RoundTraffic cumulative;

    for (std::size_t t = 1; t <= cfg.rounds; ++t) {
        RoundPlan plan;
        plan.round = t;
        plan.seed = round_seed(cfg.seed, t);
        plan.sampled = sample_clients(clients.size(), cfg.clients_per_round, plan.seed);
        plan.eta = state.eta;
        plan.epochs = state.epochs;
        plan.batch = state.batch;

        RoundResult round;
        try {
            round = execute_round(obj, clients, x, plan, cfg.algorithm, cfg.threads);
        } catch (const DivergenceError& e) {
            summary.diverged = true;
            summary.divergence = e.what();
            break;
        }
        ParamVector next = apply_update(x, round.delta_bar);
        const double train = sampled_loss(obj, next, clients, round.reports);
        if (!vec::all_finite(next) || !std::isfinite(train)) {
            summary.diverged = true;
            summary.divergence = "divergence: non-finite global model in round " + std::to_string(t);
            break;
        }
        x = std::move(next);

        cumulative.floats_down += round.traffic.floats_down;
        cumulative.floats_up += round.traffic.floats_up;
        cumulative.grad_evals += round.traffic.grad_evals;

        RoundRecord rec;
        rec.t = t;
        rec.train_loss = train;
        if (t % cfg.eval_every == 0 || t == cfg.rounds) {
            const auto ev = evaluate(data, x);
            rec.eval_loss = ev.loss;
            rec.eval_accuracy = ev.accuracy;
        }
        rec.eta = plan.eta;
        rec.epochs = plan.epochs;
        rec.batch = plan.batch;
        double steps = 0.0;
        for (const auto& r : round.reports) steps += static_cast<double>(r.steps);
        rec.mean_k = steps / static_cast<double>(round.reports.size());
        if (cfg.algorithm == Protocol::fathom) {
            const auto samples = alignment_samples(round.reports);
            const auto signals = advance(state, round.delta_bar, samples);
            rec.h_bar = signals.h_bar;
            rec.g_bar = signals.g_bar;
        }
        rec.floats_up = cumulative.floats_up;
        rec.floats_down = cumulative.floats_down;
        rec.cum_grad_evals = cumulative.grad_evals;

        summary.eta.push_back(rec.eta);
        summary.epochs.push_back(rec.epochs);
        summary.batch.push_back(rec.batch);
        summary.mean_k.push_back(rec.mean_k);
        if (observer) observer(rec);
        result.records.push_back(std::move(rec));
    }

    summary.rounds_completed = result.records.size();
    summary.total_floats_up = cumulative.floats_up;
    summary.total_floats_down = cumulative.floats_down;
    summary.total_grad_evals = cumulative.grad_evals;
    if (!result.records.empty()) {
        const auto& last = result.records.back();
        summary.final_train_loss = last.train_loss;
        if (!summary.diverged) {
            summary.final_eval_loss = last.eval_loss;
            summary.final_eval_accuracy = last.eval_accuracy;
        }
    }
    if (target_loss) summary.rounds_to_target_loss = rounds_to_target(result.records, {TargetKind::eval_loss, *target_loss});
    if (target_acc) {
        summary.rounds_to_target_accuracy = rounds_to_target(result.records, {TargetKind::eval_accuracy, *target_acc});
    }
    result.model = std::move(x);
    return result;
}

RunResult run_experiment(const RunConfig& cfg) {
    cfg.validate();
    return run_experiment(cfg, prepare_data(cfg));
}

std::optional<Target> config_target(const RunConfig& cfg) {
    if (cfg.target_loss) return Target{TargetKind::eval_loss, *cfg.target_loss};
    if (cfg.target_accuracy) return Target{TargetKind::eval_accuracy, *cfg.target_accuracy};
    return std::nullopt;
}

GridResult grid_search(const RunConfig& cfg, std::span<const double> etas, std::span<const double> batches,
                       const ExperimentData& data, unsigned threads) {
    if (etas.empty() || batches.empty()) throw std::invalid_argument("grid_search: empty grid");
    GridResult grid;
    for (double eta : etas) {
        for (double b : batches) grid.cells.push_back(GridCell{eta, b, {}});
    }

    auto run_cell = [&](GridCell& cell) {
        RunConfig c = cfg;
        c.algorithm = Protocol::fedavg;
        c.eta0 = cell.eta;
        c.batch0 = cell.batch;
        c.threads = 1;
        cell.summary = run_experiment(c, data).summary;
    };
    const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(grid.cells.size())));
    if (workers == 1) {
        for (auto& cell : grid.cells) run_cell(cell);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::exception_ptr> errors(grid.cells.size());
        {
            std::vector<std::jthread> pool;
            for (unsigned w = 0; w < workers; ++w) {
                pool.emplace_back([&] {
                    for (std::size_t i = next++; i < grid.cells.size(); i = next++) {
                        try {
                            run_cell(grid.cells[i]);
                        } catch (...) {
                            errors[i] = std::current_exception();
                        }
                    }
                });
            }
        }
        for (const auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    const auto target = config_target(cfg);
    auto reached = [&](const GridCell& c) {
        return target->kind == TargetKind::eval_loss ? c.summary.rounds_to_target_loss
                                                     : c.summary.rounds_to_target_accuracy;
    };
    std::optional<std::size_t> best;
    if (target) {
        for (std::size_t i = 0; i < grid.cells.size(); ++i) {
            const auto r = reached(grid.cells[i]);
            if (!r) continue;
            if (!best) {
                best = i;
                continue;
            }
            const auto& a = grid.cells[i];
            const auto& b = grid.cells[*best];
            const auto rb = *reached(b);
            if (*r < rb || (*r == rb && (a.summary.total_grad_evals < b.summary.total_grad_evals ||
                                         (a.summary.total_grad_evals == b.summary.total_grad_evals && a.eta < b.eta)))) {
                best = i;
            }
        }
    }
    if (!best) {
        grid.fallback = true;
        constexpr double inf = std::numeric_limits<double>::infinity();
        auto final_loss = [&](const GridCell& c) { return c.summary.final_eval_loss.value_or(inf); };
        best = 0;
        for (std::size_t i = 1; i < grid.cells.size(); ++i) {
            const auto& a = grid.cells[i];
            const auto& b = grid.cells[*best];
            if (final_loss(a) < final_loss(b) || (final_loss(a) == final_loss(b) && a.eta < b.eta)) best = i;
        }
    }
    grid.best = *best;
    return grid;
}

GridResult grid_search(const RunConfig& cfg, std::span<const double> etas, std::span<const double> batches,
                       unsigned threads) {
    cfg.validate();
    return grid_search(cfg, etas, batches, prepare_data(cfg), threads);
}

std::string csv_row(const RoundRecord& r) {
    using detail::format_real;
    auto opt = [](const std::optional<double>& v) { return v ? format_real(*v) : std::string(); };
    std::string row;
    row += std::to_string(r.t);
    row += ',' + format_real(r.train_loss);
    row += ',' + opt(r.eval_loss);
    row += ',' + opt(r.eval_accuracy);
    row += ',' + format_real(r.eta);
    row += ',' + format_real(r.epochs);
    row += ',' + format_real(r.batch);
    row += ',' + format_real(r.mean_k);
    row += ',' + format_real(r.h_bar);
    row += ',' + format_real(r.g_bar);
    row += ',' + std::to_string(r.floats_up);
    row += ',' + std::to_string(r.floats_down);
    row += ',' + std::to_string(r.cum_grad_evals);
    return row;
}

void write_csv(std::ostream& out, std::span<const RoundRecord> records) {
    out << kCsvHeader << '\n';
    for (const auto& r : records) out << csv_row(r) << '\n';
}

void write_csv(const std::filesystem::path& path, std::span<const RoundRecord> records) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    write_csv(out, records);
}

json summary_json(const RunConfig& cfg, const RunSummary& s) {
    return {
        {"algorithm", to_string(s.algorithm)},
        {"seed", s.seed},
        {"rounds_planned", s.rounds_planned},
        {"rounds_completed", s.rounds_completed},
        {"diverged", s.diverged},
        {"divergence", s.divergence},
        {"target_loss", optional_json(cfg.target_loss)},
        {"target_accuracy", optional_json(cfg.target_accuracy)},
        {"rounds_to_target_loss", optional_json(s.rounds_to_target_loss)},
        {"rounds_to_target_accuracy", optional_json(s.rounds_to_target_accuracy)},
        {"initial_eval_loss", s.initial_eval_loss},
        {"final_train_loss", s.final_train_loss},
        {"final_eval_loss", optional_json(s.final_eval_loss)},
        {"final_eval_accuracy", optional_json(s.final_eval_accuracy)},
        {"total_floats_up", s.total_floats_up},
        {"total_floats_down", s.total_floats_down},
        {"total_grad_evals", s.total_grad_evals},
        {"trajectory", {{"eta", s.eta}, {"epochs", s.epochs}, {"batch", s.batch}, {"mean_k", s.mean_k}}},
    };
}

json grid_json(const GridResult& grid) {
    json cells = json::array();
    for (const auto& c : grid.cells) {
        cells.push_back({
            {"eta", c.eta},
            {"batch", c.batch},
            {"diverged", c.summary.diverged},
            {"rounds_to_target_loss", optional_json(c.summary.rounds_to_target_loss)},
            {"rounds_to_target_accuracy", optional_json(c.summary.rounds_to_target_accuracy)},
            {"final_eval_loss", optional_json(c.summary.final_eval_loss)},
            {"total_grad_evals", c.summary.total_grad_evals},
        });
    }
    const auto& best = grid.cells.at(grid.best);
    return {
        {"best", {{"index", grid.best}, {"eta", best.eta}, {"batch", best.batch}}},
        {"fallback", grid.fallback},
        {"cells", cells},
    };
}

json bounds_json(const RunConfig& cfg, const ExperimentData& data, const RunSummary& summary) {
    const auto& obj = data.objective;
    const std::span<const ClientDataset> clients = data.federation.clients;
    const ParamVector x0 = obj.initial_point(init_seed(cfg.seed));
    const std::uint64_t seed = derive_seed(cfg.seed, tag_of("bounds"));

    TheoryParams p;
    p.L = estimate_lipschitz(obj, clients, x0, 30, seed);
    const std::vector<ParamVector> probes{x0};
    std::size_t nu_min = clients.front().size();
    for (const auto& c : clients) nu_min = std::min(nu_min, c.size());
    const auto noise = estimate_noise(obj, clients, probes, effective_batch(cfg.batch0, nu_min), 32, seed);
    p.sigma = noise.sigma;
    p.G = noise.G;
    const double f0 = global_loss(obj, x0, clients, Weighting::size_weighted);
    const double fstar = estimate_optimum(obj, clients, x0, 1.0 / p.L, 500);
    p.D = std::max(f0 - fstar, 0.0);
    p.m = static_cast<double>(cfg.clients_per_round);
    p.T = static_cast<double>(std::max<std::size_t>(summary.eta.size(), 1));

    json out = json::object();
    if (summary.eta.empty()) {
        out["params"] = {{"L", p.L}, {"sigma", p.sigma}, {"G", p.G}, {"D", p.D}, {"m", p.m}};
        out["rounds"] = json::object();
        return out;
    }
    Trajectory traj{summary.eta, summary.mean_k};
    return bound_report(p, traj);
}

void write_json(const std::filesystem::path& path, const json& value) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << value.dump(2) << '\n';
}

void write_run_outputs(const std::filesystem::path& dir, const RunConfig& cfg, const ExperimentData& data,
                       const RunResult& result) {
    std::filesystem::create_directories(dir);
    write_csv(dir / "metrics.csv", result.records);
    write_json(dir / "summary.json", summary_json(cfg, result.summary));
    {
        std::ofstream out(dir / "config.toml", std::ios::binary);
        out << serialize_config(cfg);
    }
    if (cfg.bounds) write_json(dir / "bounds.json", bounds_json(cfg, data, result.summary));
}

std::string report_table(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().filename() == "summary.json") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());

    auto cell = [](const json& v) -> std::string {
        if (v.is_null()) return "NA";
        if (v.is_number_float()) return detail::format_real(v.get<double>());
        if (v.is_string()) return v.get<std::string>();
        return v.dump();
    };
    std::ostringstream out;
    out << std::left << std::setw(24) << "run" << std::setw(8) << "algo" << std::setw(8) << "seed"
        << std::setw(8) << "rounds" << std::setw(10) << "to_loss" << std::setw(10) << "to_acc"
        << std::setw(24) << "final_eval_loss" << std::setw(14) << "grad_evals" << "floats_up+down\n";
    for (const auto& f : files) {
        std::ifstream in(f);
        json s;
        try {
            s = json::parse(in);
        } catch (const json::parse_error&) {
            throw std::runtime_error("malformed summary: " + f.string());
        }
        std::string name = fs::relative(f.parent_path(), dir).generic_string();
        if (name.empty()) name = ".";
        std::string rounds = cell(s.value("rounds_completed", json())) + (s.value("diverged", false) ? "!" : "");
        const auto up = s.value("total_floats_up", std::uint64_t{0});
        const auto down = s.value("total_floats_down", std::uint64_t{0});
        out << std::setw(24) << name << std::setw(8) << cell(s.value("algorithm", json()))
            << std::setw(8) << cell(s.value("seed", json())) << std::setw(8) << rounds
            << std::setw(10) << cell(s.value("rounds_to_target_loss", json()))
            << std::setw(10) << cell(s.value("rounds_to_target_accuracy", json()))
            << std::setw(24) << cell(s.value("final_eval_loss", json()))
            << std::setw(14) << cell(s.value("total_grad_evals", json())) << (up + down) << '\n';
    }
    return out.str();
}

} // namespace fathom
