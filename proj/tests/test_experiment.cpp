#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fathom/experiment.hpp"

using namespace fathom;

namespace {

RunConfig quadratic_config() {
    RunConfig c;
    c.objective = ObjectiveKind::quadratic;
    c.dim = 5;
    c.federation.clients = 20;
    c.federation.size_median = 30;
    c.federation.holdout_fraction = 0.0;
    c.clients_per_round = 5;
    c.rounds = 30;
    c.eta0 = 0.05;
    c.batch0 = 8;
    c.seed = 3;
    return c;
}

RunConfig logistic_config() {
    RunConfig c;
    c.objective = ObjectiveKind::logistic;
    c.federation.clients = 30;
    c.federation.size_median = 40;
    c.clients_per_round = 6;
    c.rounds = 25;
    c.eta0 = 0.2;
    c.batch0 = 10;
    c.seed = 11;
    return c;
}

RoundRecord eval_record(std::size_t t, std::optional<double> loss) {
    RoundRecord r;
    r.t = t;
    r.eval_loss = loss;
    return r;
}

// Equal curvature everywhere, so the minimizer is the mean of all rows.
double quadratic_floor(const ExperimentData& data) {
    const auto& clients = data.federation.clients;
    ParamVector mean(data.objective.dimension(), 0.0);
    double count = 0.0;
    for (const auto& c : clients) {
        for (std::size_t j = 0; j < c.size(); ++j) {
            for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += c.rows[j * c.width + k];
        }
        count += static_cast<double>(c.size());
    }
    for (auto& v : mean) v /= count;
    return global_loss(data.objective, mean, clients, Weighting::size_weighted);
}

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("fathom_test_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

} // namespace

TEST_CASE("rounds to target") {
    const std::vector<RoundRecord> recs{eval_record(1, 1.0), eval_record(2, 0.5), eval_record(3, 0.2)};
    CHECK(rounds_to_target(recs, {TargetKind::eval_loss, 0.4}) == 3u);
    CHECK(rounds_to_target(recs, {TargetKind::eval_loss, 0.5}) == 2u);
    CHECK(rounds_to_target(recs, {TargetKind::eval_loss, 5.0}) == 1u);
    CHECK_FALSE(rounds_to_target(recs, {TargetKind::eval_loss, 0.1}));

    const std::vector<RoundRecord> sparse{eval_record(1, std::nullopt), eval_record(2, 0.3)};
    CHECK(rounds_to_target(sparse, {TargetKind::eval_loss, 0.4}) == 2u);

    auto acc = eval_record(4, 0.1);
    acc.eval_accuracy = 0.9;
    const std::vector<RoundRecord> one{acc};
    CHECK(rounds_to_target(one, {TargetKind::eval_accuracy, 0.85}) == 4u);
    CHECK_FALSE(rounds_to_target(one, {TargetKind::eval_accuracy, 0.95}));
}

TEST_CASE("fathom with zero gains replays fedavg") {
    auto c = logistic_config();
    c.gamma_eta = c.gamma_epochs = c.gamma_batch = 0.0;
    c.algorithm = Protocol::fathom;
    const auto a = run_experiment(c);
    c.algorithm = Protocol::fedavg;
    const auto b = run_experiment(c);
    REQUIRE(a.records.size() == b.records.size());
    for (std::size_t i = 0; i < a.records.size(); ++i) {
        CHECK(a.records[i].train_loss == b.records[i].train_loss);
        CHECK(a.records[i].eval_loss == b.records[i].eval_loss);
        CHECK(a.records[i].eta == c.eta0);
        CHECK(a.records[i].cum_grad_evals == b.records[i].cum_grad_evals);
    }
    CHECK(a.model == b.model);
}

TEST_CASE("single round") {
    auto c = logistic_config();
    c.rounds = 1;
    c.eval_every = 7;
    const auto r = run_experiment(c);
    REQUIRE(r.records.size() == 1);
    CHECK(r.records[0].eta == c.eta0);
    CHECK(r.records[0].epochs == c.epochs0);
    CHECK(r.records[0].batch == c.batch0);
    CHECK(r.records[0].h_bar == 0.0);
    CHECK(r.records[0].eval_loss.has_value());
}

TEST_CASE("full participation with one full-batch step is gradient descent") {
    auto c = quadratic_config();
    c.clients_per_round = c.federation.clients;
    c.batch0 = 1e6;
    c.eta0 = 0.5;
    c.rounds = 60;
    c.algorithm = Protocol::fedavg;
    const auto data = prepare_data(c);
    const double floor = quadratic_floor(data);
    const auto r = run_experiment(c, data);
    REQUIRE(r.summary.final_eval_loss);
    CHECK(r.records[0].mean_k == 1.0);
    CHECK(*r.summary.final_eval_loss - floor <= 1e-12 + 1e-12 * floor);
    CHECK(*r.summary.final_eval_loss >= floor - 1e-12);
}

TEST_CASE("logistic training descends") {
    auto c = logistic_config();
    c.rounds = 200;
    for (auto algo : {Protocol::fedavg, Protocol::fathom}) {
        c.algorithm = algo;
        const auto r = run_experiment(c);
        CHECK_FALSE(r.summary.diverged);
        REQUIRE(r.summary.final_eval_loss);
        CHECK(*r.summary.final_eval_loss < 0.8 * r.summary.initial_eval_loss);
        CHECK(*r.summary.final_eval_accuracy > 0.6);
    }
}

TEST_CASE("csv layout and counters") {
    auto c = logistic_config();
    c.eval_every = 4;
    const auto r = run_experiment(c);
    std::ostringstream out;
    write_csv(out, r.records);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == kCsvHeader);
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        CHECK(std::count(line.begin(), line.end(), ',') == 12);
    }
    CHECK(rows == c.rounds);
    CHECK(csv_row(r.records[0]).find(",,,") != std::string::npos); // no evaluation at t=1
    CHECK(r.records[3].eval_loss.has_value());
    CHECK(r.records.back().eval_loss.has_value());
    for (std::size_t i = 1; i < r.records.size(); ++i) {
        CHECK(r.records[i].floats_up > r.records[i - 1].floats_up);
        CHECK(r.records[i].floats_down > r.records[i - 1].floats_down);
        CHECK(r.records[i].cum_grad_evals > r.records[i - 1].cum_grad_evals);
    }
}

TEST_CASE("runs are deterministic and threads do not matter") {
    auto c = logistic_config();
    std::ostringstream a, b, d;
    write_csv(a, run_experiment(c).records);
    write_csv(b, run_experiment(c).records);
    c.threads = 3;
    write_csv(d, run_experiment(c).records);
    CHECK(a.str() == b.str());
    CHECK(a.str() == d.str());
    c.seed += 1;
    c.threads = 1;
    std::ostringstream e;
    write_csv(e, run_experiment(c).records);
    CHECK(a.str() != e.str());
}

TEST_CASE("gradient evaluations recount") {
    auto c = logistic_config();
    const auto data = prepare_data(c);
    const auto r = run_experiment(c, data);
    std::uint64_t total = 0;
    for (const auto& rec : r.records) {
        const auto picked = sample_clients(c.federation.clients, c.clients_per_round, round_seed(c.seed, rec.t));
        for (auto id : picked) {
            const auto nu = data.federation.clients[id].size();
            total += local_steps_for(nu, rec.epochs, rec.batch) * effective_batch(rec.batch, nu);
        }
        CHECK(rec.cum_grad_evals == total);
    }
}

TEST_CASE("traffic difference between protocols") {
    auto c = logistic_config();
    c.algorithm = Protocol::fedavg;
    const auto a = run_experiment(c);
    c.algorithm = Protocol::fathom;
    const auto b = run_experiment(c);
    const auto n = c.clients_per_round * c.rounds;
    CHECK(b.summary.total_floats_up - a.summary.total_floats_up == n);
    CHECK(b.summary.total_floats_down - a.summary.total_floats_down == 3 * n);
}

TEST_CASE("divergence keeps partial records") {
    auto c = quadratic_config();
    c.eta0 = 40.0;
    c.epochs0 = 5.0;
    c.algorithm = Protocol::fedavg;
    const auto r = run_experiment(c);
    CHECK(r.summary.diverged);
    CHECK(r.summary.rounds_completed < c.rounds);
    CHECK(r.records.size() == r.summary.rounds_completed);
    CHECK_FALSE(r.summary.final_eval_loss);
    CHECK(r.summary.divergence.find("round") != std::string::npos);
}

TEST_CASE("grid search") {
    auto c = quadratic_config();
    c.rounds = 40;
    const auto data = prepare_data(c);

    const std::vector<double> one{0.05}, b8{8.0};
    const auto single = grid_search(c, one, b8, data);
    REQUIRE(single.cells.size() == 1);
    CHECK(single.best == 0);
    CHECK(single.fallback);

    const double floor = quadratic_floor(data);
    c.target_loss = floor + 0.5 * (single.cells[0].summary.initial_eval_loss - floor);
    const std::vector<double> etas{0.05, 40.0};
    const auto g = grid_search(c, etas, b8, data, 2);
    REQUIRE(g.cells.size() == 2);
    CHECK(g.cells[1].summary.diverged);
    CHECK_FALSE(g.fallback);
    CHECK(g.cells[g.best].eta == 0.05);
    const auto j = grid_json(g);
    CHECK(j["best"]["eta"].get<double>() == 0.05);
    CHECK(j["cells"].size() == 2);
}

TEST_CASE("grid ties go to fewer gradient evaluations") {
    auto c = quadratic_config();
    c.rounds = 10;
    c.target_loss = 1e9; // every cell hits at t = 1
    const std::vector<double> etas{0.05}, batches{4.0, 8.0};
    const auto g = grid_search(c, etas, batches);
    CHECK(g.cells[g.best].batch == 8.0);
}

TEST_CASE("run outputs and report") {
    const auto dir = scratch("outputs");
    auto c = logistic_config();
    c.bounds = true;
    c.target_loss = 0.6;
    const auto data = prepare_data(c);
    const auto r = run_experiment(c, data);
    write_run_outputs(dir / "fathom", c, data, r);
    c.algorithm = Protocol::fedavg;
    write_run_outputs(dir / "fedavg", c, data, run_experiment(c, data));

    for (const char* f : {"metrics.csv", "summary.json", "config.toml", "bounds.json"}) {
        CHECK(std::filesystem::exists(dir / "fathom" / f));
    }
    auto saved = load_config(dir / "fathom" / "config.toml");
    saved.algorithm = Protocol::fedavg;
    CHECK(saved == c);

    std::ifstream in(dir / "fathom" / "summary.json");
    const auto s = nlohmann::json::parse(in);
    CHECK(s["algorithm"] == "fathom");
    CHECK(s["rounds_completed"].get<std::size_t>() == c.rounds);
    CHECK(s["trajectory"]["eta"].size() == c.rounds);

    std::ifstream bin(dir / "fathom" / "bounds.json");
    const auto b = nlohmann::json::parse(bin);
    CHECK(b["rounds"].size() == c.rounds);
    CHECK(b["rounds"].contains("1"));
    CHECK(b["params"]["L"].get<double>() > 0.0);

    const auto table = report_table(dir);
    CHECK(table.find("fathom") != std::string::npos);
    CHECK(table.find("fedavg") != std::string::npos);
    CHECK(std::count(table.begin(), table.end(), '\n') == 3);
    CHECK_THROWS(report_table(dir / "missing"));
    std::filesystem::remove_all(dir);
}
