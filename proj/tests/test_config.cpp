#include <doctest.h>

#include <string>

#include "fathom/config.hpp"

using namespace fathom;

namespace {

const char* kMinimal = "objective = \"quadratic\"\nrounds = 5\n";

std::size_t error_line(const std::string& text) {
    try {
        (void)parse_config(text);
    } catch (const ConfigError& e) {
        return e.line();
    }
    FAIL("expected a ConfigError");
    return 0;
}

std::string error_message(const std::string& text) {
    try {
        (void)parse_config(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    FAIL("expected a ConfigError");
    return {};
}

} // namespace

TEST_CASE("defaults") {
    const auto c = parse_config(kMinimal);
    CHECK(c.gamma_eta == 0.01);
    CHECK(c.gamma_epochs == 0.01);
    CHECK(c.gamma_batch == 0.1);
    CHECK(c.alpha == 0.5);
    CHECK(c.algorithm == Protocol::fathom);
    CHECK_FALSE(c.guard_rails);
    CHECK(c.rounds == 5);
    CHECK(c.objective == ObjectiveKind::quadratic);
}

TEST_CASE("comments, whitespace and quotes") {
    const auto c = parse_config("# header\n\n  objective   =  \"logistic\"   # trailing\nrounds=3\n"
                                "output_dir = \"runs/#1\"\nguard_rails = true\n");
    CHECK(c.objective == ObjectiveKind::logistic);
    CHECK(c.output_dir == "runs/#1");
    CHECK(c.guard_rails);
}

TEST_CASE("errors carry line numbers") {
    CHECK(error_line(std::string(kMinimal) + "rounds = 6\n") == 3);
    CHECK(error_message(std::string(kMinimal) + "rounds = 6\n").find("duplicate key 'rounds'") != std::string::npos);
    CHECK(error_line(std::string(kMinimal) + "\nlearning_rate = 0.1\n") == 4);
    CHECK(error_message(std::string(kMinimal) + "bogus = 1\n").find("unknown key 'bogus'") != std::string::npos);
    CHECK(error_line(std::string(kMinimal) + "eta0 = fast\n") == 3);
    CHECK(error_line(std::string(kMinimal) + "eta0 = \"0.1\"\n") == 3);
    CHECK(error_line(std::string(kMinimal) + "clients = -4\n") == 3);
    CHECK(error_line(std::string(kMinimal) + "clients = 2.5\n") == 3);
    CHECK(error_line(std::string(kMinimal) + "guard_rails = yes\n") == 3);
    CHECK(error_line(std::string(kMinimal) + "algorithm = \"sgd\"\n") == 3);
    CHECK(error_line(std::string(kMinimal) + "output_dir = \"open\n") == 3);
    CHECK(error_line(std::string(kMinimal) + "eta0 =\n") == 3);
    CHECK(error_line("objective = \"quadratic\"\njust words\nrounds = 1\n") == 2);
}

TEST_CASE("missing required keys are named") {
    CHECK(error_message("rounds = 3\n").find("missing required key 'objective'") != std::string::npos);
    CHECK(error_message("objective = \"mlp\"\n").find("missing required key 'rounds'") != std::string::npos);
    CHECK(error_line("rounds = 3\n") == 0);
}

TEST_CASE("semantic validation") {
    CHECK_THROWS_AS(parse_config(std::string(kMinimal) + "eta0 = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config(std::string(kMinimal) + "alpha = 1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config(std::string(kMinimal) + "gamma_batch = -0.1\n"), ConfigError);
    CHECK_THROWS_AS(parse_config(std::string(kMinimal) + "clients = 5\nclients_per_round = 6\n"), ConfigError);
    CHECK_THROWS_AS(parse_config(std::string(kMinimal) + "target_accuracy = 0.9\n"), ConfigError);
    CHECK_THROWS_AS(parse_config(std::string(kMinimal) + "dirichlet_beta = 0\n"), ConfigError);
    CHECK_THROWS_AS(parse_config("objective = \"quadratic\"\nrounds = 0\n"), ConfigError);
    CHECK_NOTHROW(parse_config(std::string(kMinimal) + "alpha = 0\ngamma_eta = 0\n"));
}

TEST_CASE("serialization round trip") {
    const auto c = parse_config("objective = \"logistic\"\nrounds = 17\nalgorithm = \"fedavg\"\neta0 = 0.1\n"
                                "batch0 = 12.5\ntarget_loss = 0.3\ntarget_accuracy = 0.8\ndata_seed = 99\n"
                                "seed = 18446744073709551615\nfeature_scale_ratio = 10\nsize_law = \"fixed\"\n"
                                "holdout = \"fresh_clients\"\noutput_dir = \"a b\"\nbounds = true\n");
    const auto text = serialize_config(c);
    const auto back = parse_config(text);
    CHECK(back == c);
    CHECK(serialize_config(back) == text);
    CHECK(back.seed == 18446744073709551615ull);

    const auto plain = parse_config(kMinimal);
    CHECK(parse_config(serialize_config(plain)) == plain);
}

TEST_CASE("data seed defaults to a child of the master seed") {
    auto a = parse_config(std::string(kMinimal) + "seed = 1\n");
    auto b = parse_config(std::string(kMinimal) + "seed = 2\n");
    CHECK(a.federation_spec().seed != b.federation_spec().seed);
    CHECK(a.federation_spec().seed == a.federation_spec().seed);
    a.data_seed = 5;
    b.data_seed = 5;
    CHECK(a.federation_spec().seed == 5);
    CHECK(b.federation_spec().seed == 5);
}

TEST_CASE("missing file") {
    CHECK_THROWS_AS(load_config("/nonexistent/run.toml"), ConfigError);
}
