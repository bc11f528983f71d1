#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "fathom/objectives.hpp"
#include "test_util.hpp"

using namespace fathom;

namespace {

ClientDataset quad_client(std::size_t id, std::vector<std::vector<double>> targets) {
    ClientDataset c;
    c.client_id = id;
    c.width = targets.front().size();
    for (const auto& t : targets) c.rows.insert(c.rows.end(), t.begin(), t.end());
    return c;
}

ClientDataset random_classification(std::size_t n, std::size_t p, std::size_t classes, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    ClientDataset c;
    c.width = p;
    for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t k = 0; k < p; ++k) c.rows.push_back(normal(rng));
        c.labels.push_back(static_cast<int>(j % classes));
    }
    return c;
}

ParamVector random_point(std::size_t d, std::uint64_t seed, double scale = 0.5) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    ParamVector x(d);
    for (auto& v : x) v = normal(rng);
    return x;
}

} // namespace

TEST_CASE("quadratic gradient vanishes at the target") {
    const auto obj = Objective::quadratic(3);
    const auto c = quad_client(0, {{1.0, -2.0, 0.5}});
    const ParamVector x{1.0, -2.0, 0.5};
    const auto g = full_gradient(obj, x, c);
    CHECK(g.vector == ParamVector{0.0, 0.0, 0.0});
    CHECK(loss(obj, x, c) == 0.0);
}

TEST_CASE("binary logistic at zero weights") {
    const auto obj = Objective::logistic(3, 2);
    auto data = random_classification(40, 3, 2, 1); // balanced labels
    const ParamVector x(obj.dimension(), 0.0);
    CHECK(loss(obj, x, data) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
    const auto g = full_gradient(obj, x, data);
    // bias entries sit at the end of each class block
    CHECK(std::abs(g.vector[3]) < 1e-15);
    CHECK(std::abs(g.vector[7]) < 1e-15);
}

TEST_CASE("gradients match central differences for every kind") {
    constexpr double h = 1e-6;
    for (int trial = 0; trial < 100; ++trial) {
        const auto seed = static_cast<std::uint64_t>(trial);
        std::vector<Objective> objs{Objective::quadratic(4, {1.0, 2.0, 0.5, 3.0}), Objective::logistic(3, 3),
                                    Objective::mlp(3, 4, 3)};
        for (const auto& obj : objs) {
            ClientDataset data;
            if (obj.is_classifier()) {
                data = random_classification(7, 3, 3, seed);
            } else {
                data = quad_client(0, {{0.1, 0.2, -0.3, 1.0}, {1.0, -1.0, 0.5, 0.0}});
            }
            const auto x = random_point(obj.dimension(), seed + 1000);
            const auto g = full_gradient(obj, x, data).vector;
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double fd = test::central_difference([&](const ParamVector& p) { return loss(obj, p, data); }, x, j, h);
                INFO("kind " << to_string(obj.kind()) << " trial " << trial << " coord " << j << " g " << g[j] << " fd " << fd);
                CHECK(test::fd_agrees(g[j], fd, 1e-5));
            }
        }
    }
}

TEST_CASE("minibatch gradient") {
    const auto obj = Objective::quadratic(1);
    const auto c = quad_client(0, {{1.0}, {2.0}, {4.0}, {-1.0}});
    const ParamVector x{0.5};

    SUBCASE("singleton batch is x - c_j") {
        const std::vector<std::size_t> b{2};
        CHECK(minibatch_gradient(obj, x, c, b).vector[0] == doctest::Approx(0.5 - 4.0));
    }
    SUBCASE("full batch equals full gradient") {
        const std::vector<std::size_t> b{0, 1, 2, 3};
        CHECK(minibatch_gradient(obj, x, c, b).vector == full_gradient(obj, x, c).vector);
    }
    SUBCASE("bad index and empty batch") {
        const std::vector<std::size_t> bad{4};
        CHECK_THROWS_AS(minibatch_gradient(obj, x, c, bad), std::out_of_range);
        CHECK_THROWS(minibatch_gradient(obj, x, c, std::vector<std::size_t>{}));
    }
}

TEST_CASE("averaging over a disjoint epoch partition gives the full gradient") {
    const auto obj = Objective::logistic(4, 3);
    const auto data = random_classification(24, 4, 3, 5);
    const auto x = random_point(obj.dimension(), 6);
    std::vector<std::size_t> perm(24);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), std::mt19937_64(3));
    ParamVector avg(obj.dimension(), 0.0);
    for (std::size_t s = 0; s < 24; s += 6) {
        const std::vector<std::size_t> b(perm.begin() + static_cast<long>(s), perm.begin() + static_cast<long>(s + 6));
        vec::axpy(0.25, minibatch_gradient(obj, x, data, b).vector, avg);
    }
    const auto full = full_gradient(obj, x, data).vector;
    for (std::size_t j = 0; j < avg.size(); ++j) {
        CHECK(std::abs(avg[j] - full[j]) <= 1e-12 * std::max(1.0, std::abs(full[j])));
    }
}

TEST_CASE("loss decreases along the negative gradient and convexity holds") {
    for (int trial = 0; trial < 20; ++trial) {
        const auto obj = Objective::logistic(5, 2);
        const auto data = random_classification(30, 5, 2, static_cast<std::uint64_t>(trial));
        const auto x = random_point(obj.dimension(), static_cast<std::uint64_t>(trial) + 50);
        const auto g = full_gradient(obj, x, data).vector;
        ParamVector y = x;
        vec::axpy(-1e-3, g, y);
        CHECK(loss(obj, y, data) < loss(obj, x, data));

        const auto delta = random_point(obj.dimension(), static_cast<std::uint64_t>(trial) + 99, 1.0);
        ParamVector z = x;
        vec::axpy(1.0, delta, z);
        CHECK(loss(obj, z, data) >= loss(obj, x, data) + vec::dot(g, delta) - 1e-12);
    }
}

TEST_CASE("global loss weightings") {
    const auto obj = Objective::quadratic(1);
    // losses 1 and 3 at x = 0 with sizes 1 and 3
    const auto a = quad_client(0, {{std::sqrt(2.0)}});
    const auto b = quad_client(1, {{std::sqrt(6.0)}, {std::sqrt(6.0)}, {std::sqrt(6.0)}});
    const std::vector<ClientDataset> clients{a, b};
    const ParamVector x{0.0};
    CHECK(global_loss(obj, x, clients, Weighting::uniform) == doctest::Approx(2.0));
    CHECK(global_loss(obj, x, clients, Weighting::size_weighted) == doctest::Approx(2.5));

    const std::vector<ClientDataset> twins{a, a};
    CHECK(global_loss(obj, x, twins, Weighting::uniform) == global_loss(obj, x, twins, Weighting::size_weighted));
    const std::vector<ClientDataset> single{b};
    CHECK(global_loss(obj, x, single, Weighting::uniform) == loss(obj, x, b));
}

TEST_CASE("global gradient matches the weighted loss") {
    const auto obj = Objective::logistic(3, 2);
    std::vector<ClientDataset> clients{random_classification(5, 3, 2, 1), random_classification(11, 3, 2, 2)};
    const auto x = random_point(obj.dimension(), 3);
    for (auto w : {Weighting::uniform, Weighting::size_weighted}) {
        const auto g = global_gradient(obj, x, clients, w);
        for (std::size_t j = 0; j < x.size(); ++j) {
            const double fd = test::central_difference([&](const ParamVector& p) { return global_loss(obj, p, clients, w); }, x, j, 1e-6);
            CHECK(test::rel_err(g[j], fd) <= 1e-5);
        }
    }
}

TEST_CASE("errors") {
    const auto obj = Objective::quadratic(2);
    ClientDataset empty;
    empty.width = 2;
    CHECK_THROWS_WITH(full_gradient(obj, ParamVector{0.0, 0.0}, empty), doctest::Contains("empty client"));
    CHECK_THROWS(Objective::quadratic(0));
    CHECK_THROWS(Objective::logistic(3, 1));
    CHECK_THROWS(objective_kind_from_string("cnn"));
    CHECK(objective_kind_from_string(to_string(ObjectiveKind::mlp)) == ObjectiveKind::mlp);
}

TEST_CASE("accuracy and predict") {
    const auto obj = Objective::logistic(1, 2);
    ClientDataset data;
    data.width = 1;
    data.rows = {-2.0, -1.0, 1.0, 2.0};
    data.labels = {0, 0, 1, 1};
    // class 1 logit = x, class 0 logit = -x
    const ParamVector x{-1.0, 0.0, 1.0, 0.0};
    CHECK(accuracy(obj, x, data) == 1.0);
    CHECK(obj.predict(x, data.row(0)) == 0);
}

TEST_CASE("dimensions") {
    CHECK(Objective::logistic(9, 2).dimension() == 20);
    CHECK(Objective::logistic(4, 4).dimension() == 20);
    CHECK(Objective::mlp(3, 4, 2).dimension() == 4 * 3 + 4 + 2 * 4 + 2);
    const auto mlp = Objective::mlp(3, 4, 2);
    CHECK(mlp.initial_point(1) == mlp.initial_point(1));
    CHECK(Objective::logistic(3, 2).initial_point(5) == ParamVector(8, 0.0));
}
