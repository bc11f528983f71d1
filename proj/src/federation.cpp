#include "fathom/federation.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <numeric>
#include <thread>

#include "fathom/rng.hpp"

namespace fathom {

std::string to_string(Protocol protocol) { return protocol == Protocol::fedavg ? "fedavg" : "fathom"; }

Protocol protocol_from_string(const std::string& name) {
    if (name == "fedavg") return Protocol::fedavg;
    if (name == "fathom") return Protocol::fathom;
    throw std::invalid_argument("unknown algorithm '" + name + "'");
}

std::uint64_t round_seed(std::uint64_t master, std::size_t t) { return derive_seed(master, t); }

std::uint64_t client_seed(std::uint64_t rseed, std::size_t client_id) {
    return derive_seed(rseed, 0x1000000ULL + client_id);
}

std::vector<std::size_t> sample_clients(std::size_t m, std::size_t n, std::uint64_t rseed) {
    if (n < 1 || n > m) {
        throw std::invalid_argument("sample_clients needs 1 <= n <= m");
    }
    std::vector<std::size_t> pool(m);
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    Rng rng(derive_seed(rseed, tag_of("sample")));
    for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, m - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(n);
    std::sort(pool.begin(), pool.end());
    return pool;
}

std::size_t local_steps_for(std::size_t nu, double epochs, double batch) {
    if (nu < 1 || !(epochs > 0.0) || !(batch > 0.0)) {
        throw std::invalid_argument("local_steps_for needs nu >= 1, epochs > 0, batch > 0");
    }
    const double k = std::floor(static_cast<double>(nu) * epochs / batch);
    return k < 1.0 ? 1 : static_cast<std::size_t>(k);
}

std::size_t effective_batch(double batch, std::size_t nu) {
    const double b = std::round(batch);
    if (!(b >= 1.0)) return 1;
    if (b >= static_cast<double>(nu)) return nu;
    return static_cast<std::size_t>(b);
}

ClientReport run_local(const Objective& obj, std::span<const double> x_t, const ClientDataset& data,
                       const LocalSettings& s, LocalTrace* trace) {
    if (!(s.eta > 0.0) || s.steps < 1) {
        throw std::invalid_argument("run_local needs eta > 0 and steps >= 1");
    }
    if (data.empty()) {
        throw std::invalid_argument("empty client");
    }
    const std::size_t nu = data.size();
    const std::size_t b = effective_batch(s.batch, nu);
    const std::size_t per_epoch = nu / b;

    Rng rng(s.seed);
    std::vector<std::size_t> order(nu);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::size_t cursor = per_epoch; // forces a shuffle before the first step

    ParamVector x(x_t.begin(), x_t.end());
    AlignmentTracker alignment(x.size());
    std::vector<std::size_t> batch(b);

    for (std::size_t k = 0; k < s.steps; ++k) {
        if (cursor == per_epoch) {
            std::shuffle(order.begin(), order.end(), rng);
            cursor = 0;
        }
        std::copy_n(order.begin() + static_cast<std::ptrdiff_t>(cursor * b), b, batch.begin());
        std::sort(batch.begin(), batch.end());
        ++cursor;

        const auto g = minibatch_gradient(obj, x, data, batch);
        alignment.observe(g.vector);
        if (trace) {
            trace->iterates.push_back(x);
            trace->gradients.push_back(g.vector);
            trace->batches.push_back(batch);
        }
        vec::axpy(-s.eta, g.vector, x);
        if (!vec::all_finite(x)) {
            throw DivergenceError(s.round, data.client_id);
        }
    }

    ClientReport report;
    report.client_id = data.client_id;
    report.delta.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        report.delta[i] = x[i] - x_t[i];
    }
    report.nu = nu;
    report.phi = alignment.phi();
    report.steps = s.steps;
    report.batch = b;
    report.grad_evals = s.steps * b;
    return report;
}

ParamVector aggregate(std::span<const ClientReport> reports) {
    if (reports.empty()) {
        throw std::invalid_argument("aggregate needs at least one report");
    }
    std::vector<const ClientReport*> ordered;
    ordered.reserve(reports.size());
    for (const auto& r : reports) {
        if (r.delta.size() != reports.front().delta.size()) {
            throw std::invalid_argument("client deltas differ in length");
        }
        ordered.push_back(&r);
    }
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const ClientReport* a, const ClientReport* b) { return a->client_id < b->client_id; });
    double nu = 0.0;
    for (const auto* r : ordered) {
        nu += static_cast<double>(r->nu);
    }
    ParamVector out(reports.front().delta.size(), 0.0);
    for (const auto* r : ordered) {
        vec::axpy(static_cast<double>(r->nu) / nu, r->delta, out);
    }
    return out;
}

ParamVector apply_update(std::span<const double> x_t, std::span<const double> delta_bar) {
    vec::require_same_length(x_t, delta_bar);
    ParamVector x(x_t.begin(), x_t.end());
    vec::axpy(1.0, delta_bar, x);
    return x;
}

RoundTraffic account_round(std::span<const ClientReport> reports, std::size_t dim, Protocol protocol) {
    RoundTraffic t;
    const auto n = static_cast<std::uint64_t>(reports.size());
    const auto d = static_cast<std::uint64_t>(dim);
    if (protocol == Protocol::fathom) {
        t.floats_down = n * (d + 3);
        t.floats_up = n * (d + 2);
    } else {
        t.floats_down = n * d;
        t.floats_up = n * (d + 1);
    }
    for (const auto& r : reports) {
        t.grad_evals += static_cast<std::uint64_t>(r.steps) * static_cast<std::uint64_t>(r.batch);
    }
    return t;
}

RoundResult execute_round(const Objective& obj, std::span<const ClientDataset> clients,
                          std::span<const double> x_t, const RoundPlan& plan, Protocol protocol,
                          unsigned threads, std::vector<LocalTrace>* traces) {
    if (plan.sampled.empty()) {
        throw std::invalid_argument("round has no sampled clients");
    }
    auto sampled = plan.sampled;
    std::sort(sampled.begin(), sampled.end());

    RoundResult result;
    result.reports.resize(sampled.size());
    if (traces) {
        traces->assign(sampled.size(), LocalTrace{});
    }

    auto work = [&](std::size_t slot) {
        const auto id = sampled[slot];
        if (id >= clients.size()) {
            throw std::out_of_range("sampled client index out of range");
        }
        const auto& data = clients[id];
        LocalSettings s;
        s.eta = plan.eta;
        s.steps = local_steps_for(data.size(), plan.epochs, plan.batch);
        s.batch = plan.batch;
        s.seed = client_seed(plan.seed, data.client_id);
        s.round = plan.round;
        result.reports[slot] = run_local(obj, x_t, data, s, traces ? &(*traces)[slot] : nullptr);
    };

    const unsigned workers = std::min<unsigned>(std::max(1u, threads), static_cast<unsigned>(sampled.size()));
    if (workers <= 1) {
        for (std::size_t slot = 0; slot < sampled.size(); ++slot) {
            work(slot);
        }
    } else {
        // Failures are rethrown in slot order so the reported client matches
        // a sequential run.
        std::vector<std::exception_ptr> errors(sampled.size());
        {
            std::vector<std::jthread> pool;
            for (unsigned w = 0; w < workers; ++w) {
                pool.emplace_back([&, w] {
                    for (std::size_t slot = w; slot < sampled.size(); slot += workers) {
                        try {
                            work(slot);
                        } catch (...) {
                            errors[slot] = std::current_exception();
                        }
                    }
                });
            }
        }
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    }

    result.delta_bar = aggregate(result.reports);
    result.traffic = account_round(result.reports, x_t.size(), protocol);
    return result;
}

std::vector<AlignmentSample> alignment_samples(std::span<const ClientReport> reports) {
    std::vector<AlignmentSample> out;
    out.reserve(reports.size());
    for (const auto& r : reports) {
        out.push_back({r.phi, r.nu});
    }
    return out;
}

} // namespace fathom
