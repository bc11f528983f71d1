#include "fathom/theory.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "fathom/rng.hpp"

namespace fathom {

void TheoryParams::validate() const {
    if (!(L > 0.0 && sigma > 0.0 && G > 0.0 && D > 0.0 && m > 0.0 && T > 0.0)) {
        throw std::invalid_argument("theory parameters must be strictly positive");
    }
}

void Trajectory::validate() const {
    if (etas.empty()) {
        throw std::invalid_argument("empty trajectory");
    }
    if (etas.size() != ks.size()) {
        throw std::invalid_argument("trajectory eta and K sequences differ in length");
    }
    for (std::size_t t = 0; t < etas.size(); ++t) {
        if (!(etas[t] > 0.0) || !(ks[t] > 0.0)) {
            throw std::invalid_argument("trajectory entries must be positive");
        }
    }
}

double Trajectory::mean_eta() const {
    validate();
    double s = 0.0;
    for (double e : etas) s += e;
    return s / static_cast<double>(etas.size());
}

double Trajectory::mean_k() const {
    validate();
    double s = 0.0;
    for (double k : ks) s += k;
    return s / static_cast<double>(ks.size());
}

BetaCoefficients beta_coefficients(const Trajectory& traj) {
    traj.validate();
    const double T = static_cast<double>(traj.rounds());
    const double eta_bar = traj.mean_eta();
    const double k_bar = traj.mean_k();
    double s_ek = 0.0, s_e2k = 0.0, s_e3k2 = 0.0, s_e3k3 = 0.0;
    for (std::size_t t = 0; t < traj.rounds(); ++t) {
        const double e = traj.etas[t];
        const double k = traj.ks[t];
        s_ek += e * k;
        s_e2k += e * e * k;
        s_e3k2 += e * e * e * k * k;
        s_e3k3 += e * e * e * k * k * k;
    }
    BetaCoefficients b;
    b.beta0 = s_ek / (T * eta_bar * k_bar);
    b.beta1 = s_ek * eta_bar / s_e2k;
    b.beta2 = s_ek * eta_bar * eta_bar * k_bar / s_e3k2;
    b.beta3 = s_ek * eta_bar * eta_bar * k_bar * k_bar / s_e3k3;
    return b;
}

BoundTerms fathom_bound_terms(const TheoryParams& p, const Trajectory& traj) {
    p.validate();
    const auto b = beta_coefficients(traj);
    const double eta = traj.mean_eta();
    const double k = traj.mean_k();
    const double L2 = p.L * p.L;
    const double s2 = p.sigma * p.sigma;
    const double g2 = p.G * p.G;
    BoundTerms terms;
    terms.progress = 2.0 * b.beta0 * p.D / (eta * k * p.T);
    terms.noise = b.beta1 * eta * p.L * (s2 + g2) / p.m;
    terms.local_noise = 5.0 * b.beta2 * eta * eta * k * L2 * s2;
    terms.drift = 5.0 * b.beta3 * eta * eta * k * k * L2 * g2;
    return terms;
}

double fathom_bound(const TheoryParams& p, const Trajectory& traj) { return fathom_bound_terms(p, traj).total(); }

BoundTerms fedavg_bound_terms(const TheoryParams& p, double eta, double k) {
    p.validate();
    if (!(eta > 0.0) || !(k > 0.0)) {
        throw std::invalid_argument("eta and K must be positive");
    }
    if (eta > 1.0 / p.L) {
        throw std::domain_error("step-size condition violated: eta > 1/L");
    }
    const double L2 = p.L * p.L;
    const double s2 = p.sigma * p.sigma;
    const double g2 = p.G * p.G;
    BoundTerms terms;
    terms.progress = 2.0 * p.D / (eta * k * p.T);
    terms.noise = eta * p.L * (s2 + g2) / p.m;
    terms.local_noise = 5.0 * eta * eta * k * L2 * s2;
    terms.drift = 5.0 * eta * eta * k * k * L2 * g2;
    return terms;
}

double fedavg_bound(const TheoryParams& p, double eta, double k) { return fedavg_bound_terms(p, eta, k).total(); }

EtaBarCheck eta_bar_condition(const TheoryParams& p, const Trajectory& traj) {
    p.validate();
    const auto b = beta_coefficients(traj);
    const double k = traj.mean_k();
    const double L2 = p.L * p.L;
    const double s2 = p.sigma * p.sigma;
    const double g2 = p.G * p.G;

    EtaBarCheck out;
    out.caps[0] = std::sqrt(2.0 * b.beta0 * p.m * p.D / (b.beta1 * k * p.L * p.T * (s2 + g2)));
    out.caps[1] = std::cbrt(b.beta0 * p.D / (2.5 * b.beta2 * k * k * L2 * s2 * p.T));
    out.caps[2] = std::cbrt(b.beta0 * p.D / (2.5 * b.beta3 * k * k * k * L2 * g2 * p.T));
    out.binding = static_cast<std::size_t>(std::min_element(out.caps.begin(), out.caps.end()) - out.caps.begin());
    out.cap = out.caps[out.binding];
    out.eta_bar = traj.mean_eta();
    out.mean_within_cap = out.eta_bar <= out.cap;
    const double limit = 1.0 / p.L;
    for (std::size_t t = 0; t < traj.rounds(); ++t) {
        if (traj.etas[t] > limit) {
            out.first_violation = t + 1;
            break;
        }
    }
    out.satisfied = out.mean_within_cap && !out.first_violation;
    return out;
}

nlohmann::json bound_report(const TheoryParams& p, const Trajectory& traj) {
    traj.validate();
    nlohmann::json rounds = nlohmann::json::object();
    Trajectory prefix;
    for (std::size_t t = 0; t < traj.rounds(); ++t) {
        prefix.etas.push_back(traj.etas[t]);
        prefix.ks.push_back(traj.ks[t]);
        TheoryParams pt = p;
        pt.T = static_cast<double>(t + 1);
        const auto b = beta_coefficients(prefix);
        const auto terms = fathom_bound_terms(pt, prefix);
        const auto cond = eta_bar_condition(pt, prefix);
        rounds[std::to_string(t + 1)] = {
            {"eta_bar", prefix.mean_eta()},
            {"k_bar", prefix.mean_k()},
            {"beta", {b.beta0, b.beta1, b.beta2, b.beta3}},
            {"progress", terms.progress},
            {"noise", terms.noise},
            {"local_noise", terms.local_noise},
            {"drift", terms.drift},
            {"bound", terms.total()},
            {"eta_caps", {cond.caps[0], cond.caps[1], cond.caps[2]}},
            {"condition_satisfied", cond.satisfied},
        };
    }
    return {
        {"params", {{"L", p.L}, {"sigma", p.sigma}, {"G", p.G}, {"D", p.D}, {"m", p.m}}},
        {"rounds", rounds},
    };
}

double estimate_lipschitz(const Objective& obj, std::span<const ClientDataset> clients,
                          std::span<const double> x, std::size_t iterations, std::uint64_t seed) {
    if (clients.empty()) {
        throw std::invalid_argument("no clients");
    }
    constexpr double h = 1e-4;
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    double best = 0.0;
    for (const auto& client : clients) {
        ParamVector v(x.size());
        for (auto& e : v) e = normal(rng);
        vec::scale(1.0 / vec::norm(v), v);
        double lambda = 0.0;
        for (std::size_t it = 0; it < iterations; ++it) {
            ParamVector plus(x.begin(), x.end());
            ParamVector minus(x.begin(), x.end());
            vec::axpy(h, v, plus);
            vec::axpy(-h, v, minus);
            auto hv = full_gradient(obj, plus, client).vector;
            vec::axpy(-1.0, full_gradient(obj, minus, client).vector, hv);
            vec::scale(1.0 / (2.0 * h), hv);
            const double n = vec::norm(hv);
            lambda = n;
            if (n < vec::kZeroNorm) break;
            v = hv;
            vec::scale(1.0 / n, v);
        }
        best = std::max(best, lambda);
    }
    return best;
}

NoiseEstimate estimate_noise(const Objective& obj, std::span<const ClientDataset> clients,
                             std::span<const ParamVector> probes, std::size_t batch,
                             std::size_t draws, std::uint64_t seed) {
    if (clients.empty() || probes.empty() || draws == 0) {
        throw std::invalid_argument("noise estimate needs clients, probes and draws");
    }
    Rng rng(seed);
    NoiseEstimate est;
    double worst_var = 0.0;
    for (const auto& client : clients) {
        const std::size_t b = std::min(batch, client.size());
        std::vector<std::size_t> order(client.size());
        for (std::size_t j = 0; j < order.size(); ++j) order[j] = j;
        for (const auto& x : probes) {
            const auto full = full_gradient(obj, x, client).vector;
            est.G = std::max(est.G, vec::norm(full));
            double acc = 0.0;
            for (std::size_t r = 0; r < draws; ++r) {
                std::shuffle(order.begin(), order.end(), rng);
                std::vector<std::size_t> idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(b));
                std::sort(idx.begin(), idx.end());
                auto g = minibatch_gradient(obj, x, client, idx).vector;
                vec::axpy(-1.0, full, g);
                acc += vec::dot(g, g);
            }
            worst_var = std::max(worst_var, acc / static_cast<double>(draws));
        }
    }
    est.sigma = std::sqrt(worst_var);
    return est;
}

double estimate_optimum(const Objective& obj, std::span<const ClientDataset> clients,
                        ParamVector x, double step, std::size_t iterations) {
    double best = global_loss(obj, x, clients, Weighting::size_weighted);
    for (std::size_t it = 0; it < iterations; ++it) {
        const auto g = global_gradient(obj, x, clients, Weighting::size_weighted);
        vec::axpy(-step, g, x);
        const double f = global_loss(obj, x, clients, Weighting::size_weighted);
        if (!std::isfinite(f)) break;
        best = std::min(best, f);
    }
    return best;
}

// ---------------------------------------------------------------------------

namespace {

std::vector<const ClientDataset*> sampled_clients(const FrozenReplay& replay) {
    if (!replay.objective) {
        throw std::invalid_argument("replay has no objective");
    }
    std::vector<const ClientDataset*> out;
    auto ids = replay.plan.sampled;
    std::sort(ids.begin(), ids.end());
    for (auto id : ids) {
        if (id >= replay.population.size()) {
            throw std::out_of_range("replay samples a client outside the population");
        }
        out.push_back(&replay.population[id]);
    }
    if (out.empty()) {
        throw std::invalid_argument("replay has no sampled clients");
    }
    return out;
}

std::vector<double> sample_weights(const std::vector<const ClientDataset*>& sampled) {
    double nu = 0.0;
    for (const auto* c : sampled) nu += static_cast<double>(c->size());
    std::vector<double> w;
    for (const auto* c : sampled) w.push_back(static_cast<double>(c->size()) / nu);
    return w;
}

/// x_prev - eta sum_i w_i (g_i^0 + ... + g_i^{K0-2} + l g_i^{K0-1})
ParamVector fractional_point(const FrozenReplay& replay, const ReplayOutcome& run, std::size_t k0, double l,
                             ParamVector* last_direction) {
    const auto sampled = sampled_clients(replay);
    const auto w = sample_weights(sampled);
    const double eta = replay.plan.eta;
    ParamVector x = replay.x_prev;
    ParamVector last(x.size(), 0.0);
    for (std::size_t i = 0; i < sampled.size(); ++i) {
        const auto& grads = run.traces[i].gradients;
        for (std::size_t k = 0; k + 1 < k0; ++k) {
            vec::axpy(-eta * w[i], grads[k], x);
        }
        vec::axpy(-eta * w[i], grads[k0 - 1], last);
    }
    vec::axpy(l, last, x);
    if (last_direction) *last_direction = std::move(last);
    return x;
}

} // namespace

ReplayOutcome replay_round(const FrozenReplay& replay, double eta, std::optional<std::size_t> steps) {
    const auto sampled = sampled_clients(replay);
    ReplayOutcome out;
    out.traces.resize(sampled.size());
    out.reports.reserve(sampled.size());
    for (std::size_t i = 0; i < sampled.size(); ++i) {
        const auto& data = *sampled[i];
        LocalSettings s;
        s.eta = eta;
        s.steps = steps ? *steps : local_steps_for(data.size(), replay.plan.epochs, replay.plan.batch);
        s.batch = replay.plan.batch;
        s.seed = client_seed(replay.plan.seed, data.client_id);
        s.round = replay.plan.round;
        out.reports.push_back(run_local(*replay.objective, replay.x_prev, data, s, &out.traces[i]));
    }
    out.delta_bar = aggregate(out.reports);
    out.x_next = apply_update(replay.x_prev, out.delta_bar);
    return out;
}

double replay_objective(const FrozenReplay& replay, std::span<const double> x) {
    return global_loss(*replay.objective, x, replay.population, Weighting::size_weighted);
}

ParamVector replay_gradient(const FrozenReplay& replay, std::span<const double> x) {
    return global_gradient(*replay.objective, x, replay.population, Weighting::size_weighted);
}

double relative_error(double analytic, double reference) {
    const double scale = std::max(std::abs(analytic), std::abs(reference));
    if (scale == 0.0) return 0.0;
    return std::abs(analytic - reference) / scale;
}

DerivativeCheck finite_diff_eta_oracle(const FrozenReplay& replay, double eps) {
    if (!(eps > 0.0)) {
        throw std::invalid_argument("finite-difference step must be > 0");
    }
    const double eta = replay.plan.eta;
    if (!(eps < eta)) {
        throw std::invalid_argument("finite-difference step must be smaller than eta");
    }
    const auto base = replay_round(replay, eta);
    const auto grad = replay_gradient(replay, base.x_next);
    ParamVector direction = base.delta_bar;
    vec::scale(1.0 / eta, direction);

    DerivativeCheck out;
    out.analytic = vec::dot(grad, direction);
    const double f_plus = replay_objective(replay, replay_round(replay, eta + eps).x_next);
    const double f_minus = replay_objective(replay, replay_round(replay, eta - eps).x_next);
    out.finite_difference = (f_plus - f_minus) / (2.0 * eps);
    out.rel_err = relative_error(out.analytic, out.finite_difference);
    return out;
}

double fractional_step_loss(const FrozenReplay& replay, std::size_t k0, double l) {
    if (k0 < 1) {
        throw std::invalid_argument("K0 must be >= 1");
    }
    const auto run = replay_round(replay, replay.plan.eta, k0);
    return replay_objective(replay, fractional_point(replay, run, k0, l, nullptr));
}

double fractional_step_slope(const FrozenReplay& replay, std::size_t k0, double l) {
    if (k0 < 1) {
        throw std::invalid_argument("K0 must be >= 1");
    }
    const auto run = replay_round(replay, replay.plan.eta, k0);
    ParamVector direction;
    const auto x = fractional_point(replay, run, k0, l, &direction);
    return vec::dot(replay_gradient(replay, x), direction);
}

ProxyBias n_proxy_bias_check(const FrozenReplay& replay) {
    const auto sampled = sampled_clients(replay);
    const auto w = sample_weights(sampled);
    const auto run = replay_round(replay, replay.plan.eta);
    const auto grad = replay_gradient(replay, run.x_next);

    ParamVector last(run.x_next.size(), 0.0);
    for (std::size_t i = 0; i < sampled.size(); ++i) {
        vec::axpy(-replay.plan.eta * w[i], run.traces[i].gradients.back(), last);
    }
    ProxyBias out;
    out.n_proxy = vec::dot(grad, run.delta_bar);
    out.true_subgrad = vec::dot(grad, last);
    out.bias = std::abs(out.n_proxy) - std::abs(out.true_subgrad);
    out.signed_difference = out.n_proxy - out.true_subgrad;
    return out;
}

} // namespace fathom
