#pragma once

// Convergence-bound evaluators for adaptive FedAvg and the finite-difference
// oracles that check the analytical hyperparameter derivatives on replayed
// rounds.

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "fathom/federation.hpp"
#include "fathom/objectives.hpp"

namespace fathom {

struct TheoryParams {
    double L = 1.0;     // gradient Lipschitz constant
    double sigma = 1.0; // local gradient noise bound
    double G = 1.0;     // gradient second-moment bound
    double D = 1.0;     // initial optimality gap f(x_0) - f(x*)
    double m = 1.0;     // clients
    double T = 1.0;     // rounds

    void validate() const;
};

/// Per-round client learning rates and local step counts.
struct Trajectory {
    std::vector<double> etas;
    std::vector<double> ks;

    std::size_t rounds() const noexcept { return etas.size(); }
    double mean_eta() const;
    double mean_k() const;
    void validate() const;
};

struct BetaCoefficients {
    double beta0 = 1.0;
    double beta1 = 1.0;
    double beta2 = 1.0;
    double beta3 = 1.0;
};

/// Ratios of trajectory sums against the constant-hyperparameter case; all
/// four equal 1 when eta and K are constant.
BetaCoefficients beta_coefficients(const Trajectory& traj);

/// One progress term plus three deviation terms.
struct BoundTerms {
    double progress = 0.0;
    double noise = 0.0;       // eta L (sigma^2 + G^2) / m
    double local_noise = 0.0; // 5 eta^2 K L^2 sigma^2
    double drift = 0.0;       // 5 eta^2 K^2 L^2 G^2
    double total() const noexcept { return progress + noise + local_noise + drift; }
};

/// Bound on min_t E||grad f(x_t)||^2 for adaptive (eta_t, K_t), evaluated at
/// the trajectory means and its beta coefficients over p.T rounds.
BoundTerms fathom_bound_terms(const TheoryParams& p, const Trajectory& traj);
double fathom_bound(const TheoryParams& p, const Trajectory& traj);

/// Constant-hyperparameter bound. Throws std::domain_error when eta > 1/L.
BoundTerms fedavg_bound_terms(const TheoryParams& p, double eta, double k);
double fedavg_bound(const TheoryParams& p, double eta, double k);

struct EtaBarCheck {
    std::array<double, 3> caps{}; // progress/noise, progress/local-noise, progress/drift balances
    std::size_t binding = 0;      // index of the smallest cap
    double cap = 0.0;
    double eta_bar = 0.0;
    bool mean_within_cap = false;
    std::optional<std::size_t> first_violation; // 1-based round with eta_t > 1/L
    bool satisfied = false;
};

EtaBarCheck eta_bar_condition(const TheoryParams& p, const Trajectory& traj);

/// Bound evaluations for every prefix of the trajectory, keyed by round.
nlohmann::json bound_report(const TheoryParams& p, const Trajectory& traj);

// ---------------------------------------------------------------------------
// Constant estimation

/// Largest Hessian eigenvalue over clients by power iteration on
/// gradient differences (exact for the quadratic family).
double estimate_lipschitz(const Objective& obj, std::span<const ClientDataset> clients,
                          std::span<const double> x, std::size_t iterations, std::uint64_t seed);

struct NoiseEstimate {
    double sigma = 0.0; // sqrt of the largest mean squared minibatch deviation
    double G = 0.0;     // largest full local gradient norm
};

NoiseEstimate estimate_noise(const Objective& obj, std::span<const ClientDataset> clients,
                             std::span<const ParamVector> probes, std::size_t batch,
                             std::size_t draws, std::uint64_t seed);

/// Full-batch gradient descent on the size-weighted global loss; returns the
/// best loss seen as an estimate of f*.
double estimate_optimum(const Objective& obj, std::span<const ClientDataset> clients,
                        ParamVector x0, double step, std::size_t iterations);

// ---------------------------------------------------------------------------
// Frozen replays

/// A recorded round: starting model, plan (sampled clients, hyperparameters,
/// round seed). Re-running it reuses every client's batch stream, so the only
/// thing that changes under a perturbation is the perturbed hyperparameter.
/// The objective f is the size-weighted loss over `population`.
struct FrozenReplay {
    const Objective* objective = nullptr;
    std::span<const ClientDataset> population;
    ParamVector x_prev;
    RoundPlan plan;
};

struct ReplayOutcome {
    ParamVector x_next;
    ParamVector delta_bar;
    std::vector<ClientReport> reports;
    std::vector<LocalTrace> traces;
};

/// Re-executes the round with learning rate `eta`; `steps` overrides every
/// client's local step count when set.
ReplayOutcome replay_round(const FrozenReplay& replay, double eta,
                           std::optional<std::size_t> steps = std::nullopt);

double replay_objective(const FrozenReplay& replay, std::span<const double> x);
ParamVector replay_gradient(const FrozenReplay& replay, std::span<const double> x);

struct DerivativeCheck {
    double analytic = 0.0;
    double finite_difference = 0.0;
    double rel_err = 0.0;
};

double relative_error(double analytic, double reference);

/// grad f(x_t) . (delta_bar / eta) against the central difference of
/// f(x_t(eta)) in eta.
DerivativeCheck finite_diff_eta_oracle(const FrozenReplay& replay, double eps);

/// f at x_prev - eta sum_i (nu_i/nu) (g_i^0 + ... + g_i^{K0-2} + l g_i^{K0-1}),
/// with gradients from a K0-step replay. l = 0 is the (K0-1)-step model and
/// l -> 1 the K0-step model.
double fractional_step_loss(const FrozenReplay& replay, std::size_t k0, double l);

/// grad f(x(l)) . (-eta sum_i (nu_i/nu) g_i^{K0-1}), the analytical slope of
/// fractional_step_loss in l.
double fractional_step_slope(const FrozenReplay& replay, std::size_t k0, double l);

struct ProxyBias {
    double n_proxy = 0.0;      // grad f(x_t) . delta_bar
    double true_subgrad = 0.0; // grad f(x_t) . (-eta sum_i (nu_i/nu) g_i^{K_i-1})
    double bias = 0.0;         // |n_proxy| - |true_subgrad|
    double signed_difference = 0.0; // n_proxy - true_subgrad
};

ProxyBias n_proxy_bias_check(const FrozenReplay& replay);

} // namespace fathom
