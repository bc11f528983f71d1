#pragma once

// FedAvg round machinery: client sampling, local SGD, size-weighted
// aggregation of client deltas, the global update and traffic accounting.
//
// Sign convention: a client delta is (final local iterate - starting model),
// and the server applies x_{t+1} = x_t + delta_bar.

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "fathom/controller.hpp"
#include "fathom/objectives.hpp"

namespace fathom {

class DivergenceError : public std::runtime_error {
public:
    DivergenceError(std::size_t round, std::size_t client)
        : std::runtime_error("divergence: non-finite iterate in round " + std::to_string(round) +
                             " on client " + std::to_string(client)),
          round_(round), client_(client) {}

    std::size_t round() const noexcept { return round_; }
    std::size_t client() const noexcept { return client_; }

private:
    std::size_t round_;
    std::size_t client_;
};

enum class Protocol { fedavg, fathom };

std::string to_string(Protocol protocol);
Protocol protocol_from_string(const std::string& name);

/// Seed of round t under a master seed.
std::uint64_t round_seed(std::uint64_t master, std::size_t t);
/// Stream owned by one client inside one round.
std::uint64_t client_seed(std::uint64_t round_seed, std::size_t client_id);

/// n distinct client indices drawn uniformly without replacement, sorted ascending.
std::vector<std::size_t> sample_clients(std::size_t m, std::size_t n, std::uint64_t round_seed);

/// max(1, floor(nu * epochs / batch))
std::size_t local_steps_for(std::size_t nu, double epochs, double batch);

/// round(batch) clamped to [1, nu].
std::size_t effective_batch(double batch, std::size_t nu);

struct LocalSettings {
    double eta = 0.1;
    std::size_t steps = 1;
    double batch = 1.0;
    std::uint64_t seed = 0;
    std::size_t round = 0; // only used to label divergence errors
};

/// Per-step record of a local run, used by derivative oracles.
struct LocalTrace {
    std::vector<ParamVector> iterates;  // x^{k}, k = 0..K-1 (the points gradients were taken at)
    std::vector<ParamVector> gradients; // g(x^{k})
    std::vector<std::vector<std::size_t>> batches;
};

struct ClientReport {
    std::size_t client_id = 0;
    ParamVector delta;
    std::size_t nu = 0;
    double phi = 0.0;
    std::size_t steps = 0;
    std::size_t batch = 0;
    std::size_t grad_evals = 0;
};

/// Runs `steps` SGD steps from x_t on one client. Each local epoch visits a
/// fresh shuffle of the client's examples in consecutive batches of
/// effective_batch(batch, nu); the trailing partial batch is dropped. Batch
/// indices are summed in ascending order. Throws DivergenceError if an iterate
/// leaves the finite range.
ClientReport run_local(const Objective& obj, std::span<const double> x_t, const ClientDataset& data,
                       const LocalSettings& settings, LocalTrace* trace = nullptr);

/// sum_i (nu_i / nu) delta_i in ascending client-id order.
ParamVector aggregate(std::span<const ClientReport> reports);

ParamVector apply_update(std::span<const double> x_t, std::span<const double> delta_bar);

struct RoundTraffic {
    std::uint64_t floats_down = 0;
    std::uint64_t floats_up = 0;
    std::uint64_t grad_evals = 0;
};

/// FedAvg ships the model down and (delta, nu) up. FATHOM adds eta, E, B to
/// the broadcast and phi to each upload.
RoundTraffic account_round(std::span<const ClientReport> reports, std::size_t dim, Protocol protocol);

struct RoundPlan {
    std::size_t round = 1;
    std::vector<std::size_t> sampled;
    double eta = 0.1;
    double epochs = 1.0;
    double batch = 20.0;
    std::uint64_t seed = 0; // round seed
};

struct RoundResult {
    std::vector<ClientReport> reports; // ascending client id
    ParamVector delta_bar;
    RoundTraffic traffic;
};

/// Executes every sampled client and aggregates. `threads` > 1 runs clients
/// concurrently; results do not depend on scheduling.
RoundResult execute_round(const Objective& obj, std::span<const ClientDataset> clients,
                          std::span<const double> x_t, const RoundPlan& plan, Protocol protocol,
                          unsigned threads = 1, std::vector<LocalTrace>* traces = nullptr);

std::vector<AlignmentSample> alignment_samples(std::span<const ClientReport> reports);

} // namespace fathom
