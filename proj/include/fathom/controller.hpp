#pragma once

// Server-side hyperparameter adaptation: smoothing of the global step, the
// normalized learning-rate/step-count hypergradient, the client alignment
// scalar and its aggregate, and the exponentiated-gradient updates of the
// client learning rate, epochs and batch size.

#include <cstddef>
#include <optional>
#include <span>

#include "fathom/vec.hpp"

namespace fathom {

/// Optional clamps applied after every update. Off unless configured.
struct GuardRails {
    double eta_min = 1e-5;
    double eta_max = 10.0;
    double epochs_min = 1.0 / 64.0;
    double epochs_max = 64.0;
    double batch_min = 1.0;
    double batch_max = 1e6;
};

struct HyperState {
    double eta = 0.1;
    double epochs = 1.0;
    double batch = 20.0;
    ParamVector delta_sm; // smoothed global step; starts at zero
    double alpha = 0.5;
    double gamma_eta = 0.01;
    double gamma_epochs = 0.01;
    double gamma_batch = 0.1;
    std::size_t t = 0; // rounds absorbed so far
    std::optional<GuardRails> guard;

    void validate() const;
};

/// h_bar drives both the learning rate and the epoch update; g_bar is the
/// local-computation regularizer.
struct HyperSignals {
    double h_bar = 0.0;
    double g_bar = 0.0;
};

/// alpha * prev + (1 - alpha) * delta_bar, no bias compensation.
ParamVector smooth(std::span<const double> delta_sm_prev, std::span<const double> delta_bar, double alpha);

/// Negative cosine between this round's global step and the smoothed previous
/// one; 0 if either is numerically zero.
double normalized_hypergradient(std::span<const double> delta_bar, std::span<const double> delta_sm_prev);

/// Fed one local gradient per step. Keeps the minimum over steps k >= 1 of
/// cos(g_0 + ... + g_{k-1}, g_k). A run with a single step yields 0.
class AlignmentTracker {
public:
    explicit AlignmentTracker(std::size_t dim) : cumulative_(dim, 0.0) {}

    void observe(std::span<const double> gradient);
    double phi() const noexcept { return candidates_ == 0 ? 0.0 : phi_; }
    std::size_t steps() const noexcept { return steps_; }

private:
    ParamVector cumulative_;
    double phi_ = 0.0;
    std::size_t steps_ = 0;
    std::size_t candidates_ = 0;
};

struct AlignmentSample {
    double phi = 0.0;
    std::size_t nu = 0;
};

/// -eta * sum_i (nu_i / nu) phi_i
double aggregate_g(std::span<const AlignmentSample> samples, double eta);

double update_learning_rate(const HyperState& state, double h_bar);
double update_epochs(const HyperState& state, const HyperSignals& signals);
double update_batch(const HyperState& state, double g_bar);

/// One server step after a round: computes the signals from the round's
/// global step and the client alignment scalars, applies all three updates
/// (using the pre-update eta inside g_bar) and advances the smoothed step.
HyperSignals advance(HyperState& state, std::span<const double> delta_bar,
                     std::span<const AlignmentSample> samples);

} // namespace fathom
