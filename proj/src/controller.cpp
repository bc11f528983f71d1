#include "fathom/controller.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fathom {

void HyperState::validate() const {
    if (!(eta > 0.0) || !(epochs > 0.0) || !(batch > 0.0)) {
        throw std::invalid_argument("eta, epochs and batch must be strictly positive");
    }
    if (!(alpha >= 0.0 && alpha < 1.0)) {
        throw std::invalid_argument("alpha must lie in [0, 1)");
    }
    if (gamma_eta < 0.0 || gamma_epochs < 0.0 || gamma_batch < 0.0) {
        throw std::invalid_argument("meta step sizes must be non-negative");
    }
}

ParamVector smooth(std::span<const double> prev, std::span<const double> delta_bar, double alpha) {
    vec::require_same_length(prev, delta_bar);
    ParamVector out(prev.size());
    for (std::size_t i = 0; i < prev.size(); ++i) {
        out[i] = alpha * prev[i] + (1.0 - alpha) * delta_bar[i];
    }
    return out;
}

double normalized_hypergradient(std::span<const double> delta_bar, std::span<const double> delta_sm_prev) {
    return -vec::cosine(delta_bar, delta_sm_prev);
}

void AlignmentTracker::observe(std::span<const double> gradient) {
    if (steps_ > 0) {
        const double c = vec::cosine(cumulative_, gradient);
        phi_ = candidates_ == 0 ? c : std::min(phi_, c);
        ++candidates_;
    }
    vec::axpy(1.0, gradient, cumulative_);
    ++steps_;
}

double aggregate_g(std::span<const AlignmentSample> samples, double eta) {
    if (samples.empty()) {
        throw std::invalid_argument("aggregate_g needs at least one client");
    }
    double nu = 0.0;
    for (const auto& s : samples) {
        nu += static_cast<double>(s.nu);
    }
    double acc = 0.0;
    for (const auto& s : samples) {
        acc += (static_cast<double>(s.nu) / nu) * s.phi;
    }
    return -eta * acc;
}

double update_learning_rate(const HyperState& state, double h_bar) {
    double eta = state.eta * std::exp(-state.gamma_eta * h_bar);
    if (state.guard) {
        eta = std::clamp(eta, state.guard->eta_min, state.guard->eta_max);
    }
    return eta;
}

double update_epochs(const HyperState& state, const HyperSignals& signals) {
    double epochs = state.epochs * std::exp(-state.gamma_epochs * (signals.h_bar + signals.g_bar));
    if (state.guard) {
        epochs = std::clamp(epochs, state.guard->epochs_min, state.guard->epochs_max);
    }
    return epochs;
}

double update_batch(const HyperState& state, double g_bar) {
    double batch = state.batch * std::exp(-state.gamma_batch * (-g_bar));
    if (state.guard) {
        batch = std::clamp(batch, state.guard->batch_min, state.guard->batch_max);
    }
    return batch;
}

HyperSignals advance(HyperState& state, std::span<const double> delta_bar,
                     std::span<const AlignmentSample> samples) {
    if (state.delta_sm.empty()) {
        state.delta_sm.assign(delta_bar.size(), 0.0);
    }
    HyperSignals s;
    s.h_bar = normalized_hypergradient(delta_bar, state.delta_sm);
    s.g_bar = aggregate_g(samples, state.eta);

    const double eta = update_learning_rate(state, s.h_bar);
    const double epochs = update_epochs(state, s);
    const double batch = update_batch(state, s.g_bar);
    state.eta = eta;
    state.epochs = epochs;
    state.batch = batch;
    state.delta_sm = smooth(state.delta_sm, delta_bar, state.alpha);
    ++state.t;
    return s;
}

} // namespace fathom
