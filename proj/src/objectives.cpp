#include "fathom/objectives.hpp"

#include "fathom/rng.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace fathom {

namespace {

// Per-thread scratch so the per-example kernels do not allocate.
struct Scratch {
    std::vector<double> logits;
    std::vector<double> hidden;
    std::vector<double> dhidden;
};

Scratch& scratch() {
    thread_local Scratch s;
    return s;
}

double log_sum_exp(std::span<const double> z) {
    const double zmax = *std::max_element(z.begin(), z.end());
    double acc = 0.0;
    for (double v : z) {
        acc += std::exp(v - zmax);
    }
    return zmax + std::log(acc);
}

void check_label(int label, std::size_t classes) {
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
        throw std::out_of_range("label outside class range");
    }
}

} // namespace

std::string to_string(ObjectiveKind kind) {
    switch (kind) {
    case ObjectiveKind::quadratic: return "quadratic";
    case ObjectiveKind::logistic: return "logistic";
    case ObjectiveKind::mlp: return "mlp";
    }
    return "unknown";
}

ObjectiveKind objective_kind_from_string(const std::string& name) {
    if (name == "quadratic") return ObjectiveKind::quadratic;
    if (name == "logistic") return ObjectiveKind::logistic;
    if (name == "mlp") return ObjectiveKind::mlp;
    throw std::invalid_argument("unknown objective kind '" + name + "'");
}

Objective Objective::quadratic(std::size_t dim, std::vector<double> curvature) {
    if (dim == 0) {
        throw std::invalid_argument("quadratic objective needs dim >= 1");
    }
    if (curvature.empty()) {
        curvature.assign(dim, 1.0);
    }
    if (curvature.size() != dim) {
        throw std::invalid_argument("curvature length must equal dim");
    }
    for (double a : curvature) {
        if (!(a > 0.0) || !std::isfinite(a)) {
            throw std::invalid_argument("curvature entries must be positive and finite");
        }
    }
    Objective obj;
    obj.kind_ = ObjectiveKind::quadratic;
    obj.dim_ = dim;
    obj.curvature_ = std::move(curvature);
    return obj;
}

Objective Objective::logistic(std::size_t features, std::size_t classes) {
    if (features == 0 || classes < 2) {
        throw std::invalid_argument("logistic objective needs features >= 1 and classes >= 2");
    }
    Objective obj;
    obj.kind_ = ObjectiveKind::logistic;
    obj.features_ = features;
    obj.classes_ = classes;
    obj.dim_ = classes * (features + 1);
    return obj;
}

Objective Objective::mlp(std::size_t features, std::size_t hidden, std::size_t classes) {
    if (features == 0 || hidden == 0 || classes < 2) {
        throw std::invalid_argument("mlp objective needs features, hidden >= 1 and classes >= 2");
    }
    Objective obj;
    obj.kind_ = ObjectiveKind::mlp;
    obj.features_ = features;
    obj.hidden_ = hidden;
    obj.classes_ = classes;
    obj.dim_ = hidden * features + hidden + classes * hidden + classes;
    return obj;
}

void Objective::check_compatible(const ClientDataset& data) const {
    if (data.width != row_width()) {
        throw std::invalid_argument("dataset row width does not match objective");
    }
    if (is_classifier() && data.labels.size() != data.size()) {
        throw std::invalid_argument("classification dataset needs one label per row");
    }
}

void Objective::logits(std::span<const double> x, std::span<const double> feat,
                       std::span<double> out, std::span<double> hidden_out) const {
    const std::size_t p = features_;
    if (kind_ == ObjectiveKind::logistic) {
        for (std::size_t c = 0; c < classes_; ++c) {
            const double* w = x.data() + c * (p + 1);
            double z = w[p];
            for (std::size_t k = 0; k < p; ++k) {
                z += w[k] * feat[k];
            }
            out[c] = z;
        }
        return;
    }
    const std::size_t h = hidden_;
    const double* w1 = x.data();
    const double* b1 = w1 + h * p;
    const double* w2 = b1 + h;
    const double* b2 = w2 + classes_ * h;
    for (std::size_t u = 0; u < h; ++u) {
        double a = b1[u];
        for (std::size_t k = 0; k < p; ++k) {
            a += w1[u * p + k] * feat[k];
        }
        hidden_out[u] = std::tanh(a);
    }
    for (std::size_t c = 0; c < classes_; ++c) {
        double z = b2[c];
        for (std::size_t u = 0; u < h; ++u) {
            z += w2[c * h + u] * hidden_out[u];
        }
        out[c] = z;
    }
}

double Objective::example_loss(std::span<const double> x, const ClientDataset& data, std::size_t j) const {
    if (kind_ == ObjectiveKind::quadratic) {
        const auto c = data.row(j);
        double acc = 0.0;
        for (std::size_t k = 0; k < dim_; ++k) {
            const double r = x[k] - c[k];
            acc += curvature_[k] * r * r;
        }
        return 0.5 * acc;
    }
    auto& s = scratch();
    s.logits.resize(classes_);
    s.hidden.resize(hidden_);
    logits(x, data.row(j), s.logits, s.hidden);
    const int y = data.labels[j];
    check_label(y, classes_);
    return log_sum_exp(s.logits) - s.logits[static_cast<std::size_t>(y)];
}

double Objective::accumulate_example_gradient(std::span<const double> x, const ClientDataset& data,
                                              std::size_t j, std::span<double> grad) const {
    if (kind_ == ObjectiveKind::quadratic) {
        const auto c = data.row(j);
        double acc = 0.0;
        for (std::size_t k = 0; k < dim_; ++k) {
            const double r = x[k] - c[k];
            acc += curvature_[k] * r * r;
            grad[k] += curvature_[k] * r;
        }
        return 0.5 * acc;
    }

    auto& s = scratch();
    s.logits.resize(classes_);
    s.hidden.resize(hidden_);
    const auto feat = data.row(j);
    logits(x, feat, s.logits, s.hidden);
    const int y = data.labels[j];
    check_label(y, classes_);
    const double lse = log_sum_exp(s.logits);
    const double ell = lse - s.logits[static_cast<std::size_t>(y)];
    // logits now become dL/dz = softmax - onehot
    for (std::size_t c = 0; c < classes_; ++c) {
        s.logits[c] = std::exp(s.logits[c] - lse) - (static_cast<int>(c) == y ? 1.0 : 0.0);
    }
    const auto& dz = s.logits;
    const std::size_t p = features_;

    if (kind_ == ObjectiveKind::logistic) {
        for (std::size_t c = 0; c < classes_; ++c) {
            double* g = grad.data() + c * (p + 1);
            for (std::size_t k = 0; k < p; ++k) {
                g[k] += dz[c] * feat[k];
            }
            g[p] += dz[c];
        }
        return ell;
    }

    const std::size_t h = hidden_;
    const double* w2 = x.data() + h * p + h;
    double* gw1 = grad.data();
    double* gb1 = gw1 + h * p;
    double* gw2 = gb1 + h;
    double* gb2 = gw2 + classes_ * h;
    s.dhidden.assign(h, 0.0);
    for (std::size_t c = 0; c < classes_; ++c) {
        for (std::size_t u = 0; u < h; ++u) {
            gw2[c * h + u] += dz[c] * s.hidden[u];
            s.dhidden[u] += w2[c * h + u] * dz[c];
        }
        gb2[c] += dz[c];
    }
    for (std::size_t u = 0; u < h; ++u) {
        const double da = s.dhidden[u] * (1.0 - s.hidden[u] * s.hidden[u]);
        for (std::size_t k = 0; k < p; ++k) {
            gw1[u * p + k] += da * feat[k];
        }
        gb1[u] += da;
    }
    return ell;
}

int Objective::predict(std::span<const double> x, std::span<const double> feat) const {
    if (!is_classifier()) {
        throw std::logic_error("predict needs a classification objective");
    }
    auto& s = scratch();
    s.logits.resize(classes_);
    s.hidden.resize(hidden_);
    logits(x, feat, s.logits, s.hidden);
    return static_cast<int>(std::max_element(s.logits.begin(), s.logits.end()) - s.logits.begin());
}

ParamVector Objective::initial_point(std::uint64_t seed) const {
    ParamVector x(dim_, 0.0);
    if (kind_ == ObjectiveKind::mlp) {
        Rng rng(seed);
        std::normal_distribution<double> normal(0.0, 1.0);
        const double s1 = 1.0 / std::sqrt(static_cast<double>(features_));
        const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden_));
        const std::size_t w1 = hidden_ * features_;
        const std::size_t w2_begin = w1 + hidden_;
        for (std::size_t i = 0; i < w1; ++i) {
            x[i] = s1 * normal(rng);
        }
        for (std::size_t i = 0; i < classes_ * hidden_; ++i) {
            x[w2_begin + i] = s2 * normal(rng);
        }
    }
    return x;
}

GradientSample minibatch_gradient(const Objective& obj, std::span<const double> x,
                                  const ClientDataset& data, std::span<const std::size_t> batch) {
    if (x.size() != obj.dimension()) {
        throw std::invalid_argument("parameter length does not match objective dimension");
    }
    if (batch.empty()) {
        throw std::invalid_argument("empty batch");
    }
    obj.check_compatible(data);
    GradientSample out;
    out.vector.assign(obj.dimension(), 0.0);
    for (std::size_t j : batch) {
        if (j >= data.size()) {
            throw std::out_of_range("batch index out of range");
        }
        obj.accumulate_example_gradient(x, data, j, out.vector);
    }
    vec::scale(1.0 / static_cast<double>(batch.size()), out.vector);
    out.batch_size = batch.size();
    out.eval_count = batch.size();
    return out;
}

GradientSample full_gradient(const Objective& obj, std::span<const double> x, const ClientDataset& data) {
    if (data.empty()) {
        throw std::invalid_argument("empty client");
    }
    std::vector<std::size_t> all(data.size());
    for (std::size_t j = 0; j < all.size(); ++j) {
        all[j] = j;
    }
    return minibatch_gradient(obj, x, data, all);
}

double loss(const Objective& obj, std::span<const double> x, const ClientDataset& data) {
    if (data.empty()) {
        throw std::invalid_argument("empty client");
    }
    obj.check_compatible(data);
    double acc = 0.0;
    for (std::size_t j = 0; j < data.size(); ++j) {
        acc += obj.example_loss(x, data, j);
    }
    return acc / static_cast<double>(data.size());
}

namespace {

std::vector<double> client_weights(std::span<const ClientDataset> clients, Weighting weighting) {
    if (clients.empty()) {
        throw std::invalid_argument("global loss needs at least one client");
    }
    std::vector<double> w(clients.size());
    if (weighting == Weighting::uniform) {
        std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(clients.size()));
        return w;
    }
    double total = 0.0;
    for (const auto& c : clients) {
        total += static_cast<double>(c.size());
    }
    for (std::size_t i = 0; i < clients.size(); ++i) {
        w[i] = static_cast<double>(clients[i].size()) / total;
    }
    return w;
}

} // namespace

double global_loss(const Objective& obj, std::span<const double> x,
                   std::span<const ClientDataset> clients, Weighting weighting) {
    const auto w = client_weights(clients, weighting);
    double acc = 0.0;
    for (std::size_t i = 0; i < clients.size(); ++i) {
        acc += w[i] * loss(obj, x, clients[i]);
    }
    return acc;
}

ParamVector global_gradient(const Objective& obj, std::span<const double> x,
                            std::span<const ClientDataset> clients, Weighting weighting) {
    const auto w = client_weights(clients, weighting);
    ParamVector g(obj.dimension(), 0.0);
    for (std::size_t i = 0; i < clients.size(); ++i) {
        const auto gi = full_gradient(obj, x, clients[i]);
        vec::axpy(w[i], gi.vector, g);
    }
    return g;
}

double accuracy(const Objective& obj, std::span<const double> x, const ClientDataset& data) {
    if (data.empty()) {
        throw std::invalid_argument("empty client");
    }
    obj.check_compatible(data);
    std::size_t hits = 0;
    for (std::size_t j = 0; j < data.size(); ++j) {
        if (obj.predict(x, data.row(j)) == data.labels[j]) {
            ++hits;
        }
    }
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

} // namespace fathom
