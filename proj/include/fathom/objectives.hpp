#pragma once

// Differentiable per-client objectives with hand-coded gradients.
//
// Three families are supported:
//   quadratic  f_j(x) = 1/2 sum_k a_k (x_k - c_jk)^2   (one target row c_j per example)
//   logistic   multinomial softmax regression, d = C * (p + 1)
//   mlp        one tanh hidden layer + softmax output, d = H*p + H + C*H + C
//
// A client loss is the mean of its per-example losses; every reduction over
// examples is index-ascending.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fathom/vec.hpp"

namespace fathom {

enum class ObjectiveKind { quadratic, logistic, mlp };

std::string to_string(ObjectiveKind kind);
ObjectiveKind objective_kind_from_string(const std::string& name);

/// One client's local samples. `rows` holds size() rows of `width` values:
/// features for classification, target points for the quadratic family.
struct ClientDataset {
    std::size_t client_id = 0;
    std::size_t width = 0;
    std::vector<double> rows;
    std::vector<int> labels; // empty for the quadratic family

    std::size_t size() const noexcept { return width == 0 ? 0 : rows.size() / width; }
    bool empty() const noexcept { return size() == 0; }
    std::span<const double> row(std::size_t j) const {
        return std::span<const double>(rows).subspan(j * width, width);
    }

    friend bool operator==(const ClientDataset&, const ClientDataset&) = default;
};

struct GradientSample {
    ParamVector vector;
    std::size_t batch_size = 0;
    std::size_t eval_count = 0; // per-example gradient evaluations
};

class Objective {
public:
    static Objective quadratic(std::size_t dim, std::vector<double> curvature = {});
    static Objective logistic(std::size_t features, std::size_t classes);
    static Objective mlp(std::size_t features, std::size_t hidden, std::size_t classes);

    ObjectiveKind kind() const noexcept { return kind_; }
    std::size_t dimension() const noexcept { return dim_; }
    std::size_t features() const noexcept { return features_; }
    std::size_t classes() const noexcept { return classes_; }
    std::size_t hidden() const noexcept { return hidden_; }
    bool is_classifier() const noexcept { return kind_ != ObjectiveKind::quadratic; }
    std::span<const double> curvature() const noexcept { return curvature_; }

    /// Width of a data row this objective consumes.
    std::size_t row_width() const noexcept { return is_classifier() ? features_ : dim_; }

    double example_loss(std::span<const double> x, const ClientDataset& data, std::size_t j) const;

    /// grad_out += gradient of example j's loss; returns that example's loss.
    double accumulate_example_gradient(std::span<const double> x, const ClientDataset& data,
                                       std::size_t j, std::span<double> grad_out) const;

    /// Arg-max class for a feature row (classifiers only).
    int predict(std::span<const double> x, std::span<const double> features) const;

    /// Starting point: zeros, except small seeded weights for the mlp
    /// (a zero start leaves all hidden units identical).
    ParamVector initial_point(std::uint64_t seed) const;

    void check_compatible(const ClientDataset& data) const;

private:
    Objective() = default;

    void logits(std::span<const double> x, std::span<const double> features,
                std::span<double> out, std::span<double> hidden_out) const;

    ObjectiveKind kind_ = ObjectiveKind::quadratic;
    std::size_t dim_ = 0;
    std::size_t features_ = 0;
    std::size_t classes_ = 0;
    std::size_t hidden_ = 0;
    std::vector<double> curvature_;
};

GradientSample full_gradient(const Objective& obj, std::span<const double> x, const ClientDataset& data);

GradientSample minibatch_gradient(const Objective& obj, std::span<const double> x,
                                  const ClientDataset& data, std::span<const std::size_t> batch);

double loss(const Objective& obj, std::span<const double> x, const ClientDataset& data);

enum class Weighting { uniform, size_weighted };

/// Uniform weighting averages client losses with 1/m; size weighting uses
/// nu_i / nu, matching the aggregation weights of the server update.
double global_loss(const Objective& obj, std::span<const double> x,
                   std::span<const ClientDataset> clients, Weighting weighting);

/// Gradient of global_loss with the same weighting.
ParamVector global_gradient(const Objective& obj, std::span<const double> x,
                            std::span<const ClientDataset> clients, Weighting weighting);

/// Fraction of correctly classified examples.
double accuracy(const Objective& obj, std::span<const double> x, const ClientDataset& data);

} // namespace fathom
