#pragma once

// Flat `key = value` run configuration.
//
//   # comment
//   algorithm = "fathom"
//   rounds = 300
//   eta0 = 0.1
//
// Values are numbers, booleans, or strings (quoted or bare). Unknown and
// duplicate keys are rejected; errors carry the offending line number.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "fathom/datagen.hpp"
#include "fathom/federation.hpp"
#include "fathom/objectives.hpp"

namespace fathom {

class ConfigError : public std::runtime_error {
public:
    ConfigError(std::size_t line, const std::string& message)
        : std::runtime_error(line ? "line " + std::to_string(line) + ": " + message : message), line_(line) {}

    /// 0 when the error is not tied to a line (e.g. a missing key).
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

struct RunConfig {
    Protocol algorithm = Protocol::fathom;
    std::size_t rounds = 100;
    std::size_t clients_per_round = 10;

    ObjectiveKind objective = ObjectiveKind::logistic;
    std::size_t dim = 10;      // quadratic only
    double curvature = 1.0;    // quadratic only; uniform diagonal
    std::size_t features = 9;  // classifiers
    std::size_t classes = 2;
    std::size_t hidden = 8;    // mlp only

    FederationSpec federation;           // federation.seed is ignored; see data_seed
    std::optional<std::uint64_t> data_seed; // defaults to a child of `seed`

    double eta0 = 0.1;
    double epochs0 = 1.0;
    double batch0 = 20.0;
    double gamma_eta = 0.01;
    double gamma_epochs = 0.01;
    double gamma_batch = 0.1;
    double alpha = 0.5;
    bool guard_rails = false;

    std::optional<double> target_loss;     // eval_loss <= target
    std::optional<double> target_accuracy; // eval_acc >= target
    std::size_t eval_every = 1;
    bool bounds = false; // write bounds.json with estimated constants

    std::uint64_t seed = 0;
    unsigned threads = 1;
    std::string output_dir = "out";

    Objective make_objective() const;
    FederationSpec federation_spec() const; // with the resolved data seed
    void validate() const;

    friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const RunConfig& cfg);

} // namespace fathom
