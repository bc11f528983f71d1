#pragma once

// Deterministic synthetic federations.
//
// Classification: per-class Gaussian features (unit covariance, class means at
// distance `class_separation` from the origin) with each client's label mix
// drawn from Dirichlet(beta * 1). Feature k is then scaled by
// feature_scale_ratio^(-k / (p - 1)), so the ratio sets the conditioning.
// Quadratic: each client owns a center drawn around the origin with spread
// `center_dispersion`; example targets scatter around it with spread
// `target_noise`.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fathom/objectives.hpp"

namespace fathom {

enum class SizeLaw { fixed, lognormal };
enum class HoldoutMode { fresh_clients, client_samples };

std::string to_string(SizeLaw law);
SizeLaw size_law_from_string(const std::string& name);
std::string to_string(HoldoutMode mode);
HoldoutMode holdout_mode_from_string(const std::string& name);

struct FederationSpec {
    std::size_t clients = 10;
    SizeLaw size_law = SizeLaw::lognormal;
    std::size_t fixed_size = 100;
    double size_median = 100.0; // exp(mu) of the log-normal
    double size_sigma = 0.5;
    double min_size = 1.0;      // lower clamp; values below 1 still clamp to 1
    double max_size = 100000.0;
    double dirichlet_beta = 0.5;
    double class_separation = 2.0;
    double feature_scale_ratio = 1.0; // largest / smallest feature scale
    double center_dispersion = 1.0;
    double target_noise = 1.0;
    double holdout_fraction = 0.2;
    HoldoutMode holdout = HoldoutMode::fresh_clients;
    std::uint64_t seed = 0;

    void validate() const;

    friend bool operator==(const FederationSpec&, const FederationSpec&) = default;
};

struct Federation {
    std::vector<ClientDataset> clients;
    ClientDataset holdout; // empty when holdout_fraction == 0
    std::vector<std::string> warnings;
};

Federation synth_federation(const FederationSpec& spec, const Objective& objective);

/// Splits a labelled pool across m clients: for each class, client shares are
/// drawn from Dirichlet(beta) and rounded with largest remainders. Returns the
/// owning client per pool index. Any client left empty takes one example from
/// the currently largest client.
std::vector<std::size_t> dirichlet_label_partition(std::span<const int> labels, std::size_t m,
                                                   double beta, std::uint64_t seed);

/// Normalized label histogram of a dataset over `classes` bins.
std::vector<double> label_histogram(std::span<const int> labels, std::size_t classes);

double total_variation(std::span<const double> p, std::span<const double> q);

/// Binary dump: 16-byte header (u32 magic "FDAT", u32 version, u32 m, u32 width)
/// then little-endian float64 payload per client. See docs/dataset_format.md.
void write_federation(const std::filesystem::path& path, std::span<const ClientDataset> clients);
std::vector<ClientDataset> read_federation(const std::filesystem::path& path);

} // namespace fathom
