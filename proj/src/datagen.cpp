#include "fathom/datagen.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "fathom/rng.hpp"

namespace fathom {

namespace {

constexpr std::uint32_t kMagic = 0x54414446; // "FDAT" read as little-endian u32
constexpr std::uint32_t kVersion = 1;

/// Rounds n * probs to integers summing to n (largest remainder, ties by index).
std::vector<std::size_t> largest_remainder(std::size_t n, std::span<const double> probs) {
    std::vector<std::size_t> counts(probs.size(), 0);
    std::vector<std::pair<double, std::size_t>> rema(probs.size());
    std::size_t assigned = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double share = static_cast<double>(n) * probs[i];
        counts[i] = static_cast<std::size_t>(std::floor(share));
        assigned += counts[i];
        rema[i] = {share - static_cast<double>(counts[i]), i};
    }
    std::stable_sort(rema.begin(), rema.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t r = 0; assigned < n; ++r, ++assigned) {
        ++counts[rema[r % rema.size()].second];
    }
    return counts;
}

std::vector<double> sample_dirichlet(std::size_t k, double beta, Rng& rng) {
    std::gamma_distribution<double> gamma(beta, 1.0);
    std::vector<double> q(k);
    double total = 0.0;
    for (auto& v : q) {
        v = gamma(rng);
        total += v;
    }
    if (!(total > 0.0)) {
        // Every draw underflowed; the Dirichlet is effectively a vertex.
        std::uniform_int_distribution<std::size_t> pick(0, k - 1);
        std::fill(q.begin(), q.end(), 0.0);
        q[pick(rng)] = 1.0;
        return q;
    }
    for (auto& v : q) {
        v /= total;
    }
    return q;
}

struct Generator {
    const FederationSpec& spec;
    const Objective& objective;
    std::vector<std::vector<double>> class_means;
    std::vector<double> feature_scale;

    Generator(const FederationSpec& s, const Objective& o) : spec(s), objective(o) {
        if (!objective.is_classifier()) {
            return;
        }
        Rng rng(derive_seed(spec.seed, tag_of("class-means")));
        std::normal_distribution<double> normal(0.0, 1.0);
        class_means.resize(objective.classes());
        for (auto& mean : class_means) {
            mean.resize(objective.features());
            for (auto& v : mean) {
                v = normal(rng);
            }
            const double n = vec::norm(mean);
            vec::scale(n > 0.0 ? spec.class_separation / n : 0.0, mean);
        }
        const std::size_t p = objective.features();
        feature_scale.assign(p, 1.0);
        for (std::size_t k = 1; k < p; ++k) {
            feature_scale[k] = std::pow(spec.feature_scale_ratio, -static_cast<double>(k) / static_cast<double>(p - 1));
        }
    }

    std::size_t draw_size(Rng& rng, std::vector<std::string>& warnings, std::size_t id) const {
        double raw = static_cast<double>(spec.fixed_size);
        if (spec.size_law == SizeLaw::lognormal) {
            std::normal_distribution<double> normal(0.0, 1.0);
            raw = std::round(spec.size_median * std::exp(spec.size_sigma * normal(rng)));
        }
        if (raw < 1.0) {
            warnings.push_back("client " + std::to_string(id) + ": drawn size " + std::to_string(raw) +
                               " clamped to 1");
        }
        const double lo = std::max(1.0, spec.min_size);
        return static_cast<std::size_t>(std::clamp(raw, lo, std::max(lo, spec.max_size)));
    }

    /// n examples for one client drawn with that client's stream.
    ClientDataset make_client(std::size_t id, std::size_t n, Rng& rng) const {
        ClientDataset data;
        data.client_id = id;
        data.width = objective.row_width();
        data.rows.resize(n * data.width);
        std::normal_distribution<double> normal(0.0, 1.0);

        if (!objective.is_classifier()) {
            std::vector<double> center(data.width);
            for (auto& v : center) {
                v = spec.center_dispersion * normal(rng);
            }
            for (std::size_t j = 0; j < n; ++j) {
                for (std::size_t k = 0; k < data.width; ++k) {
                    data.rows[j * data.width + k] = center[k] + spec.target_noise * normal(rng);
                }
            }
            return data;
        }

        const std::size_t classes = objective.classes();
        const auto mix = sample_dirichlet(classes, spec.dirichlet_beta, rng);
        const auto counts = largest_remainder(n, mix);
        data.labels.reserve(n);
        for (std::size_t c = 0; c < classes; ++c) {
            data.labels.insert(data.labels.end(), counts[c], static_cast<int>(c));
        }
        std::shuffle(data.labels.begin(), data.labels.end(), rng);
        for (std::size_t j = 0; j < n; ++j) {
            const auto& mean = class_means[static_cast<std::size_t>(data.labels[j])];
            for (std::size_t k = 0; k < data.width; ++k) {
                data.rows[j * data.width + k] = feature_scale[k] * (mean[k] + normal(rng));
            }
        }
        return data;
    }
};

void append(ClientDataset& into, const ClientDataset& from, std::size_t begin, std::size_t end) {
    into.rows.insert(into.rows.end(), from.rows.begin() + static_cast<std::ptrdiff_t>(begin * from.width),
                     from.rows.begin() + static_cast<std::ptrdiff_t>(end * from.width));
    if (!from.labels.empty()) {
        into.labels.insert(into.labels.end(), from.labels.begin() + static_cast<std::ptrdiff_t>(begin),
                           from.labels.begin() + static_cast<std::ptrdiff_t>(end));
    }
}

void put_u32(std::ostream& out, std::uint32_t v) {
    char b[4];
    for (int i = 0; i < 4; ++i) {
        b[i] = static_cast<char>((v >> (8 * i)) & 0xffu);
    }
    out.write(b, 4);
}

void put_f64(std::ostream& out, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    char b[8];
    for (int i = 0; i < 8; ++i) {
        b[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
    }
    out.write(b, 8);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) {
        throw std::runtime_error("dataset file truncated");
    }
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
        v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    }
    return v;
}

double get_f64(std::istream& in) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) {
        throw std::runtime_error("dataset file truncated");
    }
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) {
        bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    }
    return std::bit_cast<double>(bits);
}

std::size_t get_count(std::istream& in) {
    const double v = get_f64(in);
    if (!(v >= 0.0) || v != std::floor(v) || v > 9.0e15) {
        throw std::runtime_error("dataset file holds a malformed count");
    }
    return static_cast<std::size_t>(v);
}

} // namespace

std::string to_string(SizeLaw law) { return law == SizeLaw::fixed ? "fixed" : "lognormal"; }

SizeLaw size_law_from_string(const std::string& name) {
    if (name == "fixed") return SizeLaw::fixed;
    if (name == "lognormal") return SizeLaw::lognormal;
    throw std::invalid_argument("unknown size law '" + name + "'");
}

std::string to_string(HoldoutMode mode) {
    return mode == HoldoutMode::fresh_clients ? "fresh_clients" : "client_samples";
}

HoldoutMode holdout_mode_from_string(const std::string& name) {
    if (name == "fresh_clients") return HoldoutMode::fresh_clients;
    if (name == "client_samples") return HoldoutMode::client_samples;
    throw std::invalid_argument("unknown holdout mode '" + name + "'");
}

void FederationSpec::validate() const {
    if (clients < 1) throw std::invalid_argument("federation needs at least one client");
    if (!(dirichlet_beta > 0.0)) throw std::invalid_argument("dirichlet_beta must be > 0");
    if (size_law == SizeLaw::fixed && fixed_size < 1) throw std::invalid_argument("fixed_size must be >= 1");
    if (size_law == SizeLaw::lognormal && !(size_median > 0.0 && size_sigma >= 0.0)) {
        throw std::invalid_argument("log-normal size law needs median > 0 and sigma >= 0");
    }
    if (!(feature_scale_ratio >= 1.0)) throw std::invalid_argument("feature_scale_ratio must be >= 1");
    if (!(holdout_fraction >= 0.0)) throw std::invalid_argument("holdout_fraction must be >= 0");
}

Federation synth_federation(const FederationSpec& spec, const Objective& objective) {
    spec.validate();
    Generator gen(spec, objective);
    Federation fed;

    Rng size_rng(derive_seed(spec.seed, tag_of("sizes")));
    std::vector<std::size_t> sizes(spec.clients);
    for (std::size_t i = 0; i < spec.clients; ++i) {
        sizes[i] = gen.draw_size(size_rng, fed.warnings, i);
    }

    fed.holdout.client_id = spec.clients;
    fed.holdout.width = objective.row_width();

    fed.clients.reserve(spec.clients);
    for (std::size_t i = 0; i < spec.clients; ++i) {
        Rng rng(derive_seed(spec.seed, i));
        if (spec.holdout == HoldoutMode::client_samples && spec.holdout_fraction > 0.0) {
            const auto extra = static_cast<std::size_t>(std::round(spec.holdout_fraction * static_cast<double>(sizes[i])));
            auto full = gen.make_client(i, sizes[i] + extra, rng);
            ClientDataset train;
            train.client_id = i;
            train.width = full.width;
            append(train, full, 0, sizes[i]);
            append(fed.holdout, full, sizes[i], sizes[i] + extra);
            fed.clients.push_back(std::move(train));
        } else {
            fed.clients.push_back(gen.make_client(i, sizes[i], rng));
        }
    }

    if (spec.holdout == HoldoutMode::fresh_clients && spec.holdout_fraction > 0.0) {
        const auto fresh = std::max<std::size_t>(
            1, static_cast<std::size_t>(std::round(spec.holdout_fraction * static_cast<double>(spec.clients))));
        std::vector<std::string> ignored;
        for (std::size_t k = 0; k < fresh; ++k) {
            const std::size_t id = spec.clients + k;
            Rng rng(derive_seed(spec.seed, id));
            const auto n = gen.draw_size(size_rng, ignored, id);
            const auto part = gen.make_client(id, n, rng);
            append(fed.holdout, part, 0, part.size());
        }
    }
    return fed;
}

std::vector<std::size_t> dirichlet_label_partition(std::span<const int> labels, std::size_t m,
                                                   double beta, std::uint64_t seed) {
    if (labels.empty()) throw std::invalid_argument("empty pool");
    if (m < 1) throw std::invalid_argument("partition needs at least one client");
    if (!(beta > 0.0)) throw std::invalid_argument("dirichlet_beta must be > 0");
    if (labels.size() < m) throw std::invalid_argument("pool smaller than client count");

    const int max_label = *std::max_element(labels.begin(), labels.end());
    if (*std::min_element(labels.begin(), labels.end()) < 0) {
        throw std::invalid_argument("negative label");
    }
    const auto classes = static_cast<std::size_t>(max_label) + 1;

    Rng rng(seed);
    std::vector<std::size_t> owner(labels.size(), 0);
    std::vector<std::vector<std::size_t>> held(m);
    for (std::size_t c = 0; c < classes; ++c) {
        std::vector<std::size_t> members;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (static_cast<std::size_t>(labels[j]) == c) {
                members.push_back(j);
            }
        }
        std::shuffle(members.begin(), members.end(), rng);
        const auto shares = sample_dirichlet(m, beta, rng);
        const auto counts = largest_remainder(members.size(), shares);
        std::size_t next = 0;
        for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t k = 0; k < counts[i]; ++k, ++next) {
                owner[members[next]] = i;
                held[i].push_back(members[next]);
            }
        }
    }

    for (std::size_t i = 0; i < m; ++i) {
        if (!held[i].empty()) {
            continue;
        }
        std::size_t largest = 0;
        for (std::size_t k = 1; k < m; ++k) {
            if (held[k].size() > held[largest].size()) {
                largest = k;
            }
        }
        const std::size_t moved = held[largest].back();
        held[largest].pop_back();
        held[i].push_back(moved);
        owner[moved] = i;
    }
    return owner;
}

std::vector<double> label_histogram(std::span<const int> labels, std::size_t classes) {
    std::vector<double> h(classes, 0.0);
    if (labels.empty()) {
        return h;
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= classes) {
            throw std::out_of_range("label outside histogram range");
        }
        h[static_cast<std::size_t>(y)] += 1.0;
    }
    vec::scale(1.0 / static_cast<double>(labels.size()), h);
    return h;
}

double total_variation(std::span<const double> p, std::span<const double> q) {
    vec::require_same_length(p, q);
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += std::abs(p[i] - q[i]);
    }
    return 0.5 * acc;
}

void write_federation(const std::filesystem::path& path, std::span<const ClientDataset> clients) {
    if (clients.empty()) {
        throw std::invalid_argument("nothing to write");
    }
    const std::size_t width = clients.front().width;
    for (const auto& c : clients) {
        if (c.width != width) {
            throw std::invalid_argument("clients disagree on row width");
        }
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open " + path.string() + " for writing");
    }
    put_u32(out, kMagic);
    put_u32(out, kVersion);
    put_u32(out, static_cast<std::uint32_t>(clients.size()));
    put_u32(out, static_cast<std::uint32_t>(width));
    for (const auto& c : clients) {
        put_f64(out, static_cast<double>(c.client_id));
        put_f64(out, static_cast<double>(c.size()));
        put_f64(out, c.labels.empty() ? 0.0 : 1.0);
        for (double v : c.rows) {
            put_f64(out, v);
        }
        for (int y : c.labels) {
            put_f64(out, static_cast<double>(y));
        }
    }
    if (!out) {
        throw std::runtime_error("write failed for " + path.string());
    }
}

std::vector<ClientDataset> read_federation(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw std::runtime_error("cannot open " + path.string());
    }
    if (get_u32(in) != kMagic) throw std::runtime_error("not a federation dataset file (bad magic)");
    if (get_u32(in) != kVersion) throw std::runtime_error("unsupported dataset file version");
    const std::uint32_t m = get_u32(in);
    const std::uint32_t width = get_u32(in);
    std::vector<ClientDataset> clients(m);
    for (auto& c : clients) {
        c.client_id = get_count(in);
        const std::size_t n = get_count(in);
        const double labelled = get_f64(in);
        c.width = width;
        c.rows.resize(n * width);
        for (double& v : c.rows) {
            v = get_f64(in);
        }
        if (labelled != 0.0) {
            c.labels.resize(n);
            for (int& y : c.labels) {
                y = static_cast<int>(get_f64(in));
            }
        }
    }
    if (in.peek() != std::char_traits<char>::eof()) {
        throw std::runtime_error("trailing bytes after dataset payload");
    }
    return clients;
}

} // namespace fathom
