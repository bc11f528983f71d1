#include "fathom/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <vector>

#include "fathom/rng.hpp"
#include "format.hpp"

namespace fathom {

namespace {

struct Value {
    std::string text;
    bool quoted = false;
    std::size_t line = 0;
};

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const Value& v, const std::string& key, const std::string& expected) {
    throw ConfigError(v.line, "key '" + key + "' expects " + expected + ", got '" + v.text + "'");
}

double as_real(const Value& v, const std::string& key) {
    if (v.quoted) fail(v, key, "a number");
    double out = 0.0;
    const auto* first = v.text.data();
    const auto* last = first + v.text.size();
    const auto res = std::from_chars(first, last, out);
    if (res.ec != std::errc{} || res.ptr != last) fail(v, key, "a number");
    return out;
}

std::uint64_t as_u64(const Value& v, const std::string& key) {
    if (v.quoted) fail(v, key, "a non-negative integer");
    std::uint64_t out = 0;
    const auto* first = v.text.data();
    const auto* last = first + v.text.size();
    const auto res = std::from_chars(first, last, out);
    if (res.ec != std::errc{} || res.ptr != last) fail(v, key, "a non-negative integer");
    return out;
}

std::size_t as_size(const Value& v, const std::string& key) { return static_cast<std::size_t>(as_u64(v, key)); }

bool as_bool(const Value& v, const std::string& key) {
    if (!v.quoted && v.text == "true") return true;
    if (!v.quoted && v.text == "false") return false;
    fail(v, key, "true or false");
}

template <typename Fn>
auto as_enum(const Value& v, const std::string& key, Fn from_string) {
    try {
        return from_string(v.text);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(v.line, "key '" + key + "': " + e.what());
    }
}

using Setter = std::function<void(RunConfig&, const Value&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
    static const std::map<std::string, Setter> table = {
        {"algorithm", [](RunConfig& c, const Value& v, const std::string& k) { c.algorithm = as_enum(v, k, protocol_from_string); }},
        {"rounds", [](RunConfig& c, const Value& v, const std::string& k) { c.rounds = as_size(v, k); }},
        {"clients_per_round", [](RunConfig& c, const Value& v, const std::string& k) { c.clients_per_round = as_size(v, k); }},
        {"objective", [](RunConfig& c, const Value& v, const std::string& k) { c.objective = as_enum(v, k, objective_kind_from_string); }},
        {"dim", [](RunConfig& c, const Value& v, const std::string& k) { c.dim = as_size(v, k); }},
        {"curvature", [](RunConfig& c, const Value& v, const std::string& k) { c.curvature = as_real(v, k); }},
        {"features", [](RunConfig& c, const Value& v, const std::string& k) { c.features = as_size(v, k); }},
        {"classes", [](RunConfig& c, const Value& v, const std::string& k) { c.classes = as_size(v, k); }},
        {"hidden", [](RunConfig& c, const Value& v, const std::string& k) { c.hidden = as_size(v, k); }},
        {"clients", [](RunConfig& c, const Value& v, const std::string& k) { c.federation.clients = as_size(v, k); }},
        {"size_law", [](RunConfig& c, const Value& v, const std::string& k) { c.federation.size_law = as_enum(v, k, size_law_from_string); }},
        {"fixed_size", [](RunConfig& c, const Value& v, const std::string& k) { c.federation.fixed_size = as_size(v, k); }},
        {"size_median", [](RunConfig& c, const Value& v, const std::string& k) { c.federation.size_median = as_real(v, k); }},
        {"size_sigma", [](RunConfig& c, const Value& v, const std::string& k) { c.federation.size_sigma = as_real(v, k); }},
        {"min_size", [](RunConfig& c, const Value& v, const std::string& k) { c.federation.min_size = as_real(v, k); }},
        {"max_size", [](RunConfig& c, const Value& v, const std::string& k) { c.federation.max_size = as_real(v, k); }},
        {"dirichlet_beta", [](RunConfig& c, const Value& v, const std::string& k) { c.federation.dirichlet_beta = as_real(v, k); }},
        {"class_separation", [](RunConfig& c, const Value& v, const std::string& k) { c.federation.class_separation = as_real(v, k); }},
        {"feature_scale_ratio", [](RunConfig& c, const Value& v, const std::string& k) { c.federation.feature_scale_ratio = as_real(v, k); }},
        {"center_dispersion", [](RunConfig& c, const Value& v, const std::string& k) { c.federation.center_dispersion = as_real(v, k); }},
        {"target_noise", [](RunConfig& c, const Value& v, const std::string& k) { c.federation.target_noise = as_real(v, k); }},
        {"holdout_fraction", [](RunConfig& c, const Value& v, const std::string& k) { c.federation.holdout_fraction = as_real(v, k); }},
        {"holdout", [](RunConfig& c, const Value& v, const std::string& k) { c.federation.holdout = as_enum(v, k, holdout_mode_from_string); }},
        {"data_seed", [](RunConfig& c, const Value& v, const std::string& k) { c.data_seed = as_u64(v, k); }},
        {"eta0", [](RunConfig& c, const Value& v, const std::string& k) { c.eta0 = as_real(v, k); }},
        {"epochs0", [](RunConfig& c, const Value& v, const std::string& k) { c.epochs0 = as_real(v, k); }},
        {"batch0", [](RunConfig& c, const Value& v, const std::string& k) { c.batch0 = as_real(v, k); }},
        {"gamma_eta", [](RunConfig& c, const Value& v, const std::string& k) { c.gamma_eta = as_real(v, k); }},
        {"gamma_epochs", [](RunConfig& c, const Value& v, const std::string& k) { c.gamma_epochs = as_real(v, k); }},
        {"gamma_batch", [](RunConfig& c, const Value& v, const std::string& k) { c.gamma_batch = as_real(v, k); }},
        {"alpha", [](RunConfig& c, const Value& v, const std::string& k) { c.alpha = as_real(v, k); }},
        {"guard_rails", [](RunConfig& c, const Value& v, const std::string& k) { c.guard_rails = as_bool(v, k); }},
        {"target_loss", [](RunConfig& c, const Value& v, const std::string& k) { c.target_loss = as_real(v, k); }},
        {"target_accuracy", [](RunConfig& c, const Value& v, const std::string& k) { c.target_accuracy = as_real(v, k); }},
        {"eval_every", [](RunConfig& c, const Value& v, const std::string& k) { c.eval_every = as_size(v, k); }},
        {"bounds", [](RunConfig& c, const Value& v, const std::string& k) { c.bounds = as_bool(v, k); }},
        {"seed", [](RunConfig& c, const Value& v, const std::string& k) { c.seed = as_u64(v, k); }},
        {"threads", [](RunConfig& c, const Value& v, const std::string& k) { c.threads = static_cast<unsigned>(as_u64(v, k)); }},
        {"output_dir", [](RunConfig& c, const Value& v, const std::string&) { c.output_dir = v.text; }},
    };
    return table;
}

const std::vector<std::string>& required_keys() {
    static const std::vector<std::string> keys = {"objective", "rounds"};
    return keys;
}

std::string quote(const std::string& s) { return "\"" + s + "\""; }

} // namespace

Objective RunConfig::make_objective() const {
    switch (objective) {
    case ObjectiveKind::quadratic: return Objective::quadratic(dim, std::vector<double>(dim, curvature));
    case ObjectiveKind::logistic: return Objective::logistic(features, classes);
    case ObjectiveKind::mlp: return Objective::mlp(features, hidden, classes);
    }
    throw std::logic_error("unhandled objective kind");
}

FederationSpec RunConfig::federation_spec() const {
    FederationSpec spec = federation;
    spec.seed = data_seed ? *data_seed : derive_seed(seed, tag_of("data"));
    return spec;
}

void RunConfig::validate() const {
    auto bad = [](const std::string& msg) { throw ConfigError(0, msg); };
    if (rounds < 1) bad("rounds must be >= 1");
    if (clients_per_round < 1 || clients_per_round > federation.clients) {
        bad("clients_per_round must lie in [1, clients]");
    }
    if (!(eta0 > 0.0) || !(epochs0 > 0.0) || !(batch0 > 0.0)) bad("eta0, epochs0 and batch0 must be > 0");
    if (gamma_eta < 0.0 || gamma_epochs < 0.0 || gamma_batch < 0.0) bad("gamma values must be >= 0");
    if (!(alpha >= 0.0 && alpha < 1.0)) bad("alpha must lie in [0, 1)");
    if (eval_every < 1) bad("eval_every must be >= 1");
    if (target_accuracy && objective == ObjectiveKind::quadratic) bad("target_accuracy needs a classifier");
    try {
        federation.validate();
        (void)make_objective();
    } catch (const std::invalid_argument& e) {
        bad(e.what());
    }
}

RunConfig parse_config(const std::string& text) {
    std::map<std::string, Value> values;
    std::istringstream in(text);
    std::string raw;
    std::size_t line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        // Strip comments outside quotes.
        std::string line;
        bool in_quote = false;
        for (char ch : raw) {
            if (ch == '"') in_quote = !in_quote;
            if (ch == '#' && !in_quote) break;
            line.push_back(ch);
        }
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(line_no, "expected 'key = value'");
        }
        const std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(line_no, "missing key before '='");
        if (value.empty()) throw ConfigError(line_no, "missing value for key '" + key + "'");
        if (!setters().contains(key)) throw ConfigError(line_no, "unknown key '" + key + "'");
        if (values.contains(key)) throw ConfigError(line_no, "duplicate key '" + key + "'");
        Value v;
        v.line = line_no;
        if (value.front() == '"') {
            if (value.size() < 2 || value.back() != '"') {
                throw ConfigError(line_no, "unterminated string for key '" + key + "'");
            }
            v.text = value.substr(1, value.size() - 2);
            v.quoted = true;
        } else {
            v.text = value;
        }
        values.emplace(key, std::move(v));
    }
    for (const auto& key : required_keys()) {
        if (!values.contains(key)) throw ConfigError(0, "missing required key '" + key + "'");
    }
    RunConfig cfg;
    for (const auto& [key, v] : values) {
        setters().at(key)(cfg, v, key);
    }
    cfg.validate();
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(0, "cannot open config file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str());
}

std::string serialize_config(const RunConfig& c) {
    using detail::format_real;
    const auto& f = c.federation;
    std::ostringstream out;
    out << "algorithm = " << quote(to_string(c.algorithm)) << '\n'
        << "rounds = " << c.rounds << '\n'
        << "clients_per_round = " << c.clients_per_round << '\n'
        << "objective = " << quote(to_string(c.objective)) << '\n'
        << "dim = " << c.dim << '\n'
        << "curvature = " << format_real(c.curvature) << '\n'
        << "features = " << c.features << '\n'
        << "classes = " << c.classes << '\n'
        << "hidden = " << c.hidden << '\n'
        << "clients = " << f.clients << '\n'
        << "size_law = " << quote(to_string(f.size_law)) << '\n'
        << "fixed_size = " << f.fixed_size << '\n'
        << "size_median = " << format_real(f.size_median) << '\n'
        << "size_sigma = " << format_real(f.size_sigma) << '\n'
        << "min_size = " << format_real(f.min_size) << '\n'
        << "max_size = " << format_real(f.max_size) << '\n'
        << "dirichlet_beta = " << format_real(f.dirichlet_beta) << '\n'
        << "class_separation = " << format_real(f.class_separation) << '\n'
        << "feature_scale_ratio = " << format_real(f.feature_scale_ratio) << '\n'
        << "center_dispersion = " << format_real(f.center_dispersion) << '\n'
        << "target_noise = " << format_real(f.target_noise) << '\n'
        << "holdout_fraction = " << format_real(f.holdout_fraction) << '\n'
        << "holdout = " << quote(to_string(f.holdout)) << '\n';
    if (c.data_seed) out << "data_seed = " << *c.data_seed << '\n';
    out << "eta0 = " << format_real(c.eta0) << '\n'
        << "epochs0 = " << format_real(c.epochs0) << '\n'
        << "batch0 = " << format_real(c.batch0) << '\n'
        << "gamma_eta = " << format_real(c.gamma_eta) << '\n'
        << "gamma_epochs = " << format_real(c.gamma_epochs) << '\n'
        << "gamma_batch = " << format_real(c.gamma_batch) << '\n'
        << "alpha = " << format_real(c.alpha) << '\n'
        << "guard_rails = " << (c.guard_rails ? "true" : "false") << '\n';
    if (c.target_loss) out << "target_loss = " << format_real(*c.target_loss) << '\n';
    if (c.target_accuracy) out << "target_accuracy = " << format_real(*c.target_accuracy) << '\n';
    out << "eval_every = " << c.eval_every << '\n'
        << "bounds = " << (c.bounds ? "true" : "false") << '\n'
        << "seed = " << c.seed << '\n'
        << "threads = " << c.threads << '\n'
        << "output_dir = " << quote(c.output_dir) << '\n';
    return out.str();
}

} // namespace fathom
