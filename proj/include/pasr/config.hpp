#pragma once

// Model and run configuration, serialized as flat `key=value` text so that
// resolved configs diff cleanly between runs.

#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pasr/dataset.hpp"
#include "pasr/sampling.hpp"

namespace pasr {

enum class KnnAnchor {
    target,  // neighbors of the positive (next) location
    input,   // neighbors of the current input location
};

struct ModelConfig {
    int d = 50;
    int d_hidden = 128;
    int layers = 2;
    int max_len = 50;
    int ngram = 3;
    int geohash_prefix = 6;
    int grid_intervals = 5000;
    int knn = 2000;
    int neg_count = 5;
    double temperature = 1.0;
    SamplerKind sampler = SamplerKind::knn_uniform;
    KnnAnchor knn_anchor = KnnAnchor::target;
    bool use_geo_encoder = true;
    bool use_grid_mapper = true;
    bool use_target_decoder = true;
    bool weighted_loss = true;
    bool propagate_weight_grad = false;
    bool geo_positions = false;
    bool pad_key_mask = false;

    /// Width of one location representation: d per enabled part.
    int width() const { return d * (1 + (use_geo_encoder ? 1 : 0) + (use_grid_mapper ? 2 : 0)); }

    int tokens_per_location() const { return geohash_prefix - ngram + 1; }

    void validate() const {
        auto positive = [](int v, const char* name) {
            if (v < 1) throw std::domain_error(std::string("config: ") + name + " must be positive");
        };
        positive(d, "d");
        positive(d_hidden, "d-hidden");
        if (layers < 0) throw std::domain_error("config: layers must be >= 0");
        positive(max_len, "max-len");
        positive(ngram, "ngram");
        positive(grid_intervals, "grid-intervals");
        positive(knn, "knn");
        positive(neg_count, "neg-count");
        if (geohash_prefix < ngram || geohash_prefix > kMaxGeohashLength) {
            throw std::domain_error("config: geohash-prefix must be in [ngram, 16]");
        }
        if (ngram > 12) throw std::domain_error("config: ngram must be <= 12");
        if (!(temperature > 0.0)) throw std::domain_error("config: temperature must be positive");
        if (d < 2) throw std::domain_error("config: d must be >= 2 for layer normalization");
    }

    bool operator==(const ModelConfig&) const = default;
};

inline const char* to_string(KnnAnchor a) { return a == KnnAnchor::target ? "target" : "input"; }

inline KnnAnchor parse_knn_anchor(const std::string& s) {
    if (s == "target") return KnnAnchor::target;
    if (s == "input") return KnnAnchor::input;
    throw std::invalid_argument("unknown knn anchor '" + s + "'");
}

struct RunConfig {
    ModelConfig model;
    std::string data;
    std::string format = "auto";  // auto | iso8601 | epoch
    std::string out = "pasr_out";
    std::uint64_t seed = 42;
    int epochs = 20;
    int batch_size = 128;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    int min_user_checkins = 20;
    int min_location_visits = 10;
    std::string filter_mode = "fixpoint";  // fixpoint | single-pass
    int eval_negatives = 100;

    bool operator==(const RunConfig&) const = default;
};

namespace detail {

inline std::string fmt_double(double v) {
    std::ostringstream os;
    os << std::setprecision(17) << v;
    return os.str();
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("config: '" + key + "' expects true/false, got '" + v + "'");
}

inline int parse_int_value(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const long long x = std::stoll(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return static_cast<int>(x);
    } catch (const std::exception&) {
        throw std::invalid_argument("config: '" + key + "' expects an integer, got '" + v + "'");
    }
}

inline double parse_double_value(const std::string& key, const std::string& v) {
    try {
        size_t used = 0;
        const double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument("trailing");
        return x;
    } catch (const std::exception&) {
        throw std::invalid_argument("config: '" + key + "' expects a number, got '" + v + "'");
    }
}

}  // namespace detail

inline std::vector<std::pair<std::string, std::string>> to_key_values(const ModelConfig& c) {
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    return {
        {"d", std::to_string(c.d)},
        {"d-hidden", std::to_string(c.d_hidden)},
        {"layers", std::to_string(c.layers)},
        {"max-len", std::to_string(c.max_len)},
        {"ngram", std::to_string(c.ngram)},
        {"geohash-prefix", std::to_string(c.geohash_prefix)},
        {"grid-intervals", std::to_string(c.grid_intervals)},
        {"knn", std::to_string(c.knn)},
        {"neg-count", std::to_string(c.neg_count)},
        {"temperature", detail::fmt_double(c.temperature)},
        {"sampler", to_string(c.sampler)},
        {"knn-anchor", to_string(c.knn_anchor)},
        {"geo-encoder", b(c.use_geo_encoder)},
        {"grid-mapper", b(c.use_grid_mapper)},
        {"target-decoder", b(c.use_target_decoder)},
        {"weighted-loss", b(c.weighted_loss)},
        {"propagate-weight-grad", b(c.propagate_weight_grad)},
        {"geo-positions", b(c.geo_positions)},
        {"pad-key-mask", b(c.pad_key_mask)},
    };
}

/// Applies one key; returns false when the key is not a model key.
inline bool apply_model_key(ModelConfig& c, const std::string& k, const std::string& v) {
    using detail::parse_bool;
    using detail::parse_int_value;
    if (k == "d") c.d = parse_int_value(k, v);
    else if (k == "d-hidden") c.d_hidden = parse_int_value(k, v);
    else if (k == "layers") c.layers = parse_int_value(k, v);
    else if (k == "max-len") c.max_len = parse_int_value(k, v);
    else if (k == "ngram") c.ngram = parse_int_value(k, v);
    else if (k == "geohash-prefix") c.geohash_prefix = parse_int_value(k, v);
    else if (k == "grid-intervals") c.grid_intervals = parse_int_value(k, v);
    else if (k == "knn") c.knn = parse_int_value(k, v);
    else if (k == "neg-count") c.neg_count = parse_int_value(k, v);
    else if (k == "temperature") c.temperature = detail::parse_double_value(k, v);
    else if (k == "sampler") c.sampler = parse_sampler_kind(v);
    else if (k == "knn-anchor") c.knn_anchor = parse_knn_anchor(v);
    else if (k == "geo-encoder") c.use_geo_encoder = parse_bool(k, v);
    else if (k == "grid-mapper") c.use_grid_mapper = parse_bool(k, v);
    else if (k == "target-decoder") c.use_target_decoder = parse_bool(k, v);
    else if (k == "weighted-loss") c.weighted_loss = parse_bool(k, v);
    else if (k == "propagate-weight-grad") c.propagate_weight_grad = parse_bool(k, v);
    else if (k == "geo-positions") c.geo_positions = parse_bool(k, v);
    else if (k == "pad-key-mask") c.pad_key_mask = parse_bool(k, v);
    else return false;
    return true;
}

inline std::vector<std::pair<std::string, std::string>> to_key_values(const RunConfig& c) {
    std::vector<std::pair<std::string, std::string>> kv = {
        {"data", c.data},
        {"format", c.format},
        {"out", c.out},
        {"seed", std::to_string(c.seed)},
        {"epochs", std::to_string(c.epochs)},
        {"batch-size", std::to_string(c.batch_size)},
        {"lr", detail::fmt_double(c.lr)},
        {"weight-decay", detail::fmt_double(c.weight_decay)},
        {"min-user-checkins", std::to_string(c.min_user_checkins)},
        {"min-location-visits", std::to_string(c.min_location_visits)},
        {"filter-mode", c.filter_mode},
        {"eval-negatives", std::to_string(c.eval_negatives)},
    };
    for (auto& p : to_key_values(c.model)) kv.push_back(std::move(p));
    return kv;
}

inline void apply_key(RunConfig& c, const std::string& k, const std::string& v) {
    using detail::parse_int_value;
    if (apply_model_key(c.model, k, v)) return;
    if (k == "data") c.data = v;
    else if (k == "format") c.format = v;
    else if (k == "out") c.out = v;
    else if (k == "seed") {
        try {
            size_t used = 0;
            if (v.empty() || v[0] < '0' || v[0] > '9') throw std::invalid_argument("sign");
            c.seed = std::stoull(v, &used);
            if (used != v.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw std::invalid_argument("config: 'seed' expects an unsigned integer, got '" + v + "'");
        }
    } else if (k == "epochs") c.epochs = parse_int_value(k, v);
    else if (k == "batch-size") c.batch_size = parse_int_value(k, v);
    else if (k == "lr") c.lr = detail::parse_double_value(k, v);
    else if (k == "weight-decay") c.weight_decay = detail::parse_double_value(k, v);
    else if (k == "min-user-checkins") c.min_user_checkins = parse_int_value(k, v);
    else if (k == "min-location-visits") c.min_location_visits = parse_int_value(k, v);
    else if (k == "filter-mode") c.filter_mode = v;
    else if (k == "eval-negatives") c.eval_negatives = parse_int_value(k, v);
    else throw std::invalid_argument("config: unknown key '" + k + "'");
}

template <typename Config>
std::string serialize_config(const Config& c) {
    std::string out;
    for (const auto& [k, v] : to_key_values(c)) out += k + "=" + v + "\n";
    return out;
}

namespace detail {

template <typename Apply>
void parse_lines(const std::string& text, Apply apply) {
    std::istringstream in(text);
    std::string line;
    size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key=value");
        }
        apply(line.substr(0, eq), line.substr(eq + 1));
    }
}

}  // namespace detail

inline ModelConfig parse_model_config(const std::string& text) {
    ModelConfig c;
    detail::parse_lines(text, [&](const std::string& k, const std::string& v) {
        if (!apply_model_key(c, k, v)) throw std::invalid_argument("config: unknown key '" + k + "'");
    });
    return c;
}

inline RunConfig parse_run_config(const std::string& text) {
    RunConfig c;
    detail::parse_lines(text, [&](const std::string& k, const std::string& v) { apply_key(c, k, v); });
    return c;
}

inline RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

inline void save_run_config(const std::string& path, const RunConfig& c) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write config file: " + path);
    out << serialize_config(c);
}

}  // namespace pasr
