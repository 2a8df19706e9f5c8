#pragma once

// The recommender network: per-location embedding built from four parts
// (location id, geohash n-gram encoder, grid row, grid column), a causal
// self-attention encoder over the check-in sequence, and a decoder whose
// queries are candidate embeddings attending over the encoded history.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <unordered_map>
#include <vector>

#include "pasr/autodiff.hpp"
#include "pasr/config.hpp"
#include "pasr/dataset.hpp"
#include "pasr/geocode.hpp"
#include "pasr/gridmap.hpp"
#include "pasr/objective.hpp"
#include "pasr/sampling.hpp"

namespace pasr {

/// Fixed-length training rows. Inputs are right-padded with kPadLocation;
/// targets[r*length+i] is the next location after inputs[r*length+i], or
/// kPadLocation where the step carries no loss.
struct SequenceBatch {
    size_t rows = 0;
    size_t length = 0;
    size_t neg_count = 0;
    std::vector<LocationId> inputs;
    std::vector<LocationId> targets;
    std::vector<NegativeDraw> negatives;  // supervised steps in row-major order, neg_count each

    bool padded(size_t r, size_t i) const { return inputs[r * length + i] == kPadLocation; }

    /// Flat positions r*length+i of supervised steps.
    std::vector<size_t> supervised_positions() const {
        std::vector<size_t> out;
        for (size_t p = 0; p < targets.size(); ++p)
            if (targets[p] != kPadLocation) out.push_back(p);
        return out;
    }

    size_t valid_length(size_t r) const {
        size_t n = 0;
        while (n < length && inputs[r * length + n] != kPadLocation) ++n;
        return n;
    }
};

/// Static per-location inputs of the embedding: geohash n-gram rows and grid cells.
struct LocationFeatures {
    std::vector<std::uint64_t> vocabulary;  // sorted; token row = index + 1, row 0 = unseen token
    size_t tokens_per_location = 0;
    std::vector<long> token_rows;  // location-major
    std::vector<GridCell> cells;

    long row_of(std::uint64_t token) const {
        auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), token);
        if (it == vocabulary.end() || *it != token) return 0;
        return static_cast<long>(it - vocabulary.begin()) + 1;
    }
};

inline std::vector<std::uint64_t> location_tokens(const GeoCoordinate& c, const ModelConfig& cfg) {
    return ngram_tokenize(encode_geohash(c, cfg.geohash_prefix), cfg.ngram).tokens;
}

inline std::vector<std::uint64_t> build_token_vocabulary(std::span<const GeoCoordinate> coords,
                                                         const ModelConfig& cfg) {
    std::vector<std::uint64_t> vocab;
    for (const auto& c : coords)
        for (auto t : location_tokens(c, cfg)) vocab.push_back(t);
    std::sort(vocab.begin(), vocab.end());
    vocab.erase(std::unique(vocab.begin(), vocab.end()), vocab.end());
    return vocab;
}

inline LocationFeatures build_location_features(std::span<const GeoCoordinate> coords, const RegionBounds& bounds,
                                                std::vector<std::uint64_t> vocabulary, const ModelConfig& cfg) {
    LocationFeatures f;
    f.vocabulary = std::move(vocabulary);
    f.tokens_per_location = static_cast<size_t>(cfg.tokens_per_location());
    for (const auto& c : coords) {
        for (auto t : location_tokens(c, cfg)) f.token_rows.push_back(f.row_of(t));
        f.cells.push_back(map_to_cell(c, bounds, cfg.grid_intervals));
    }
    return f;
}

class Model {
   public:
    Model(const ModelConfig& cfg, std::vector<GeoCoordinate> coords, std::uint64_t seed)
        : Model(cfg, coords, fit_bounds(coords), build_token_vocabulary(coords, cfg), seed) {}

    Model(const ModelConfig& cfg, std::vector<GeoCoordinate> coords, const RegionBounds& bounds,
          std::vector<std::uint64_t> vocabulary, std::uint64_t seed)
        : cfg_(cfg), coords_(std::move(coords)), bounds_(bounds) {
        cfg_.validate();
        if (coords_.empty()) throw std::domain_error("model needs at least one location");
        features_ = build_location_features(coords_, bounds_, std::move(vocabulary), cfg_);
        init_params(seed);
    }

    const ModelConfig& config() const { return cfg_; }
    const RegionBounds& bounds() const { return bounds_; }
    const LocationFeatures& features() const { return features_; }
    size_t location_count() const { return coords_.size(); }
    size_t width() const { return static_cast<size_t>(cfg_.width()); }

    ad::ParamSet& params() { return params_; }
    const ad::ParamSet& params() const { return params_; }

    /// Tables read when embedding a location. Inputs and candidates share them.
    std::vector<const ad::Node*> embedding_tables() const {
        std::vector<const ad::Node*> out{params_.get("loc.embedding").node()};
        if (cfg_.use_geo_encoder) out.push_back(params_.get("geo.tokens").node());
        if (cfg_.use_grid_mapper) {
            out.push_back(params_.get("grid.row").node());
            out.push_back(params_.get("grid.col").node());
        }
        return out;
    }

    /// Location representations without positions; pad ids give zero rows.
    ad::Tensor embed_ids(std::span<const LocationId> ids) const {
        std::vector<long> loc_rows(ids.size(), ad::kZeroRow);
        for (size_t i = 0; i < ids.size(); ++i) {
            if (ids[i] == kPadLocation) continue;
            check_id(ids[i]);
            loc_rows[i] = ids[i] - 1;
        }
        std::vector<ad::Tensor> parts{ad::gather_rows(params_.get("loc.embedding"), loc_rows)};
        if (cfg_.use_geo_encoder) {
            std::vector<LocationId> unique;
            std::unordered_map<LocationId, long> slot;
            std::vector<long> geo_rows(ids.size(), ad::kZeroRow);
            for (size_t i = 0; i < ids.size(); ++i) {
                if (ids[i] == kPadLocation) continue;
                auto [it, fresh] = slot.emplace(ids[i], static_cast<long>(unique.size()));
                if (fresh) unique.push_back(ids[i]);
                geo_rows[i] = it->second;
            }
            if (unique.empty()) {
                parts.push_back(ad::Tensor::zeros(ids.size(), static_cast<size_t>(cfg_.d)));
            } else {
                std::vector<long> token_rows;
                const size_t s = features_.tokens_per_location;
                for (auto id : unique) {
                    const auto* p = features_.token_rows.data() + static_cast<size_t>(id - 1) * s;
                    token_rows.insert(token_rows.end(), p, p + s);
                }
                parts.push_back(ad::gather_rows(geo_stack(token_rows, unique.size()), geo_rows));
            }
        }
        if (cfg_.use_grid_mapper) {
            std::vector<long> rows(ids.size(), ad::kZeroRow), cols(ids.size(), ad::kZeroRow);
            for (size_t i = 0; i < ids.size(); ++i) {
                if (ids[i] == kPadLocation) continue;
                const auto& cell = features_.cells[static_cast<size_t>(ids[i] - 1)];
                rows[i] = cell.row;
                cols[i] = cell.col;
            }
            parts.push_back(ad::gather_rows(params_.get("grid.row"), rows));
            parts.push_back(ad::gather_rows(params_.get("grid.col"), cols));
        }
        return parts.size() == 1 ? parts[0] : ad::concat_cols(parts);
    }

    /// Input embedding of `rows` sequences of length m: embed_ids + P.
    ad::Tensor embed_locations(std::span<const LocationId> ids) const {
        const size_t m = static_cast<size_t>(cfg_.max_len);
        if (ids.size() % m != 0) throw std::domain_error("embed_locations: id count is not a multiple of max-len");
        std::vector<long> pos(ids.size());
        for (size_t i = 0; i < ids.size(); ++i) pos[i] = static_cast<long>(i % m);
        return ad::add(embed_ids(ids), ad::gather_rows(params_.get("pos"), pos));
    }

    /// Geography vector of an arbitrary coordinate. Tokens never seen in the
    /// location table share the unseen-token row.
    std::vector<double> geo_encode(const GeoCoordinate& c) const {
        if (!cfg_.use_geo_encoder) throw std::domain_error("geo_encode: geography encoder is disabled");
        std::vector<long> rows;
        for (auto t : location_tokens(c, cfg_)) rows.push_back(features_.row_of(t));
        const ad::Tensor g = geo_stack(rows, 1);
        return {g.values().begin(), g.values().end()};
    }

    /// N causal blocks over `rows` sequences of length m stacked vertically.
    ad::Tensor encode(const ad::Tensor& e_input, std::span<const LocationId> ids = {}) const {
        const size_t m = static_cast<size_t>(cfg_.max_len);
        if (e_input.rows() % m != 0 || e_input.cols() != width()) {
            throw std::domain_error("encode: input shape does not match config");
        }
        const size_t rows = e_input.rows() / m;
        ad::AttentionMask mask = ad::AttentionMask::block_diagonal(rows, m, true);
        if (cfg_.pad_key_mask && !ids.empty()) {
            std::vector<ad::KeySpan> spans;
            for (size_t r = 0; r < rows; ++r) {
                size_t len = 0;
                while (len < m && ids[r * m + len] != kPadLocation) ++len;
                len = std::max<size_t>(len, 1);
                for (size_t i = 0; i < m; ++i) spans.push_back({r * m, r * m + std::min(i + 1, len)});
            }
            mask = ad::AttentionMask(std::move(spans));
        }
        ad::Tensor f = e_input;
        for (int l = 0; l < cfg_.layers; ++l) f = block("enc." + std::to_string(l), f, mask);
        return f;
    }

    /// Decoder for one sequence: row i of T attends to F rows 0..i.
    ad::Tensor decode_target_aware(const ad::Tensor& f, const ad::Tensor& t) const {
        if (f.rows() != t.rows() || f.cols() != t.cols()) {
            throw std::domain_error("decode_target_aware: F and T shapes differ");
        }
        if (!cfg_.use_target_decoder) return f;
        return ad::attention(t, ad::matmul(f, params_.get("dec.w")), f, ad::AttentionMask::causal(f.rows()));
    }

    /// Decoder with explicit key spans into F, one per candidate row.
    ad::Tensor decode_spans(const ad::Tensor& f, const ad::Tensor& t, std::vector<ad::KeySpan> spans) const {
        if (f.cols() != t.cols() || spans.size() != t.rows()) throw std::domain_error("decode: shape mismatch");
        if (!cfg_.use_target_decoder) {
            std::vector<long> last(spans.size());
            for (size_t i = 0; i < spans.size(); ++i) last[i] = static_cast<long>(spans[i].end - 1);
            return ad::gather_rows(f, std::move(last));
        }
        return ad::attention(t, ad::matmul(f, params_.get("dec.w")), f, ad::AttentionMask(std::move(spans)));
    }

    /// Scores for every supervised step: steps x (1 + neg_count), positive first.
    ad::Tensor step_scores(const SequenceBatch& b) const {
        check_batch(b);
        const auto steps = b.supervised_positions();
        const size_t k = b.neg_count, m = b.length;
        std::vector<LocationId> ids(b.inputs);
        std::vector<ad::KeySpan> spans;
        for (size_t s = 0; s < steps.size(); ++s) {
            const size_t p = steps[s];
            ids.push_back(b.targets[p]);
            for (size_t l = 0; l < k; ++l) ids.push_back(b.negatives[s * k + l].location);
            const ad::KeySpan span{p - p % m, p + 1};
            spans.insert(spans.end(), 1 + k, span);
        }
        const ad::Tensor all = embed_ids(ids);
        std::vector<long> pos(b.inputs.size());
        std::vector<long> input_rows(b.inputs.size()), cand_rows(ids.size() - b.inputs.size());
        for (size_t i = 0; i < pos.size(); ++i) {
            pos[i] = static_cast<long>(i % m);
            input_rows[i] = static_cast<long>(i);
        }
        for (size_t i = 0; i < cand_rows.size(); ++i) cand_rows[i] = static_cast<long>(b.inputs.size() + i);
        const ad::Tensor e = ad::add(ad::gather_rows(all, input_rows), ad::gather_rows(params_.get("pos"), pos));
        const ad::Tensor f = encode(e, b.inputs);
        std::vector<long> cand_pos(cand_rows.size());
        for (size_t i = 0; i < cand_pos.size(); ++i) cand_pos[i] = static_cast<long>(spans[i].end - 1 - spans[i].begin);
        const ad::Tensor t = ad::gather_rows(all, cand_rows);
        const ad::Tensor tq = ad::add(t, ad::gather_rows(params_.get("pos"), cand_pos));
        const ad::Tensor a = decode_spans(f, tq, std::move(spans));
        return ad::reshape(ad::rowwise_dot(a, tq), steps.size(), 1 + k);
    }

    /// ln Q~ of each negative, laid out like step_scores' negative columns.
    static std::vector<double> log_proposals(const SequenceBatch& b) {
        std::vector<double> out;
        out.reserve(b.negatives.size());
        for (const auto& n : b.negatives) out.push_back(n.log_q);
        return out;
    }

    /// Mean loss over supervised steps.
    ad::Tensor loss(const SequenceBatch& b) const {
        const ad::Tensor scores = step_scores(b);
        LossOptions opt;
        opt.temperature = cfg_.temperature;
        opt.weighted = cfg_.weighted_loss;
        opt.propagate_through_weights = cfg_.propagate_weight_grad;
        const auto logq = log_proposals(b);
        return ad::scale(weighted_bce_loss(scores, logq, opt), 1.0 / static_cast<double>(scores.rows()));
    }

    /// Scores of each candidate list given each history (most recent max-len
    /// check-ins are used). Every candidate attends over its full history.
    std::vector<std::vector<double>> score_candidates(std::span<const std::vector<LocationId>> histories,
                                                      std::span<const std::vector<LocationId>> candidates) const {
        if (histories.size() != candidates.size()) throw std::domain_error("score_candidates: size mismatch");
        if (histories.empty()) return {};
        ad::NoGradGuard no_grad;
        const size_t m = static_cast<size_t>(cfg_.max_len);
        std::vector<LocationId> ids(histories.size() * m, kPadLocation);
        std::vector<ad::KeySpan> spans;
        for (size_t r = 0; r < histories.size(); ++r) {
            const auto& h = histories[r];
            if (h.empty()) throw std::domain_error("score_candidates: empty history");
            const size_t take = std::min(h.size(), m);
            std::copy(h.end() - static_cast<long>(take), h.end(), ids.begin() + static_cast<long>(r * m));
            spans.insert(spans.end(), candidates[r].size(), ad::KeySpan{r * m, r * m + take});
        }
        const size_t n_inputs = ids.size();
        for (const auto& c : candidates) ids.insert(ids.end(), c.begin(), c.end());
        for (size_t i = n_inputs; i < ids.size(); ++i) check_id(ids[i]);
        const ad::Tensor all = embed_ids(ids);
        std::vector<long> pos(n_inputs), input_rows(n_inputs), cand_rows(ids.size() - n_inputs);
        for (size_t i = 0; i < n_inputs; ++i) {
            pos[i] = static_cast<long>(i % m);
            input_rows[i] = static_cast<long>(i);
        }
        for (size_t i = 0; i < cand_rows.size(); ++i) cand_rows[i] = static_cast<long>(n_inputs + i);
        const ad::Tensor e = ad::add(ad::gather_rows(all, input_rows), ad::gather_rows(params_.get("pos"), pos));
        const ad::Tensor f = encode(e, ids);
        std::vector<long> cand_pos(cand_rows.size());
        for (size_t i = 0; i < cand_pos.size(); ++i) cand_pos[i] = static_cast<long>(spans[i].end - 1 - spans[i].begin);
        const ad::Tensor t =
            ad::add(ad::gather_rows(all, cand_rows), ad::gather_rows(params_.get("pos"), cand_pos));
        const ad::Tensor scores = ad::rowwise_dot(decode_spans(f, t, std::move(spans)), t);
        const auto y = scores.values();
        std::vector<std::vector<double>> out;
        size_t at = 0;
        for (const auto& c : candidates) {
            out.emplace_back(y.begin() + static_cast<long>(at), y.begin() + static_cast<long>(at + c.size()));
            at += c.size();
        }
        return out;
    }

    /// Scores aligned with `candidates`.
    std::vector<double> rank_candidates(const std::vector<LocationId>& history,
                                        const std::vector<LocationId>& candidates) const {
        return score_candidates(std::span(&history, 1), std::span(&candidates, 1)).front();
    }

   private:
    void check_id(LocationId id) const {
        if (id < 1 || static_cast<size_t>(id) > coords_.size()) {
            throw std::domain_error("unknown location id " + std::to_string(id));
        }
    }

    void check_batch(const SequenceBatch& b) const {
        if (b.length != static_cast<size_t>(cfg_.max_len)) throw std::domain_error("batch length differs from max-len");
        if (b.inputs.size() != b.rows * b.length || b.targets.size() != b.inputs.size()) {
            throw std::domain_error("batch arrays do not match rows x length");
        }
        const size_t steps = b.supervised_positions().size();
        if (steps == 0) throw std::domain_error("batch has no supervised step");
        if (b.neg_count == 0 || b.negatives.size() != steps * b.neg_count) {
            throw std::domain_error("batch negatives do not match supervised steps");
        }
    }

    ad::Tensor geo_stack(const std::vector<long>& token_rows, size_t groups) const {
        const size_t s = token_rows.size() / groups;
        ad::Tensor x = ad::gather_rows(params_.get("geo.tokens"), token_rows);
        if (cfg_.geo_positions) {
            std::vector<long> pos(token_rows.size());
            for (size_t i = 0; i < pos.size(); ++i) pos[i] = static_cast<long>(i % s);
            x = ad::add(x, ad::gather_rows(params_.get("geo.positions"), pos));
        }
        const auto mask = ad::AttentionMask::block_diagonal(groups, s, false);
        for (int l = 0; l < cfg_.layers; ++l) x = block("geo." + std::to_string(l), x, mask);
        return ad::segment_mean(x, s);
    }

    // S = F + LN(SA(F)); F' = S + LN(FFN(S))
    ad::Tensor block(const std::string& p, const ad::Tensor& f, const ad::AttentionMask& mask) const {
        const auto& P = params_;
        const ad::Tensor sa =
            ad::attention(ad::matmul(f, P.get(p + ".wq")), ad::matmul(f, P.get(p + ".wk")),
                          ad::matmul(f, P.get(p + ".wv")), mask);
        const ad::Tensor s = ad::add(f, ad::layer_norm(sa, P.get(p + ".ln1.g"), P.get(p + ".ln1.b")));
        const ad::Tensor h =
            ad::ffn(s, P.get(p + ".ffn.w1"), P.get(p + ".ffn.b1"), P.get(p + ".ffn.w2"), P.get(p + ".ffn.b2"));
        return ad::add(s, ad::layer_norm(h, P.get(p + ".ln2.g"), P.get(p + ".ln2.b")));
    }

    void add_normal(const std::string& name, size_t rows, size_t cols, double stddev, std::mt19937_64& rng) {
        std::normal_distribution<double> dist(0.0, stddev);
        std::vector<double> v(rows * cols);
        for (auto& x : v) x = dist(rng);
        params_.add(name, ad::Tensor::from_values(rows, cols, std::move(v), true));
    }

    void add_constant(const std::string& name, size_t rows, size_t cols, double value) {
        params_.add(name, ad::Tensor::from_values(rows, cols, std::vector<double>(rows * cols, value), true));
    }

    void add_block(const std::string& p, size_t x, size_t h, std::mt19937_64& rng) {
        const double sx = 1.0 / std::sqrt(static_cast<double>(x));
        const double sh = 1.0 / std::sqrt(static_cast<double>(h));
        add_normal(p + ".wq", x, x, sx, rng);
        add_normal(p + ".wk", x, x, sx, rng);
        add_normal(p + ".wv", x, x, sx, rng);
        add_constant(p + ".ln1.g", 1, x, 1.0);
        add_constant(p + ".ln1.b", 1, x, 0.0);
        add_normal(p + ".ffn.w1", x, h, sx, rng);
        add_constant(p + ".ffn.b1", 1, h, 0.0);
        add_normal(p + ".ffn.w2", h, x, sh, rng);
        add_constant(p + ".ffn.b2", 1, x, 0.0);
        add_constant(p + ".ln2.g", 1, x, 1.0);
        add_constant(p + ".ln2.b", 1, x, 0.0);
    }

    void init_params(std::uint64_t seed) {
        std::mt19937_64 rng(seed);
        const size_t d = static_cast<size_t>(cfg_.d), w = width(), h = static_cast<size_t>(cfg_.d_hidden);
        const double sd = 1.0 / std::sqrt(static_cast<double>(d));
        const double sw = 1.0 / std::sqrt(static_cast<double>(w));
        add_normal("loc.embedding", coords_.size(), d, sd, rng);
        if (cfg_.use_geo_encoder) {
            add_normal("geo.tokens", features_.vocabulary.size() + 1, d, sd, rng);
            if (cfg_.geo_positions) add_normal("geo.positions", features_.tokens_per_location, d, sd, rng);
            for (int l = 0; l < cfg_.layers; ++l) add_block("geo." + std::to_string(l), d, h, rng);
        }
        if (cfg_.use_grid_mapper) {
            const size_t g = static_cast<size_t>(cfg_.grid_intervals);
            add_normal("grid.row", g, d, sd, rng);
            add_normal("grid.col", g, d, sd, rng);
        }
        add_normal("pos", static_cast<size_t>(cfg_.max_len), w, sw, rng);
        for (int l = 0; l < cfg_.layers; ++l) add_block("enc." + std::to_string(l), w, h, rng);
        if (cfg_.use_target_decoder) add_normal("dec.w", w, w, sw, rng);
    }

    ModelConfig cfg_;
    std::vector<GeoCoordinate> coords_;
    RegionBounds bounds_;
    LocationFeatures features_;
    ad::ParamSet params_;
};

/// Dot product matching function.
inline double score(std::span<const double> a, std::span<const double> t) {
    if (a.size() != t.size()) throw std::domain_error("score: widths differ");
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * t[i];
    return s;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'S', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::domain_error {
   public:
    using std::domain_error::domain_error;
};

namespace detail {

inline void write_string(std::ostream& out, const std::string& s) {
    write_le<std::uint64_t>(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
    const auto n = read_le<std::uint64_t>(in);
    if (n > (1u << 26)) throw CheckpointError("checkpoint: implausible string length");
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw InputError("unexpected end of binary file");
    return s;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const Model& model, std::uint64_t dataset_hash) {
    using detail::write_le;
    out.write(kCheckpointMagic, sizeof kCheckpointMagic);
    write_le<std::uint32_t>(out, kCheckpointVersion);
    detail::write_string(out, serialize_config(model.config()));
    const auto& b = model.bounds();
    for (double v : {b.lat_min, b.lat_max, b.lon_min, b.lon_max}) write_le<double>(out, v);
    write_le<std::uint64_t>(out, dataset_hash);
    write_le<std::uint64_t>(out, model.location_count());
    const auto& vocab = model.features().vocabulary;
    write_le<std::uint64_t>(out, vocab.size());
    for (auto t : vocab) write_le<std::uint64_t>(out, t);
    write_le<std::uint64_t>(out, model.params().size());
    for (const auto& [name, t] : model.params()) {
        detail::write_string(out, name);
        write_le<std::uint64_t>(out, t.rows());
        write_le<std::uint64_t>(out, t.cols());
        for (double v : t.values()) write_le<double>(out, v);
    }
}

inline void save_checkpoint(const std::string& path, const Model& model, std::uint64_t dataset_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write checkpoint: " + path);
    save_checkpoint(out, model, dataset_hash);
}

struct CheckpointHeader {
    ModelConfig config;
    RegionBounds bounds;
    std::uint64_t dataset_hash = 0;
    std::uint64_t location_count = 0;
};

/// Restores a model over `coords`. Throws CheckpointError when the file is
/// not a checkpoint, when it was trained on another dataset, or when
/// `expected` is given and differs from the stored config.
inline Model load_checkpoint(std::istream& in, std::span<const GeoCoordinate> coords, std::uint64_t dataset_hash,
                             const ModelConfig* expected = nullptr, CheckpointHeader* header = nullptr) {
    using detail::read_le;
    char magic[sizeof kCheckpointMagic];
    in.read(magic, sizeof magic);
    if (!in || !std::equal(magic, magic + sizeof magic, kCheckpointMagic)) {
        throw CheckpointError("checkpoint: bad magic");
    }
    if (read_le<std::uint32_t>(in) != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version");
    CheckpointHeader h;
    h.config = parse_model_config(detail::read_string(in));
    h.bounds.lat_min = read_le<double>(in);
    h.bounds.lat_max = read_le<double>(in);
    h.bounds.lon_min = read_le<double>(in);
    h.bounds.lon_max = read_le<double>(in);
    h.dataset_hash = read_le<std::uint64_t>(in);
    h.location_count = read_le<std::uint64_t>(in);
    if (expected && !(*expected == h.config)) throw CheckpointError("checkpoint: config mismatch");
    if (h.dataset_hash != dataset_hash || h.location_count != coords.size()) {
        throw CheckpointError("checkpoint: dataset mismatch");
    }
    std::vector<std::uint64_t> vocab(read_le<std::uint64_t>(in));
    for (auto& t : vocab) t = read_le<std::uint64_t>(in);
    Model model(h.config, std::vector<GeoCoordinate>(coords.begin(), coords.end()), h.bounds, std::move(vocab), 0);
    const auto count = read_le<std::uint64_t>(in);
    if (count != model.params().size()) throw CheckpointError("checkpoint: parameter count mismatch");
    for (auto& [name, t] : model.params()) {
        if (detail::read_string(in) != name) throw CheckpointError("checkpoint: parameter name mismatch");
        const auto rows = read_le<std::uint64_t>(in), cols = read_le<std::uint64_t>(in);
        if (rows != t.rows() || cols != t.cols()) throw CheckpointError("checkpoint: shape mismatch for " + name);
        for (auto& v : t.mutable_values()) v = read_le<double>(in);
    }
    if (header) *header = h;
    return model;
}

inline Model load_checkpoint(const std::string& path, std::span<const GeoCoordinate> coords,
                             std::uint64_t dataset_hash, const ModelConfig* expected = nullptr,
                             CheckpointHeader* header = nullptr) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read checkpoint: " + path);
    return load_checkpoint(in, coords, dataset_hash, expected, header);
}

}  // namespace pasr
