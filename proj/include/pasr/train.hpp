#pragma once

// Mini-batch training with Adam and fresh negatives every epoch.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pasr/autodiff.hpp"
#include "pasr/config.hpp"
#include "pasr/dataset.hpp"
#include "pasr/model.hpp"
#include "pasr/sampling.hpp"
#include "pasr/sequences.hpp"

namespace pasr {

class TrainingDiverged : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct EpochStats {
    int epoch = 0;
    double mean_loss = 0.0;
    double wall_seconds = 0.0;
};

struct TrainOptions {
    int epochs = 20;
    size_t batch_size = 128;
    std::uint64_t seed = 42;
    ad::AdamOptions adam;
    std::ostream* log = nullptr;  // one "epoch<TAB>mean_loss<TAB>wall_seconds" line per epoch
};

inline void write_epoch_line(std::ostream& os, const EpochStats& s) {
    os << s.epoch << '\t' << std::setprecision(17) << s.mean_loss << '\t' << std::setprecision(6) << s.wall_seconds
       << '\n';
}

/// Loss per epoch is the mean over all supervised steps of that epoch.
inline std::vector<EpochStats> train_model(Model& model, const std::vector<TrainingChunk>& chunks,
                                           const NegativeSampler& sampler, const TrainOptions& opt) {
    if (opt.epochs < 0) throw std::domain_error("epochs must be >= 0");
    if (opt.batch_size == 0) throw std::domain_error("batch size must be >= 1");
    if (opt.epochs > 0 && chunks.empty()) throw std::domain_error("no training sequences");
    const auto& cfg = model.config();
    const size_t m = static_cast<size_t>(cfg.max_len);
    std::seed_seq seq{static_cast<std::uint32_t>(opt.seed), static_cast<std::uint32_t>(opt.seed >> 32), 0x7261696eu};
    std::mt19937_64 rng(seq);
    ad::Adam adam(opt.adam);
    std::vector<size_t> order(chunks.size());
    std::iota(order.begin(), order.end(), size_t{0});
    std::vector<EpochStats> history;
    for (int epoch = 1; epoch <= opt.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0.0;
        size_t steps = 0;
        for (size_t at = 0; at < order.size(); at += opt.batch_size) {
            std::vector<const TrainingChunk*> rows;
            for (size_t i = at; i < std::min(order.size(), at + opt.batch_size); ++i) rows.push_back(&chunks[order[i]]);
            const SequenceBatch b =
                make_batch(rows, m, static_cast<size_t>(cfg.neg_count), sampler, cfg.knn_anchor, rng);
            const size_t n_steps = b.supervised_positions().size();
            model.params().zero_grad();
            try {
                const ad::Tensor loss = model.loss(b);
                if (!std::isfinite(loss.item())) throw ad::NonFiniteError("loss");
                ad::backward(loss);
                total += loss.item() * static_cast<double>(n_steps);
            } catch (const ad::NonFiniteError& e) {
                throw TrainingDiverged("training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(at / opt.batch_size + 1) + ": non-finite value in " + e.what());
            }
            steps += n_steps;
            adam.step(model.params());
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        history.push_back({epoch, total / static_cast<double>(std::max<size_t>(steps, 1)), secs});
        if (opt.log) {
            write_epoch_line(*opt.log, history.back());
            opt.log->flush();
        }
    }
    return history;
}

/// Everything derived from a filtered dataset that training and evaluation share.
struct Experiment {
    CheckInDataset dataset;
    std::vector<GeoCoordinate> coords;
    EvalSplit split;
    std::vector<TrainingChunk> chunks;
    std::optional<KnnIndex> knn;
    PopularityTable popularity;
    std::vector<std::string> warnings;
};

/// Pass a prebuilt index to skip the kNN build (e.g. one loaded from disk).
inline Experiment prepare_experiment(CheckInDataset filtered, const RunConfig& cfg,
                                     std::optional<KnnIndex> knn = std::nullopt) {
    Experiment ex;
    ex.dataset = std::move(filtered);
    ex.coords = ex.dataset.locations.coordinates();
    const size_t m = static_cast<size_t>(cfg.model.max_len);
    ex.split = build_eval_split(ex.dataset, m, static_cast<size_t>(cfg.eval_negatives), cfg.seed, &ex.warnings);
    ex.chunks = training_chunks(ex.split, m);
    ex.popularity = PopularityTable(prefix_visit_counts(ex.split, ex.coords.size()));
    if (cfg.model.sampler != SamplerKind::uniform) {
        if (knn && knn->k() == static_cast<size_t>(cfg.model.knn) && knn->location_count() == ex.coords.size()) {
            ex.knn = std::move(knn);
        } else {
            ex.knn = build_knn_index(ex.coords, static_cast<size_t>(cfg.model.knn));
        }
    }
    return ex;
}

inline NegativeSampler make_sampler(const Experiment& ex, const ModelConfig& cfg) {
    return NegativeSampler(cfg.sampler, ex.coords.size(), ex.knn ? &*ex.knn : nullptr, &ex.popularity);
}

inline TrainOptions train_options(const RunConfig& cfg, std::ostream* log = nullptr) {
    TrainOptions opt;
    opt.epochs = cfg.epochs;
    if (cfg.batch_size < 1) throw std::domain_error("batch size must be >= 1");
    opt.batch_size = static_cast<size_t>(cfg.batch_size);
    opt.seed = cfg.seed;
    opt.adam.lr = cfg.lr;
    opt.adam.weight_decay = cfg.weight_decay;
    opt.log = log;
    return opt;
}

struct TrainedRun {
    Model model;
    std::vector<EpochStats> epochs;
};

inline TrainedRun train(const RunConfig& cfg, const Experiment& ex, std::ostream* log = nullptr) {
    Model model(cfg.model, ex.coords, cfg.seed);
    const auto sampler = make_sampler(ex, cfg.model);
    auto epochs = train_model(model, ex.chunks, sampler, train_options(cfg, log));
    return {std::move(model), std::move(epochs)};
}

}  // namespace pasr
