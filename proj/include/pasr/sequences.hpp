#pragma once

// Turning check-in histories into training chunks and the leave-one-out
// evaluation split.

#include <algorithm>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "pasr/dataset.hpp"
#include "pasr/model.hpp"

namespace pasr {

/// Splits `ids` from the right into non-overlapping chunks of at most m,
/// returned oldest first. Concatenating the chunks gives back `ids`.
inline std::vector<std::vector<LocationId>> chunk_right_to_left(std::span<const LocationId> ids, size_t m) {
    if (m == 0) throw std::domain_error("chunk length must be positive");
    std::vector<std::vector<LocationId>> out;
    size_t end = ids.size();
    while (end > 0) {
        const size_t begin = end > m ? end - m : 0;
        out.emplace_back(ids.begin() + static_cast<long>(begin), ids.begin() + static_cast<long>(end));
        end = begin;
    }
    std::reverse(out.begin(), out.end());
    return out;
}

/// One ranking case: the history precedes `target`; `candidates` holds the
/// target followed by the sampled negatives.
struct EvalCase {
    size_t user = 0;
    std::vector<LocationId> history;
    LocationId target = kPadLocation;
    std::vector<LocationId> candidates;
};

struct EvalSplit {
    std::vector<std::vector<LocationId>> train_prefixes;  // per user, empty for skipped users
    std::vector<EvalCase> test;   // held-out novel check-in
    std::vector<EvalCase> train;  // last check-in of each training prefix
    std::vector<size_t> skipped_users;
    size_t negatives = 0;
    std::uint64_t seed = 0;
};

/// Index of the last check-in whose location does not occur earlier in the
/// sequence, or 0 when there is none after the first check-in.
inline size_t last_novel_index(std::span<const LocationId> ids) {
    std::unordered_set<LocationId> seen;
    size_t last = 0;
    for (size_t i = 0; i < ids.size(); ++i) {
        if (seen.insert(ids[i]).second && i > 0) last = i;
    }
    return last;
}

/// `count` distinct ids from 1..n excluding `target`, fewer when n is small.
inline std::vector<LocationId> sample_eval_negatives(size_t n, LocationId target, size_t count,
                                                     std::mt19937_64& rng) {
    const size_t pool = n - 1;
    count = std::min(count, pool);
    std::vector<LocationId> out;
    std::unordered_set<LocationId> used;
    if (count * 2 > pool) {
        std::vector<LocationId> all;
        for (LocationId id = 1; static_cast<size_t>(id) <= n; ++id)
            if (id != target) all.push_back(id);
        std::shuffle(all.begin(), all.end(), rng);
        all.resize(count);
        return all;
    }
    std::uniform_int_distribution<LocationId> dist(1, static_cast<LocationId>(n));
    while (out.size() < count) {
        const LocationId l = dist(rng);
        if (l != target && used.insert(l).second) out.push_back(l);
    }
    return out;
}

inline std::mt19937_64 user_rng(std::uint64_t seed, size_t user, std::uint64_t stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(user), static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

inline std::vector<LocationId> most_recent(std::span<const LocationId> ids, size_t m) {
    const size_t take = std::min(ids.size(), m);
    return {ids.end() - static_cast<long>(take), ids.end()};
}

/// Leave-one-out split: each user's last check-in at a location not visited
/// before becomes the test target; the check-ins before it form the training
/// prefix. Users without such a check-in are skipped.
inline EvalSplit build_eval_split(const CheckInDataset& ds, size_t m, size_t negatives, std::uint64_t seed,
                                  std::vector<std::string>* warnings = nullptr) {
    EvalSplit split;
    split.negatives = negatives;
    split.seed = seed;
    const size_t n = ds.locations.size();
    if (n < 2) throw std::domain_error("evaluation needs at least 2 locations");
    for (size_t u = 0; u < ds.users.size(); ++u) {
        std::vector<LocationId> ids;
        for (const auto& c : ds.users[u].checkins) ids.push_back(c.location);
        const size_t t = ids.size() < 2 ? 0 : last_novel_index(ids);
        if (t == 0) {
            split.train_prefixes.emplace_back();
            split.skipped_users.push_back(u);
            if (warnings) warnings->push_back("user " + ds.users[u].key + ": no novel check-in to hold out, skipped");
            continue;
        }
        std::vector<LocationId> prefix(ids.begin(), ids.begin() + static_cast<long>(t));

        auto rng = user_rng(seed, u, 1);
        EvalCase test{u, most_recent(prefix, m), ids[t], {ids[t]}};
        for (auto l : sample_eval_negatives(n, ids[t], negatives, rng)) test.candidates.push_back(l);
        split.test.push_back(std::move(test));

        if (prefix.size() >= 2) {
            auto rng2 = user_rng(seed, u, 2);
            const std::span<const LocationId> before(prefix.data(), prefix.size() - 1);
            EvalCase tr{u, most_recent(before, m), prefix.back(), {prefix.back()}};
            for (auto l : sample_eval_negatives(n, prefix.back(), negatives, rng2)) tr.candidates.push_back(l);
            split.train.push_back(std::move(tr));
        }
        split.train_prefixes.push_back(std::move(prefix));
    }
    return split;
}

/// True when no test target occurs in its user's training prefix.
inline bool split_is_leak_free(const EvalSplit& split) {
    for (const auto& c : split.test) {
        const auto& p = split.train_prefixes.at(c.user);
        if (std::find(p.begin(), p.end(), c.target) != p.end()) return false;
    }
    return true;
}

/// A training row: up to m inputs plus the check-in that follows the last
/// one (the first check-in of the next chunk, or kPadLocation at the end).
struct TrainingChunk {
    std::vector<LocationId> ids;
    LocationId next = kPadLocation;
};

/// Training chunks from every prefix. Chunks without a supervised step are dropped.
inline std::vector<TrainingChunk> training_chunks(const EvalSplit& split, size_t m) {
    std::vector<TrainingChunk> out;
    for (const auto& p : split.train_prefixes) {
        auto chunks = chunk_right_to_left(p, m);
        for (size_t c = 0; c < chunks.size(); ++c) {
            TrainingChunk tc{std::move(chunks[c]), kPadLocation};
            if (c + 1 < chunks.size()) tc.next = chunks[c + 1].front();
            if (tc.ids.size() + (tc.next != kPadLocation ? 1 : 0) >= 2) out.push_back(std::move(tc));
        }
    }
    return out;
}

/// Location visit counts over the training prefixes (index 0 unused).
inline std::vector<size_t> prefix_visit_counts(const EvalSplit& split, size_t location_count) {
    std::vector<size_t> counts(location_count + 1, 0);
    for (const auto& p : split.train_prefixes)
        for (auto l : p) ++counts.at(static_cast<size_t>(l));
    return counts;
}

/// Pads chunks into a batch and draws negatives for every supervised step.
/// The kNN anchor is the step's target or its input per `anchor`.
inline SequenceBatch make_batch(std::span<const TrainingChunk* const> chunks, size_t m, size_t neg_count,
                                const NegativeSampler& sampler, KnnAnchor anchor, std::mt19937_64& rng) {
    SequenceBatch b;
    b.rows = chunks.size();
    b.length = m;
    b.neg_count = neg_count;
    b.inputs.assign(b.rows * m, kPadLocation);
    b.targets.assign(b.rows * m, kPadLocation);
    for (size_t r = 0; r < b.rows; ++r) {
        const auto& c = chunks[r]->ids;
        if (c.size() > m) throw std::domain_error("chunk longer than max-len");
        for (size_t i = 0; i < c.size(); ++i) {
            b.inputs[r * m + i] = c[i];
            b.targets[r * m + i] = i + 1 < c.size() ? c[i + 1] : chunks[r]->next;
        }
    }
    for (size_t p = 0; p < b.targets.size(); ++p) {
        if (b.targets[p] == kPadLocation) continue;
        const LocationId a = anchor == KnnAnchor::target ? b.targets[p] : b.inputs[p];
        auto draws = sampler.sample_around(a, b.targets[p], neg_count, rng);
        b.negatives.insert(b.negatives.end(), draws.begin(), draws.end());
    }
    return b;
}

}  // namespace pasr
