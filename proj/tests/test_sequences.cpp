#include <gtest/gtest.h>

#include <numeric>
#include <random>
#include <set>
#include <vector>

#include "pasr/sequences.hpp"
#include "pasr/synthetic.hpp"

using namespace pasr;

namespace {

std::vector<LocationId> iota_ids(size_t n) {
    std::vector<LocationId> v(n);
    std::iota(v.begin(), v.end(), 1);
    return v;
}

CheckInDataset dataset_from(const std::vector<std::vector<LocationId>>& users, size_t locations) {
    CheckInDataset ds;
    for (size_t i = 0; i < locations; ++i)
        ds.locations.add({"L" + std::to_string(i + 1), GeoCoordinate(40 + 0.01 * static_cast<double>(i), -74)});
    for (size_t u = 0; u < users.size(); ++u) {
        UserTrajectory t{"U" + std::to_string(u), {}};
        std::int64_t ts = 0;
        for (auto l : users[u]) t.checkins.push_back({l, ts += 60});
        ds.users.push_back(std::move(t));
    }
    return ds;
}

}  // namespace

TEST(Chunking, RightToLeft) {
    const auto ids = iota_ids(120);
    const auto chunks = chunk_right_to_left(ids, 50);
    ASSERT_EQ(chunks.size(), 3u);
    EXPECT_EQ(chunks[0].size(), 20u);
    EXPECT_EQ(chunks[1].size(), 50u);
    EXPECT_EQ(chunks[2].size(), 50u);
    EXPECT_EQ(chunks[0].front(), 1);
    EXPECT_EQ(chunks[2].back(), 120);
    EXPECT_THROW(chunk_right_to_left(ids, 0), std::domain_error);
}

TEST(Chunking, ReassemblyIsExact) {
    std::mt19937_64 rng(1);
    for (size_t n : {1u, 7u, 49u, 50u, 51u, 100u, 237u}) {
        std::vector<LocationId> ids(n);
        for (auto& x : ids) x = static_cast<LocationId>(1 + rng() % 30);
        for (size_t m : {1u, 3u, 50u}) {
            std::vector<LocationId> back;
            for (const auto& c : chunk_right_to_left(ids, m)) {
                ASSERT_LE(c.size(), m);
                ASSERT_FALSE(c.empty());
                back.insert(back.end(), c.begin(), c.end());
            }
            ASSERT_EQ(back, ids);
        }
    }
}

TEST(Batch, SevenCheckinsGiveSixSupervisedSteps) {
    const TrainingChunk c{{3, 1, 4, 1, 5, 9, 2}, kPadLocation};
    const KnnIndex idx = build_knn_index(std::vector<GeoCoordinate>{{0, 0}, {0, 1}, {0, 2}, {0, 3}, {0, 4}, {0, 5},
                                                                     {0, 6}, {0, 7}, {0, 8}, {0, 9}},
                                         4);
    const NegativeSampler s(SamplerKind::knn_uniform, 10, &idx);
    std::mt19937_64 rng(2);
    const std::vector<const TrainingChunk*> rows{&c};
    const auto b = make_batch(rows, 50, 5, s, KnnAnchor::target, rng);
    EXPECT_EQ(b.valid_length(0), 7u);
    size_t pads = 0;
    for (size_t i = 0; i < 50; ++i) pads += b.padded(0, i) ? 1 : 0;
    EXPECT_EQ(pads, 43u);
    EXPECT_EQ(b.supervised_positions(), (std::vector<size_t>{0, 1, 2, 3, 4, 5}));
    EXPECT_EQ(b.targets[0], 1);
    EXPECT_EQ(b.targets[5], 2);
    EXPECT_EQ(b.negatives.size(), 30u);
    for (size_t p = 0; p < 6; ++p) {
        const auto nb = idx.neighbors(b.targets[p]);
        for (size_t l = 0; l < 5; ++l) {
            const auto neg = b.negatives[p * 5 + l].location;
            EXPECT_NE(neg, b.targets[p]);
            EXPECT_NE(std::find(nb.begin(), nb.end(), neg), nb.end());
        }
    }
}

TEST(Batch, NextCheckinSupervisesLastStep) {
    const TrainingChunk c{{3, 1, 4}, 7};
    const NegativeSampler s(SamplerKind::uniform, 10);
    std::mt19937_64 rng(3);
    const std::vector<const TrainingChunk*> rows{&c};
    const auto b = make_batch(rows, 4, 2, s, KnnAnchor::input, rng);
    EXPECT_EQ(b.targets, (std::vector<LocationId>{1, 4, 7, 0}));
}

TEST(Batch, InputAnchorDrawsAroundInput) {
    const TrainingChunk c{{1, 10}, kPadLocation};
    std::vector<GeoCoordinate> pts;
    for (int i = 0; i < 10; ++i) pts.emplace_back(0, i);
    const auto idx = build_knn_index(pts, 2);
    const NegativeSampler s(SamplerKind::knn_uniform, 10, &idx);
    std::mt19937_64 rng(4);
    const std::vector<const TrainingChunk*> rows{&c};
    const auto b = make_batch(rows, 2, 20, s, KnnAnchor::input, rng);
    for (const auto& n : b.negatives) EXPECT_TRUE(n.location == 2 || n.location == 3);
}

TEST(Split, LastNovelCheckinIsTarget) {
    // last check-in (2) repeats; the most recent new location is 5 at index 4
    const auto ds = dataset_from({{1, 2, 3, 2, 5, 1, 2}}, 10);
    const auto split = build_eval_split(ds, 50, 100, 7);
    ASSERT_EQ(split.test.size(), 1u);
    EXPECT_EQ(split.test[0].target, 5);
    EXPECT_EQ(split.test[0].history, (std::vector<LocationId>{1, 2, 3, 2}));
    EXPECT_EQ(split.train_prefixes[0], (std::vector<LocationId>{1, 2, 3, 2}));
    EXPECT_EQ(split.train[0].target, 2);
    EXPECT_EQ(split.train[0].history, (std::vector<LocationId>{1, 2, 3}));
}

TEST(Split, UsersWithoutNovelTargetSkipped) {
    std::vector<std::string> warnings;
    const auto ds = dataset_from({{4, 4, 4}, {1}, {1, 2}}, 5);
    const auto split = build_eval_split(ds, 50, 3, 7, &warnings);
    EXPECT_EQ(split.skipped_users, (std::vector<size_t>{0, 1}));
    EXPECT_EQ(warnings.size(), 2u);
    ASSERT_EQ(split.test.size(), 1u);
    EXPECT_EQ(split.test[0].user, 2u);
    EXPECT_TRUE(split.train.empty());
}

TEST(Split, NegativesDistinctUniformAndSeeded) {
    SyntheticSpec spec;
    spec.users = 30;
    spec.locations = 300;
    const auto ds = generate_synthetic(spec, 5);
    const auto a = build_eval_split(ds, 50, 100, 11), b = build_eval_split(ds, 50, 100, 11);
    const auto c = build_eval_split(ds, 50, 100, 12);
    ASSERT_EQ(a.test.size(), 30u);
    bool differs = false;
    for (size_t i = 0; i < a.test.size(); ++i) {
        const auto& t = a.test[i];
        EXPECT_EQ(t.candidates.size(), 101u);
        EXPECT_EQ(t.candidates.front(), t.target);
        const std::set<LocationId> uniq(t.candidates.begin(), t.candidates.end());
        EXPECT_EQ(uniq.size(), 101u);
        EXPECT_EQ(t.candidates, b.test[i].candidates);
        differs |= t.candidates != c.test[i].candidates;
    }
    EXPECT_TRUE(differs);
    // Small tables cap the negative count.
    const auto tiny = build_eval_split(dataset_from({{1, 2, 3}}, 3), 50, 100, 1);
    EXPECT_EQ(tiny.test[0].candidates.size(), 3u);
}

TEST(Split, EvalNegativeFrequenciesAreUniform) {
    std::mt19937_64 rng(6);
    std::vector<int> hist(21, 0);
    for (int i = 0; i < 20000; ++i)
        for (auto l : sample_eval_negatives(20, 7, 5, rng)) ++hist[static_cast<size_t>(l)];
    EXPECT_EQ(hist[7], 0);
    for (size_t l = 1; l <= 20; ++l) {
        if (l != 7) {
            EXPECT_NEAR(hist[l] / 20000.0, 5.0 / 19, 0.015);
        }
    }
}

TEST(Split, LeakFreeAndHistoryCapped) {
    SyntheticSpec spec;
    spec.users = 40;
    spec.checkins_per_user = 130;
    const auto ds = generate_synthetic(spec, 8);
    const auto split = build_eval_split(ds, 50, 100, 3);
    EXPECT_TRUE(split_is_leak_free(split));
    for (const auto& t : split.test) {
        EXPECT_LE(t.history.size(), 50u);
        const auto& p = split.train_prefixes[t.user];
        EXPECT_TRUE(std::equal(t.history.rbegin(), t.history.rend(), p.rbegin()));
    }
    auto broken = split;
    broken.train_prefixes[broken.test[0].user].push_back(broken.test[0].target);
    EXPECT_FALSE(split_is_leak_free(broken));
}

TEST(Training, ChunksCoverPrefixTransitions) {
    const auto ds = dataset_from({iota_ids(9), {1, 2}}, 12);
    const auto split = build_eval_split(ds, 4, 2, 1);
    const auto chunks = training_chunks(split, 4);
    // user 0 prefix 1..8 → [1..4] then [5..8]; user 1 prefix [1] has no transition
    ASSERT_EQ(chunks.size(), 2u);
    EXPECT_EQ(chunks[0].ids, (std::vector<LocationId>{1, 2, 3, 4}));
    EXPECT_EQ(chunks[0].next, 5);
    EXPECT_EQ(chunks[1].ids, (std::vector<LocationId>{5, 6, 7, 8}));
    EXPECT_EQ(chunks[1].next, kPadLocation);
    size_t transitions = 0;
    for (const auto& c : chunks) transitions += c.ids.size() - 1 + (c.next != kPadLocation ? 1 : 0);
    EXPECT_EQ(transitions, 7u);
}

TEST(Training, SingletonLeadingChunkKeptWhenItHasNext) {
    const auto ds = dataset_from({iota_ids(6)}, 8);
    const auto chunks = training_chunks(build_eval_split(ds, 4, 2, 1), 4);
    ASSERT_EQ(chunks.size(), 2u);
    EXPECT_EQ(chunks[0].ids, (std::vector<LocationId>{1}));
    EXPECT_EQ(chunks[0].next, 2);
}

TEST(Training, VisitCountsUsePrefixesOnly) {
    const auto ds = dataset_from({{1, 2, 1, 3}}, 4);
    const auto split = build_eval_split(ds, 50, 2, 1);
    EXPECT_EQ(prefix_visit_counts(split, 4), (std::vector<size_t>{0, 2, 1, 0, 0}));
}
