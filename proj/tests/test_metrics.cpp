#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <sstream>
#include <vector>

#include "pasr/metrics.hpp"
#include "pasr/synthetic.hpp"

using namespace pasr;

namespace {

std::vector<RankOutcome> ranks(std::initializer_list<int> r) {
    std::vector<RankOutcome> out;
    size_t u = 0;
    for (int x : r) out.push_back({u++, x});
    return out;
}

}  // namespace

TEST(HitRate, Examples) {
    EXPECT_EQ(hit_rate_at_k(ranks({1, 1, 1}), 5), 1.0);
    EXPECT_EQ(hit_rate_at_k(ranks({7}), 5), 0.0);
    EXPECT_DOUBLE_EQ(hit_rate_at_k(ranks({1, 3, 8}), 5), 2.0 / 3);
    EXPECT_THROW(hit_rate_at_k(ranks({}), 5), std::domain_error);
    EXPECT_THROW(hit_rate_at_k(ranks({1}), 0), std::domain_error);
}

TEST(Ndcg, Examples) {
    EXPECT_EQ(ndcg_at_k(ranks({1}), 5), 1.0);
    EXPECT_DOUBLE_EQ(ndcg_at_k(ranks({3}), 3), 0.5);
    EXPECT_DOUBLE_EQ(ndcg_at_k(ranks({1, 3}), 5), 0.75);
    EXPECT_EQ(ndcg_at_k(ranks({6}), 5), 0.0);
    EXPECT_THROW(ndcg_at_k(ranks({}), 1), std::domain_error);
}

TEST(Metrics, MonotoneInKAndNdcgBelowHr) {
    std::mt19937_64 rng(1);
    std::uniform_int_distribution<int> r(1, 101);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<RankOutcome> o;
        for (size_t u = 0; u < 30; ++u) o.push_back({u, r(rng)});
        for (int k = 1; k < 101; ++k) {
            ASSERT_LE(hit_rate_at_k(o, k), hit_rate_at_k(o, k + 1));
            ASSERT_LE(ndcg_at_k(o, k), ndcg_at_k(o, k + 1));
            ASSERT_LE(ndcg_at_k(o, k), hit_rate_at_k(o, k));
        }
    }
}

TEST(RankOf, TiesAndDuplicates) {
    const std::vector<LocationId> c{5, 2, 9, 5};
    EXPECT_EQ(rank_of(c, std::vector<double>{1.0, 2.0, 0.5, 1.0}, 0), 2);
    EXPECT_EQ(rank_of(c, std::vector<double>{1.0, 1.0, 0.5, 1.0}, 0), 2);  // tie with id 2 goes to id 2
    EXPECT_EQ(rank_of(c, std::vector<double>{1.0, 0.0, 1.0, 1.0}, 0), 1);  // tie with id 9 goes to 5
    EXPECT_EQ(rank_of(std::vector<LocationId>{4}, std::vector<double>{0.0}, 0), 1);
}

TEST(RankOf, PermutingNegativesKeepsRank) {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0, 1);
    std::vector<LocationId> c(101);
    std::vector<double> s(101);
    for (size_t i = 0; i < 101; ++i) {
        c[i] = static_cast<LocationId>(i + 1);
        s[i] = n(rng);
    }
    const int r0 = rank_of(c, s, 0);
    std::vector<size_t> order(100);
    std::iota(order.begin(), order.end(), size_t{1});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<LocationId> c2{c[0]};
    std::vector<double> s2{s[0]};
    for (size_t i : order) {
        c2.push_back(c[i]);
        s2.push_back(s[i]);
    }
    EXPECT_EQ(rank_of(c2, s2, 0), r0);
}

TEST(Metrics, RandomScoresGiveChanceLevel) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<RankOutcome> o;
    std::vector<LocationId> c(101);
    std::iota(c.begin(), c.end(), 1);
    for (size_t user = 0; user < 2000; ++user) {
        std::vector<double> s(101);
        for (auto& x : s) x = u(rng);
        o.push_back({user, rank_of(c, s, 0)});
    }
    EXPECT_NEAR(hit_rate_at_k(o, 5), 5.0 / 101, 0.03);
}

TEST(Metrics, PerfectScorerGivesOnes) {
    std::vector<RankOutcome> o;
    std::vector<LocationId> c(101);
    std::iota(c.begin(), c.end(), 1);
    std::vector<double> s(101, 0.0);
    s[0] = 1.0;
    for (size_t u = 0; u < 10; ++u) o.push_back({u, rank_of(c, s, 0)});
    const auto t = summarize_outcomes(o);
    EXPECT_EQ(t.hr5, 1.0);
    EXPECT_EQ(t.ndcg5, 1.0);
    EXPECT_EQ(t.hr10, 1.0);
    EXPECT_EQ(t.ndcg10, 1.0);
}

TEST(Evaluate, RanksMatchExhaustiveRescoring) {
    SyntheticSpec spec;
    spec.users = 12;
    spec.locations = 40;
    spec.clusters = 4;
    spec.checkins_per_user = 15;
    const auto ds = generate_synthetic(spec, 4);
    ModelConfig cfg;
    cfg.d = 4;
    cfg.d_hidden = 8;
    cfg.max_len = 10;
    cfg.grid_intervals = 8;
    const Model m(cfg, ds.locations.coordinates(), 5);
    const auto split = build_eval_split(ds, 10, 20, 6);
    const auto got = rank_outcomes(m, split.test, 5);
    ASSERT_EQ(got.size(), split.test.size());
    for (size_t i = 0; i < split.test.size(); ++i) {
        const auto& tc = split.test[i];
        std::vector<std::pair<double, LocationId>> scored;
        for (auto l : tc.candidates) scored.emplace_back(m.rank_candidates(tc.history, {l})[0], l);
        int rank = 1;
        for (const auto& [s, l] : scored)
            if (l != tc.target && (s > scored[0].first + 1e-12 || (std::abs(s - scored[0].first) <= 1e-12 && l < tc.target)))
                ++rank;
        EXPECT_EQ(got[i].rank, rank) << "user " << tc.user;
        EXPECT_EQ(got[i].user, tc.user);
    }
    const auto table = evaluate(m, split.test);
    EXPECT_EQ(table.users, split.test.size());
    EXPECT_EQ(table.hr5, hit_rate_at_k(got, 5));

    auto bad = split.test;
    bad[0].candidates.push_back(41);
    EXPECT_THROW(evaluate(m, bad), std::domain_error);
}

TEST(Report, Formats) {
    const MetricTable t{0.5, 0.25, 0.75, 0.375, 4};
    std::ostringstream tsv, kv;
    write_metrics_tsv(tsv, {{"PASR", t}});
    EXPECT_EQ(tsv.str(), "model\tHR@5\tNDCG@5\tHR@10\tNDCG@10\tusers\nPASR\t0.5000\t0.2500\t0.7500\t0.3750\t4\n");
    write_metrics_kv(kv, t);
    EXPECT_EQ(kv.str(), "hr@5=0.5\nndcg@5=0.25\nhr@10=0.75\nndcg@10=0.375\nusers=4\n");
}
