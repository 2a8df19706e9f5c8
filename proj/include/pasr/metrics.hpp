#pragma once

// HR@k and NDCG@k for a single relevant item among ranked candidates.

#include <cmath>
#include <iomanip>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pasr/model.hpp"
#include "pasr/sequences.hpp"

namespace pasr {

struct RankOutcome {
    size_t user = 0;
    int rank = 0;  // 1-based
};

/// Rank of candidates[target_index] under descending score, ties broken by
/// ascending candidate id. Copies of the target id are not counted.
inline int rank_of(std::span<const LocationId> candidates, std::span<const double> scores, size_t target_index) {
    if (candidates.size() != scores.size() || target_index >= candidates.size()) {
        throw std::domain_error("rank_of: bad arguments");
    }
    const LocationId t = candidates[target_index];
    const double st = scores[target_index];
    int rank = 1;
    for (size_t j = 0; j < candidates.size(); ++j) {
        if (candidates[j] == t) continue;
        if (scores[j] > st || (scores[j] == st && candidates[j] < t)) ++rank;
    }
    return rank;
}

inline void check_outcomes(std::span<const RankOutcome> outcomes, int k) {
    if (outcomes.empty()) throw std::domain_error("metrics need at least one outcome");
    if (k < 1) throw std::domain_error("metrics need k >= 1");
}

inline double hit_rate_at_k(std::span<const RankOutcome> outcomes, int k) {
    check_outcomes(outcomes, k);
    double hits = 0;
    for (const auto& o : outcomes) hits += o.rank <= k ? 1.0 : 0.0;
    return hits / static_cast<double>(outcomes.size());
}

inline double ndcg_at_k(std::span<const RankOutcome> outcomes, int k) {
    check_outcomes(outcomes, k);
    double sum = 0;
    for (const auto& o : outcomes)
        if (o.rank <= k) sum += 1.0 / std::log2(static_cast<double>(o.rank) + 1.0);
    return sum / static_cast<double>(outcomes.size());
}

/// Ranks of each case's target (candidates[0]) under the model.
inline std::vector<RankOutcome> rank_outcomes(const Model& model, std::span<const EvalCase> cases,
                                              size_t batch = 64) {
    std::vector<RankOutcome> out;
    for (size_t at = 0; at < cases.size(); at += batch) {
        const size_t end = std::min(cases.size(), at + batch);
        std::vector<std::vector<LocationId>> hist, cand;
        for (size_t i = at; i < end; ++i) {
            hist.push_back(cases[i].history);
            cand.push_back(cases[i].candidates);
        }
        const auto scores = model.score_candidates(hist, cand);
        for (size_t i = at; i < end; ++i) {
            out.push_back({cases[i].user, rank_of(cases[i].candidates, scores[i - at], 0)});
        }
    }
    return out;
}

struct MetricTable {
    double hr5 = 0, ndcg5 = 0, hr10 = 0, ndcg10 = 0;
    size_t users = 0;
};

inline MetricTable summarize_outcomes(std::span<const RankOutcome> outcomes) {
    return {hit_rate_at_k(outcomes, 5), ndcg_at_k(outcomes, 5), hit_rate_at_k(outcomes, 10), ndcg_at_k(outcomes, 10),
            outcomes.size()};
}

/// Throws std::domain_error when the cases reference locations the model does not know.
inline MetricTable evaluate(const Model& model, std::span<const EvalCase> cases) {
    for (const auto& c : cases)
        for (auto l : c.candidates)
            if (l < 1 || static_cast<size_t>(l) > model.location_count()) {
                throw std::domain_error("evaluate: split does not match the model's location table");
            }
    const auto outcomes = rank_outcomes(model, cases);
    return summarize_outcomes(outcomes);
}

inline void write_metrics_tsv(std::ostream& os, const std::vector<std::pair<std::string, MetricTable>>& rows) {
    os << "model\tHR@5\tNDCG@5\tHR@10\tNDCG@10\tusers\n";
    for (const auto& [name, m] : rows) {
        os << name << std::fixed << std::setprecision(4) << '\t' << m.hr5 << '\t' << m.ndcg5 << '\t' << m.hr10 << '\t'
           << m.ndcg10 << '\t' << m.users << '\n';
        os.unsetf(std::ios::floatfield);
    }
}

inline void write_metrics_kv(std::ostream& os, const MetricTable& m, const std::string& prefix = "") {
    os << std::setprecision(17);
    os << prefix << "hr@5=" << m.hr5 << '\n'
       << prefix << "ndcg@5=" << m.ndcg5 << '\n'
       << prefix << "hr@10=" << m.hr10 << '\n'
       << prefix << "ndcg@10=" << m.ndcg10 << '\n'
       << prefix << "users=" << m.users << '\n';
}

}  // namespace pasr
