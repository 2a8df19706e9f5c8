#pragma once

// Spatial k-nearest-neighbor index over locations and the negative samplers
// drawn from it.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <numeric>
#include <optional>
#include <queue>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "pasr/dataset.hpp"
#include "pasr/geocode.hpp"

namespace pasr {

inline constexpr double kEarthRadiusKm = 6371.0088;

inline double haversine_km(const GeoCoordinate& a, const GeoCoordinate& b) {
    constexpr double rad = 3.14159265358979323846 / 180.0;
    const double dlat = (b.latitude() - a.latitude()) * rad;
    const double dlon = (b.longitude() - a.longitude()) * rad;
    const double s = std::sin(dlat / 2) * std::sin(dlat / 2) +
                     std::cos(a.latitude() * rad) * std::cos(b.latitude() * rad) * std::sin(dlon / 2) *
                         std::sin(dlon / 2);
    return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(s)));
}

enum class KnnBuildMethod { automatic, brute_force, kd_tree };

/// Below this many locations `automatic` uses brute force.
inline constexpr size_t kKnnBruteForceLimit = 2000;

/// Per-location list of the K nearest other locations by great-circle
/// distance, ascending, ties broken by ascending id. Lists hold
/// min(K, n - 1) entries.
class KnnIndex {
   public:
    KnnIndex() = default;
    KnnIndex(size_t k, std::vector<std::vector<LocationId>> lists) : k_(k), lists_(std::move(lists)) {}

    size_t k() const { return k_; }
    size_t location_count() const { return lists_.size(); }
    std::span<const LocationId> neighbors(LocationId id) const {
        if (id < 1 || static_cast<size_t>(id) > lists_.size()) throw std::domain_error("knn: unknown location id");
        return lists_[static_cast<size_t>(id - 1)];
    }

    bool operator==(const KnnIndex&) const = default;

   private:
    size_t k_ = 0;
    std::vector<std::vector<LocationId>> lists_;
};

namespace detail {

using Vec3 = std::array<double, 3>;

inline Vec3 unit_vector(const GeoCoordinate& c) {
    constexpr double rad = 3.14159265358979323846 / 180.0;
    const double la = c.latitude() * rad, lo = c.longitude() * rad;
    return {std::cos(la) * std::cos(lo), std::cos(la) * std::sin(lo), std::sin(la)};
}

inline double chord2(const Vec3& a, const Vec3& b) {
    const double x = a[0] - b[0], y = a[1] - b[1], z = a[2] - b[2];
    return x * x + y * y + z * z;
}

// Static 3-d tree over unit-sphere points. Chord length is monotone in
// great-circle distance, so Euclidean kNN here is kNN on the sphere.
class KdTree {
   public:
    explicit KdTree(std::vector<Vec3> pts) : pts_(std::move(pts)), order_(pts_.size()) {
        std::iota(order_.begin(), order_.end(), 0);
        nodes_.reserve(pts_.size());
        root_ = build(0, order_.size(), 0);
    }

    // Up to k nearest point indices (excluding `self`), unordered.
    std::vector<std::pair<double, size_t>> nearest(size_t self, size_t k) const {
        std::priority_queue<std::pair<double, size_t>> heap;
        search(root_, pts_[self], self, k, heap);
        std::vector<std::pair<double, size_t>> out;
        while (!heap.empty()) {
            out.push_back(heap.top());
            heap.pop();
        }
        return out;
    }

   private:
    struct KdNode {
        size_t point;
        int axis;
        int left = -1, right = -1;
    };

    int build(size_t lo, size_t hi, int depth) {
        if (lo >= hi) return -1;
        const int axis = depth % 3;
        const size_t mid = (lo + hi) / 2;
        std::nth_element(order_.begin() + static_cast<long>(lo), order_.begin() + static_cast<long>(mid),
                         order_.begin() + static_cast<long>(hi), [&](size_t a, size_t b) {
                             return pts_[a][static_cast<size_t>(axis)] < pts_[b][static_cast<size_t>(axis)];
                         });
        const int idx = static_cast<int>(nodes_.size());
        nodes_.push_back({order_[mid], axis});
        const int l = build(lo, mid, depth + 1);
        const int r = build(mid + 1, hi, depth + 1);
        nodes_[static_cast<size_t>(idx)].left = l;
        nodes_[static_cast<size_t>(idx)].right = r;
        return idx;
    }

    void search(int ni, const Vec3& q, size_t self, size_t k,
                std::priority_queue<std::pair<double, size_t>>& heap) const {
        if (ni < 0) return;
        const auto& n = nodes_[static_cast<size_t>(ni)];
        if (n.point != self) {
            const double d = chord2(q, pts_[n.point]);
            if (heap.size() < k) {
                heap.emplace(d, n.point);
            } else if (d < heap.top().first || (d == heap.top().first && n.point < heap.top().second)) {
                heap.pop();
                heap.emplace(d, n.point);
            }
        }
        const double diff = q[static_cast<size_t>(n.axis)] - pts_[n.point][static_cast<size_t>(n.axis)];
        const int near = diff < 0 ? n.left : n.right;
        const int far = diff < 0 ? n.right : n.left;
        search(near, q, self, k, heap);
        if (heap.size() < k || diff * diff <= heap.top().first) search(far, q, self, k, heap);
    }

    std::vector<Vec3> pts_;
    std::vector<size_t> order_;
    std::vector<KdNode> nodes_;
    int root_ = -1;
};

inline void sort_by_distance(const GeoCoordinate& q, std::span<const GeoCoordinate> coords,
                             std::vector<std::pair<double, LocationId>>& cand) {
    for (auto& [d, id] : cand) d = haversine_km(q, coords[static_cast<size_t>(id - 1)]);
    std::sort(cand.begin(), cand.end());
}

}  // namespace detail

/// `coords[i]` is the coordinate of location id i+1.
inline KnnIndex build_knn_index(std::span<const GeoCoordinate> coords, size_t k,
                                KnnBuildMethod method = KnnBuildMethod::automatic) {
    const size_t n = coords.size();
    if (n < 2) throw std::domain_error("knn index needs at least 2 locations");
    if (k == 0) throw std::domain_error("knn: K must be >= 1");
    const size_t keep = std::min(k, n - 1);
    if (method == KnnBuildMethod::automatic) {
        method = n < kKnnBruteForceLimit ? KnnBuildMethod::brute_force : KnnBuildMethod::kd_tree;
    }
    std::vector<std::vector<LocationId>> lists(n);
    std::vector<std::pair<double, LocationId>> cand;
    if (method == KnnBuildMethod::brute_force) {
        for (size_t i = 0; i < n; ++i) {
            cand.clear();
            for (size_t j = 0; j < n; ++j)
                if (j != i) cand.emplace_back(0.0, static_cast<LocationId>(j + 1));
            detail::sort_by_distance(coords[i], coords, cand);
            auto& out = lists[i];
            for (size_t j = 0; j < keep; ++j) out.push_back(cand[j].second);
        }
    } else {
        std::vector<detail::Vec3> pts;
        pts.reserve(n);
        for (const auto& c : coords) pts.push_back(detail::unit_vector(c));
        const detail::KdTree tree(pts);
        // Over-fetch a few so that re-ranking by haversine (with id
        // tie-break) agrees with brute force at rounding-level ties.
        const size_t fetch = std::min(n - 1, keep + 8);
        for (size_t i = 0; i < n; ++i) {
            cand.clear();
            for (const auto& [_, j] : tree.nearest(i, fetch)) cand.emplace_back(0.0, static_cast<LocationId>(j + 1));
            detail::sort_by_distance(coords[i], coords, cand);
            auto& out = lists[i];
            for (size_t j = 0; j < keep; ++j) out.push_back(cand[j].second);
        }
    }
    return KnnIndex(k, std::move(lists));
}

inline KnnIndex build_knn_index(const LocationTable& table, size_t k,
                                KnnBuildMethod method = KnnBuildMethod::automatic) {
    const auto coords = table.coordinates();
    return build_knn_index(std::span<const GeoCoordinate>(coords), k, method);
}

inline constexpr std::uint32_t kKnnSidecarVersion = 1;

namespace detail {

template <typename T>
void write_le(std::ostream& out, T v) {
    static_assert(std::is_integral_v<T> || std::is_same_v<T, double>);
    std::uint64_t bits = 0;
    if constexpr (std::is_same_v<T, double>) {
        std::memcpy(&bits, &v, sizeof v);
    } else {
        bits = static_cast<std::uint64_t>(v);
    }
    for (size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T read_le(std::istream& in) {
    static_assert(std::is_integral_v<T> || std::is_same_v<T, double>);
    std::uint64_t bits = 0;
    for (size_t i = 0; i < sizeof(T); ++i) {
        const int c = in.get();
        if (c == EOF) throw InputError("unexpected end of binary file");
        bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
    }
    if constexpr (std::is_same_v<T, double>) {
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    } else {
        return static_cast<T>(bits);
    }
}

}  // namespace detail

/// Sidecar layout (little-endian): "PASRKNN\0", u32 version, u64 dataset
/// hash, u64 K, u64 location count, then per location u64 length + i32 ids.
inline void save_knn_index(const std::string& path, const KnnIndex& index, std::uint64_t dataset_hash) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write knn sidecar: " + path);
    out.write("PASRKNN", 8);
    detail::write_le<std::uint32_t>(out, kKnnSidecarVersion);
    detail::write_le<std::uint64_t>(out, dataset_hash);
    detail::write_le<std::uint64_t>(out, index.k());
    detail::write_le<std::uint64_t>(out, index.location_count());
    for (LocationId id = 1; static_cast<size_t>(id) <= index.location_count(); ++id) {
        const auto nb = index.neighbors(id);
        detail::write_le<std::uint64_t>(out, nb.size());
        for (LocationId x : nb) detail::write_le<std::int32_t>(out, x);
    }
}

/// Returns nullopt when the file is absent or keyed to another dataset or K.
inline std::optional<KnnIndex> load_knn_index(const std::string& path, std::uint64_t dataset_hash, size_t k) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return std::nullopt;
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 7) != "PASRKNN") throw InputError("not a knn sidecar file: " + path);
    if (detail::read_le<std::uint32_t>(in) != kKnnSidecarVersion) return std::nullopt;
    if (detail::read_le<std::uint64_t>(in) != dataset_hash) return std::nullopt;
    const auto stored_k = detail::read_le<std::uint64_t>(in);
    if (stored_k != k) return std::nullopt;
    const auto n = detail::read_le<std::uint64_t>(in);
    std::vector<std::vector<LocationId>> lists(n);
    for (auto& l : lists) {
        const auto len = detail::read_le<std::uint64_t>(in);
        l.reserve(len);
        for (std::uint64_t i = 0; i < len; ++i) l.push_back(detail::read_le<std::int32_t>(in));
    }
    return KnnIndex(stored_k, std::move(lists));
}

/// Occurrence counts c_l with cached unnormalized proposal ln(c_l + 1).
class PopularityTable {
   public:
    PopularityTable() = default;
    explicit PopularityTable(std::vector<size_t> counts) : counts_(std::move(counts)) {
        if (counts_.empty()) throw std::domain_error("popularity table needs index 0 slot");
        proposal_.resize(counts_.size());
        for (size_t i = 0; i < counts_.size(); ++i) proposal_[i] = std::log1p(static_cast<double>(counts_[i]));
    }

    size_t count(LocationId id) const { return counts_.at(static_cast<size_t>(id)); }
    double proposal(LocationId id) const { return proposal_.at(static_cast<size_t>(id)); }
    size_t location_count() const { return counts_.size() - 1; }

   private:
    std::vector<size_t> counts_;  // index 0 unused
    std::vector<double> proposal_;
};

/// Q~(l) = ln(c_l + 1) for every location id (index 0 unused).
inline std::vector<double> popularity_weights(const PopularityTable& table) {
    std::vector<double> w(table.location_count() + 1, 0.0);
    for (LocationId id = 1; static_cast<size_t>(id) <= table.location_count(); ++id) w[static_cast<size_t>(id)] = table.proposal(id);
    return w;
}

enum class SamplerKind { uniform, knn_uniform, knn_popularity };

inline const char* to_string(SamplerKind k) {
    switch (k) {
        case SamplerKind::uniform: return "uniform";
        case SamplerKind::knn_uniform: return "knn-uniform";
        case SamplerKind::knn_popularity: return "knn-popularity";
    }
    return "?";
}

inline SamplerKind parse_sampler_kind(const std::string& s) {
    if (s == "uniform") return SamplerKind::uniform;
    if (s == "knn-uniform" || s == "knn_uniform") return SamplerKind::knn_uniform;
    if (s == "knn-popularity" || s == "knn_popularity") return SamplerKind::knn_popularity;
    throw std::invalid_argument("unknown sampler '" + s + "'");
}

struct NegativeDraw {
    LocationId location = kPadLocation;
    double log_q = 0.0;  // ln Q~(l | i)

    bool operator==(const NegativeDraw&) const = default;
};

/// Draws negatives for one supervised step. The kNN pool is the neighbor list
/// of `anchor`; the positive `target` is never returned.
class NegativeSampler {
   public:
    NegativeSampler(SamplerKind kind, size_t location_count, const KnnIndex* index = nullptr,
                    const PopularityTable* popularity = nullptr)
        : kind_(kind), n_(location_count), index_(index), popularity_(popularity) {
        if (kind != SamplerKind::uniform && index == nullptr) throw std::domain_error("kNN sampler needs an index");
        if (kind == SamplerKind::knn_popularity) {
            if (popularity == nullptr) throw std::domain_error("popularity sampler needs counts");
            cumulative_.resize(index->location_count());
            for (LocationId id = 1; static_cast<size_t>(id) <= index->location_count(); ++id) {
                auto& cum = cumulative_[static_cast<size_t>(id - 1)];
                double acc = 0.0;
                for (LocationId nb : index->neighbors(id)) cum.push_back(acc += popularity->proposal(nb));
            }
        }
    }

    SamplerKind kind() const { return kind_; }

    std::vector<NegativeDraw> sample(LocationId target, size_t count, std::mt19937_64& rng) const {
        return sample_around(target, target, count, rng);
    }

    std::vector<NegativeDraw> sample_around(LocationId anchor, LocationId target, size_t count,
                                            std::mt19937_64& rng) const {
        if (count == 0) throw std::domain_error("negative count must be >= 1");
        std::vector<NegativeDraw> out;
        out.reserve(count);
        switch (kind_) {
            case SamplerKind::uniform: {
                if (n_ < 2) throw std::domain_error("uniform sampler: empty candidate pool");
                std::uniform_int_distribution<LocationId> dist(1, static_cast<LocationId>(n_) - 1);
                for (size_t i = 0; i < count; ++i) {
                    LocationId l = dist(rng);
                    if (l >= target) ++l;  // skip the target
                    out.push_back({l, 0.0});
                }
                break;
            }
            case SamplerKind::knn_uniform: {
                const auto pool = index_->neighbors(anchor);
                const bool has_target = std::find(pool.begin(), pool.end(), target) != pool.end();
                const size_t usable = pool.size() - (has_target ? 1 : 0);
                if (usable == 0) throw std::domain_error("knn sampler: empty candidate pool");
                std::uniform_int_distribution<size_t> dist(0, pool.size() - 1);
                while (out.size() < count) {
                    const LocationId l = pool[dist(rng)];
                    if (l != target) out.push_back({l, 0.0});
                }
                break;
            }
            case SamplerKind::knn_popularity: {
                const auto pool = index_->neighbors(anchor);
                const auto& cum = cumulative_[static_cast<size_t>(anchor - 1)];
                double target_mass = 0.0;
                for (LocationId l : pool)
                    if (l == target) target_mass = popularity_->proposal(l);
                const double total = cum.empty() ? 0.0 : cum.back();
                if (!(total - target_mass > 0.0)) throw std::domain_error("popularity sampler: empty candidate pool");
                std::uniform_real_distribution<double> dist(0.0, total);
                while (out.size() < count) {
                    const double u = dist(rng);
                    const size_t j = static_cast<size_t>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin());
                    if (j >= pool.size()) continue;
                    const LocationId l = pool[j];
                    if (l == target) continue;
                    const double q = popularity_->proposal(l);
                    if (q <= 0.0) continue;
                    out.push_back({l, std::log(q)});
                }
                break;
            }
        }
        return out;
    }

   private:
    SamplerKind kind_;
    size_t n_;
    const KnnIndex* index_;
    const PopularityTable* popularity_;
    std::vector<std::vector<double>> cumulative_;
};

}  // namespace pasr
