#pragma once

// Planted-pattern check-in data. Locations sit in spatial clusters and are
// threaded into one global route; every user walks a stretch of that route
// with occasional detours. Route steps stay inside the current cluster with
// probability `locality` and then go to the nearest not-yet-routed location,
// so both the route and geography carry signal.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "pasr/dataset.hpp"
#include "pasr/sampling.hpp"

namespace pasr {

struct SyntheticSpec {
    size_t users = 100;
    size_t locations = 200;
    size_t clusters = 10;
    double locality = 0.9;
    size_t checkins_per_user = 60;
    double detour_prob = 0.03;
    double cluster_spread_deg = 0.01;
    double region_deg = 1.0;
    double center_lat = 40.7;
    double center_lon = -74.0;
    std::int64_t start_time = 1262304000;  // 2010-01-01T00:00:00Z

    void validate() const {
        if (users == 0) throw std::domain_error("synthetic: need at least one user");
        if (clusters == 0 || locations < clusters) throw std::domain_error("synthetic: need locations >= clusters >= 1");
        if (locations < 2) throw std::domain_error("synthetic: need at least 2 locations");
        if (!(locality >= 0.0 && locality <= 1.0)) throw std::domain_error("synthetic: locality must be in [0, 1]");
        if (!(detour_prob >= 0.0 && detour_prob < 1.0)) throw std::domain_error("synthetic: detour-prob must be in [0, 1)");
        if (checkins_per_user < 2) throw std::domain_error("synthetic: need at least 2 check-ins per user");
        if (!(cluster_spread_deg >= 0.0) || !(region_deg > 0.0)) throw std::domain_error("synthetic: bad extents");
        if (std::abs(center_lat) + region_deg / 2 + 5 * cluster_spread_deg > 90.0) {
            throw std::domain_error("synthetic: region leaves the valid latitude range");
        }
    }
};

struct SyntheticDataset {
    CheckInDataset dataset;
    std::vector<size_t> cluster_of;  // index id - 1
    std::vector<LocationId> route;   // cyclic order over all locations
};

inline SyntheticDataset generate_synthetic_detailed(const SyntheticSpec& spec, std::uint64_t seed) {
    spec.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> spread(0.0, spec.cluster_spread_deg);
    const size_t n = spec.locations, nc = spec.clusters;

    SyntheticDataset out;
    std::vector<std::pair<double, double>> centers(nc);
    for (auto& c : centers) {
        c.first = spec.center_lat + (unit(rng) - 0.5) * spec.region_deg;
        c.second = spec.center_lon + (unit(rng) - 0.5) * spec.region_deg;
    }
    std::vector<std::vector<LocationId>> members(nc);
    for (size_t i = 0; i < n; ++i) {
        const size_t k = i % nc;
        const double lat = std::clamp(centers[k].first + spread(rng), -90.0, 90.0);
        double lon = centers[k].second + spread(rng);
        if (lon > 180.0) lon -= 360.0;
        if (lon < -180.0) lon += 360.0;
        const LocationId id = out.dataset.locations.add({"L" + std::to_string(i + 1), GeoCoordinate(lat, lon)});
        out.cluster_of.push_back(k);
        members[k].push_back(id);
    }

    const auto& table = out.dataset.locations;
    auto nearest_unrouted = [&](LocationId from, const std::vector<LocationId>& pool) {
        LocationId best = pool.front();
        double best_d = std::numeric_limits<double>::infinity();
        for (auto l : pool) {
            const double d = haversine_km(table.coord(from), table.coord(l));
            if (d < best_d) best_d = d, best = l;
        }
        return best;
    };
    std::vector<std::vector<LocationId>> unrouted = members;
    auto take = [&](LocationId l) {
        auto& pool = unrouted[out.cluster_of[static_cast<size_t>(l - 1)]];
        pool.erase(std::find(pool.begin(), pool.end(), l));
        out.route.push_back(l);
    };
    take(static_cast<LocationId>(1 + rng() % n));
    while (out.route.size() < n) {
        const LocationId cur = out.route.back();
        const size_t here = out.cluster_of[static_cast<size_t>(cur - 1)];
        size_t k = here;
        if (!(unit(rng) < spec.locality && !unrouted[here].empty())) {
            k = static_cast<size_t>(rng() % nc);
            if (unrouted[k].empty()) {
                std::vector<size_t> open;
                for (size_t j = 0; j < nc; ++j)
                    if (!unrouted[j].empty()) open.push_back(j);
                k = open[static_cast<size_t>(rng() % open.size())];
            }
        }
        take(nearest_unrouted(cur, unrouted[k]));
    }

    auto detour_from = [&](LocationId cur) {
        const size_t here = out.cluster_of[static_cast<size_t>(cur - 1)];
        const size_t k = unit(rng) < spec.locality ? here : static_cast<size_t>(rng() % nc);
        return members[k][static_cast<size_t>(rng() % members[k].size())];
    };
    for (size_t u = 0; u < spec.users; ++u) {
        UserTrajectory traj;
        traj.key = "U" + std::to_string(u + 1);
        size_t pos = static_cast<size_t>(rng() % n);
        std::int64_t t = spec.start_time + static_cast<std::int64_t>(u) * 60;
        traj.checkins.push_back({out.route[pos], t});
        while (traj.checkins.size() < spec.checkins_per_user) {
            t += 3600;
            if (unit(rng) < spec.detour_prob) {
                traj.checkins.push_back({detour_from(out.route[pos]), t});
                continue;
            }
            pos = (pos + 1) % n;
            traj.checkins.push_back({out.route[pos], t});
        }
        out.dataset.users.push_back(std::move(traj));
    }
    out.dataset.provenance_hash = content_hash(out.dataset);
    return out;
}

inline CheckInDataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    return generate_synthetic_detailed(spec, seed).dataset;
}

}  // namespace pasr
