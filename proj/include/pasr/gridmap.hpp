#pragma once

// Uniform G x G partition of the bounding region of a location set. Rows run
// along latitude and columns along longitude, over raw degrees.

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>

#include "pasr/geocode.hpp"

namespace pasr {

inline constexpr double kDegenerateBoundsEpsilon = 1e-9;

struct RegionBounds {
    double lat_min = 0, lat_max = 0, lon_min = 0, lon_max = 0;

    bool operator==(const RegionBounds&) const = default;
};

struct GridCell {
    int row = 0;
    int col = 0;

    bool operator==(const GridCell&) const = default;
};

/// Componentwise min/max. An axis with zero extent is widened by
/// kDegenerateBoundsEpsilon on each side.
inline RegionBounds fit_bounds(std::span<const GeoCoordinate> locations) {
    if (locations.empty()) throw std::domain_error("fit_bounds: empty location collection");
    RegionBounds b{locations[0].latitude(), locations[0].latitude(), locations[0].longitude(),
                   locations[0].longitude()};
    for (const auto& c : locations) {
        b.lat_min = std::min(b.lat_min, c.latitude());
        b.lat_max = std::max(b.lat_max, c.latitude());
        b.lon_min = std::min(b.lon_min, c.longitude());
        b.lon_max = std::max(b.lon_max, c.longitude());
    }
    if (!(b.lat_min < b.lat_max)) {
        b.lat_min -= kDegenerateBoundsEpsilon;
        b.lat_max += kDegenerateBoundsEpsilon;
    }
    if (!(b.lon_min < b.lon_max)) {
        b.lon_min -= kDegenerateBoundsEpsilon;
        b.lon_max += kDegenerateBoundsEpsilon;
    }
    return b;
}

namespace detail {

inline int grid_index(double v, double lo, double hi, int intervals) {
    const double t = std::floor((v - lo) / (hi - lo) * intervals);
    if (!(t >= 0)) return 0;  // also catches NaN
    if (t >= intervals - 1) return intervals - 1;
    return static_cast<int>(t);
}

}  // namespace detail

/// Coordinates outside the bounds clamp to the nearest edge cell.
inline GridCell map_to_cell(const GeoCoordinate& coord, const RegionBounds& bounds, int intervals) {
    if (intervals < 1) throw std::domain_error("grid interval count must be >= 1");
    return {detail::grid_index(coord.latitude(), bounds.lat_min, bounds.lat_max, intervals),
            detail::grid_index(coord.longitude(), bounds.lon_min, bounds.lon_max, intervals)};
}

}  // namespace pasr
