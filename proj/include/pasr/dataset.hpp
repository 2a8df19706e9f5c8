#pragma once

// Check-in datasets: ingestion from tab-separated files, frequency filtering
// and serialization back to the same format.
//
// File format, one check-in per line, tab separated:
//   user_id  timestamp  latitude  longitude  location_id
// where timestamp is ISO-8601 UTC ("2010-10-19T23:55:27Z") or epoch seconds.

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "pasr/geocode.hpp"

namespace pasr {

/// Dense location id. 1..Q name real locations; 0 is the padding id.
using LocationId = int;
inline constexpr LocationId kPadLocation = 0;

class InputError : public std::runtime_error {
   public:
    using std::runtime_error::runtime_error;
};

struct Location {
    std::string key;  // id as it appears in the source file
    GeoCoordinate coord;
};

class LocationTable {
   public:
    LocationId add(Location loc) {
        entries_.push_back(std::move(loc));
        return static_cast<LocationId>(entries_.size());
    }

    size_t size() const { return entries_.size(); }
    const Location& at(LocationId id) const {
        if (id < 1 || static_cast<size_t>(id) > entries_.size()) {
            throw std::domain_error("unknown location id " + std::to_string(id));
        }
        return entries_[static_cast<size_t>(id - 1)];
    }
    const GeoCoordinate& coord(LocationId id) const { return at(id).coord; }
    bool contains(LocationId id) const { return id >= 1 && static_cast<size_t>(id) <= entries_.size(); }

    std::vector<GeoCoordinate> coordinates() const {
        std::vector<GeoCoordinate> out;
        out.reserve(entries_.size());
        for (const auto& e : entries_) out.push_back(e.coord);
        return out;
    }

   private:
    std::vector<Location> entries_;
};

struct CheckIn {
    LocationId location = kPadLocation;
    std::int64_t timestamp = 0;  // seconds since the Unix epoch, UTC

    bool operator==(const CheckIn&) const = default;
};

struct UserTrajectory {
    std::string key;
    std::vector<CheckIn> checkins;  // non-decreasing timestamps
};

struct CheckInDataset {
    LocationTable locations;
    std::vector<UserTrajectory> users;
    std::uint64_t provenance_hash = 0;

    size_t checkin_count() const {
        size_t n = 0;
        for (const auto& u : users) n += u.checkins.size();
        return n;
    }

    /// Visits per location id (index 0 unused).
    std::vector<size_t> visit_counts() const {
        std::vector<size_t> counts(locations.size() + 1, 0);
        for (const auto& u : users)
            for (const auto& c : u.checkins) ++counts[static_cast<size_t>(c.location)];
        return counts;
    }
};

namespace detail {

struct Fnv1a {
    std::uint64_t h = 1469598103934665603ull;
    void bytes(const void* p, size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 1099511628211ull;
        }
    }
    template <typename T>
    void value(const T& v) {
        bytes(&v, sizeof(T));
    }
    void str(const std::string& s) {
        value(s.size());
        bytes(s.data(), s.size());
    }
};

}  // namespace detail

/// Hash over the canonical content of a dataset (ids, coordinates, check-ins).
inline std::uint64_t content_hash(const CheckInDataset& ds) {
    detail::Fnv1a f;
    f.value(ds.locations.size());
    for (LocationId id = 1; static_cast<size_t>(id) <= ds.locations.size(); ++id) {
        const auto& l = ds.locations.at(id);
        f.str(l.key);
        f.value(l.coord.latitude());
        f.value(l.coord.longitude());
    }
    f.value(ds.users.size());
    for (const auto& u : ds.users) {
        f.str(u.key);
        f.value(u.checkins.size());
        for (const auto& c : u.checkins) {
            f.value(c.location);
            f.value(c.timestamp);
        }
    }
    return f.h;
}

enum class TimestampFormat { automatic, iso8601, epoch };

namespace detail {

inline bool parse_int(const std::string& s, size_t pos, size_t len, int& out) {
    if (pos + len > s.size()) return false;
    int v = 0;
    for (size_t i = pos; i < pos + len; ++i) {
        if (s[i] < '0' || s[i] > '9') return false;
        v = v * 10 + (s[i] - '0');
    }
    out = v;
    return true;
}

}  // namespace detail

/// Parses "YYYY-MM-DDTHH:MM:SS" with optional fractional seconds and a "Z" or
/// "+HH:MM"/"-HH:MM" suffix. Returns false on malformed input.
inline bool parse_iso8601(const std::string& s, std::int64_t& out) {
    int y, mo, d, h, mi, sec;
    if (s.size() < 19 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':' ||
        s[16] != ':') {
        return false;
    }
    if (!detail::parse_int(s, 0, 4, y) || !detail::parse_int(s, 5, 2, mo) || !detail::parse_int(s, 8, 2, d) ||
        !detail::parse_int(s, 11, 2, h) || !detail::parse_int(s, 14, 2, mi) || !detail::parse_int(s, 17, 2, sec)) {
        return false;
    }
    size_t pos = 19;
    if (pos < s.size() && s[pos] == '.') {
        ++pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    }
    int offset = 0;
    if (pos < s.size()) {
        if (s[pos] == 'Z' && pos + 1 == s.size()) {
            ++pos;
        } else if ((s[pos] == '+' || s[pos] == '-') && pos + 6 == s.size() && s[pos + 3] == ':') {
            int oh, om;
            if (!detail::parse_int(s, pos + 1, 2, oh) || !detail::parse_int(s, pos + 4, 2, om)) return false;
            offset = (s[pos] == '+' ? 1 : -1) * (oh * 3600 + om * 60);
            pos += 6;
        } else {
            return false;
        }
    }
    const std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{static_cast<unsigned>(mo)},
                                          std::chrono::day{static_cast<unsigned>(d)}};
    if (!ymd.ok() || h > 23 || mi > 59 || sec > 60) return false;
    const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
    out = static_cast<std::int64_t>(days) * 86400 + h * 3600 + mi * 60 + sec - offset;
    return true;
}

inline std::string format_iso8601(std::int64_t t) {
    const auto days = std::chrono::floor<std::chrono::days>(std::chrono::sys_seconds{std::chrono::seconds{t}});
    const std::chrono::year_month_day ymd{days};
    const std::int64_t rem = t - static_cast<std::int64_t>(days.time_since_epoch().count()) * 86400;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(rem / 3600),
                  static_cast<int>((rem / 60) % 60), static_cast<int>(rem % 60));
    return buf;
}

struct IngestReport {
    CheckInDataset dataset;
    size_t valid_rows = 0;
    size_t malformed_rows = 0;
    std::vector<size_t> malformed_lines;  // first few, 1-based
};

namespace detail {

inline std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        const size_t tab = line.find('\t', start);
        out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
        if (tab == std::string::npos) break;
        start = tab + 1;
    }
    return out;
}

inline bool parse_double(const std::string& s, double& out) {
    if (s.empty()) return false;
    try {
        size_t used = 0;
        out = std::stod(s, &used);
        return used == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

inline bool parse_epoch(const std::string& s, std::int64_t& out) {
    if (s.empty()) return false;
    try {
        size_t used = 0;
        out = std::stoll(s, &used);
        return used == s.size();
    } catch (const std::exception&) {
        return false;
    }
}

}  // namespace detail

/// Parses a check-in stream. Users and locations get dense ids in order of
/// first appearance; each user's check-ins are stably sorted by time.
inline IngestReport ingest_stream(std::istream& in, TimestampFormat format = TimestampFormat::automatic) {
    IngestReport rep;
    auto& ds = rep.dataset;
    std::unordered_map<std::string, LocationId> loc_ids;
    std::unordered_map<std::string, size_t> user_ids;
    std::string line;
    size_t line_no = 0;
    auto malformed = [&] {
        ++rep.malformed_rows;
        if (rep.malformed_lines.size() < 10) rep.malformed_lines.push_back(line_no);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = detail::split_tabs(line);
        if (f.size() != 5 || f[0].empty() || f[4].empty()) {
            malformed();
            continue;
        }
        std::int64_t ts = 0;
        bool ts_ok = false;
        const bool looks_iso = f[1].find('-', 1) != std::string::npos;
        if (format == TimestampFormat::iso8601 || (format == TimestampFormat::automatic && looks_iso)) {
            ts_ok = parse_iso8601(f[1], ts);
        } else {
            ts_ok = detail::parse_epoch(f[1], ts);
        }
        double lat = 0, lon = 0;
        if (!ts_ok || !detail::parse_double(f[2], lat) || !detail::parse_double(f[3], lon) || !std::isfinite(lat) ||
            !std::isfinite(lon) || lat < -90 || lat > 90 || lon < -180 || lon > 180) {
            malformed();
            continue;
        }
        auto [lit, new_loc] = loc_ids.try_emplace(f[4], 0);
        if (new_loc) lit->second = ds.locations.add({f[4], GeoCoordinate(lat, lon)});
        auto [uit, new_user] = user_ids.try_emplace(f[0], ds.users.size());
        if (new_user) ds.users.push_back({f[0], {}});
        ds.users[uit->second].checkins.push_back({lit->second, ts});
        ++rep.valid_rows;
    }
    if (rep.valid_rows == 0) throw InputError("no valid check-in rows");
    for (auto& u : ds.users) {
        std::stable_sort(u.checkins.begin(), u.checkins.end(),
                         [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; });
    }
    ds.provenance_hash = content_hash(ds);
    return rep;
}

inline IngestReport ingest(const std::string& path, TimestampFormat format = TimestampFormat::automatic) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot read check-in file: " + path);
    return ingest_stream(in, format);
}

inline void write_checkins(std::ostream& out, const CheckInDataset& ds,
                           TimestampFormat format = TimestampFormat::iso8601) {
    out << std::setprecision(10);
    for (const auto& u : ds.users) {
        for (const auto& c : u.checkins) {
            const auto& loc = ds.locations.at(c.location);
            out << u.key << '\t'
                << (format == TimestampFormat::epoch ? std::to_string(c.timestamp) : format_iso8601(c.timestamp))
                << '\t' << loc.coord.latitude() << '\t' << loc.coord.longitude() << '\t' << loc.key << '\n';
        }
    }
}

enum class FilterMode {
    single_pass,  // locations once, then users once
    fixpoint,     // repeat until both thresholds hold simultaneously
};

struct FilterOptions {
    size_t min_user_checkins = 20;
    size_t min_location_visits = 10;
    FilterMode mode = FilterMode::fixpoint;
};

namespace detail {

// Keeps locations flagged in `keep_loc` (re-densified, order preserved) and
// the users listed in `keep_user`.
inline CheckInDataset restrict_dataset(const CheckInDataset& ds, const std::vector<bool>& keep_loc) {
    CheckInDataset out;
    std::vector<LocationId> remap(ds.locations.size() + 1, kPadLocation);
    for (LocationId id = 1; static_cast<size_t>(id) <= ds.locations.size(); ++id) {
        if (keep_loc[static_cast<size_t>(id)]) remap[static_cast<size_t>(id)] = out.locations.add(ds.locations.at(id));
    }
    for (const auto& u : ds.users) {
        UserTrajectory t{u.key, {}};
        for (const auto& c : u.checkins) {
            const LocationId nid = remap[static_cast<size_t>(c.location)];
            if (nid != kPadLocation) t.checkins.push_back({nid, c.timestamp});
        }
        if (!t.checkins.empty()) out.users.push_back(std::move(t));
    }
    return out;
}

inline CheckInDataset filter_once(const CheckInDataset& ds, const FilterOptions& opt) {
    const auto counts = ds.visit_counts();
    std::vector<bool> keep(counts.size(), false);
    for (size_t id = 1; id < counts.size(); ++id) keep[id] = counts[id] >= opt.min_location_visits;
    CheckInDataset after_locations = restrict_dataset(ds, keep);

    std::erase_if(after_locations.users,
                  [&](const UserTrajectory& u) { return u.checkins.size() < opt.min_user_checkins; });
    // Drop locations no longer referenced by any remaining user.
    const auto remaining = after_locations.visit_counts();
    std::vector<bool> used(remaining.size(), false);
    for (size_t id = 1; id < remaining.size(); ++id) used[id] = remaining[id] > 0;
    return restrict_dataset(after_locations, used);
}

}  // namespace detail

/// Removes locations with fewer than `min_location_visits` visits, then users
/// with fewer than `min_user_checkins` remaining check-ins. Location ids are
/// re-densified preserving order.
inline CheckInDataset filter_dataset(const CheckInDataset& ds, const FilterOptions& opt = {}) {
    CheckInDataset cur = detail::filter_once(ds, opt);
    if (opt.mode == FilterMode::fixpoint) {
        while (true) {
            CheckInDataset next = detail::filter_once(cur, opt);
            if (next.checkin_count() == cur.checkin_count() && next.users.size() == cur.users.size()) break;
            cur = std::move(next);
        }
    }
    if (cur.users.empty()) throw InputError("filtering removed every check-in");
    cur.provenance_hash = content_hash(cur);
    return cur;
}

struct DatasetSummary {
    size_t locations = 0;
    size_t users = 0;
    size_t checkins = 0;
};

inline DatasetSummary summarize(const CheckInDataset& ds) {
    return {ds.locations.size(), ds.users.size(), ds.checkin_count()};
}

inline std::ostream& operator<<(std::ostream& os, const DatasetSummary& s) {
    return os << "#locations\t" << s.locations << "\n#users\t" << s.users << "\n#check-ins\t" << s.checkins << "\n";
}

}  // namespace pasr
