#pragma once

// Geohash codec and n-gram tokenization of geohash strings.
//
// Geohash interleaves longitude and latitude bisection bits (longitude
// first) and emits one Base32 character per 5 bits. A length-L hash names
// a cell of 5L bits; truncating a hash yields the enclosing coarser cell.

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace pasr {

inline constexpr std::string_view kGeohashAlphabet = "0123456789bcdefghjkmnpqrstuvwxyz";
inline constexpr int kMaxGeohashLength = 16;

class GeoCoordinate {
   public:
    GeoCoordinate(double latitude, double longitude) : latitude_(latitude), longitude_(longitude) {
        if (!std::isfinite(latitude) || !std::isfinite(longitude)) {
            throw std::domain_error("coordinate must be finite");
        }
        if (latitude < -90.0 || latitude > 90.0) {
            throw std::domain_error("latitude out of range [-90, 90]: " + std::to_string(latitude));
        }
        if (longitude < -180.0 || longitude > 180.0) {
            throw std::domain_error("longitude out of range [-180, 180]: " + std::to_string(longitude));
        }
    }

    double latitude() const { return latitude_; }
    double longitude() const { return longitude_; }

    bool operator==(const GeoCoordinate&) const = default;

   private:
    double latitude_;
    double longitude_;
};

namespace detail {

inline constexpr std::array<int8_t, 128> make_geohash_decode_table() {
    std::array<int8_t, 128> table{};
    for (auto& v : table) v = -1;
    for (int i = 0; i < 32; ++i) table[static_cast<unsigned char>(kGeohashAlphabet[i])] = static_cast<int8_t>(i);
    return table;
}

inline constexpr auto kGeohashDecode = make_geohash_decode_table();

inline int geohash_char_value(char c) {
    const auto u = static_cast<unsigned char>(c);
    return u < 128 ? kGeohashDecode[u] : -1;
}

}  // namespace detail

/// A validated geohash string.
class Geohash {
   public:
    explicit Geohash(std::string chars) : chars_(std::move(chars)) {
        if (chars_.empty() || chars_.size() > static_cast<size_t>(kMaxGeohashLength)) {
            throw std::invalid_argument("geohash length must be in [1, 16]: '" + chars_ + "'");
        }
        for (char c : chars_) {
            if (detail::geohash_char_value(c) < 0) {
                throw std::invalid_argument("invalid geohash character '" + std::string(1, c) + "' in '" + chars_ + "'");
            }
        }
    }

    const std::string& str() const { return chars_; }
    int length() const { return static_cast<int>(chars_.size()); }
    Geohash prefix(int len) const { return Geohash(chars_.substr(0, static_cast<size_t>(len))); }

    bool operator==(const Geohash&) const = default;

   private:
    std::string chars_;
};

struct GeoBox {
    double lat_min, lat_max, lon_min, lon_max;

    bool contains(const GeoCoordinate& c) const {
        return c.latitude() >= lat_min && c.latitude() <= lat_max && c.longitude() >= lon_min &&
               c.longitude() <= lon_max;
    }
    double lat_span() const { return lat_max - lat_min; }
    double lon_span() const { return lon_max - lon_min; }
};

// Bisection on a power-of-two subdivision of [-90,90] x [-180,180] is exact in
// binary floating point, so the upper boundary values (90, 180) land in the
// last cell rather than overflowing it.
inline Geohash encode_geohash(const GeoCoordinate& coord, int len) {
    if (len < 1 || len > kMaxGeohashLength) {
        throw std::domain_error("geohash length must be in [1, 16]");
    }
    double lat_lo = -90.0, lat_hi = 90.0;
    double lon_lo = -180.0, lon_hi = 180.0;
    const double lat = coord.latitude();
    const double lon = coord.longitude();

    std::string out;
    out.reserve(static_cast<size_t>(len));
    bool even = true;  // even bits refine longitude
    int bit = 0;
    int value = 0;
    while (static_cast<int>(out.size()) < len) {
        if (even) {
            const double mid = (lon_lo + lon_hi) / 2;
            if (lon >= mid) {
                value = (value << 1) | 1;
                lon_lo = mid;
            } else {
                value <<= 1;
                lon_hi = mid;
            }
        } else {
            const double mid = (lat_lo + lat_hi) / 2;
            if (lat >= mid) {
                value = (value << 1) | 1;
                lat_lo = mid;
            } else {
                value <<= 1;
                lat_hi = mid;
            }
        }
        even = !even;
        if (++bit == 5) {
            out.push_back(kGeohashAlphabet[static_cast<size_t>(value)]);
            bit = 0;
            value = 0;
        }
    }
    return Geohash(std::move(out));
}

inline GeoBox decode_geohash(const Geohash& g) {
    GeoBox box{-90.0, 90.0, -180.0, 180.0};
    bool even = true;
    for (char c : g.str()) {
        const int v = detail::geohash_char_value(c);
        for (int b = 4; b >= 0; --b) {
            const bool one = ((v >> b) & 1) != 0;
            if (even) {
                const double mid = (box.lon_min + box.lon_max) / 2;
                (one ? box.lon_min : box.lon_max) = mid;
            } else {
                const double mid = (box.lat_min + box.lat_max) / 2;
                (one ? box.lat_min : box.lat_max) = mid;
            }
            even = !even;
        }
    }
    return box;
}

inline GeoBox decode_geohash(std::string_view g) { return decode_geohash(Geohash(std::string(g))); }

/// Cell size in degrees (lat, lon) of any geohash with the given length.
inline std::pair<double, double> geohash_cell_size(int len) {
    const int bits = 5 * len;
    const int lon_bits = (bits + 1) / 2;
    const int lat_bits = bits / 2;
    return {180.0 / std::ldexp(1.0, lat_bits), 360.0 / std::ldexp(1.0, lon_bits)};
}

struct NgramTokenSeq {
    std::vector<std::uint64_t> tokens;
    int order = 1;

    bool operator==(const NgramTokenSeq&) const = default;
};

inline std::uint64_t ngram_vocabulary_size(int order) {
    if (order < 1 || order > 12) throw std::domain_error("n-gram order must be in [1, 12]");
    return std::uint64_t{1} << (5 * order);
}

/// Sliding window of width `order`, stride 1. Each window maps to the base-32
/// place value of its characters, so ids are dense in [0, 32^order).
inline NgramTokenSeq ngram_tokenize(const Geohash& g, int order) {
    ngram_vocabulary_size(order);
    const auto& s = g.str();
    if (static_cast<int>(s.size()) < order) {
        throw std::domain_error("geohash '" + s + "' shorter than n-gram order " + std::to_string(order));
    }
    NgramTokenSeq seq;
    seq.order = order;
    seq.tokens.reserve(s.size() - static_cast<size_t>(order) + 1);
    for (size_t start = 0; start + static_cast<size_t>(order) <= s.size(); ++start) {
        std::uint64_t id = 0;
        for (int k = 0; k < order; ++k) {
            id = (id << 5) | static_cast<std::uint64_t>(detail::geohash_char_value(s[start + static_cast<size_t>(k)]));
        }
        seq.tokens.push_back(id);
    }
    return seq;
}

inline std::string ngram_detokenize(std::uint64_t token, int order) {
    if (token >= ngram_vocabulary_size(order)) throw std::domain_error("token id out of vocabulary");
    std::string out(static_cast<size_t>(order), '0');
    for (int k = order - 1; k >= 0; --k) {
        out[static_cast<size_t>(k)] = kGeohashAlphabet[token & 31u];
        token >>= 5;
    }
    return out;
}

}  // namespace pasr
