#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tsnet {

using std::int64_t;
using std::uint64_t;

/// Builds a message from streamable parts; used for error text.
template <typename... Args>
std::string strcat(Args&&... args) {
    std::ostringstream os;
    (os << ... << args);
    return os.str();
}

struct TsnetError : std::runtime_error {
    explicit TsnetError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Raised when tensor dimensions are inconsistent; the message names the
/// offending dimension and the sizes involved.
struct ShapeError : TsnetError {
    explicit ShapeError(const std::string& msg) : TsnetError("shape error: " + msg) {}
};

struct ValueError : TsnetError {
    explicit ValueError(const std::string& msg) : TsnetError(msg) {}
};

struct IoError : TsnetError {
    explicit IoError(const std::string& msg) : TsnetError(msg) {}
};

/// Dense rank-4 extent (batch, channel, height, width).
struct Shape4 {
    int64_t n = 0;
    int64_t c = 0;
    int64_t h = 0;
    int64_t w = 0;

    int64_t count() const { return n * c * h * w; }
    bool operator==(const Shape4&) const = default;

    std::string str() const { return strcat("(", n, ",", c, ",", h, ",", w, ")"); }
};

// ---------------------------------------------------------------------------
// Seeding

/// SplitMix64 step; used to derive independent stream seeds.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Stable per-item seed derived from a base seed and an item id.
inline uint64_t derive_seed(uint64_t base, uint64_t id) {
    return splitmix64(base ^ splitmix64(id + 0x51ed270b + (base << 6)));
}

/// Seeded generator with the small set of draws the project needs.
/// All sampling goes through this type so results are reproducible.
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    double uniform(double lo, double hi) {
        // 53-bit mantissa draw; avoids distribution objects so the byte
        // stream is pinned by this code alone.
        const double u = static_cast<double>(eng_() >> 11) * 0x1.0p-53;
        return lo + u * (hi - lo);
    }

    /// Standard normal via Box-Muller (cached pair).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform(0.0, 1.0);
        const double u2 = uniform(0.0, 1.0);
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    /// Uniform integer in [lo, hi] inclusive.
    int64_t randint(int64_t lo, int64_t hi) {
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        return lo + static_cast<int64_t>(eng_() % span);
    }

    uint64_t raw() { return eng_(); }

    /// Fisher-Yates shuffle.
    template <typename V>
    void shuffle(V& v) {
        for (int64_t i = static_cast<int64_t>(v.size()) - 1; i > 0; --i) {
            const int64_t j = randint(0, i);
            std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(j)]);
        }
    }

  private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// ---------------------------------------------------------------------------
// Hashing

/// FNV-1a 64-bit over a byte range.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ULL) {
    const auto* p = static_cast<const unsigned char*>(data);
    uint64_t h = seed;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// FNV-1a hash of a whole file's bytes. Throws IoError if unreadable.
uint64_t hash_file(const std::string& path);

}  // namespace tsnet
