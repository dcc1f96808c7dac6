#pragma once

#include <cmath>
#include <cstdint>

namespace sunsense {

/// Counter-based pseudo-random stream. Draw n is a pure function of
/// (seed, stream id, n), so trials keyed by stream id reproduce bit-for-bit
/// regardless of execution order or thread count.
class RandomStream {
public:
    RandomStream(uint64_t seed, uint64_t stream_id)
        : seed_(seed), id_(stream_id) {}

    uint64_t seed() const { return seed_; }
    uint64_t stream_id() const { return id_; }

    /// Independent child stream, e.g. one per trial index.
    RandomStream substream(uint64_t child_id) const {
        return RandomStream(seed_, mix(id_ ^ mix(child_id + 0x9e3779b97f4a7c15ull)));
    }

    uint64_t next_u64() {
        uint64_t v = seed_ ^ mix(id_ + 0x632be59bd9b4e019ull);
        v = mix(v + counter_ * 0x9e3779b97f4a7c15ull);
        ++counter_;
        return v;
    }

    /// Uniform in [0, 1).
    double uniform() {
        return (next_u64() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller; one spare cached per pair.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double t = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(t);
        have_spare_ = true;
        return r * std::cos(t);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    /// Poisson draw for shot noise; normal approximation above 64.
    long poisson(double mean) {
        if (mean <= 0.0) return 0;
        if (mean > 64.0) {
            const double v = std::round(mean + std::sqrt(mean) * normal());
            return v < 0.0 ? 0 : static_cast<long>(v);
        }
        const double limit = std::exp(-mean);
        long k = 0;
        double prod = uniform();
        while (prod > limit) {
            ++k;
            prod *= uniform();
        }
        return k;
    }

private:
    // splitmix64 finalizer
    static uint64_t mix(uint64_t z) {
        z += 0x9e3779b97f4a7c15ull;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t seed_;
    uint64_t id_;
    uint64_t counter_ = 0;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

} // namespace sunsense
