#pragma once

#include <cstdint>
#include <cmath>

namespace meta {

// Counter-based random stream. A draw is a pure function of
// (seed, stream_id, counter), so parallel workers get identical sequences
// regardless of scheduling as long as they use disjoint stream ids.
class RngStream {
public:
    RngStream() = default;
    RngStream(std::uint64_t seed, std::uint64_t stream_id, std::uint64_t counter = 0)
        : seed_(seed), stream_(stream_id), counter_(counter) {}

    // Derive an independent stream, e.g. per ES member or per rollout env.
    RngStream substream(std::uint64_t id) const {
        return RngStream(seed_, mix(mix(stream_ ^ 0x9e3779b97f4a7c15ull, id), 0x6a09e667f3bcc909ull), 0);
    }

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64() {
        std::uint64_t v = mix(seed_, mix(stream_, counter_));
        ++counter_;
        return v;
    }

    // Uniform on (0, 1); never returns exactly 0 or 1.
    double uniform() {
        return (static_cast<double>(next_u64() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Integer in [0, n), n >= 1.
    std::uint64_t uniform_int(std::uint64_t n) {
        return next_u64() % n;
    }

    // Standard normal via Box-Muller; consumes two counters.
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
        // splitmix64 finalizer over a combined word
        std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    std::uint64_t seed_ = 0;
    std::uint64_t stream_ = 0;
    std::uint64_t counter_ = 0;
};

} // namespace meta
