#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace lsic {

// Deterministic RNG. Distributions are hand-rolled (std:: distribution
// implementations differ between standard libraries) so seeded runs produce
// the same streams on the reference platform and stay stable across toolchain
// minor versions.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t bits() { return engine_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(engine_() >> 11) * (1.0 / 9007199254740992.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive range [lo, hi]
    int uniform_int(int lo, int hi) {
        return lo + static_cast<int>(engine_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    // standard normal via Box-Muller; spare value cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 1e-300);
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // derive an independent child stream; used for per-epoch reshuffles so
    // resuming at an epoch boundary replays the identical stream
    Rng fork(std::uint64_t salt) const {
        std::uint64_t s = mix(seed_tag_ ^ salt);
        Rng r(s);
        return r;
    }

    std::string serialize() const {
        std::ostringstream os;
        os << engine_ << " " << (has_spare_ ? 1 : 0) << " " << spare_ << " " << seed_tag_;
        return os.str();
    }

    void deserialize(const std::string& s) {
        std::istringstream is(s);
        int hs = 0;
        is >> engine_ >> hs >> spare_ >> seed_tag_;
        has_spare_ = hs != 0;
        if (!is) throw std::runtime_error("Rng: bad serialized state");
    }

    void set_tag(std::uint64_t t) { seed_tag_ = t; }

    static std::uint64_t mix(std::uint64_t x) {
        // splitmix64 finalizer
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
    std::uint64_t seed_tag_ = 0;
};

inline Rng seeded_rng(std::uint64_t seed) {
    Rng r(Rng::mix(seed));
    r.set_tag(seed);
    return r;
}

// FNV-1a; stable token hashing for out-of-vocabulary embedding buckets
inline std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace lsic
