#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <stdexcept>

namespace ivrl {

// splitmix64 finalizer; used to derive independent stream seeds from a root
// seed plus a path of tags, e.g. derive_seed(root, {kStreamData, traj_index}).
inline std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> path) {
    std::uint64_t s = mix64(root);
    for (std::uint64_t p : path) s = mix64(s ^ mix64(p + 0x632be59bd9b4e019ULL));
    return s;
}

// Fixed stream tags so every consumer of randomness draws from its own
// substream of the run's root seed.
enum StreamTag : std::uint64_t {
    kStreamData = 1,
    kStreamNoise = 2,
    kStreamZeroOrder = 3,
    kStreamCandidates = 4,
    kStreamEval = 5,
    kStreamNu = 6,
    kStreamCalibration = 7,
};

// Deterministic RNG. mt19937_64 has a standard-mandated output sequence and
// all transformations below avoid libstdc++ distribution objects, so streams
// are reproducible bit-for-bit across platforms and standard libraries.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // uniform double in [0, 1) with 53 random bits
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; consumes exactly two uniforms per call (no cached partner,
    // keeping the draw count per step fixed).
    double normal(double mean, double sd) {
        double u1 = uniform();
        double u2 = uniform();
        // guard log(0)
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + sd * r * std::cos(6.283185307179586476925286766559 * u2);
    }

    // inverse-CDF draw from an unnormalized nonnegative weight vector
    int categorical(std::span<const double> weights) {
        double total = 0.0;
        for (double w : weights) total += w;
        if (!(total > 0.0)) throw std::invalid_argument("categorical: weights sum to zero");
        double u = uniform() * total;
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return static_cast<int>(i);
        }
        return static_cast<int>(weights.size()) - 1;
    }

    std::uint64_t next_u64() { return gen_(); }

  private:
    std::mt19937_64 gen_;
};

}  // namespace ivrl
