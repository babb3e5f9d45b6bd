// Deterministic random source. All randomness in the project flows through
// this class so that a run is fully reproducible from its configured seed;
// distribution code is hand-rolled because the std distributions are
// implementation-defined and would break cross-toolchain reproducibility.
#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dfba {

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Derives independent stream seeds from one master seed. Streams are fixed
// per purpose (model init, batch sampling, attacks, ...) so that adding a
// consumer never perturbs the draws of another.
inline uint64_t derive_seed(uint64_t base, uint64_t stream) {
    return splitmix64(base ^ splitmix64(stream + 1));
}

class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1) with 53 random bits.
    double uniform() {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

    // Unbiased integer in [0, n).
    int64_t randint(int64_t n) {
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t r;
        do {
            r = eng_();
        } while (r >= limit);
        return static_cast<int64_t>(r % un);
    }

    // Standard normal via Box-Muller.
    double normal() {
        double u1 = uniform();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // N(0, stddev^2) truncated at +-clip*stddev, by rejection.
    double truncated_normal(double stddev, double clip = 2.0) {
        double z;
        do {
            z = normal();
        } while (std::fabs(z) > clip);
        return z * stddev;
    }

    template <typename It>
    void shuffle(It first, It last) {
        const int64_t n = static_cast<int64_t>(last - first);
        for (int64_t i = n - 1; i > 0; --i) {
            std::swap(first[i], first[randint(i + 1)]);
        }
    }

    // k distinct values from [0, n), in random order.
    std::vector<int64_t> sample_without_replacement(int64_t n, int64_t k) {
        std::vector<int64_t> pool(n);
        for (int64_t i = 0; i < n; ++i) pool[i] = i;
        for (int64_t i = 0; i < k; ++i) {
            std::swap(pool[i], pool[i + randint(n - i)]);
        }
        pool.resize(k);
        return pool;
    }

private:
    std::mt19937_64 eng_;
};

// Fixed stream ids for derive_seed.
namespace rng_stream {
inline constexpr uint64_t kTargetTraining = 1;
inline constexpr uint64_t kGeneratorInit = 2;
inline constexpr uint64_t kSubstituteInit = 3;
inline constexpr uint64_t kReconstructorInit = 4;
inline constexpr uint64_t kBatchSampling = 5;
inline constexpr uint64_t kAttack = 6;
inline constexpr uint64_t kEvaluation = 7;
inline constexpr uint64_t kTaskData = 8;
} // namespace rng_stream

} // namespace dfba
