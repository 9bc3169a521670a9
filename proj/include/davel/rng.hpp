#pragma once

#include <cmath>
#include <cstdint>
#include <utility>

namespace davel {

// Deterministic splitmix64-based generator. Identical seed gives an identical
// draw sequence on every platform; std:: distributions are avoided on purpose.
class SeededRng {
  public:
    explicit SeededRng(uint64_t seed) : seed_(seed), state_(seed) {}

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1) with 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double a, double b) { return a + (b - a) * uniform(); }

    // Uniform integer in [0, n), rejection-sampled to avoid modulo bias.
    int64_t uniform_int(int64_t n) {
        if (n <= 0) return 0;
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
        uint64_t x;
        do {
            x = next_u64();
        } while (x >= limit);
        return static_cast<int64_t>(x % un);
    }

    // Box-Muller with cached spare.
    double normal(double mu = 0.0, double sigma = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + sigma * spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return mu + sigma * r * std::cos(theta);
    }

    // Normal(0, sigma) resampled until |x| <= trunc.
    double truncated_normal(double sigma, double trunc) {
        double x;
        do {
            x = normal(0.0, sigma);
        } while (std::fabs(x) > trunc);
        return x;
    }

    // Derived substream; independent of draws already taken from this one.
    SeededRng fork(uint64_t stream) const {
        uint64_t z = seed_ ^ (0xD1B54A32D192ED03ULL * (stream + 1));
        z = (z ^ (z >> 29)) * 0xFF51AFD7ED558CCDULL;
        z = (z ^ (z >> 32)) * 0xC4CEB9FE1A85EC53ULL;
        return SeededRng(z ^ (z >> 32));
    }

    template <typename It>
    void shuffle(It first, It last) {
        const int64_t n = static_cast<int64_t>(last - first);
        for (int64_t i = n - 1; i > 0; --i) {
            std::swap(first[i], first[uniform_int(i + 1)]);
        }
    }

  private:
    uint64_t seed_ = 0;
    uint64_t state_ = 0;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace davel
