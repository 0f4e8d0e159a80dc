#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace attrvit {

// splitmix64-based generator. Standard-library distributions are
// implementation-defined, which would break the bit-reproducibility
// contracts (seeded runs, checkpoint resume), so all draws are owned here.
// The whole state is one u64 and round-trips through checkpoints.
class Rng {
  public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53 bits.
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    // One Box-Muller value per call; no cached second draw so the state
    // alone determines the sequence.
    double normal() {
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586477 * u2);
    }

    // Normal(0, stddev) redrawn until |x| <= clip * stddev.
    double truncated_normal(double stddev, double clip = 2.0) {
        double x = 0.0;
        do {
            x = normal();
        } while (std::fabs(x) > clip);
        return x * stddev;
    }

    // Uniform integer in [0, n). Modulo bias is irrelevant here; determinism
    // is what matters.
    uint64_t below(uint64_t n) { return n ? next() % n : 0; }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    uint64_t state() const { return state_; }
    void set_state(uint64_t s) { state_ = s; }

  private:
    uint64_t state_;
};

}  // namespace attrvit
