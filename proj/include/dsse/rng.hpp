#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

#include "dsse/common.hpp"

namespace dsse {

/// Deterministic splittable random stream (splitmix64 core, Box-Muller
/// normals). Identical seeds produce identical sequences on every platform;
/// child streams are derived from string tags so parallel scenario parts
/// stay reproducible regardless of evaluation order.
class RandomStream {
public:
    explicit RandomStream(uint64_t seed) : state_(scramble(seed ^ 0xd1b54a32d192ed03ULL)) {}

    RandomStream child(std::string_view tag) const {
        uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
        for (char ch : tag) {
            h ^= static_cast<unsigned char>(ch);
            h *= 0x100000001b3ULL;
        }
        return RandomStream(scramble(state_ ^ h));
    }

    RandomStream child(uint64_t tag) const {
        return RandomStream(scramble(state_ ^ (tag * 0x9e3779b97f4a7c15ULL)));
    }

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    double uniform() { return (next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 1e-300) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        spare_ = r * std::sin(2.0 * kPi * u2);
        have_spare_ = true;
        return r * std::cos(2.0 * kPi * u2);
    }

    cxd cnormal() { return {normal(), normal()}; }

private:
    static uint64_t scramble(uint64_t x) {
        x = (x ^ (x >> 33)) * 0xff51afd7ed558ccdULL;
        x = (x ^ (x >> 33)) * 0xc4ceb9fe1a85ec53ULL;
        return x ^ (x >> 33);
    }

    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

}  // namespace dsse
