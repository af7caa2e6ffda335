#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace mbfmri {

// All randomized behaviour in the library funnels through this sampler.
//
// std::normal_distribution is not pinned down by the standard (different
// stdlibs produce different streams), so gaussian variates come from an
// explicit Box-Muller transform over mt19937_64. That keeps simulated
// sessions byte-reproducible across compilers for a fixed seed.
class NormalSampler {
public:
    explicit NormalSampler(std::uint64_t seed) : engine_(seed) {}

    // Uniform on (0, 1]; never returns 0 so log() below is safe.
    double uniform() {
        const std::uint64_t v = engine_();
        return (static_cast<double>(v >> 11) + 1.0) * 0x1.0p-53;
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        const double u1 = uniform();
        const double u2 = uniform();
        const double radius = std::sqrt(-2.0 * std::log(u1));
        const double angle = 2.0 * M_PI * u2;
        spare_ = radius * std::sin(angle);
        have_spare_ = true;
        return radius * std::cos(angle);
    }

    std::uint64_t raw() { return engine_(); }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

// Seed for Monte Carlo replicate i of a run seeded with `base`. The odd
// multiplier decorrelates neighbouring replicate streams.
inline std::uint64_t replicate_seed(std::uint64_t base, std::uint64_t replicate) {
    return base ^ (0x9e3779b97f4a7c15ULL * (replicate + 1));
}

}  // namespace mbfmri
