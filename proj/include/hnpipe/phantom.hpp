#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "volume.hpp"

namespace hnpipe {

/// Seeded noisy-sphere phantom: a tumour sphere that is bright on PET and
/// slightly dense on CT, plus a network-like probability map whose voxels are
/// perturbed with Gaussian noise.
struct PhantomSpec {
    std::size_t size = 20;       // cubic grid edge, voxels
    double spacing = 1.0;        // mm
    double radius = 5.0;         // mm
    double prob_noise = 0.15;    // std of additive noise on the probability map
    double intensity_noise = 0.05;
    double fg_prob = 0.8;        // noiseless probability inside the sphere
    double bg_prob = 0.2;        // noiseless probability outside
    std::uint64_t seed = 1;
};

struct Phantom {
    Volume ct;  // normalized units
    Volume pet; // normalized units
    Mask truth;
    ProbMap prob;
    Vec3 center{};
};

inline Phantom make_noisy_sphere(const PhantomSpec& spec)
{
    std::mt19937_64 rng(spec.seed);
    Geometry g;
    g.dims = {spec.size, spec.size, spec.size};
    g.spacing = {spec.spacing, spec.spacing, spec.spacing};

    const double extent = static_cast<double>(spec.size) * spec.spacing;
    std::uniform_real_distribution<double> jitter(-0.1 * extent, 0.1 * extent);
    Phantom ph{Volume(g), Volume(g), Mask(g), ProbMap(g), {}};
    for (int a = 0; a < 3; ++a) ph.center[a] = 0.5 * extent + jitter(rng);

    std::normal_distribution<double> inoise(0.0, spec.intensity_noise);
    std::normal_distribution<double> pnoise(0.0, spec.prob_noise);
    for (std::size_t n = 0; n < g.size(); ++n) {
        const auto c = g.coords(n);
        double r2 = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double x = (static_cast<double>(c[a]) + 0.5) * spec.spacing - ph.center[a];
            r2 += x * x;
        }
        const bool inside = r2 <= spec.radius * spec.radius;
        ph.truth.data[n] = inside ? 1 : 0;
        const double ni = spec.intensity_noise > 0.0 ? inoise(rng) : 0.0;
        const double np = spec.intensity_noise > 0.0 ? inoise(rng) : 0.0;
        ph.ct.data[n] = (inside ? 0.3 : 0.0) + ni;
        ph.pet.data[n] = (inside ? 3.0 : 0.0) + np;
        const double noise = spec.prob_noise > 0.0 ? pnoise(rng) : 0.0;
        ph.prob.data[n] = std::clamp((inside ? spec.fg_prob : spec.bg_prob) + noise, 0.0, 1.0);
    }
    return ph;
}

/// Another network-like map for the same truth, drawn from its own noise stream.
inline ProbMap noisy_probability_map(const Mask& truth, double fg_prob, double bg_prob, double noise, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> pnoise(0.0, noise);
    ProbMap p(truth.geom);
    for (std::size_t n = 0; n < p.data.size(); ++n)
        p.data[n] = std::clamp((truth.data[n] ? fg_prob : bg_prob) + (noise > 0.0 ? pnoise(rng) : 0.0), 0.0, 1.0);
    return p;
}

} // namespace hnpipe
