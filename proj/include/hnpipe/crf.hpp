#pragma once
#include <array>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "parallel.hpp"
#include "volume.hpp"

namespace hnpipe::crf {

/// Free parameters of the two-kernel Gaussian-edge Potts CRF. The defaults
/// are engineering choices, not fitted values.
struct CrfParams {
    double w_appearance = 3.0;
    double w_smoothness = 1.0;
    double theta_alpha = 30.0; // mm, spatial bandwidth of the appearance kernel
    double theta_beta = 0.5;   // normalized intensity units
    double theta_gamma = 3.0;  // mm, spatial bandwidth of the smoothness kernel
    int iterations = 5;
    int neighborhood_radius = 7; // voxels per axis; 0 means all voxel pairs
    unsigned threads = 1;

    void validate() const
    {
        if (!(w_appearance >= 0.0) || !(w_smoothness >= 0.0)) throw InvalidArgument("crf: weights must be >= 0");
        if (!(theta_alpha > 0.0) || !(theta_beta > 0.0) || !(theta_gamma > 0.0))
            throw InvalidArgument("crf: kernel bandwidths must be > 0");
        if (iterations < 0) throw InvalidArgument("crf: iterations must be >= 0");
        if (neighborhood_radius < 0) throw InvalidArgument("crf: neighborhood radius must be >= 0");
    }
};

enum Label : std::size_t { background = 0, foreground = 1 };

/// Per-voxel label energies, [background, foreground].
struct Unary {
    Geometry geom;
    std::vector<std::array<double, 2>> energy;
};

/// Mean-field marginals Q_i(l); each voxel's pair sums to one.
struct LabelDistribution {
    Geometry geom;
    std::vector<std::array<double, 2>> q;

    ProbMap foreground_map() const
    {
        ProbMap p(geom);
        for (std::size_t i = 0; i < q.size(); ++i) p.data[i] = q[i][foreground];
        return p;
    }
};

inline Unary unary_from_prob(const ProbMap& map, double clamp = 1e-7)
{
    Unary u{map.geom, std::vector<std::array<double, 2>>(map.size())};
    for (std::size_t i = 0; i < map.size(); ++i) {
        const double p = std::clamp(map.data[i], clamp, 1.0 - clamp);
        u.energy[i] = {-std::log(1.0 - p), -std::log(p)};
    }
    return u;
}

namespace detail {

inline std::array<double, 2> normalize(double e_bg, double e_fg)
{
    // softmax of the negated energies
    const double m = std::min(e_bg, e_fg);
    const double a = std::exp(-(e_bg - m)), b = std::exp(-(e_fg - m));
    const double s = a + b;
    return {a / s, b / s};
}

struct Features {
    std::size_t channels = 0;
    std::vector<double> values; // voxel-major, `channels` per voxel
};

inline Features gather_features(const Geometry& g, std::span<const Volume> reference)
{
    Features f;
    f.channels = reference.size();
    f.values.resize(g.size() * f.channels);
    for (std::size_t c = 0; c < reference.size(); ++c) {
        if (!(reference[c].geom.dims == g.dims))
            throw ShapeMismatch("crf: reference volume " + std::to_string(c) + " dims differ from the unary grid");
        for (std::size_t i = 0; i < g.size(); ++i) f.values[i * f.channels + c] = reference[c].data[i];
    }
    return f;
}

inline double intensity_sqdist(const Features& f, std::size_t i, std::size_t j)
{
    double s = 0.0;
    for (std::size_t c = 0; c < f.channels; ++c) {
        const double d = f.values[i * f.channels + c] - f.values[j * f.channels + c];
        s += d * d;
    }
    return s;
}

inline double spatial_sqdist(const Geometry& g, std::ptrdiff_t dx, std::ptrdiff_t dy, std::ptrdiff_t dz)
{
    const double x = static_cast<double>(dx) * g.spacing[0];
    const double y = static_cast<double>(dy) * g.spacing[1];
    const double z = static_cast<double>(dz) * g.spacing[2];
    return x * x + y * y + z * z;
}

inline void check(const Unary& unary, const CrfParams& params)
{
    params.validate();
    unary.geom.validate();
    if (unary.energy.size() != unary.geom.size()) throw ShapeMismatch("crf: unary length does not match its grid");
}

inline LabelDistribution initial(const Unary& unary)
{
    LabelDistribution q{unary.geom, std::vector<std::array<double, 2>>(unary.energy.size())};
    for (std::size_t i = 0; i < q.q.size(); ++i) q.q[i] = normalize(unary.energy[i][0], unary.energy[i][1]);
    return q;
}

} // namespace detail

/// Pairwise kernel k(f_i, f_j) between two voxels.
inline double pairwise_kernel(const CrfParams& p, double spatial_sq, double intensity_sq)
{
    return p.w_appearance * std::exp(-spatial_sq / (2.0 * p.theta_alpha * p.theta_alpha) -
                                     intensity_sq / (2.0 * p.theta_beta * p.theta_beta)) +
           p.w_smoothness * std::exp(-spatial_sq / (2.0 * p.theta_gamma * p.theta_gamma));
}

/// Called after every iteration with the iteration number (1-based) and the current marginals.
using IterationObserver = std::function<void(int, const LabelDistribution&)>;

/// Synchronous mean-field updates with Potts compatibility. Pairwise sums run
/// over the (2r+1)^3 cube around each voxel, or over every voxel when r = 0.
inline LabelDistribution meanfield_refine(const Unary& unary, std::span<const Volume> reference,
                                          const CrfParams& params, const IterationObserver& observer = {})
{
    detail::check(unary, params);
    const Geometry& g = unary.geom;
    const auto feats = detail::gather_features(g, reference);
    auto cur = detail::initial(unary);
    if (params.iterations == 0) return cur;

    const auto& d = g.dims;
    const auto rad = [&](int axis) -> std::ptrdiff_t {
        if (params.neighborhood_radius == 0) return static_cast<std::ptrdiff_t>(d[axis]) - 1;
        return std::min<std::ptrdiff_t>(params.neighborhood_radius, static_cast<std::ptrdiff_t>(d[axis]) - 1);
    };
    const std::ptrdiff_t rx = rad(0), ry = rad(1), rz = rad(2);

    // offset tables for the spatial factors
    struct Offset {
        std::ptrdiff_t dx, dy, dz;
        double appearance_spatial; // w_a * exp(-d^2 / 2 theta_alpha^2)
        double smoothness;         // w_s * exp(-d^2 / 2 theta_gamma^2)
    };
    std::vector<Offset> offsets;
    for (std::ptrdiff_t dz = -rz; dz <= rz; ++dz)
        for (std::ptrdiff_t dy = -ry; dy <= ry; ++dy)
            for (std::ptrdiff_t dx = -rx; dx <= rx; ++dx) {
                if (dx == 0 && dy == 0 && dz == 0) continue;
                const double s2 = detail::spatial_sqdist(g, dx, dy, dz);
                offsets.push_back({dx, dy, dz,
                                   params.w_appearance * std::exp(-s2 / (2.0 * params.theta_alpha * params.theta_alpha)),
                                   params.w_smoothness * std::exp(-s2 / (2.0 * params.theta_gamma * params.theta_gamma))});
            }
    const double inv_beta = 1.0 / (2.0 * params.theta_beta * params.theta_beta);

    LabelDistribution next = cur;
    for (int it = 1; it <= params.iterations; ++it) {
        parallel_for(d[2], params.threads, [&](std::size_t k) {
            for (std::size_t j = 0; j < d[1]; ++j)
                for (std::size_t i = 0; i < d[0]; ++i) {
                    const std::size_t vi = g.index(i, j, k);
                    double msg_bg = 0.0, msg_fg = 0.0; // sum_j k_ij Q_j(other label)
                    for (const auto& o : offsets) {
                        const auto ni = static_cast<std::ptrdiff_t>(i) + o.dx;
                        const auto nj = static_cast<std::ptrdiff_t>(j) + o.dy;
                        const auto nk = static_cast<std::ptrdiff_t>(k) + o.dz;
                        if (ni < 0 || nj < 0 || nk < 0 || ni >= static_cast<std::ptrdiff_t>(d[0]) ||
                            nj >= static_cast<std::ptrdiff_t>(d[1]) || nk >= static_cast<std::ptrdiff_t>(d[2]))
                            continue;
                        const std::size_t vj = g.index(static_cast<std::size_t>(ni), static_cast<std::size_t>(nj),
                                                       static_cast<std::size_t>(nk));
                        double kern = o.smoothness;
                        if (o.appearance_spatial != 0.0)
                            kern += o.appearance_spatial * std::exp(-detail::intensity_sqdist(feats, vi, vj) * inv_beta);
                        msg_bg += kern * cur.q[vj][foreground];
                        msg_fg += kern * cur.q[vj][background];
                    }
                    next.q[vi] = detail::normalize(unary.energy[vi][0] + msg_bg, unary.energy[vi][1] + msg_fg);
                }
        });
        std::swap(cur, next);
        if (observer) observer(it, cur);
    }
    return cur;
}

/// Exhaustive O(N^2) mean-field with the identical update rule; a reference for tests.
inline LabelDistribution naive_meanfield(const Unary& unary, std::span<const Volume> reference,
                                         const CrfParams& params, const IterationObserver& observer = {})
{
    detail::check(unary, params);
    const Geometry& g = unary.geom;
    if (g.size() > 4096) throw InvalidArgument("naive mean-field: volume too large (limit 4096 voxels)");
    const auto feats = detail::gather_features(g, reference);
    auto cur = detail::initial(unary);
    for (int it = 1; it <= params.iterations; ++it) {
        LabelDistribution next = cur;
        for (std::size_t a = 0; a < g.size(); ++a) {
            const auto ca = g.coords(a);
            double msg_bg = 0.0, msg_fg = 0.0;
            for (std::size_t b = 0; b < g.size(); ++b) {
                if (a == b) continue;
                const auto cb = g.coords(b);
                const double s2 = detail::spatial_sqdist(
                    g, static_cast<std::ptrdiff_t>(cb[0]) - static_cast<std::ptrdiff_t>(ca[0]),
                    static_cast<std::ptrdiff_t>(cb[1]) - static_cast<std::ptrdiff_t>(ca[1]),
                    static_cast<std::ptrdiff_t>(cb[2]) - static_cast<std::ptrdiff_t>(ca[2]));
                const double kern = pairwise_kernel(params, s2, detail::intensity_sqdist(feats, a, b));
                msg_bg += kern * cur.q[b][foreground];
                msg_fg += kern * cur.q[b][background];
            }
            next.q[a] = detail::normalize(unary.energy[a][0] + msg_bg, unary.energy[a][1] + msg_fg);
        }
        cur = std::move(next);
        if (observer) observer(it, cur);
    }
    return cur;
}

struct RefineResult {
    Mask mask;
    ProbMap marginal; // foreground marginal
};

/// Unary from the probability map, mean-field over normalized CT/PET, then
/// threshold of the foreground marginal (>= threshold).
inline RefineResult refine_mask(const ProbMap& map, const Volume& ct, const Volume& pet, const CrfParams& params,
                                double threshold = 0.5)
{
    map.validate();
    if (!(ct.geom.dims == map.geom.dims) || !(pet.geom.dims == map.geom.dims))
        throw ShapeMismatch("refine: CT/PET grids must match the probability map");
    const std::array<Volume, 2> refs{ct, pet};
    const auto q = meanfield_refine(unary_from_prob(map), refs, params);
    auto marginal = q.foreground_map();
    auto mask = threshold_map(marginal, threshold);
    return {std::move(mask), std::move(marginal)};
}

/// Foreground voxels with no 26-connected foreground neighbour.
inline std::size_t count_isolated_voxels(const Mask& m)
{
    const auto& d = m.geom.dims;
    std::size_t count = 0;
    for (std::size_t k = 0; k < d[2]; ++k)
        for (std::size_t j = 0; j < d[1]; ++j)
            for (std::size_t i = 0; i < d[0]; ++i) {
                if (!m.at(i, j, k)) continue;
                bool lonely = true;
                for (int dz = -1; dz <= 1 && lonely; ++dz)
                    for (int dy = -1; dy <= 1 && lonely; ++dy)
                        for (int dx = -1; dx <= 1 && lonely; ++dx) {
                            if (!dx && !dy && !dz) continue;
                            const auto x = static_cast<std::ptrdiff_t>(i) + dx;
                            const auto y = static_cast<std::ptrdiff_t>(j) + dy;
                            const auto z = static_cast<std::ptrdiff_t>(k) + dz;
                            if (x < 0 || y < 0 || z < 0 || x >= static_cast<std::ptrdiff_t>(d[0]) ||
                                y >= static_cast<std::ptrdiff_t>(d[1]) || z >= static_cast<std::ptrdiff_t>(d[2]))
                                continue;
                            if (m.at(static_cast<std::size_t>(x), static_cast<std::size_t>(y), static_cast<std::size_t>(z)))
                                lonely = false;
                        }
                count += lonely;
            }
    return count;
}

} // namespace hnpipe::crf
