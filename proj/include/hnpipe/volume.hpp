#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace hnpipe {

using Index3 = std::array<std::size_t, 3>;
using Vec3 = std::array<double, 3>;

/// Grid placement in physical space. Voxel (i,j,k) has its center at
/// origin + (index + 0.5) * spacing, in millimetres.
struct Geometry {
    Index3 dims{1, 1, 1};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};

    std::size_t size() const { return dims[0] * dims[1] * dims[2]; }

    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const
    {
        return i + dims[0] * (j + dims[1] * k);
    }

    Index3 coords(std::size_t linear) const
    {
        return {linear % dims[0], (linear / dims[0]) % dims[1], linear / (dims[0] * dims[1])};
    }

    bool operator==(const Geometry&) const = default;

    void validate() const
    {
        for (int a = 0; a < 3; ++a) {
            if (dims[a] == 0) throw InvalidArgument("geometry: dims must be positive");
            if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
                throw InvalidArgument("geometry: spacing must be positive and finite");
            if (!std::isfinite(origin[a])) throw InvalidArgument("geometry: origin must be finite");
        }
    }
};

/// Dense scalar grid stored x-fastest.
template <class T>
struct Grid {
    Geometry geom;
    std::vector<T> data;

    Grid() = default;
    explicit Grid(Geometry g, T fill = T{}) : geom(g), data(g.size(), fill) { geom.validate(); }
    Grid(Geometry g, std::vector<T> values) : geom(g), data(std::move(values))
    {
        geom.validate();
        if (data.size() != geom.size())
            throw ShapeMismatch("grid: data length " + std::to_string(data.size()) +
                                " does not match dims product " + std::to_string(geom.size()));
    }

    const Index3& dims() const { return geom.dims; }
    std::size_t size() const { return data.size(); }

    T& at(std::size_t i, std::size_t j, std::size_t k) { return data[geom.index(i, j, k)]; }
    const T& at(std::size_t i, std::size_t j, std::size_t k) const { return data[geom.index(i, j, k)]; }

    bool operator==(const Grid&) const = default;
};

/// CT (HU) or PET (SUV) intensities.
struct Volume : Grid<double> {
    using Grid<double>::Grid;

    void validate() const
    {
        geom.validate();
        for (double v : data)
            if (!std::isfinite(v)) throw InvalidArgument("volume: non-finite voxel value");
    }
};

/// Per-voxel foreground probability.
struct ProbMap : Grid<double> {
    using Grid<double>::Grid;

    void validate() const
    {
        geom.validate();
        for (double v : data)
            if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("probability map: value outside [0,1]");
    }

    static ProbMap from_volume(const Volume& v)
    {
        ProbMap p(v.geom, v.data);
        p.validate();
        return p;
    }
};

/// Binary label grid; 1 marks foreground.
struct Mask : Grid<std::uint8_t> {
    using Grid<std::uint8_t>::Grid;

    std::size_t count() const
    {
        return static_cast<std::size_t>(std::count_if(data.begin(), data.end(), [](auto v) { return v != 0; }));
    }
    bool empty_foreground() const { return count() == 0; }

    static Mask from_volume(const Volume& v)
    {
        Mask m(v.geom);
        for (std::size_t n = 0; n < v.size(); ++n) {
            if (v.data[n] != 0.0 && v.data[n] != 1.0) throw InvalidArgument("mask: values must be 0 or 1");
            m.data[n] = v.data[n] != 0.0 ? 1 : 0;
        }
        return m;
    }
};

template <class G>
Volume to_volume(const G& g)
{
    Volume v(g.geom);
    for (std::size_t n = 0; n < g.size(); ++n) v.data[n] = static_cast<double>(g.data[n]);
    return v;
}

struct BoundingBox {
    Index3 start{0, 0, 0};
    Index3 size{1, 1, 1};

    void validate_within(const Index3& dims) const
    {
        for (int a = 0; a < 3; ++a) {
            if (size[a] == 0) throw InvalidArgument("bounding box: size must be positive");
            if (start[a] + size[a] > dims[a])
                throw InvalidArgument("bounding box exceeds volume along axis " + std::to_string(a) + ": " +
                                      std::to_string(start[a]) + "+" + std::to_string(size[a]) + " > " +
                                      std::to_string(dims[a]));
        }
    }
};

// ---------------------------------------------------------------------------
// Resampling

namespace detail {

inline double sample_trilinear(const Volume& vol, double u, double v, double w)
{
    const auto& d = vol.geom.dims;
    auto split = [](double x, std::size_t n, std::size_t& i0, std::size_t& i1, double& f) {
        x = std::clamp(x, 0.0, static_cast<double>(n - 1));
        const double fl = std::floor(x);
        i0 = static_cast<std::size_t>(fl);
        i1 = std::min(i0 + 1, n - 1);
        f = x - fl;
    };
    std::size_t x0, x1, y0, y1, z0, z1;
    double fx, fy, fz;
    split(u, d[0], x0, x1, fx);
    split(v, d[1], y0, y1, fy);
    split(w, d[2], z0, z1, fz);

    // exact passthrough when a coordinate lands on a sample
    auto lerp = [](double a, double b, double f) { return f == 0.0 ? a : (f == 1.0 ? b : a + f * (b - a)); };
    const double c00 = lerp(vol.at(x0, y0, z0), vol.at(x1, y0, z0), fx);
    const double c10 = lerp(vol.at(x0, y1, z0), vol.at(x1, y1, z0), fx);
    const double c01 = lerp(vol.at(x0, y0, z1), vol.at(x1, y0, z1), fx);
    const double c11 = lerp(vol.at(x0, y1, z1), vol.at(x1, y1, z1), fx);
    return lerp(lerp(c00, c10, fy), lerp(c01, c11, fy), fz);
}

} // namespace detail

/// Resamples onto a grid covering the same physical extent with the requested
/// spacing. Coordinates beyond the outermost voxel centers clamp to the edge.
inline Volume resample_trilinear(const Volume& vol, const Vec3& target_spacing)
{
    for (double s : target_spacing)
        if (!(s > 0.0) || !std::isfinite(s)) throw InvalidArgument("resample: target spacing must be positive");

    Geometry out;
    out.origin = vol.geom.origin;
    out.spacing = target_spacing;
    for (int a = 0; a < 3; ++a) {
        const double extent = static_cast<double>(vol.geom.dims[a]) * vol.geom.spacing[a];
        out.dims[a] = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(extent / target_spacing[a])));
    }

    Volume res(out);
    Vec3 ratio;
    for (int a = 0; a < 3; ++a) ratio[a] = out.spacing[a] / vol.geom.spacing[a];
    for (std::size_t k = 0; k < out.dims[2]; ++k) {
        const double w = (static_cast<double>(k) + 0.5) * ratio[2] - 0.5;
        for (std::size_t j = 0; j < out.dims[1]; ++j) {
            const double v = (static_cast<double>(j) + 0.5) * ratio[1] - 0.5;
            for (std::size_t i = 0; i < out.dims[0]; ++i) {
                const double u = (static_cast<double>(i) + 0.5) * ratio[0] - 0.5;
                res.at(i, j, k) = detail::sample_trilinear(vol, u, v, w);
            }
        }
    }
    return res;
}

// ---------------------------------------------------------------------------
// Intensity normalization

struct MeanStd {
    double mean = 0.0;
    double stddev = 0.0;
};

inline MeanStd population_stats(std::span<const double> values)
{
    if (values.empty()) throw DegenerateInput("statistics of an empty set");
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return {mean, std::sqrt(ss / n)};
}

/// Standardizes to zero mean and unit population standard deviation.
inline Volume zscore_normalize(const Volume& vol)
{
    const auto st = population_stats(vol.data);
    if (!(st.stddev > 0.0)) throw DegenerateInput("zscore: volume has zero variance");
    Volume out = vol;
    for (double& v : out.data) v = (v - st.mean) / st.stddev;
    return out;
}

/// Optionally divides by `prescale`, then clamps into [lo, hi].
inline Volume clip_intensities(const Volume& vol, double lo, double hi, std::optional<double> prescale = std::nullopt)
{
    if (!(lo < hi)) throw InvalidArgument("clip: lower bound must be below upper bound");
    if (prescale && (*prescale == 0.0 || !std::isfinite(*prescale)))
        throw InvalidArgument("clip: prescale divisor must be finite and non-zero");
    Volume out = vol;
    for (double& v : out.data) {
        if (prescale) v /= *prescale;
        v = std::min(hi, std::max(lo, v));
    }
    return out;
}

template <class G>
G crop_to_box(const G& vol, const BoundingBox& box)
{
    box.validate_within(vol.geom.dims);
    Geometry g = vol.geom;
    g.dims = box.size;
    for (int a = 0; a < 3; ++a) g.origin[a] = vol.geom.origin[a] + static_cast<double>(box.start[a]) * vol.geom.spacing[a];
    G out(g);
    for (std::size_t k = 0; k < g.dims[2]; ++k)
        for (std::size_t j = 0; j < g.dims[1]; ++j)
            for (std::size_t i = 0; i < g.dims[0]; ++i)
                out.at(i, j, k) = vol.at(box.start[0] + i, box.start[1] + j, box.start[2] + k);
    return out;
}

// ---------------------------------------------------------------------------
// Ensembling

inline ProbMap ensemble_mean(std::span<const ProbMap> maps)
{
    if (maps.empty()) throw InvalidArgument("ensemble: no probability maps given");
    const Geometry& g = maps.front().geom;
    for (const auto& m : maps)
        if (!(m.geom.dims == g.dims) || !(m.geom.spacing == g.spacing))
            throw ShapeMismatch("ensemble: probability maps differ in dims or spacing");

    ProbMap out(g);
    const double n = static_cast<double>(maps.size());
    std::vector<double> vals(maps.size());
    for (std::size_t v = 0; v < out.size(); ++v) {
        // summing in sorted order makes the result independent of list order
        for (std::size_t m = 0; m < maps.size(); ++m) vals[m] = maps[m].data[v];
        std::sort(vals.begin(), vals.end());
        const double s = std::accumulate(vals.begin(), vals.end(), 0.0);
        out.data[v] = std::clamp(s / n, 0.0, 1.0);
    }
    return out;
}

/// Foreground where probability >= t.
inline Mask threshold_map(const ProbMap& map, double t)
{
    if (!(t >= 0.0 && t <= 1.0)) throw InvalidArgument("threshold must lie in [0,1]");
    Mask m(map.geom);
    for (std::size_t v = 0; v < map.size(); ++v) m.data[v] = map.data[v] >= t ? 1 : 0;
    return m;
}

} // namespace hnpipe
