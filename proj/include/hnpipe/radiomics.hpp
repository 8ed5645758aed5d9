#pragma once
#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <numbers>
#include <queue>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "error.hpp"
#include "volume.hpp"

namespace hnpipe::radiomics {

/// Ordered (name, value) pairs with unique names and finite values.
class FeatureVector {
public:
    void add(std::string name, double value)
    {
        if (!std::isfinite(value)) throw DegenerateInput("feature '" + name + "' is not finite");
        if (!names_.insert(name).second) throw InvalidArgument("duplicate feature name '" + name + "'");
        items_.emplace_back(std::move(name), value);
    }

    void append(const FeatureVector& other, const std::string& prefix = {})
    {
        for (const auto& [n, v] : other.items_) add(prefix + n, v);
    }

    double at(const std::string& name) const
    {
        for (const auto& [n, v] : items_)
            if (n == name) return v;
        throw InvalidArgument("no feature named '" + name + "'");
    }

    const std::vector<std::pair<std::string, double>>& items() const { return items_; }
    std::size_t size() const { return items_.size(); }

private:
    std::vector<std::pair<std::string, double>> items_;
    std::set<std::string> names_;
};

/// Gray levels (1..levels) of the in-mask voxels.
struct DiscretizedRoi {
    int levels = 0;
    std::vector<int> voxel_levels;
    std::vector<Index3> voxel_coords;
    Vec3 spacing{1.0, 1.0, 1.0};
    Index3 dims{1, 1, 1};

    std::size_t size() const { return voxel_levels.size(); }
};

using Direction = std::array<int, 3>;

/// The 13 unique offsets of the 26-neighbourhood (one of each +/- pair).
inline const std::vector<Direction>& all_directions()
{
    static const std::vector<Direction> dirs = [] {
        std::vector<Direction> out;
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    if (dz > 0 || (dz == 0 && dy > 0) || (dz == 0 && dy == 0 && dx > 0)) out.push_back({dx, dy, dz});
        return out;
    }();
    return dirs;
}

namespace detail {

inline std::vector<double> roi_values(const Volume& vol, const Mask& mask)
{
    if (!(vol.geom.dims == mask.geom.dims)) throw ShapeMismatch("radiomics: volume and mask dims differ");
    std::vector<double> v;
    for (std::size_t n = 0; n < vol.size(); ++n)
        if (mask.data[n]) v.push_back(vol.data[n]);
    if (v.empty()) throw DegenerateInput("radiomics: mask is empty");
    return v;
}

/// Dense label grid: level at ROI voxels, 0 elsewhere.
struct LevelGrid {
    Index3 dims;
    std::vector<int> level;

    explicit LevelGrid(const DiscretizedRoi& roi) : dims(roi.dims), level(roi.dims[0] * roi.dims[1] * roi.dims[2], 0)
    {
        for (std::size_t n = 0; n < roi.size(); ++n) level[index(roi.voxel_coords[n])] = roi.voxel_levels[n];
    }

    std::size_t index(const Index3& c) const { return c[0] + dims[0] * (c[1] + dims[1] * c[2]); }

    /// Level at c + d, or 0 when outside the grid or the ROI.
    int shifted(const Index3& c, const Direction& d, int steps = 1) const
    {
        std::array<std::ptrdiff_t, 3> p;
        for (int a = 0; a < 3; ++a) {
            p[a] = static_cast<std::ptrdiff_t>(c[a]) + steps * d[a];
            if (p[a] < 0 || p[a] >= static_cast<std::ptrdiff_t>(dims[a])) return 0;
        }
        return level[index({static_cast<std::size_t>(p[0]), static_cast<std::size_t>(p[1]), static_cast<std::size_t>(p[2])})];
    }
};

inline void require_roi(const DiscretizedRoi& roi)
{
    if (roi.size() == 0) throw DegenerateInput("radiomics: empty ROI");
}

} // namespace detail

// ---------------------------------------------------------------------------

/// Equal-width binning of the in-mask intensities over [min, max]; the
/// maximum maps to the top level and a constant ROI maps to level 1.
inline DiscretizedRoi discretize(const Volume& vol, const Mask& mask, int bins)
{
    if (bins < 2) throw InvalidArgument("discretize: need at least 2 bins");
    const auto values = detail::roi_values(vol, mask);
    const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    const double lo = *lo_it, width = *hi_it - *lo_it;

    DiscretizedRoi roi;
    roi.levels = bins;
    roi.spacing = vol.geom.spacing;
    roi.dims = vol.geom.dims;
    for (std::size_t n = 0; n < vol.size(); ++n) {
        if (!mask.data[n]) continue;
        int level = 1;
        if (width > 0.0) {
            level = static_cast<int>(std::floor((vol.data[n] - lo) / width * bins)) + 1;
            level = std::clamp(level, 1, bins);
        }
        roi.voxel_levels.push_back(level);
        roi.voxel_coords.push_back(vol.geom.coords(n));
    }
    return roi;
}

// ---------------------------------------------------------------------------
// First-order intensity statistics

struct Moments {
    double mean = 0.0;
    double variance = 0.0; // population
    double m3 = 0.0;
    double m4 = 0.0;
};

inline Moments central_moments(std::span<const double> v)
{
    Moments m;
    const double n = static_cast<double>(v.size());
    for (double x : v) m.mean += x;
    m.mean /= n;
    for (double x : v) {
        const double d = x - m.mean;
        m.variance += d * d;
        m.m3 += d * d * d;
        m.m4 += d * d * d * d;
    }
    m.variance /= n;
    m.m3 /= n;
    m.m4 /= n;
    return m;
}

inline double skewness(std::span<const double> v)
{
    const auto m = central_moments(v);
    if (!(m.variance > 0.0)) throw DegenerateInput("skewness undefined for a constant ROI");
    return m.m3 / std::pow(m.variance, 1.5);
}

/// Excess (Fisher) kurtosis.
inline double kurtosis(std::span<const double> v)
{
    const auto m = central_moments(v);
    if (!(m.variance > 0.0)) throw DegenerateInput("kurtosis undefined for a constant ROI");
    return m.m4 / (m.variance * m.variance) - 3.0;
}

/// Shannon entropy (bits) of a histogram with `bins` equal-width bins over [min, max].
inline double histogram_entropy(std::span<const double> v, int bins = 64)
{
    const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
    const double lo = *lo_it, width = *hi_it - *lo_it;
    if (!(width > 0.0)) return 0.0;
    std::vector<double> hist(static_cast<std::size_t>(bins), 0.0);
    for (double x : v) {
        const int b = std::clamp(static_cast<int>(std::floor((x - lo) / width * bins)), 0, bins - 1);
        hist[static_cast<std::size_t>(b)] += 1.0;
    }
    double h = 0.0;
    for (double c : hist) {
        if (c == 0.0) continue;
        const double p = c / static_cast<double>(v.size());
        h -= p * std::log2(p);
    }
    return h;
}

inline FeatureVector intensity_features(const Volume& vol, const Mask& mask)
{
    const auto v = detail::roi_values(vol, mask);
    const auto m = central_moments(v);
    FeatureVector f;
    f.add("mean", m.mean);
    f.add("variance", m.variance);
    f.add("skewness", skewness(v));
    f.add("kurtosis", kurtosis(v));
    f.add("entropy", histogram_entropy(v, 64));
    return f;
}

// ---------------------------------------------------------------------------
// Shape

/// Volume (mm^3), exposed voxel-face area (mm^2), and sphericity.
inline FeatureVector shape_features(const Mask& mask)
{
    const auto& g = mask.geom;
    const auto& d = g.dims;
    std::size_t count = 0;
    double area = 0.0;
    const double face[3] = {g.spacing[1] * g.spacing[2], g.spacing[0] * g.spacing[2], g.spacing[0] * g.spacing[1]};
    for (std::size_t k = 0; k < d[2]; ++k)
        for (std::size_t j = 0; j < d[1]; ++j)
            for (std::size_t i = 0; i < d[0]; ++i) {
                if (!mask.at(i, j, k)) continue;
                ++count;
                const std::size_t c[3] = {i, j, k};
                for (int a = 0; a < 3; ++a)
                    for (int s : {-1, 1}) {
                        const auto p = static_cast<std::ptrdiff_t>(c[a]) + s;
                        bool exposed = p < 0 || p >= static_cast<std::ptrdiff_t>(d[a]);
                        if (!exposed) {
                            std::size_t n[3] = {i, j, k};
                            n[a] = static_cast<std::size_t>(p);
                            exposed = !mask.at(n[0], n[1], n[2]);
                        }
                        if (exposed) area += face[a];
                    }
            }
    if (count == 0) throw DegenerateInput("shape features: mask is empty");
    const double volume = static_cast<double>(count) * g.spacing[0] * g.spacing[1] * g.spacing[2];
    FeatureVector f;
    f.add("volume", volume);
    f.add("surface_area", area);
    f.add("sphericity", std::cbrt(std::numbers::pi) * std::pow(6.0 * volume, 2.0 / 3.0) / area);
    return f;
}

// ---------------------------------------------------------------------------
// GLCM

/// Symmetrized, normalized co-occurrence matrix, indexed [i-1][j-1].
inline std::vector<std::vector<double>> glcm_matrix(const DiscretizedRoi& roi,
                                                    std::span<const Direction> dirs = all_directions())
{
    detail::require_roi(roi);
    const detail::LevelGrid grid(roi);
    const auto L = static_cast<std::size_t>(roi.levels);
    std::vector<std::vector<double>> p(L, std::vector<double>(L, 0.0));
    double total = 0.0;
    for (std::size_t n = 0; n < roi.size(); ++n)
        for (const auto& d : dirs) {
            const int b = grid.shifted(roi.voxel_coords[n], d);
            if (b == 0) continue;
            const auto ia = static_cast<std::size_t>(roi.voxel_levels[n] - 1), ib = static_cast<std::size_t>(b - 1);
            p[ia][ib] += 1.0;
            p[ib][ia] += 1.0;
            total += 2.0;
        }
    if (total == 0.0) throw DegenerateInput("GLCM: ROI has no neighbouring voxel pairs");
    for (auto& row : p)
        for (auto& v : row) v /= total;
    return p;
}

inline FeatureVector glcm_features(const DiscretizedRoi& roi, std::span<const Direction> dirs = all_directions())
{
    const auto p = glcm_matrix(roi, dirs);
    double contrast = 0.0, entropy = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        for (std::size_t j = 0; j < p.size(); ++j) {
            const double v = p[i][j];
            if (v == 0.0) continue;
            const double diff = static_cast<double>(i) - static_cast<double>(j);
            contrast += diff * diff * v;
            entropy -= v * std::log2(v);
        }
    FeatureVector f;
    f.add("glcm_contrast", contrast);
    f.add("glcm_joint_entropy", entropy);
    return f;
}

// ---------------------------------------------------------------------------
// GLRLM

/// Run counts indexed [level-1][length-1], merged over the given directions.
struct RunLengthMatrix {
    std::vector<std::vector<double>> counts;

    double total_runs() const
    {
        double s = 0.0;
        for (const auto& r : counts)
            for (double c : r) s += c;
        return s;
    }
};

inline RunLengthMatrix glrlm_matrix(const DiscretizedRoi& roi, std::span<const Direction> dirs = all_directions())
{
    detail::require_roi(roi);
    const detail::LevelGrid grid(roi);
    const std::size_t max_len = *std::max_element(roi.dims.begin(), roi.dims.end());
    RunLengthMatrix m{std::vector<std::vector<double>>(static_cast<std::size_t>(roi.levels),
                                                       std::vector<double>(max_len, 0.0))};
    for (const auto& d : dirs)
        for (std::size_t n = 0; n < roi.size(); ++n) {
            const int lvl = roi.voxel_levels[n];
            const auto& c = roi.voxel_coords[n];
            if (grid.shifted(c, d, -1) == lvl) continue; // not the start of a run
            std::size_t len = 1;
            while (grid.shifted(c, d, static_cast<int>(len)) == lvl) ++len;
            m.counts[static_cast<std::size_t>(lvl - 1)][len - 1] += 1.0;
        }
    return m;
}

inline FeatureVector glrlm_features(const DiscretizedRoi& roi, std::span<const Direction> dirs = all_directions())
{
    const auto m = glrlm_matrix(roi, dirs);
    const double nr = m.total_runs();
    double sre = 0.0, lre = 0.0;
    for (const auto& row : m.counts)
        for (std::size_t l = 0; l < row.size(); ++l) {
            const double len = static_cast<double>(l + 1);
            sre += row[l] / (len * len);
            lre += row[l] * len * len;
        }
    FeatureVector f;
    f.add("glrlm_short_run_emphasis", sre / nr);
    f.add("glrlm_long_run_emphasis", lre / nr);
    return f;
}

// ---------------------------------------------------------------------------
// GLSZM

/// Zone counts keyed by (level, size); zones are 26-connected equal-level components.
inline std::map<std::pair<int, std::size_t>, double> glszm_zones(const DiscretizedRoi& roi)
{
    detail::require_roi(roi);
    detail::LevelGrid grid(roi);
    std::vector<char> seen(grid.level.size(), 0);
    std::map<std::pair<int, std::size_t>, double> zones;
    std::vector<Index3> stack;
    for (std::size_t n = 0; n < roi.size(); ++n) {
        const auto start = roi.voxel_coords[n];
        if (seen[grid.index(start)]) continue;
        const int lvl = roi.voxel_levels[n];
        std::size_t size = 0;
        stack.assign(1, start);
        seen[grid.index(start)] = 1;
        while (!stack.empty()) {
            const auto c = stack.back();
            stack.pop_back();
            ++size;
            for (int dz = -1; dz <= 1; ++dz)
                for (int dy = -1; dy <= 1; ++dy)
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (!dx && !dy && !dz) continue;
                        if (grid.shifted(c, {dx, dy, dz}) != lvl) continue;
                        // in range, since shifted() found a level there
                        const auto off = [](std::size_t x, int dd) {
                            return static_cast<std::size_t>(static_cast<std::ptrdiff_t>(x) + dd);
                        };
                        const Index3 nb{off(c[0], dx), off(c[1], dy), off(c[2], dz)};
                        if (seen[grid.index(nb)]) continue;
                        seen[grid.index(nb)] = 1;
                        stack.push_back(nb);
                    }
        }
        zones[{lvl, size}] += 1.0;
    }
    return zones;
}

inline FeatureVector glszm_features(const DiscretizedRoi& roi)
{
    const auto zones = glszm_zones(roi);
    double nz = 0.0, sze = 0.0;
    std::map<std::size_t, double> per_size;
    for (const auto& [key, count] : zones) {
        const double s = static_cast<double>(key.second);
        nz += count;
        sze += count / (s * s);
        per_size[key.second] += count;
    }
    double zsn = 0.0;
    for (const auto& [s, c] : per_size) zsn += c * c;
    FeatureVector f;
    f.add("glszm_small_zone_emphasis", sze / nz);
    f.add("glszm_zone_size_nonuniformity", zsn / nz);
    return f;
}

// ---------------------------------------------------------------------------

struct RadiomicsConfig {
    bool ct = true;
    bool pet = true;
    int bins = 32;
};

/// The 14 features of one modality: 5 intensity, 3 shape, 2 GLCM, 2 GLRLM, 2 GLSZM.
inline FeatureVector modality_features(const Volume& vol, const Mask& mask, int bins)
{
    FeatureVector f;
    auto stage = [&](const char* name, auto&& fn) {
        try {
            f.append(fn());
        } catch (const Error& e) {
            throw DegenerateInput(std::string(name) + ": " + e.what());
        }
    };
    stage("intensity", [&] { return intensity_features(vol, mask); });
    stage("shape", [&] { return shape_features(mask); });
    const auto roi = discretize(vol, mask, bins);
    stage("glcm", [&] { return glcm_features(roi); });
    stage("glrlm", [&] { return glrlm_features(roi); });
    stage("glszm", [&] { return glszm_features(roi); });
    return f;
}

/// Concatenated ct_/pet_ features in a fixed order.
inline FeatureVector extract_all(const Volume& ct, const Volume& pet, const Mask& mask, const RadiomicsConfig& cfg = {})
{
    if (mask.empty_foreground()) throw DegenerateInput("radiomics: tumour mask is empty");
    FeatureVector out;
    if (cfg.ct) {
        try {
            out.append(modality_features(ct, mask, cfg.bins), "ct_");
        } catch (const Error& e) {
            throw DegenerateInput(std::string("ct_") + e.what());
        }
    }
    if (cfg.pet) {
        try {
            out.append(modality_features(pet, mask, cfg.bins), "pet_");
        } catch (const Error& e) {
            throw DegenerateInput(std::string("pet_") + e.what());
        }
    }
    return out;
}

} // namespace hnpipe::radiomics
