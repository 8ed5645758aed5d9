#pragma once
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"
#include "volume.hpp"

namespace hnpipe {

struct SegScore {
    double dsc = 0.0;
    double avg_hd = 0.0; // mm
    double hd95 = 0.0;   // mm
};

namespace detail {

inline void require_same_grid(const Mask& a, const Mask& b, const char* what)
{
    if (!(a.geom.dims == b.geom.dims)) throw ShapeMismatch(std::string(what) + ": mask dims differ");
    if (!(a.geom.spacing == b.geom.spacing)) throw ShapeMismatch(std::string(what) + ": mask spacing differs");
}

/// In-place 1D pass of the separable squared-distance transform:
/// out[q] = min_v in[v] + ((q - v) * step)^2, via the lower envelope of
/// parabolas. Near-ties in the envelope are resolved by evaluating the
/// neighbouring candidates, so the minimum equals brute-force evaluation.
inline void sqdist_pass(std::span<double> f, double step, std::vector<double>& out, std::vector<std::size_t>& v,
                        std::vector<double>& z)
{
    const std::size_t n = f.size();
    constexpr double inf = std::numeric_limits<double>::infinity();
    out.assign(n, inf);
    v.clear();
    z.clear();
    for (std::size_t q = 0; q < n; ++q) {
        if (!std::isfinite(f[q])) continue;
        const double fq = f[q] / (step * step) + static_cast<double>(q) * static_cast<double>(q);
        while (!v.empty()) {
            const std::size_t p = v.back();
            const double fp = f[p] / (step * step) + static_cast<double>(p) * static_cast<double>(p);
            const double s = (fq - fp) / (2.0 * (static_cast<double>(q) - static_cast<double>(p)));
            if (s <= z.back()) {
                v.pop_back();
                z.pop_back();
            } else {
                z.push_back(s);
                break;
            }
        }
        if (v.empty()) z.push_back(-inf);
        v.push_back(q);
    }
    if (v.empty()) return;
    auto eval = [&](std::size_t src, std::size_t q) {
        const double d = (static_cast<double>(q) - static_cast<double>(src)) * step;
        return f[src] + d * d;
    };
    std::size_t k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (k + 1 < v.size() && z[k + 1] < static_cast<double>(q)) ++k;
        double best = eval(v[k], q);
        if (k > 0) best = std::min(best, eval(v[k - 1], q));
        if (k + 1 < v.size()) best = std::min(best, eval(v[k + 1], q));
        out[q] = best;
    }
}

} // namespace detail

/// Squared Euclidean distance (mm^2) from every voxel to the nearest
/// foreground voxel of `target`; infinity everywhere when `target` is empty.
inline std::vector<double> squared_distance_map(const Mask& target)
{
    const auto& g = target.geom;
    const auto& d = g.dims;
    std::vector<double> f(g.size());
    for (std::size_t n = 0; n < f.size(); ++n)
        f[n] = target.data[n] ? 0.0 : std::numeric_limits<double>::infinity();

    std::vector<double> line, out, z;
    std::vector<std::size_t> v;
    for (int axis = 0; axis < 3; ++axis) {
        const std::size_t len = d[axis];
        const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? d[0] : d[0] * d[1]);
        line.resize(len);
        for (std::size_t base = 0; base < f.size(); ++base) {
            // visit each line once, from its first element
            if ((base / stride) % len != 0) continue;
            for (std::size_t t = 0; t < len; ++t) line[t] = f[base + t * stride];
            detail::sqdist_pass(line, g.spacing[axis], out, v, z);
            for (std::size_t t = 0; t < len; ++t) f[base + t * stride] = out[t];
        }
    }
    return f;
}

/// Per-voxel distances (mm) from each foreground voxel of `from` to the nearest
/// foreground voxel of `to`, in voxel order.
inline std::vector<double> directed_distances(const Mask& from, const Mask& to)
{
    detail::require_same_grid(from, to, "directed distances");
    if (from.empty_foreground()) throw DegenerateInput("directed distances: source mask is empty");
    if (to.empty_foreground()) throw DegenerateInput("directed distances: target mask is empty");
    const auto sq = squared_distance_map(to);
    std::vector<double> out;
    out.reserve(from.count());
    for (std::size_t n = 0; n < from.size(); ++n)
        if (from.data[n]) out.push_back(std::sqrt(sq[n]));
    return out;
}

/// Mean over `from` voxels of the distance to the nearest `to` voxel.
inline double directed_avg_hd(const Mask& from, const Mask& to)
{
    const auto d = directed_distances(from, to);
    return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
}

/// 2|P and G| / (|P| + |G|); 1 when both are empty.
inline double dice_similarity(const Mask& pred, const Mask& truth)
{
    if (!(pred.geom.dims == truth.geom.dims)) throw ShapeMismatch("dice: mask dims differ");
    std::size_t inter = 0, np = 0, ng = 0;
    for (std::size_t n = 0; n < pred.size(); ++n) {
        const bool p = pred.data[n] != 0, t = truth.data[n] != 0;
        np += p;
        ng += t;
        inter += p && t;
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(np + ng);
}

namespace detail {

inline void require_nonempty(const Mask& pred, const Mask& truth, const char* what)
{
    const bool pe = pred.empty_foreground(), te = truth.empty_foreground();
    if (pe && te) throw DegenerateInput(std::string(what) + ": prediction and ground-truth masks are empty");
    if (pe) throw DegenerateInput(std::string(what) + ": prediction mask is empty");
    if (te) throw DegenerateInput(std::string(what) + ": ground-truth mask is empty");
}

} // namespace detail

inline double average_hd(const Mask& pred, const Mask& truth)
{
    detail::require_same_grid(pred, truth, "average HD");
    detail::require_nonempty(pred, truth, "average HD");
    return 0.5 * (directed_avg_hd(truth, pred) + directed_avg_hd(pred, truth));
}

/// q-th percentile (q in [0,100]) with linear interpolation between closest ranks.
inline double percentile_linear(std::vector<double> values, double q)
{
    if (values.empty()) throw DegenerateInput("percentile of an empty set");
    if (!(q >= 0.0 && q <= 100.0)) throw InvalidArgument("percentile must lie in [0,100]");
    std::sort(values.begin(), values.end());
    const double pos = static_cast<double>(values.size() - 1) * q / 100.0;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return frac == 0.0 ? values[lo] : values[lo] + frac * (values[hi] - values[lo]);
}

/// 95th percentile of the pooled directed nearest-neighbour distances (both directions).
inline double hd95(const Mask& pred, const Mask& truth)
{
    detail::require_same_grid(pred, truth, "HD95");
    detail::require_nonempty(pred, truth, "HD95");
    auto pooled = directed_distances(pred, truth);
    const auto back = directed_distances(truth, pred);
    pooled.insert(pooled.end(), back.begin(), back.end());
    return percentile_linear(std::move(pooled), 95.0);
}

inline SegScore evaluate_pair(const Mask& pred, const Mask& truth)
{
    detail::require_same_grid(pred, truth, "evaluate");
    detail::require_nonempty(pred, truth, "evaluate");
    SegScore s;
    s.dsc = dice_similarity(pred, truth);
    auto p2g = directed_distances(pred, truth);
    const auto g2p = directed_distances(truth, pred);
    const auto mean = [](const std::vector<double>& d) {
        return std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(d.size());
    };
    s.avg_hd = 0.5 * (mean(g2p) + mean(p2g));
    p2g.insert(p2g.end(), g2p.begin(), g2p.end());
    s.hd95 = percentile_linear(std::move(p2g), 95.0);
    return s;
}

struct BatchScores {
    std::vector<SegScore> cases;
    SegScore mean;
};

/// Scores every (prediction, truth) pair; failures carry the case index.
inline BatchScores evaluate_batch(std::span<const std::pair<Mask, Mask>> pairs)
{
    if (pairs.empty()) throw InvalidArgument("evaluate_batch: no cases");
    BatchScores out;
    out.cases.reserve(pairs.size());
    for (std::size_t c = 0; c < pairs.size(); ++c) {
        try {
            out.cases.push_back(evaluate_pair(pairs[c].first, pairs[c].second));
        } catch (const Error& e) {
            throw Error("case " + std::to_string(c) + ": " + e.what());
        }
    }
    const double n = static_cast<double>(out.cases.size());
    for (const auto& s : out.cases) {
        out.mean.dsc += s.dsc;
        out.mean.avg_hd += s.avg_hd;
        out.mean.hd95 += s.hd95;
    }
    out.mean.dsc /= n;
    out.mean.avg_hd /= n;
    out.mean.hd95 /= n;
    return out;
}

} // namespace hnpipe
