#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "parallel.hpp"
#include "survival.hpp"

namespace hnpipe::survival {

struct RsfOptions {
    int n_trees = 100;
    int mtry = 0; // 0: ceil(sqrt(p))
    int min_leaf = 3;
    std::uint64_t seed = 0;
    bool bootstrap = true;
    unsigned threads = 1;
};

struct TreeNode {
    int feature = -1; // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int leaf = -1;     // index into SurvivalTree::leaves
    double samples = 0; // training samples reaching the node, bootstrap copies included
};

struct SurvivalTree {
    std::vector<TreeNode> nodes;
    std::vector<std::vector<double>> leaves; // cumulative hazard on the forest time grid

    const std::vector<double>& leaf_for(const Eigen::Ref<const Eigen::RowVectorXd>& x) const
    {
        int n = 0;
        while (nodes[static_cast<std::size_t>(n)].feature >= 0) {
            const auto& node = nodes[static_cast<std::size_t>(n)];
            n = x(node.feature) <= node.threshold ? node.left : node.right;
        }
        return leaves[static_cast<std::size_t>(nodes[static_cast<std::size_t>(n)].leaf)];
    }
};

struct RsfModel {
    std::vector<std::string> names;
    std::vector<double> time_grid; // distinct training event times
    std::vector<SurvivalTree> trees;
    RsfOptions options;
    int features = 0;
};

namespace detail {

struct SplitChoice {
    int feature = -1;
    double threshold = 0.0;
    double statistic = 0.0;
};

class TreeBuilder {
public:
    TreeBuilder(const SurvivalDataset& data, const std::vector<double>& grid, const RsfOptions& opt, int mtry,
                std::uint64_t seed)
        : data_(data), grid_(grid), opt_(opt), mtry_(mtry), rng_(seed)
    {
    }

    SurvivalTree build()
    {
        const std::size_t n = data_.size();
        std::vector<std::size_t> sample;
        if (opt_.bootstrap) {
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            for (std::size_t i = 0; i < n; ++i) sample.push_back(pick(rng_));
        } else {
            sample.resize(n);
            std::iota(sample.begin(), sample.end(), 0);
        }
        grow(sample);
        return std::move(tree_);
    }

private:
    int grow(const std::vector<std::size_t>& sample)
    {
        const int id = static_cast<int>(tree_.nodes.size());
        tree_.nodes.emplace_back();
        tree_.nodes.back().samples = static_cast<double>(sample.size());
        bool any_event = false;
        for (auto i : sample) any_event |= data_.event[i] == 1;
        SplitChoice best;
        if (any_event && sample.size() >= 2 * static_cast<std::size_t>(opt_.min_leaf)) best = choose(sample);
        if (best.feature < 0) {
            tree_.nodes[static_cast<std::size_t>(id)].leaf = static_cast<int>(tree_.leaves.size());
            tree_.leaves.push_back(leaf_curve(sample));
            return id;
        }
        std::vector<std::size_t> l, r;
        for (auto i : sample)
            (data_.x(static_cast<Eigen::Index>(i), best.feature) <= best.threshold ? l : r).push_back(i);
        const int left = grow(l);
        const int right = grow(r);
        auto& node = tree_.nodes[static_cast<std::size_t>(id)];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = left;
        node.right = right;
        return id;
    }

    std::vector<double> leaf_curve(const std::vector<std::size_t>& sample) const
    {
        std::vector<double> t;
        std::vector<int> e;
        for (auto i : sample) {
            t.push_back(data_.time[i]);
            e.push_back(data_.event[i]);
        }
        const auto na = nelson_aalen(t, e);
        std::vector<double> out(grid_.size());
        for (std::size_t g = 0; g < grid_.size(); ++g) out[g] = na.at(grid_[g]);
        return out;
    }

    // Best log-rank split over a random subset of mtry features.
    SplitChoice choose(const std::vector<std::size_t>& sample)
    {
        const auto p = static_cast<int>(data_.x.cols());
        std::vector<int> features(static_cast<std::size_t>(p));
        std::iota(features.begin(), features.end(), 0);
        for (int k = 0; k < mtry_; ++k) {
            std::uniform_int_distribution<int> pick(k, p - 1);
            std::swap(features[static_cast<std::size_t>(k)], features[static_cast<std::size_t>(pick(rng_))]);
        }

        // node event-time table: distinct event times, deaths and number at risk
        std::vector<double> times;
        for (auto i : sample)
            if (data_.event[i]) times.push_back(data_.time[i]);
        std::sort(times.begin(), times.end());
        times.erase(std::unique(times.begin(), times.end()), times.end());
        const std::size_t m = times.size();
        std::vector<double> deaths(m, 0.0), at_risk(m, 0.0);
        std::vector<std::size_t> slot(sample.size()); // first time index strictly above the subject's time
        for (std::size_t s = 0; s < sample.size(); ++s) {
            const auto i = sample[s];
            slot[s] = static_cast<std::size_t>(std::upper_bound(times.begin(), times.end(), data_.time[i]) - times.begin());
            for (std::size_t k = 0; k < slot[s]; ++k) at_risk[k] += 1.0;
            if (data_.event[i]) deaths[slot[s] - 1] += 1.0;
        }

        SplitChoice best;
        const std::size_t min_leaf = static_cast<std::size_t>(opt_.min_leaf);
        std::vector<std::size_t> order(sample.size());
        std::vector<double> dl(m), yl(m);
        for (int k = 0; k < mtry_; ++k) {
            const int f = features[static_cast<std::size_t>(k)];
            auto value = [&](std::size_t s) { return data_.x(static_cast<Eigen::Index>(sample[s]), f); };
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return value(a) < value(b); });
            std::fill(dl.begin(), dl.end(), 0.0);
            std::fill(yl.begin(), yl.end(), 0.0);
            for (std::size_t c = 0; c + 1 < order.size(); ++c) {
                const auto s = order[c];
                for (std::size_t t = 0; t < slot[s]; ++t) yl[t] += 1.0;
                if (data_.event[sample[s]]) dl[slot[s] - 1] += 1.0;
                const double v = value(s), next = value(order[c + 1]);
                if (v == next) continue;
                if (c + 1 < min_leaf || order.size() - c - 1 < min_leaf) continue;
                double num = 0.0, var = 0.0;
                for (std::size_t t = 0; t < m; ++t) {
                    const double y = at_risk[t], d = deaths[t];
                    num += dl[t] - yl[t] * d / y;
                    if (y > 1.0) var += (yl[t] / y) * (1.0 - yl[t] / y) * ((y - d) / (y - 1.0)) * d;
                }
                if (!(var > 0.0)) continue;
                const double stat = num * num / var;
                if (stat > best.statistic) {
                    best.feature = f;
                    best.threshold = 0.5 * (v + next);
                    best.statistic = stat;
                }
            }
        }
        return best;
    }

    const SurvivalDataset& data_;
    const std::vector<double>& grid_;
    const RsfOptions& opt_;
    int mtry_;
    std::mt19937_64 rng_;
    SurvivalTree tree_;
};

} // namespace detail

/// Bootstrap ensemble of log-rank survival trees with Nelson-Aalen leaves.
inline RsfModel fit_rsf(const SurvivalDataset& data, const RsfOptions& opt = {})
{
    data.validate();
    if (opt.n_trees < 1) throw InvalidArgument("rsf: need at least one tree");
    if (opt.min_leaf < 1) throw InvalidArgument("rsf: min_leaf must be positive");
    if (data.size() == 0) throw InvalidArgument("rsf: empty dataset");
    if (data.events() == 0) throw DegenerateInput("rsf: no events, every subject is censored");
    const int p = static_cast<int>(data.x.cols());
    const int mtry = opt.mtry > 0 ? std::min(opt.mtry, p) : std::max(1, static_cast<int>(std::ceil(std::sqrt(p))));

    RsfModel model;
    model.names = data.names;
    model.options = opt;
    model.options.mtry = mtry;
    model.features = p;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (data.event[i]) model.time_grid.push_back(data.time[i]);
    std::sort(model.time_grid.begin(), model.time_grid.end());
    model.time_grid.erase(std::unique(model.time_grid.begin(), model.time_grid.end()), model.time_grid.end());

    model.trees.resize(static_cast<std::size_t>(opt.n_trees));
    parallel_for(model.trees.size(), opt.threads, [&](std::size_t t) {
        detail::TreeBuilder b(data, model.time_grid, opt, mtry, mix_seed(opt.seed, t));
        model.trees[t] = b.build();
    });
    return model;
}

/// Ensemble cumulative hazard on the model's time grid for one subject.
inline std::vector<double> rsf_cumulative_hazard(const RsfModel& m, const Eigen::Ref<const Eigen::RowVectorXd>& x)
{
    std::vector<double> h(m.time_grid.size(), 0.0);
    for (const auto& tree : m.trees) {
        const auto& leaf = tree.leaf_for(x);
        for (std::size_t g = 0; g < h.size(); ++g) h[g] += leaf[g];
    }
    for (auto& v : h) v /= static_cast<double>(m.trees.size());
    return h;
}

/// Ensemble mortality: averaged cumulative hazard summed over the time grid.
inline Eigen::VectorXd rsf_risk(const RsfModel& m, const Eigen::MatrixXd& x)
{
    if (x.cols() != m.features)
        throw ShapeMismatch("rsf: model has " + std::to_string(m.features) + " features, input has " +
                            std::to_string(x.cols()));
    Eigen::VectorXd risk(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const auto h = rsf_cumulative_hazard(m, x.row(i));
        risk(i) = std::accumulate(h.begin(), h.end(), 0.0);
    }
    return risk;
}

} // namespace hnpipe::survival
