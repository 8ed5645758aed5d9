#pragma once
#include <algorithm>
#include <cstdint>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/students_t.hpp>

#include "error.hpp"

namespace hnpipe::survival {

/// Covariates with right-censored times. event[i] = 1 when progression was observed.
struct SurvivalDataset {
    Eigen::MatrixXd x;
    std::vector<double> time;
    std::vector<int> event;
    std::vector<std::string> names;
    std::vector<std::string> ids;

    std::size_t size() const { return time.size(); }
    std::size_t events() const { return static_cast<std::size_t>(std::count(event.begin(), event.end(), 1)); }

    void validate() const
    {
        const auto n = time.size();
        if (event.size() != n || static_cast<std::size_t>(x.rows()) != n)
            throw ShapeMismatch("survival data: " + std::to_string(x.rows()) + " covariate rows, " +
                                std::to_string(n) + " times, " + std::to_string(event.size()) + " event flags");
        if (!names.empty() && names.size() != static_cast<std::size_t>(x.cols()))
            throw ShapeMismatch("survival data: feature name count differs from column count");
        if (!ids.empty() && ids.size() != n) throw ShapeMismatch("survival data: id count differs from row count");
        for (std::size_t i = 0; i < n; ++i) {
            if (!(time[i] > 0.0) || !std::isfinite(time[i]))
                throw InvalidArgument("survival data: time must be positive and finite (row " + std::to_string(i) + ")");
            if (event[i] != 0 && event[i] != 1)
                throw InvalidArgument("survival data: event flag must be 0 or 1 (row " + std::to_string(i) + ")");
        }
        if (!x.allFinite()) throw InvalidArgument("survival data: covariates contain missing or non-finite values");
    }

    SurvivalDataset subset(std::span<const std::size_t> rows) const
    {
        SurvivalDataset s;
        s.names = names;
        s.x.resize(static_cast<Eigen::Index>(rows.size()), x.cols());
        for (std::size_t k = 0; k < rows.size(); ++k) {
            s.x.row(static_cast<Eigen::Index>(k)) = x.row(static_cast<Eigen::Index>(rows[k]));
            s.time.push_back(time[rows[k]]);
            s.event.push_back(event[rows[k]]);
            if (!ids.empty()) s.ids.push_back(ids[rows[k]]);
        }
        return s;
    }
};

/// SplitMix64 finalizer; derives an independent seed for each numbered stream.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

namespace detail {

inline void check_lengths(std::size_t a, std::size_t b, std::size_t c, const char* what)
{
    if (a != b || a != c)
        throw ShapeMismatch(std::string(what) + ": lengths " + std::to_string(a) + ", " + std::to_string(b) + ", " +
                            std::to_string(c));
}

/// Indices sorted by decreasing time, so each prefix ending at a time group is a risk set.
inline std::vector<std::size_t> by_time_desc(std::span<const double> time)
{
    std::vector<std::size_t> order(time.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return time[a] > time[b]; });
    return order;
}

} // namespace detail

/// Negative log partial likelihood with Breslow ties: every subject sharing an
/// event time sees the full risk set {j : time_j >= t}.
inline double neg_log_partial_likelihood(std::span<const double> eta, std::span<const double> time,
                                         std::span<const int> event)
{
    detail::check_lengths(eta.size(), time.size(), event.size(), "partial likelihood");
    if (std::count(event.begin(), event.end(), 1) == 0) throw DegenerateInput("partial likelihood: no events");
    const double shift = *std::max_element(eta.begin(), eta.end());
    const auto order = detail::by_time_desc(time);
    double risk_sum = 0.0, nll = 0.0;
    for (std::size_t a = 0; a < order.size();) {
        std::size_t b = a;
        while (b < order.size() && time[order[b]] == time[order[a]]) risk_sum += std::exp(eta[order[b++]] - shift);
        const double log_risk = shift + std::log(risk_sum);
        for (std::size_t k = a; k < b; ++k)
            if (event[order[k]]) nll += log_risk - eta[order[k]];
        a = b;
    }
    return nll;
}

/// d(nll)/d(eta_i) under the same Breslow convention.
inline std::vector<double> partial_likelihood_gradient(std::span<const double> eta, std::span<const double> time,
                                                       std::span<const int> event)
{
    detail::check_lengths(eta.size(), time.size(), event.size(), "partial likelihood");
    const double shift = *std::max_element(eta.begin(), eta.end());
    const auto order = detail::by_time_desc(time);
    // risk-set weight sum W(t) at each subject's time
    std::vector<double> risk_sum(order.size());
    double acc = 0.0;
    for (std::size_t a = 0; a < order.size();) {
        std::size_t b = a;
        while (b < order.size() && time[order[b]] == time[order[a]]) acc += std::exp(eta[order[b++]] - shift);
        for (std::size_t k = a; k < b; ++k) risk_sum[k] = acc;
        a = b;
    }
    std::vector<double> grad(eta.size(), 0.0);
    double hazard = 0.0;
    for (std::size_t a = order.size(); a > 0;) {
        std::size_t b = a;
        const double t = time[order[a - 1]];
        double deaths = 0.0;
        while (b > 0 && time[order[b - 1]] == t) deaths += event[order[--b]];
        hazard += deaths / risk_sum[b];
        for (std::size_t k = b; k < a; ++k) {
            const auto i = order[k];
            grad[i] = std::exp(eta[i] - shift) * hazard - event[i];
        }
        a = b;
    }
    return grad;
}

/// Harrell's C over pairs with time_i < time_j and event_i = 1; tied risks count one half.
/// Pairs with equal times are not comparable.
inline double concordance_index(std::span<const double> risk, std::span<const double> time, std::span<const int> event)
{
    detail::check_lengths(risk.size(), time.size(), event.size(), "concordance");
    const std::size_t n = risk.size();
    for (double r : risk)
        if (!std::isfinite(r)) throw InvalidArgument("concordance: non-finite risk score");
    // risk ranks for a Fenwick tree over subjects with strictly later times
    std::vector<double> sorted(risk.begin(), risk.end());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
    std::vector<std::size_t> rank(n);
    for (std::size_t i = 0; i < n; ++i)
        rank[i] = static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), risk[i]) - sorted.begin()) + 1;
    std::vector<std::size_t> tree(sorted.size() + 1, 0);
    auto add = [&](std::size_t r) {
        for (; r < tree.size(); r += r & (~r + 1)) ++tree[r];
    };
    auto prefix = [&](std::size_t r) {
        std::size_t s = 0;
        for (; r > 0; r -= r & (~r + 1)) s += tree[r];
        return s;
    };

    const auto order = detail::by_time_desc(time);
    double concordant = 0.0, comparable = 0.0;
    std::size_t inserted = 0;
    for (std::size_t a = 0; a < n;) {
        std::size_t b = a;
        while (b < n && time[order[b]] == time[order[a]]) ++b;
        for (std::size_t k = a; k < b; ++k) {
            const auto i = order[k];
            if (!event[i]) continue;
            const auto lower = prefix(rank[i] - 1);
            const auto ties = prefix(rank[i]) - lower;
            concordant += static_cast<double>(lower) + 0.5 * static_cast<double>(ties);
            comparable += static_cast<double>(inserted);
        }
        for (std::size_t k = a; k < b; ++k) add(rank[order[k]]);
        inserted += b - a;
        a = b;
    }
    if (comparable == 0.0) throw DegenerateInput("concordance: no comparable pairs");
    return concordant / comparable;
}

/// Step function evaluated at sorted distinct event times.
struct StepCurve {
    std::vector<double> times;
    std::vector<double> values;

    double at(double t) const
    {
        const auto it = std::upper_bound(times.begin(), times.end(), t);
        return it == times.begin() ? 0.0 : values[static_cast<std::size_t>(it - times.begin()) - 1];
    }
};

/// Nelson-Aalen cumulative hazard with optional case weights (e.g. bootstrap multiplicities).
inline StepCurve nelson_aalen(std::span<const double> time, std::span<const int> event,
                              std::span<const double> weight = {})
{
    std::vector<std::size_t> order(time.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return time[a] < time[b]; });
    double at_risk = 0.0;
    for (std::size_t i = 0; i < time.size(); ++i) at_risk += weight.empty() ? 1.0 : weight[i];
    StepCurve c;
    double h = 0.0;
    for (std::size_t a = 0; a < order.size();) {
        std::size_t b = a;
        double deaths = 0.0, leaving = 0.0;
        for (; b < order.size() && time[order[b]] == time[order[a]]; ++b) {
            const double w = weight.empty() ? 1.0 : weight[order[b]];
            leaving += w;
            if (event[order[b]]) deaths += w;
        }
        if (deaths > 0.0) {
            h += deaths / at_risk;
            c.times.push_back(time[order[a]]);
            c.values.push_back(h);
        }
        at_risk -= leaving;
        a = b;
    }
    return c;
}

/// Martingale residuals of the covariate-free Cox model: event_i - H0(t_i).
inline std::vector<double> null_martingale_residuals(std::span<const double> time, std::span<const int> event)
{
    const auto na = nelson_aalen(time, event);
    std::vector<double> r(time.size());
    for (std::size_t i = 0; i < time.size(); ++i) r[i] = event[i] - na.at(time[i]);
    return r;
}

struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test;
};

/// Seeded k-fold partition. Subjects are shuffled and dealt round-robin; with
/// stratification the events are dealt first and the censored subjects continue
/// the rotation, so per-fold event counts differ by at most one.
inline std::vector<Split> kfold_cv(std::span<const int> event, int k, bool stratify, std::uint64_t seed)
{
    const std::size_t n = event.size();
    if (k < 2) throw InvalidArgument("kfold: need at least 2 folds");
    const auto folds = static_cast<std::size_t>(k);
    if (n < folds) throw InvalidArgument("kfold: " + std::to_string(n) + " subjects for " + std::to_string(k) + " folds");
    std::vector<std::size_t> events, others;
    for (std::size_t i = 0; i < n; ++i) (stratify && event[i] ? events : others).push_back(i);
    if (stratify && events.size() < folds)
        throw InvalidArgument("kfold: " + std::to_string(events.size()) + " events for " + std::to_string(k) +
                              " stratified folds");
    std::mt19937_64 rng(seed);
    std::shuffle(events.begin(), events.end(), rng);
    std::shuffle(others.begin(), others.end(), rng);
    std::vector<int> label(n);
    std::size_t slot = 0;
    for (auto i : events) label[i] = static_cast<int>(slot++ % folds);
    for (auto i : others) label[i] = static_cast<int>(slot++ % folds);
    std::vector<Split> out(folds);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t f = 0; f < folds; ++f) (label[i] == static_cast<int>(f) ? out[f].test : out[f].train).push_back(i);
    return out;
}

struct TTestResult {
    double t = 0.0;
    double p = 1.0;
    int df = 0;
};

/// Nadeau-Bengio corrected resampled paired t-test, two-sided.
inline TTestResult corrected_paired_ttest(std::span<const double> a, std::span<const double> b, double n_train,
                                          double n_test)
{
    if (a.size() != b.size()) throw ShapeMismatch("t-test: score vectors differ in length");
    if (a.size() < 2) throw InvalidArgument("t-test: need at least 2 paired scores");
    if (!(n_train > 0.0) || !(n_test > 0.0)) throw InvalidArgument("t-test: train and test sizes must be positive");
    const std::size_t k = a.size();
    std::vector<double> d(k);
    for (std::size_t i = 0; i < k; ++i) d[i] = a[i] - b[i];
    const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(k);
    double ss = 0.0;
    for (double v : d) ss += (v - mean) * (v - mean);
    const double var = ss / static_cast<double>(k - 1);
    TTestResult r;
    r.df = static_cast<int>(k - 1);
    if (var == 0.0) {
        if (mean == 0.0) return r;
        r.t = mean > 0 ? std::numeric_limits<double>::infinity() : -std::numeric_limits<double>::infinity();
        r.p = 0.0;
        return r;
    }
    r.t = mean / std::sqrt((1.0 / static_cast<double>(k) + n_test / n_train) * var);
    const boost::math::students_t dist(static_cast<double>(r.df));
    r.p = 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t)));
    return r;
}

} // namespace hnpipe::survival
