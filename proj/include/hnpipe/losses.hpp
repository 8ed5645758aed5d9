#pragma once
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "error.hpp"

namespace hnpipe::losses {

struct LossParams {
    double gamma = 2.0;   // focal modulating exponent
    double smooth = 1.0;  // additive smoothing of the Dice ratio
    double epsilon = 1e-7; // probability clamp before logarithms

    void validate() const
    {
        if (!(gamma >= 0.0)) throw InvalidArgument("loss: gamma must be >= 0");
        if (!(smooth > 0.0)) throw InvalidArgument("loss: smooth must be > 0");
        if (!(epsilon > 0.0 && epsilon < 0.5)) throw InvalidArgument("loss: epsilon must lie in (0, 0.5)");
    }
};

enum class LossKind { dice, focal, log_cosh_dice_focal };

namespace detail {

inline void check_inputs(std::span<const double> y, std::span<const double> p)
{
    if (y.size() != p.size())
        throw ShapeMismatch("loss: label length " + std::to_string(y.size()) + " != prediction length " +
                            std::to_string(p.size()));
    if (y.empty()) throw InvalidArgument("loss: empty input");
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] != 0.0 && y[i] != 1.0) throw InvalidArgument("loss: labels must be 0 or 1");
        if (!(p[i] >= 0.0 && p[i] <= 1.0)) throw InvalidArgument("loss: prediction outside [0,1]");
    }
}

struct DiceSums {
    double intersection = 0.0;
    double union_sum = 0.0; // sum(y) + sum(p)
};

inline DiceSums dice_sums(std::span<const double> y, std::span<const double> p)
{
    DiceSums s;
    for (std::size_t i = 0; i < y.size(); ++i) {
        s.intersection += y[i] * p[i];
        s.union_sum += y[i] + p[i];
    }
    return s;
}

inline double dice_from_sums(const DiceSums& s, double smooth)
{
    return 1.0 - (2.0 * s.intersection + smooth) / (s.union_sum + smooth);
}

} // namespace detail

/// 1 - (2 sum(y p) + s) / (sum(y) + sum(p) + s).
inline double dice_loss(std::span<const double> y, std::span<const double> p, const LossParams& params = {})
{
    params.validate();
    detail::check_inputs(y, p);
    return detail::dice_from_sums(detail::dice_sums(y, p), params.smooth);
}

/// -(1/N) sum y (1-p)^gamma ln p. Only foreground terms contribute; the
/// background term of the usual two-sided focal loss is absent.
inline double focal_loss(std::span<const double> y, std::span<const double> p, const LossParams& params = {})
{
    params.validate();
    detail::check_inputs(y, p);
    double sum = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        if (y[i] == 0.0) continue;
        const double q = std::clamp(p[i], params.epsilon, 1.0 - params.epsilon);
        sum += std::pow(1.0 - q, params.gamma) * std::log(q);
    }
    return -sum / static_cast<double>(y.size());
}

inline double log_cosh_dice_focal(std::span<const double> y, std::span<const double> p, const LossParams& params = {})
{
    return std::log(std::cosh(dice_loss(y, p, params))) + focal_loss(y, p, params);
}

inline double evaluate(LossKind kind, std::span<const double> y, std::span<const double> p,
                       const LossParams& params = {})
{
    switch (kind) {
    case LossKind::dice: return dice_loss(y, p, params);
    case LossKind::focal: return focal_loss(y, p, params);
    case LossKind::log_cosh_dice_focal: return log_cosh_dice_focal(y, p, params);
    }
    throw InvalidArgument("unknown loss kind");
}

/// Analytic d(loss)/d(p_i). Losses that pass through the probability clamp
/// require every p strictly inside (epsilon, 1 - epsilon).
inline std::vector<double> loss_gradient(LossKind kind, std::span<const double> y, std::span<const double> p,
                                         const LossParams& params = {})
{
    params.validate();
    detail::check_inputs(y, p);
    const std::size_t n = y.size();
    if (kind != LossKind::dice)
        for (double v : p)
            if (!(v > params.epsilon && v < 1.0 - params.epsilon))
                throw InvalidArgument("loss gradient: prediction on the clamp boundary, gradient undefined");

    std::vector<double> dice_grad(n, 0.0), focal_grad(n, 0.0);
    const auto sums = detail::dice_sums(y, p);
    if (kind != LossKind::focal) {
        const double denom = sums.union_sum + params.smooth;
        const double numer = 2.0 * sums.intersection + params.smooth;
        for (std::size_t i = 0; i < n; ++i) dice_grad[i] = -(2.0 * y[i] * denom - numer) / (denom * denom);
    }
    if (kind != LossKind::dice) {
        const double g = params.gamma;
        for (std::size_t i = 0; i < n; ++i) {
            if (y[i] == 0.0) continue;
            const double q = p[i];
            const double mod = std::pow(1.0 - q, g);
            const double dmod = g == 0.0 ? 0.0 : -g * std::pow(1.0 - q, g - 1.0);
            focal_grad[i] = -(dmod * std::log(q) + mod / q) / static_cast<double>(n);
        }
    }
    switch (kind) {
    case LossKind::dice: return dice_grad;
    case LossKind::focal: return focal_grad;
    case LossKind::log_cosh_dice_focal: {
        const double t = std::tanh(detail::dice_from_sums(sums, params.smooth));
        std::vector<double> out(n);
        for (std::size_t i = 0; i < n; ++i) out[i] = t * dice_grad[i] + focal_grad[i];
        return out;
    }
    }
    throw InvalidArgument("unknown loss kind");
}

inline LossKind parse_loss_kind(const std::string& s)
{
    if (s == "dice") return LossKind::dice;
    if (s == "focal") return LossKind::focal;
    if (s == "log_cosh_dice_focal" || s == "combined") return LossKind::log_cosh_dice_focal;
    throw InvalidArgument("unknown loss kind '" + s + "' (dice|focal|log_cosh_dice_focal)");
}

} // namespace hnpipe::losses
