#pragma once
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "log.hpp"
#include "survival.hpp"

namespace hnpipe::survival {

struct CoxOptions {
    double ridge = 0.0;
    double tolerance = 1e-7; // on the gradient infinity norm
    int max_iterations = 100;
    double separation_limit = 30.0; // |beta_j * sd_j| beyond this signals monotone likelihood
};

struct CoxModel {
    std::vector<std::string> names;
    Eigen::VectorXd beta;
    Eigen::VectorXd standard_errors; // from the inverse Hessian at the optimum
    StepCurve baseline; // Breslow cumulative baseline hazard
    int iterations = 0;
    double gradient_norm = 0.0;
    double objective = 0.0;
    std::vector<double> objective_trace; // one entry per accepted Newton step, starting at beta = 0
};

struct CoxDerivatives {
    double value = 0.0;
    Eigen::VectorXd gradient;
    Eigen::MatrixXd hessian;
};

/// Partial likelihood objective of beta with its gradient and Hessian (Breslow ties).
inline CoxDerivatives cox_derivatives(const Eigen::MatrixXd& x, std::span<const double> time, std::span<const int> event,
                                      const Eigen::VectorXd& beta, double ridge)
{
    const Eigen::Index p = x.cols();
    const Eigen::VectorXd eta = x * beta;
    const double shift = eta.maxCoeff();
    const auto order = detail::by_time_desc(time);
    CoxDerivatives d;
    d.gradient = Eigen::VectorXd::Zero(p);
    d.hessian = Eigen::MatrixXd::Zero(p, p);
    double w_sum = 0.0;
    Eigen::VectorXd s1 = Eigen::VectorXd::Zero(p);
    Eigen::MatrixXd s2 = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t a = 0; a < order.size();) {
        std::size_t b = a;
        for (; b < order.size() && time[order[b]] == time[order[a]]; ++b) {
            const auto i = static_cast<Eigen::Index>(order[b]);
            const double w = std::exp(eta(i) - shift);
            w_sum += w;
            s1 += w * x.row(i).transpose();
            s2.noalias() += w * x.row(i).transpose() * x.row(i);
        }
        double deaths = 0.0;
        Eigen::VectorXd xsum = Eigen::VectorXd::Zero(p);
        for (std::size_t k = a; k < b; ++k)
            if (event[order[k]]) {
                const auto i = static_cast<Eigen::Index>(order[k]);
                deaths += 1.0;
                xsum += x.row(i).transpose();
                d.value -= eta(i);
            }
        if (deaths > 0.0) {
            const Eigen::VectorXd mean = s1 / w_sum;
            d.value += deaths * (shift + std::log(w_sum));
            d.gradient += deaths * mean - xsum;
            d.hessian += deaths * (s2 / w_sum - mean * mean.transpose());
        }
        a = b;
    }
    d.value += 0.5 * ridge * beta.squaredNorm();
    d.gradient += ridge * beta;
    d.hessian.diagonal().array() += ridge;
    return d;
}

/// Breslow cumulative baseline hazard at the distinct event times.
inline StepCurve breslow_baseline(const Eigen::VectorXd& eta, std::span<const double> time, std::span<const int> event)
{
    const auto order = detail::by_time_desc(time);
    std::vector<double> t_desc, h_desc;
    double w_sum = 0.0;
    for (std::size_t a = 0; a < order.size();) {
        std::size_t b = a;
        double deaths = 0.0;
        for (; b < order.size() && time[order[b]] == time[order[a]]; ++b) {
            w_sum += std::exp(eta(static_cast<Eigen::Index>(order[b])));
            deaths += event[order[b]];
        }
        if (deaths > 0.0) {
            t_desc.push_back(time[order[a]]);
            h_desc.push_back(deaths / w_sum);
        }
        a = b;
    }
    StepCurve c;
    double acc = 0.0;
    for (std::size_t k = t_desc.size(); k > 0; --k) {
        acc += h_desc[k - 1];
        c.times.push_back(t_desc[k - 1]);
        c.values.push_back(acc);
    }
    return c;
}

/// Newton-Raphson with step halving on the penalized negative log partial likelihood.
inline CoxModel fit_coxph(const SurvivalDataset& data, const CoxOptions& opt = {})
{
    data.validate();
    if (data.events() == 0) throw DegenerateInput("coxph: no events");
    if (!(opt.ridge >= 0.0)) throw InvalidArgument("coxph: ridge must be non-negative");
    const Eigen::Index p = data.x.cols();
    const auto n = data.x.rows();
    auto name_of = [&](Eigen::Index j) {
        return data.names.empty() ? "column " + std::to_string(j) : "'" + data.names[static_cast<std::size_t>(j)] + "'";
    };
    // centring leaves beta unchanged and keeps exp() well scaled
    const Eigen::RowVectorXd mean = data.x.colwise().mean();
    const Eigen::MatrixXd x = data.x.rowwise() - mean;
    Eigen::VectorXd sd(p);
    for (Eigen::Index j = 0; j < p; ++j) {
        sd(j) = std::sqrt(x.col(j).squaredNorm() / static_cast<double>(n));
        if (sd(j) == 0.0) throw DegenerateInput("coxph: feature " + name_of(j) + " is constant");
    }
    if (n <= p) warn("coxph: " + std::to_string(n) + " subjects for " + std::to_string(p) + " features");

    CoxModel m;
    m.names = data.names;
    m.beta = Eigen::VectorXd::Zero(p);
    auto cur = cox_derivatives(x, data.time, data.event, m.beta, opt.ridge);
    m.objective_trace.push_back(cur.value);
    for (;;) {
        m.gradient_norm = cur.gradient.lpNorm<Eigen::Infinity>();
        if (m.gradient_norm < opt.tolerance) break;
        if (m.iterations >= opt.max_iterations)
            throw ConvergenceError("coxph: no convergence after " + std::to_string(m.iterations) +
                                   " iterations, gradient norm " + std::to_string(m.gradient_norm));
        for (Eigen::Index j = 0; j < p; ++j)
            if (std::abs(m.beta(j) * sd(j)) > opt.separation_limit)
                throw ConvergenceError("coxph: coefficient of feature " + name_of(j) + " diverges (beta " +
                                       std::to_string(m.beta(j)) + " after " + std::to_string(m.iterations) +
                                       " iterations); the data look separable, try a ridge penalty");
        Eigen::LDLT<Eigen::MatrixXd> ldlt(cur.hessian);
        Eigen::VectorXd step = ldlt.solve(cur.gradient);
        if (ldlt.info() != Eigen::Success || !step.allFinite() || step.dot(cur.gradient) <= 0.0)
            step = cur.gradient; // singular curvature: fall back to steepest descent
        double scale = 1.0;
        bool accepted = false;
        for (int half = 0; half < 40; ++half, scale *= 0.5) {
            const Eigen::VectorXd trial = m.beta - scale * step;
            auto next = cox_derivatives(x, data.time, data.event, trial, opt.ridge);
            if (std::isfinite(next.value) && next.value <= cur.value) {
                m.beta = trial;
                cur = std::move(next);
                accepted = true;
                break;
            }
        }
        ++m.iterations;
        if (!accepted) {
            m.gradient_norm = cur.gradient.lpNorm<Eigen::Infinity>();
            if (m.gradient_norm < 1e3 * opt.tolerance) { // at the floating-point floor
                warn("coxph: stopped at gradient norm " + std::to_string(m.gradient_norm) + ", no further decrease");
                break;
            }
            throw ConvergenceError("coxph: line search failed at iteration " + std::to_string(m.iterations) +
                                   ", gradient norm " + std::to_string(m.gradient_norm));
        }
        m.objective_trace.push_back(cur.value);
    }
    // monotone likelihood: a converged coefficient that can still move ten
    // standard deviations outward without raising the objective is infinite
    for (Eigen::Index j = 0; j < p; ++j) {
        if (m.beta(j) == 0.0) continue;
        Eigen::VectorXd further = m.beta;
        further(j) += std::copysign(10.0 / sd(j), m.beta(j));
        const double v = cox_derivatives(x, data.time, data.event, further, opt.ridge).value;
        if (v <= cur.value + 1e-6)
            throw ConvergenceError("coxph: likelihood is monotone in feature " + name_of(j) + " (beta " +
                                   std::to_string(m.beta(j)) + " after " + std::to_string(m.iterations) +
                                   " iterations); the data look separable, try a ridge penalty");
    }
    m.objective = cur.value;
    const Eigen::MatrixXd cov = cur.hessian.ldlt().solve(Eigen::MatrixXd::Identity(p, p));
    m.standard_errors = cov.diagonal().cwiseMax(0.0).cwiseSqrt();
    m.baseline = breslow_baseline(data.x * m.beta, data.time, data.event);
    return m;
}

/// Linear predictor X * beta.
inline Eigen::VectorXd cox_risk(const CoxModel& m, const Eigen::MatrixXd& x)
{
    if (x.cols() != m.beta.size())
        throw ShapeMismatch("coxph: model has " + std::to_string(m.beta.size()) + " features, input has " +
                            std::to_string(x.cols()));
    return x * m.beta;
}

} // namespace hnpipe::survival
