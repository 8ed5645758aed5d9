#pragma once
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "error.hpp"
#include "survival.hpp"

namespace hnpipe::survival {

struct MlpOptions {
    std::vector<int> hidden{32};
    double dropout = 0.2;
    double l2 = 1e-4;
    int epochs = 300;
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::uint64_t seed = 0;
};

/// Fully connected ReLU network with one linear output (the log-risk).
struct MlpCoxModel {
    std::vector<std::string> names;
    std::vector<Eigen::MatrixXd> weights; // layer l maps size[l] -> size[l+1], stored out x in
    std::vector<Eigen::VectorXd> biases;
    Eigen::RowVectorXd input_mean;
    Eigen::RowVectorXd input_scale;
    double dropout = 0.0;
    double l2 = 0.0;
    std::vector<double> loss_history; // training loss before each epoch's update

    int inputs() const { return weights.empty() ? 0 : static_cast<int>(weights.front().cols()); }
};

struct MlpGradient {
    double loss = 0.0;
    std::vector<Eigen::MatrixXd> weights;
    std::vector<Eigen::VectorXd> biases;
};

/// Seeded network with weights and biases uniform in +-1/sqrt(fan_in).
inline MlpCoxModel init_mlp(int inputs, const std::vector<int>& hidden, std::uint64_t seed)
{
    if (inputs < 1) throw InvalidArgument("mlp: need at least one input feature");
    MlpCoxModel m;
    std::mt19937_64 rng(seed);
    int fan_in = inputs;
    std::vector<int> sizes(hidden);
    sizes.push_back(1);
    for (int out : sizes) {
        if (out < 1) throw InvalidArgument("mlp: layer width must be positive");
        std::uniform_real_distribution<double> u(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
        Eigen::MatrixXd w(out, fan_in);
        Eigen::VectorXd b(out);
        for (auto& v : w.reshaped()) v = u(rng);
        for (auto& v : b) v = u(rng);
        m.weights.push_back(std::move(w));
        m.biases.push_back(std::move(b));
        fan_in = out;
    }
    m.input_mean = Eigen::RowVectorXd::Zero(inputs);
    m.input_scale = Eigen::RowVectorXd::Ones(inputs);
    return m;
}

namespace detail {

inline Eigen::MatrixXd standardize_input(const MlpCoxModel& m, const Eigen::MatrixXd& x)
{
    if (x.cols() != m.inputs())
        throw ShapeMismatch("mlp: model has " + std::to_string(m.inputs()) + " features, input has " +
                            std::to_string(x.cols()));
    return (x.rowwise() - m.input_mean).array().rowwise() / m.input_scale.array();
}

} // namespace detail

/// Forward pass on already standardized input. `masks` holds one keep-mask per
/// hidden layer (entries 0 or 1/(1-rate)); empty means no dropout.
inline Eigen::VectorXd mlp_forward(const MlpCoxModel& m, const Eigen::MatrixXd& xs,
                                   const std::vector<Eigen::MatrixXd>& masks = {},
                                   std::vector<Eigen::MatrixXd>* activations = nullptr)
{
    Eigen::MatrixXd a = xs;
    if (activations) activations->assign(1, a);
    const std::size_t layers = m.weights.size();
    for (std::size_t l = 0; l < layers; ++l) {
        Eigen::MatrixXd z = (a * m.weights[l].transpose()).rowwise() + m.biases[l].transpose();
        if (l + 1 < layers) {
            z = z.cwiseMax(0.0);
            if (!masks.empty()) z = z.cwiseProduct(masks[l]);
        }
        a = std::move(z);
        if (activations) activations->push_back(a);
    }
    return a.col(0);
}

/// Loss = partial-likelihood NLL / events + l2 * sum of squared weights, with its gradient.
inline MlpGradient mlp_loss_gradient(const MlpCoxModel& m, const Eigen::MatrixXd& xs, std::span<const double> time,
                                     std::span<const int> event, const std::vector<Eigen::MatrixXd>& masks = {})
{
    const double events = static_cast<double>(std::count(event.begin(), event.end(), 1));
    if (events == 0.0) throw DegenerateInput("mlp: no events");
    std::vector<Eigen::MatrixXd> act;
    const Eigen::VectorXd eta = mlp_forward(m, xs, masks, &act);
    std::vector<double> eta_v(eta.data(), eta.data() + eta.size());
    MlpGradient g;
    g.loss = neg_log_partial_likelihood(eta_v, time, event) / events;
    for (const auto& w : m.weights) g.loss += m.l2 * w.squaredNorm();

    const auto dl = partial_likelihood_gradient(eta_v, time, event);
    Eigen::MatrixXd delta(eta.size(), 1);
    for (Eigen::Index i = 0; i < eta.size(); ++i) delta(i, 0) = dl[static_cast<std::size_t>(i)] / events;
    const std::size_t layers = m.weights.size();
    g.weights.resize(layers);
    g.biases.resize(layers);
    for (std::size_t l = layers; l-- > 0;) {
        g.weights[l] = delta.transpose() * act[l] + 2.0 * m.l2 * m.weights[l];
        g.biases[l] = delta.colwise().sum().transpose();
        if (l == 0) break;
        Eigen::MatrixXd back = delta * m.weights[l];
        // act[l] is post-ReLU (and post-mask), so a positive entry marks an open unit
        const Eigen::MatrixXd& h = act[l];
        for (Eigen::Index i = 0; i < back.rows(); ++i)
            for (Eigen::Index j = 0; j < back.cols(); ++j) {
                if (h(i, j) <= 0.0)
                    back(i, j) = 0.0;
                else if (!masks.empty())
                    back(i, j) *= masks[l - 1](i, j);
            }
        delta = std::move(back);
    }
    return g;
}

/// Full-batch gradient descent with momentum; dropout active only during training.
inline MlpCoxModel fit_mlp_cox(const SurvivalDataset& data, const MlpOptions& opt = {})
{
    data.validate();
    if (data.events() == 0) throw DegenerateInput("mlp: no events");
    if (!(opt.dropout >= 0.0 && opt.dropout < 1.0)) throw InvalidArgument("mlp: dropout must be in [0,1)");
    if (!(opt.l2 >= 0.0)) throw InvalidArgument("mlp: l2 must be non-negative");
    if (opt.epochs < 0) throw InvalidArgument("mlp: epochs must be non-negative");
    if (!(opt.learning_rate > 0.0)) throw InvalidArgument("mlp: learning rate must be positive");

    auto m = init_mlp(static_cast<int>(data.x.cols()), opt.hidden, opt.seed);
    m.names = data.names;
    m.dropout = opt.dropout;
    m.l2 = opt.l2;
    const double n = static_cast<double>(data.x.rows());
    m.input_mean = data.x.colwise().mean();
    for (Eigen::Index j = 0; j < data.x.cols(); ++j) {
        const double sd = std::sqrt((data.x.col(j).array() - m.input_mean(j)).square().sum() / n);
        m.input_scale(j) = sd > 0.0 ? sd : 1.0;
    }
    const Eigen::MatrixXd xs = detail::standardize_input(m, data.x);

    std::mt19937_64 rng(mix_seed(opt.seed, 0xd509));
    std::bernoulli_distribution keep(1.0 - opt.dropout);
    std::vector<Eigen::MatrixXd> vel_w, vel_b;
    for (std::size_t l = 0; l < m.weights.size(); ++l) {
        vel_w.push_back(Eigen::MatrixXd::Zero(m.weights[l].rows(), m.weights[l].cols()));
        vel_b.push_back(Eigen::VectorXd::Zero(m.biases[l].size()));
    }
    std::vector<Eigen::MatrixXd> masks;
    for (int epoch = 0; epoch < opt.epochs; ++epoch) {
        masks.clear();
        if (opt.dropout > 0.0)
            for (std::size_t l = 0; l + 1 < m.weights.size(); ++l) {
                Eigen::MatrixXd mk(xs.rows(), m.weights[l].rows());
                for (auto& v : mk.reshaped()) v = keep(rng) ? 1.0 / (1.0 - opt.dropout) : 0.0;
                masks.push_back(std::move(mk));
            }
        const auto g = mlp_loss_gradient(m, xs, data.time, data.event, masks);
        if (!std::isfinite(g.loss))
            throw ConvergenceError("mlp: non-finite loss at epoch " + std::to_string(epoch) + " (learning rate " +
                                   std::to_string(opt.learning_rate) + ", last loss " +
                                   (m.loss_history.empty() ? std::string("none") : std::to_string(m.loss_history.back())) +
                                   "); lower the learning rate");
        m.loss_history.push_back(g.loss);
        for (std::size_t l = 0; l < m.weights.size(); ++l) {
            vel_w[l] = opt.momentum * vel_w[l] - opt.learning_rate * g.weights[l];
            vel_b[l] = opt.momentum * vel_b[l] - opt.learning_rate * g.biases[l];
            m.weights[l] += vel_w[l];
            m.biases[l] += vel_b[l];
        }
    }
    for (const auto& w : m.weights)
        if (!w.allFinite()) throw ConvergenceError("mlp: weights became non-finite; lower the learning rate");
    return m;
}

/// Log-risk for raw (unstandardized) covariates, dropout off.
inline Eigen::VectorXd mlp_risk(const MlpCoxModel& m, const Eigen::MatrixXd& x)
{
    return mlp_forward(m, detail::standardize_input(m, x));
}

} // namespace hnpipe::survival
