#pragma once
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cox.hpp"
#include "error.hpp"
#include "mlp_cox.hpp"
#include "rsf.hpp"

namespace hnpipe::survival {

inline constexpr int kModelFormatVersion = 1;

using SurvivalModel = std::variant<CoxModel, RsfModel, MlpCoxModel>;

inline std::string model_kind(const SurvivalModel& m)
{
    switch (m.index()) {
    case 0: return "coxph";
    case 1: return "rsf";
    default: return "mlpcox";
    }
}

namespace detail {

inline nlohmann::json matrix_json(const Eigen::MatrixXd& m)
{
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> r(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
        rows.push_back(r);
    }
    return rows;
}

inline Eigen::MatrixXd json_matrix(const nlohmann::json& j)
{
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (static_cast<Eigen::Index>(j[i].size()) != cols) throw IoError("model: ragged matrix");
        for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
    }
    return m;
}

inline Eigen::VectorXd json_vector(const nlohmann::json& j)
{
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline std::vector<double> vector_json(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

} // namespace detail

inline nlohmann::json to_json(const SurvivalModel& model)
{
    nlohmann::json j;
    j["format_version"] = kModelFormatVersion;
    j["kind"] = model_kind(model);
    if (const auto* c = std::get_if<CoxModel>(&model)) {
        j["features"] = c->names;
        j["beta"] = detail::vector_json(c->beta);
        j["standard_errors"] = detail::vector_json(c->standard_errors);
        j["baseline"] = {{"times", c->baseline.times}, {"cumulative_hazard", c->baseline.values}};
        j["convergence"] = {{"iterations", c->iterations}, {"gradient_norm", c->gradient_norm}, {"objective", c->objective}};
    } else if (const auto* r = std::get_if<RsfModel>(&model)) {
        j["features"] = r->names;
        j["n_features"] = r->features;
        j["time_grid"] = r->time_grid;
        j["options"] = {{"n_trees", r->options.n_trees},
                        {"mtry", r->options.mtry},
                        {"min_leaf", r->options.min_leaf},
                        {"seed", r->options.seed},
                        {"bootstrap", r->options.bootstrap}};
        auto& trees = j["trees"] = nlohmann::json::array();
        for (const auto& t : r->trees) {
            nlohmann::json nodes = nlohmann::json::array();
            for (const auto& n : t.nodes)
                nodes.push_back({n.feature, n.threshold, n.left, n.right, n.leaf, n.samples});
            trees.push_back({{"nodes", nodes}, {"leaves", t.leaves}});
        }
    } else {
        const auto& m = std::get<MlpCoxModel>(model);
        j["features"] = m.names;
        j["dropout"] = m.dropout;
        j["l2"] = m.l2;
        j["input_mean"] = detail::vector_json(m.input_mean.transpose());
        j["input_scale"] = detail::vector_json(m.input_scale.transpose());
        auto& layers = j["layers"] = nlohmann::json::array();
        for (std::size_t l = 0; l < m.weights.size(); ++l)
            layers.push_back({{"weights", detail::matrix_json(m.weights[l])}, {"bias", detail::vector_json(m.biases[l])}});
        j["loss_history"] = m.loss_history;
    }
    return j;
}

inline SurvivalModel model_from_json(const nlohmann::json& j)
{
    try {
        const int version = j.at("format_version").get<int>();
        if (version != kModelFormatVersion)
            throw IoError("model: unsupported format_version " + std::to_string(version));
        const auto kind = j.at("kind").get<std::string>();
        if (kind == "coxph") {
            CoxModel c;
            c.names = j.at("features").get<std::vector<std::string>>();
            c.beta = detail::json_vector(j.at("beta"));
            c.standard_errors = detail::json_vector(j.at("standard_errors"));
            c.baseline.times = j.at("baseline").at("times").get<std::vector<double>>();
            c.baseline.values = j.at("baseline").at("cumulative_hazard").get<std::vector<double>>();
            c.iterations = j.at("convergence").at("iterations").get<int>();
            c.gradient_norm = j.at("convergence").at("gradient_norm").get<double>();
            c.objective = j.at("convergence").at("objective").get<double>();
            return c;
        }
        if (kind == "rsf") {
            RsfModel r;
            r.names = j.at("features").get<std::vector<std::string>>();
            r.features = j.at("n_features").get<int>();
            r.time_grid = j.at("time_grid").get<std::vector<double>>();
            const auto& o = j.at("options");
            r.options.n_trees = o.at("n_trees").get<int>();
            r.options.mtry = o.at("mtry").get<int>();
            r.options.min_leaf = o.at("min_leaf").get<int>();
            r.options.seed = o.at("seed").get<std::uint64_t>();
            r.options.bootstrap = o.at("bootstrap").get<bool>();
            for (const auto& t : j.at("trees")) {
                SurvivalTree tree;
                for (const auto& n : t.at("nodes"))
                    tree.nodes.push_back({n.at(0).get<int>(), n.at(1).get<double>(), n.at(2).get<int>(),
                                          n.at(3).get<int>(), n.at(4).get<int>(), n.at(5).get<double>()});
                tree.leaves = t.at("leaves").get<std::vector<std::vector<double>>>();
                r.trees.push_back(std::move(tree));
            }
            return r;
        }
        if (kind == "mlpcox") {
            MlpCoxModel m;
            m.names = j.at("features").get<std::vector<std::string>>();
            m.dropout = j.at("dropout").get<double>();
            m.l2 = j.at("l2").get<double>();
            m.input_mean = detail::json_vector(j.at("input_mean")).transpose();
            m.input_scale = detail::json_vector(j.at("input_scale")).transpose();
            for (const auto& l : j.at("layers")) {
                m.weights.push_back(detail::json_matrix(l.at("weights")));
                m.biases.push_back(detail::json_vector(l.at("bias")));
            }
            m.loss_history = j.at("loss_history").get<std::vector<double>>();
            return m;
        }
        throw IoError("model: unknown kind '" + kind + "'");
    } catch (const nlohmann::json::exception& e) {
        throw IoError(std::string("model: malformed JSON: ") + e.what());
    }
}

inline void save_model(const std::string& path, const SurvivalModel& m)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << to_json(m).dump(1) << '\n';
}

inline SurvivalModel load_model(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    return model_from_json(j);
}

inline Eigen::VectorXd predict_risk(const SurvivalModel& m, const Eigen::MatrixXd& x)
{
    return std::visit(
        [&](const auto& model) -> Eigen::VectorXd {
            using T = std::decay_t<decltype(model)>;
            if constexpr (std::is_same_v<T, CoxModel>)
                return cox_risk(model, x);
            else if constexpr (std::is_same_v<T, RsfModel>)
                return rsf_risk(model, x);
            else
                return mlp_risk(model, x);
        },
        m);
}

inline const std::vector<std::string>& model_features(const SurvivalModel& m)
{
    return std::visit([](const auto& model) -> const std::vector<std::string>& { return model.names; }, m);
}

} // namespace hnpipe::survival
