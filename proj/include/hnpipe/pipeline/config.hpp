#pragma once
#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "../cox.hpp"
#include "../crf.hpp"
#include "../error.hpp"
#include "../log.hpp"
#include "../mlp_cox.hpp"
#include "../radiomics.hpp"
#include "../rsf.hpp"
#include "../tabular.hpp"
#include "manifest.hpp"

namespace hnpipe::pipeline {

inline constexpr int kConfigVersion = 1;

/// Canonical stage order; a run executes the listed subset in this order.
inline constexpr std::array<const char*, 10> kStageOrder{"preprocess", "ensemble", "crf",    "metrics", "radiomics",
                                                         "impute",     "select",   "fit",    "eval",    "compare"};

struct InputsConfig {
    std::string manifest;
    std::string clinical;
    std::string deep_features;
    std::string bounding_boxes;
};

struct PreprocessConfig {
    std::optional<Vec3> target_spacing;
    double ct_clip_lo = -1.0;
    double ct_clip_hi = 1.0;
    std::optional<double> ct_prescale = 1024.0;
    std::string zscore_scope = "patch"; // patch | volume
    std::string format = "nifti";       // nifti | raw_json
};

struct CrfStageConfig {
    crf::CrfParams params;
    double threshold = 0.5;
    std::string order = "ensemble_first"; // ensemble_first | per_model
};

struct MetricsConfig {
    double threshold = 0.5;
};

struct RadiomicsStageConfig {
    radiomics::RadiomicsConfig features;
    std::string mask = "predicted"; // predicted | truth
};

struct SelectConfig {
    double spearman_threshold = 0.8;
    bool lasso = true;
    int folds = 5;
    int grid_size = 100;
    double grid_ratio = 1e-3;
    std::string response = "log_pfs_events"; // log_pfs_events | martingale
    std::string order = "spearman_first";    // spearman_first | lasso_first
};

struct FitConfig {
    std::vector<std::string> models{"coxph", "rsf", "mlpcox"};
    int folds = 5;
    bool stratify = true;
    survival::CoxOptions coxph;
    survival::RsfOptions rsf;
    survival::MlpOptions mlpcox;
};

struct PipelineConfig {
    int version = kConfigVersion;
    std::uint64_t seed = 0;
    std::string output;
    unsigned threads = 0; // 0: HNPIPE_THREADS or hardware concurrency
    std::vector<std::string> stages;
    InputsConfig inputs;
    PreprocessConfig preprocess;
    CrfStageConfig crf;
    MetricsConfig metrics;
    RadiomicsStageConfig radiomics;
    tabular::ImputeOptions impute;
    SelectConfig select;
    FitConfig fit;

    bool has(std::string_view stage) const { return std::find(stages.begin(), stages.end(), stage) != stages.end(); }
};

namespace detail {

// Reads keys from one JSON object, collecting type errors and unknown keys.
class Section {
public:
    Section(const nlohmann::json& j, std::string path, std::vector<std::string>& errors, bool strict)
        : j_(j), path_(std::move(path)), errors_(errors), strict_(strict)
    {
        if (!j_.is_object()) errors_.push_back(path_ + ": expected an object");
    }

    ~Section()
    {
        if (!j_.is_object()) return;
        for (const auto& [k, v] : j_.items()) {
            if (used_.count(k)) continue;
            const auto msg = path_ + "." + k + ": unknown key";
            if (strict_)
                errors_.push_back(msg);
            else
                warn("config " + msg + " (ignored)");
        }
    }

    Section(const Section&) = delete;
    Section& operator=(const Section&) = delete;

    bool contains(const std::string& key) const { return j_.is_object() && j_.contains(key); }

    template <class T>
    void get(const std::string& key, T& out)
    {
        used_.insert(key);
        if (!contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const nlohmann::json::exception&) {
            errors_.push_back(path_ + "." + key + ": wrong type (found " + std::string(j_.at(key).type_name()) + ")");
        }
    }

    template <class T>
    void get_optional(const std::string& key, std::optional<T>& out)
    {
        used_.insert(key);
        if (!contains(key)) return;
        if (j_.at(key).is_null()) {
            out.reset();
            return;
        }
        T v{};
        get(key, v);
        out = v;
    }

    template <class T>
    void require(const std::string& key, T& out)
    {
        if (!contains(key)) errors_.push_back(path_ + "." + key + ": required key missing");
        get(key, out);
    }

    void choice(const std::string& key, std::string& out, std::initializer_list<const char*> allowed)
    {
        get(key, out);
        for (const char* a : allowed)
            if (out == a) return;
        std::string list;
        for (const char* a : allowed) list += std::string(list.empty() ? "" : ", ") + a;
        errors_.push_back(path_ + "." + key + ": '" + out + "' is not one of " + list);
    }

    const nlohmann::json& sub(const std::string& key)
    {
        used_.insert(key);
        static const nlohmann::json empty = nlohmann::json::object();
        return contains(key) ? j_.at(key) : empty;
    }

    const std::string& path() const { return path_; }

private:
    const nlohmann::json& j_;
    std::string path_;
    std::vector<std::string>& errors_;
    bool strict_;
    std::set<std::string> used_;
};

} // namespace detail

/// Parses a versioned JSON config. Relative input paths resolve against `base_dir`.
/// Every problem found is collected before a single InvalidArgument is thrown.
inline PipelineConfig parse_config(const nlohmann::json& j, const std::filesystem::path& base_dir, bool strict)
{
    std::vector<std::string> errors;
    PipelineConfig c;
    {
        detail::Section root(j, "config", errors, strict);
        root.require("version", c.version);
        if (c.version != kConfigVersion)
            errors.push_back("config.version: unsupported version " + std::to_string(c.version) + ", expected " +
                             std::to_string(kConfigVersion));
        root.require("seed", c.seed);
        root.get("output", c.output);
        root.get("threads", c.threads);
        root.require("stages", c.stages);
        {
            detail::Section s(root.sub("inputs"), "config.inputs", errors, strict);
            s.get("manifest", c.inputs.manifest);
            s.get("clinical", c.inputs.clinical);
            s.get("deep_features", c.inputs.deep_features);
            s.get("bounding_boxes", c.inputs.bounding_boxes);
        }
        {
            detail::Section s(root.sub("preprocess"), "config.preprocess", errors, strict);
            std::optional<std::array<double, 3>> spacing;
            s.get_optional("target_spacing", spacing);
            if (spacing) c.preprocess.target_spacing = *spacing;
            s.get("ct_clip_lo", c.preprocess.ct_clip_lo);
            s.get("ct_clip_hi", c.preprocess.ct_clip_hi);
            s.get_optional("ct_prescale", c.preprocess.ct_prescale);
            s.choice("zscore_scope", c.preprocess.zscore_scope, {"patch", "volume"});
            s.choice("format", c.preprocess.format, {"nifti", "raw_json"});
        }
        {
            detail::Section s(root.sub("crf"), "config.crf", errors, strict);
            auto& p = c.crf.params;
            s.get("w_appearance", p.w_appearance);
            s.get("w_smoothness", p.w_smoothness);
            s.get("theta_alpha", p.theta_alpha);
            s.get("theta_beta", p.theta_beta);
            s.get("theta_gamma", p.theta_gamma);
            s.get("iterations", p.iterations);
            s.get("neighborhood_radius", p.neighborhood_radius);
            s.get("threshold", c.crf.threshold);
            s.choice("order", c.crf.order, {"ensemble_first", "per_model"});
        }
        {
            detail::Section s(root.sub("metrics"), "config.metrics", errors, strict);
            s.get("threshold", c.metrics.threshold);
        }
        {
            detail::Section s(root.sub("radiomics"), "config.radiomics", errors, strict);
            s.get("bins", c.radiomics.features.bins);
            s.get("ct", c.radiomics.features.ct);
            s.get("pet", c.radiomics.features.pet);
            s.choice("mask", c.radiomics.mask, {"predicted", "truth"});
        }
        {
            detail::Section s(root.sub("impute"), "config.impute", errors, strict);
            s.get("rounds", c.impute.rounds);
            s.get("ridge", c.impute.ridge);
        }
        {
            detail::Section s(root.sub("select"), "config.select", errors, strict);
            s.get("spearman_threshold", c.select.spearman_threshold);
            s.get("lasso", c.select.lasso);
            s.get("folds", c.select.folds);
            s.get("grid_size", c.select.grid_size);
            s.get("grid_ratio", c.select.grid_ratio);
            s.choice("response", c.select.response, {"log_pfs_events", "martingale"});
            s.choice("order", c.select.order, {"spearman_first", "lasso_first"});
        }
        {
            detail::Section s(root.sub("fit"), "config.fit", errors, strict);
            s.get("models", c.fit.models);
            s.get("folds", c.fit.folds);
            s.get("stratify", c.fit.stratify);
            {
                detail::Section m(s.sub("coxph"), "config.fit.coxph", errors, strict);
                m.get("ridge", c.fit.coxph.ridge);
                m.get("max_iterations", c.fit.coxph.max_iterations);
            }
            {
                detail::Section m(s.sub("rsf"), "config.fit.rsf", errors, strict);
                m.get("n_trees", c.fit.rsf.n_trees);
                m.get("mtry", c.fit.rsf.mtry);
                m.get("min_leaf", c.fit.rsf.min_leaf);
                m.get("bootstrap", c.fit.rsf.bootstrap);
            }
            {
                detail::Section m(s.sub("mlpcox"), "config.fit.mlpcox", errors, strict);
                m.get("hidden", c.fit.mlpcox.hidden);
                m.get("dropout", c.fit.mlpcox.dropout);
                m.get("l2", c.fit.mlpcox.l2);
                m.get("epochs", c.fit.mlpcox.epochs);
                m.get("learning_rate", c.fit.mlpcox.learning_rate);
                m.get("momentum", c.fit.mlpcox.momentum);
            }
        }
        {
            detail::Section s(root.sub("eval"), "config.eval", errors, strict);
        }
        {
            detail::Section s(root.sub("compare"), "config.compare", errors, strict);
        }
    }

    // value checks
    std::set<std::string> seen;
    for (const auto& st : c.stages) {
        if (std::find_if(kStageOrder.begin(), kStageOrder.end(), [&](const char* s) { return st == s; }) ==
            kStageOrder.end())
            errors.push_back("config.stages: unknown stage '" + st + "'");
        if (!seen.insert(st).second) errors.push_back("config.stages: stage '" + st + "' listed twice");
    }
    if (c.stages.empty()) errors.push_back("config.stages: no stages listed");
    try {
        c.crf.params.validate();
    } catch (const Error& e) {
        errors.push_back(std::string("config.crf: ") + e.what());
    }
    auto unit = [&](double v, const char* where) {
        if (!(v >= 0.0 && v <= 1.0)) errors.push_back(std::string(where) + ": must be in [0,1]");
    };
    unit(c.crf.threshold, "config.crf.threshold");
    unit(c.metrics.threshold, "config.metrics.threshold");
    unit(c.select.spearman_threshold, "config.select.spearman_threshold");
    if (c.preprocess.ct_clip_lo > c.preprocess.ct_clip_hi) errors.push_back("config.preprocess: ct_clip_lo > ct_clip_hi");
    if (c.preprocess.target_spacing)
        for (double s : *c.preprocess.target_spacing)
            if (!(s > 0.0)) errors.push_back("config.preprocess.target_spacing: entries must be positive");
    if (c.radiomics.features.bins < 2) errors.push_back("config.radiomics.bins: must be at least 2");
    if (c.impute.rounds < 1) errors.push_back("config.impute.rounds: must be positive");
    if (c.select.folds < 2 || c.fit.folds < 2) errors.push_back("config: fold counts must be at least 2");
    for (const auto& m : c.fit.models)
        if (m != "coxph" && m != "rsf" && m != "mlpcox") errors.push_back("config.fit.models: unknown model '" + m + "'");

    // stage dependencies
    auto need = [&](const char* stage, const char* upstream) {
        if (c.has(stage) && !c.has(upstream))
            errors.push_back(std::string("config.stages: '") + stage + "' needs '" + upstream + "'");
    };
    need("select", "impute");
    need("fit", "impute");
    need("eval", "fit");
    need("compare", "fit");
    if (c.has("compare") && c.fit.models.size() < 2) errors.push_back("config.stages: 'compare' needs two fit models");

    auto resolve = [&](std::string& p) {
        if (!p.empty()) p = detail::resolve(base_dir, p);
    };
    resolve(c.inputs.manifest);
    resolve(c.inputs.clinical);
    resolve(c.inputs.deep_features);
    resolve(c.inputs.bounding_boxes);
    if (!c.output.empty()) resolve(c.output);

    if (!errors.empty()) {
        std::string msg = "invalid configuration:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw InvalidArgument(msg);
    }
    return c;
}

inline PipelineConfig load_config(const std::string& path, bool strict)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path + ": " + e.what());
    }
    return parse_config(j, std::filesystem::path(path).parent_path(), strict);
}

} // namespace hnpipe::pipeline
