#pragma once
#include <algorithm>
#include <cctype>
#include <numeric>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "../crf.hpp"
#include "../csv.hpp"
#include "../error.hpp"
#include "../log.hpp"
#include "../model_io.hpp"
#include "../parallel.hpp"
#include "../radiomics.hpp"
#include "../seg_metrics.hpp"
#include "../survival.hpp"
#include "../tabular.hpp"
#include "../volume.hpp"
#include "../volume_io.hpp"
#include "config.hpp"
#include "hash.hpp"
#include "manifest.hpp"

namespace hnpipe::pipeline {

inline constexpr int kReportFormatVersion = 1;
inline const std::set<std::string> kClinicalCategorical{"CenterID", "Gender",  "T",        "N",   "M",
                                                        "TNMgroup", "TNMedition", "Tobacco", "Alcohol", "HPV",
                                                        "Chemotherapy"};
inline constexpr const char* kEventColumn = "Progression";
inline constexpr const char* kTimeColumn = "PFS_days";

struct RunResult {
    nlohmann::json report;
    std::string report_path;
    std::string report_sha256;
    int failures = 0;
};

namespace detail {

namespace fs = std::filesystem;

inline std::string safe_name(const std::string& id)
{
    std::string s = id;
    for (auto& c : s)
        if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_' && c != '.') c = '_';
    return s;
}

struct Needs {
    bool images = false; // ct + pet
    bool probs = false;
    bool truth = false;
    bool any = false;
};

inline Needs patient_needs(const PipelineConfig& c)
{
    Needs n;
    const bool predicted_mask = c.has("radiomics") && c.radiomics.mask == "predicted";
    n.images = c.has("preprocess") || c.has("crf") || c.has("radiomics");
    n.probs = c.has("ensemble") || c.has("crf") || c.has("metrics") || predicted_mask;
    n.truth = c.has("metrics") || (c.has("radiomics") && c.radiomics.mask == "truth");
    n.any = n.images || n.probs || n.truth;
    return n;
}

inline void check_file(const std::string& p, const std::string& what, std::vector<std::string>& errors)
{
    if (p.empty())
        errors.push_back(what + ": path is empty");
    else if (!fs::exists(p))
        errors.push_back(what + ": file not found: " + p);
    else if (format_from_path(p) == VolumeFormat::raw_json && p.size() > 5 && p.ends_with(".json") &&
             !fs::exists(raw_payload_path(p)))
        errors.push_back(what + ": raw payload not found: " + raw_payload_path(p));
}

} // namespace detail

/// Every missing input and inconsistent manifest entry, before anything is written.
inline std::vector<std::string> validate_inputs(const PipelineConfig& c)
{
    std::vector<std::string> errors;
    const auto needs = detail::patient_needs(c);
    if (needs.any) {
        if (c.inputs.manifest.empty())
            errors.push_back("inputs.manifest: required by the listed per-patient stages");
        else if (!std::filesystem::exists(c.inputs.manifest))
            errors.push_back("inputs.manifest: file not found: " + c.inputs.manifest);
        else {
            try {
                const auto m = load_manifest(c.inputs.manifest);
                if (m.size() == 0) errors.push_back("inputs.manifest: no patients");
                std::optional<std::size_t> n_maps;
                for (const auto& p : m.patients) {
                    const std::string who = "manifest patient " + p.id;
                    if (needs.images) {
                        detail::check_file(p.ct_path, who + " ct", errors);
                        detail::check_file(p.pet_path, who + " pet", errors);
                    }
                    if (needs.probs) {
                        if (p.probmap_paths.empty()) errors.push_back(who + ": no probability maps listed");
                        if (n_maps && *n_maps != p.probmap_paths.size())
                            errors.push_back(who + ": " + std::to_string(p.probmap_paths.size()) +
                                             " probability maps, other patients have " + std::to_string(*n_maps));
                        n_maps = p.probmap_paths.size();
                        for (const auto& q : p.probmap_paths) detail::check_file(q, who + " probability map", errors);
                    }
                    if (needs.truth) {
                        if (!p.truth_path)
                            errors.push_back(who + ": truth mask required by metrics/radiomics");
                        else
                            detail::check_file(*p.truth_path, who + " truth mask", errors);
                    }
                }
            } catch (const Error& e) {
                errors.push_back(std::string("inputs.manifest: ") + e.what());
            }
        }
    }
    if (c.has("preprocess") && !c.inputs.bounding_boxes.empty() && !std::filesystem::exists(c.inputs.bounding_boxes))
        errors.push_back("inputs.bounding_boxes: file not found: " + c.inputs.bounding_boxes);
    if (c.has("impute")) {
        if (c.inputs.clinical.empty())
            errors.push_back("inputs.clinical: required by the impute stage");
        else if (!std::filesystem::exists(c.inputs.clinical))
            errors.push_back("inputs.clinical: file not found: " + c.inputs.clinical);
        if (!c.inputs.deep_features.empty() && !std::filesystem::exists(c.inputs.deep_features))
            errors.push_back("inputs.deep_features: file not found: " + c.inputs.deep_features);
    }
    if (c.output.empty()) errors.push_back("output: no output directory given");
    return errors;
}

namespace detail {

struct PatientOutcome {
    std::string id;
    std::string center;
    std::string failed_stage;
    std::string error;
    std::optional<SegScore> ensemble_score;
    std::optional<SegScore> refined_score;
    std::optional<radiomics::FeatureVector> features;
};

class Artifacts {
public:
    explicit Artifacts(fs::path root) : root_(std::move(root)) {}

    std::string path(const std::string& rel) const
    {
        const auto p = root_ / rel;
        fs::create_directories(p.parent_path());
        return p.string();
    }

    const fs::path& root() const { return root_; }

private:
    fs::path root_;
};

inline std::string volume_ext(const PipelineConfig& c) { return c.preprocess.format == "nifti" ? ".nii.gz" : ".json"; }

inline Volume resample_to(const Volume& v, const std::optional<Vec3>& spacing)
{
    return spacing ? resample_trilinear(v, *spacing) : v;
}

template <class G>
ProbMap resample_probability(const G& g, const Vec3& spacing)
{
    auto v = resample_trilinear(to_volume(g), spacing);
    for (auto& x : v.data) x = std::clamp(x, 0.0, 1.0);
    return ProbMap::from_volume(v);
}

inline void require_grid(const Geometry& ref, const Geometry& g, const std::string& what)
{
    if (!(ref.dims == g.dims))
        throw ShapeMismatch(what + " grid " + std::to_string(g.dims[0]) + "x" + std::to_string(g.dims[1]) + "x" +
                            std::to_string(g.dims[2]) + " differs from the CT grid");
}

/// Per-patient chain: preprocess -> ensemble -> crf -> metrics -> radiomics.
inline PatientOutcome process_patient(const PatientEntry& p, const PipelineConfig& c,
                                      const std::map<std::string, BoundingBox>* boxes, const Artifacts& out)
{
    PatientOutcome r;
    r.id = p.id;
    r.center = p.center;
    const auto needs = patient_needs(c);
    const auto name = safe_name(p.id);
    const auto ext = volume_ext(c);
    std::string stage = "load";
    try {
        std::optional<Volume> ct, pet;
        std::vector<ProbMap> probs;
        std::optional<Mask> truth;
        if (needs.images) {
            ct = load_volume(p.ct_path);
            pet = load_volume(p.pet_path);
            require_grid(ct->geom, pet->geom, "PET");
        }
        for (const auto& q : p.probmap_paths)
            if (needs.probs) probs.push_back(ProbMap::from_volume(load_volume(q)));
        if (needs.truth && p.truth_path) truth = Mask::from_volume(load_volume(*p.truth_path));
        if (ct) {
            for (const auto& m : probs) require_grid(ct->geom, m.geom, "probability map");
            if (truth) require_grid(ct->geom, truth->geom, "truth mask");
        }

        if (c.has("preprocess")) {
            stage = "preprocess";
            const auto& pp = c.preprocess;
            if (pp.zscore_scope == "volume") pet = zscore_normalize(*pet);
            if (boxes) {
                const auto it = boxes->find(p.id);
                if (it == boxes->end()) throw InvalidArgument("no bounding box for patient " + p.id);
                ct = crop_to_box(*ct, it->second);
                pet = crop_to_box(*pet, it->second);
                for (auto& m : probs) m = crop_to_box(m, it->second);
                if (truth) truth = crop_to_box(*truth, it->second);
            }
            ct = clip_intensities(resample_to(*ct, pp.target_spacing), pp.ct_clip_lo, pp.ct_clip_hi, pp.ct_prescale);
            pet = resample_to(*pet, pp.target_spacing);
            if (pp.zscore_scope == "patch") pet = zscore_normalize(*pet);
            if (pp.target_spacing) {
                for (auto& m : probs) m = resample_probability(m, *pp.target_spacing);
                if (truth) truth = threshold_map(resample_probability(*truth, *pp.target_spacing), 0.5);
            }
            save_volume(*ct, out.path("preprocess/" + name + "_ct" + ext));
            save_volume(*pet, out.path("preprocess/" + name + "_pet" + ext));
        }

        std::optional<ProbMap> ens;
        if (!probs.empty()) ens = ensemble_mean(probs);
        if (c.has("ensemble")) {
            stage = "ensemble";
            save_volume(to_volume(*ens), out.path("ensemble/" + name + "_prob" + ext));
        }

        std::optional<Mask> refined;
        if (c.has("crf")) {
            stage = "crf";
            auto params = c.crf.params;
            params.threads = 1;
            ProbMap marginal;
            if (c.crf.order == "ensemble_first") {
                marginal = crf::refine_mask(*ens, *ct, *pet, params, c.crf.threshold).marginal;
            } else {
                std::vector<ProbMap> marg;
                for (const auto& m : probs) marg.push_back(crf::refine_mask(m, *ct, *pet, params, c.crf.threshold).marginal);
                marginal = ensemble_mean(marg);
            }
            refined = threshold_map(marginal, c.crf.threshold);
            save_volume(to_volume(marginal), out.path("crf/" + name + "_marginal" + ext));
            save_volume(to_volume(*refined), out.path("crf/" + name + "_mask" + ext));
        }

        if (c.has("metrics")) {
            stage = "metrics";
            r.ensemble_score = evaluate_pair(threshold_map(*ens, c.metrics.threshold), *truth);
            if (refined) r.refined_score = evaluate_pair(*refined, *truth);
        }

        if (c.has("radiomics")) {
            stage = "radiomics";
            const Mask roi = c.radiomics.mask == "truth" ? *truth : refined ? *refined : threshold_map(*ens, c.metrics.threshold);
            r.features = radiomics::extract_all(*ct, *pet, roi, c.radiomics.features);
        }
    } catch (const std::exception& e) {
        r.failed_stage = stage;
        r.error = e.what();
    }
    return r;
}

inline nlohmann::json score_json(const SegScore& s) { return {{"dsc", s.dsc}, {"avg_hd", s.avg_hd}, {"hd95", s.hd95}}; }

struct CohortTable {
    tabular::FeatureTable features;
    std::vector<double> time;
    std::vector<int> event;
};

inline void write_table(const std::string& path, const tabular::FeatureTable& t, const std::vector<double>* time = nullptr,
                        const std::vector<int>* event = nullptr)
{
    auto csvt = tabular::to_csv(t);
    if (time && event) {
        csvt.header.push_back(kEventColumn);
        csvt.header.push_back(kTimeColumn);
        for (std::size_t r = 0; r < csvt.rows.size(); ++r) {
            csvt.rows[r].push_back(std::to_string((*event)[r]));
            csvt.rows[r].push_back(csv::format_double((*time)[r]));
        }
    }
    csv::write_file(path, csvt);
}

inline void write_json(const std::string& path, const nlohmann::json& j)
{
    std::ofstream o(path);
    if (!o) throw IoError("cannot write " + path);
    o << j.dump(1) << '\n';
}

} // namespace detail

/// Reads PatientID, features, Progression and PFS_days. Rows without survival data are dropped.
inline survival::SurvivalDataset survival_dataset_from_csv(const csv::Table& t)
{
    const auto id = t.require_column("PatientID", "survival features");
    const auto ev = t.require_column(kEventColumn, "survival features");
    const auto tm = t.require_column(kTimeColumn, "survival features");
    survival::SurvivalDataset d;
    std::vector<std::size_t> feat;
    for (std::size_t c = 0; c < t.header.size(); ++c)
        if (c != id && c != ev && c != tm) {
            feat.push_back(c);
            d.names.push_back(t.header[c]);
        }
    std::vector<std::vector<double>> rows;
    for (const auto& r : t.rows) {
        const auto e = csv::parse_double(r[ev]);
        const auto tt = csv::parse_double(r[tm]);
        if (!e || !tt) {
            warn("survival features: patient " + r[id] + " has no survival data, skipped");
            continue;
        }
        std::vector<double> x;
        for (auto c : feat) {
            const auto v = csv::parse_double(r[c]);
            if (!v) throw InvalidArgument("survival features: patient " + r[id] + " column " + t.header[c] + " is not numeric");
            x.push_back(*v);
        }
        rows.push_back(std::move(x));
        d.ids.push_back(r[id]);
        d.event.push_back(static_cast<int>(*e));
        d.time.push_back(*tt);
    }
    d.x.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(feat.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < feat.size(); ++j) d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    d.validate();
    return d;
}

/// Fits one model family by name.
inline survival::SurvivalModel fit_model(const std::string& kind, const survival::SurvivalDataset& d,
                                         const FitConfig& fc, std::uint64_t seed, unsigned threads)
{
    if (kind == "coxph") return survival::fit_coxph(d, fc.coxph);
    if (kind == "rsf") {
        auto o = fc.rsf;
        o.seed = seed;
        o.threads = threads;
        return survival::fit_rsf(d, o);
    }
    if (kind == "mlpcox") {
        auto o = fc.mlpcox;
        o.seed = seed;
        return survival::fit_mlp_cox(d, o);
    }
    throw InvalidArgument("unknown model '" + kind + "'");
}

/// Selection on a complete numeric table: Spearman filter and Lasso in the configured order.
inline std::pair<std::vector<std::string>, tabular::SelectionReport>
select_features(const tabular::FeatureTable& t, const std::vector<double>& time, const std::vector<int>& event,
                const SelectConfig& sc, std::uint64_t seed, unsigned threads)
{
    tabular::SelectionReport rep;
    rep.count_before = t.cols();
    auto run_lasso = [&](const tabular::FeatureTable& in) {
        Eigen::MatrixXd x = in.matrix();
        Eigen::VectorXd y;
        if (sc.response == "log_pfs_events") {
            std::vector<Eigen::Index> rows;
            for (std::size_t i = 0; i < event.size(); ++i)
                if (event[i]) rows.push_back(static_cast<Eigen::Index>(i));
            Eigen::MatrixXd xe(static_cast<Eigen::Index>(rows.size()), x.cols());
            y.resize(static_cast<Eigen::Index>(rows.size()));
            for (std::size_t k = 0; k < rows.size(); ++k) {
                xe.row(static_cast<Eigen::Index>(k)) = x.row(rows[k]);
                y(static_cast<Eigen::Index>(k)) = std::log(time[static_cast<std::size_t>(rows[k])]);
            }
            x = std::move(xe);
        } else {
            const auto r = survival::null_martingale_residuals(time, event);
            y = Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
        }
        tabular::LassoSelectOptions lo;
        lo.folds = sc.folds;
        lo.grid_size = sc.grid_size;
        lo.grid_ratio = sc.grid_ratio;
        lo.seed = seed;
        lo.threads = threads;
        auto sel = tabular::lasso_select(x, y, lo);
        const auto names = in.column_names();
        for (auto j : sel.constant) rep.dropped_constant.push_back(names[j]);
        std::vector<std::string> kept;
        for (auto j : sel.kept) kept.push_back(names[j]);
        if (kept.empty()) {
            // chosen lambda removes everything: take the first grid value that keeps a feature
            const auto st = tabular::Standardizer::fit(x);
            const Eigen::MatrixXd xs = st.apply(x);
            const Eigen::VectorXd yc = y.array() - y.mean();
            Eigen::VectorXd beta = Eigen::VectorXd::Zero(x.cols());
            for (double lambda : sel.path.lambdas) {
                beta = tabular::lasso_fit(xs, yc, lambda, {}, &beta).beta;
                for (Eigen::Index j = 0; j < beta.size(); ++j)
                    if (beta(j) != 0.0 && st.sd(j) > 0.0) kept.push_back(names[static_cast<std::size_t>(j)]);
                if (!kept.empty()) {
                    warn("select: cross-validated lambda keeps no feature, using lambda " + std::to_string(lambda));
                    sel.path.chosen_lambda = lambda;
                    break;
                }
            }
        }
        rep.lasso = sel.path;
        rep.response = sc.response;
        return kept;
    };

    std::vector<std::string> kept;
    if (sc.order == "spearman_first") {
        auto [filtered, srep] = tabular::spearman_filter(t, sc.spearman_threshold);
        rep.dropped_pairs = srep.dropped_pairs;
        rep.count_after_filter = filtered.cols();
        kept = sc.lasso ? run_lasso(filtered) : filtered.column_names();
    } else {
        const auto lk = sc.lasso ? run_lasso(t) : t.column_names();
        auto [filtered, srep] = tabular::spearman_filter(t.select(lk), sc.spearman_threshold);
        rep.dropped_pairs = srep.dropped_pairs;
        rep.count_after_filter = filtered.cols();
        kept = filtered.column_names();
    }
    rep.kept = kept;
    rep.count_after = kept.size();
    return {kept, rep};
}

/// Runs the configured stages. Throws InvalidArgument before writing anything if validation fails.
inline RunResult run_pipeline(const PipelineConfig& c)
{
    if (const auto errors = validate_inputs(c); !errors.empty()) {
        std::string msg = "validation failed:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw InvalidArgument(msg);
    }
    namespace fs = std::filesystem;
    const unsigned threads = c.threads ? c.threads : default_thread_count();
    fs::create_directories(c.output);
    detail::Artifacts out(c.output);
    RunResult result;
    nlohmann::json& rep = result.report;
    rep["format_version"] = kReportFormatVersion;
    rep["seed"] = c.seed;
    rep["stages"] = nlohmann::json::array();
    for (const char* s : kStageOrder)
        if (c.has(s)) rep["stages"].push_back(s);
    rep["stage_errors"] = nlohmann::json::array();
    auto stage_error = [&](const std::string& stage, const std::string& msg) {
        rep["stage_errors"].push_back({{"stage", stage}, {"error", msg}});
        ++result.failures;
    };

    // ---- per-patient stages
    const auto needs = detail::patient_needs(c);
    std::vector<detail::PatientOutcome> outcomes;
    std::set<std::string> succeeded;
    if (needs.any) {
        const auto manifest = load_manifest(c.inputs.manifest);
        std::optional<std::map<std::string, BoundingBox>> boxes;
        if (c.has("preprocess") && !c.inputs.bounding_boxes.empty()) boxes = load_bounding_boxes(c.inputs.bounding_boxes);
        outcomes.resize(manifest.size());
        parallel_for(manifest.size(), threads, [&](std::size_t i) {
            outcomes[i] = detail::process_patient(manifest.patients[i], c, boxes ? &*boxes : nullptr, out);
        });
        auto& pr = rep["patients"];
        pr["total"] = outcomes.size();
        pr["failures"] = nlohmann::json::array();
        for (const auto& o : outcomes) {
            if (o.failed_stage.empty())
                succeeded.insert(o.id);
            else
                pr["failures"].push_back({{"patient_id", o.id}, {"stage", o.failed_stage}, {"error", o.error}});
        }
        pr["succeeded"] = succeeded.size();
        pr["failed"] = outcomes.size() - succeeded.size();
        result.failures += static_cast<int>(outcomes.size() - succeeded.size());

        if (c.has("metrics")) {
            csv::Table t;
            t.header = {"patient_id", "center_id", "prediction", "dsc", "avg_hd", "hd95"};
            SegScore sum_e, sum_r;
            std::size_t ne = 0, nr = 0;
            for (const auto& o : outcomes) {
                auto row = [&](const char* kind, const SegScore& s) {
                    t.rows.push_back({o.id, o.center, kind, csv::format_double(s.dsc), csv::format_double(s.avg_hd),
                                      csv::format_double(s.hd95)});
                };
                if (!o.failed_stage.empty()) continue;
                if (o.ensemble_score) {
                    row("ensemble", *o.ensemble_score);
                    sum_e.dsc += o.ensemble_score->dsc;
                    sum_e.avg_hd += o.ensemble_score->avg_hd;
                    sum_e.hd95 += o.ensemble_score->hd95;
                    ++ne;
                }
                if (o.refined_score) {
                    row("refined", *o.refined_score);
                    sum_r.dsc += o.refined_score->dsc;
                    sum_r.avg_hd += o.refined_score->avg_hd;
                    sum_r.hd95 += o.refined_score->hd95;
                    ++nr;
                }
            }
            csv::write_file(out.path("metrics/scores.csv"), t);
            auto mean = [](SegScore s, std::size_t n) {
                const double d = static_cast<double>(n);
                return SegScore{s.dsc / d, s.avg_hd / d, s.hd95 / d};
            };
            auto& seg = rep["segmentation"];
            seg = nlohmann::json::object();
            if (ne) seg["ensemble"] = detail::score_json(mean(sum_e, ne));
            if (nr) seg["refined"] = detail::score_json(mean(sum_r, nr));
            seg["patients_scored"] = ne;
        }
        if (c.has("radiomics")) {
            std::vector<std::string> ids;
            for (const auto& o : outcomes)
                if (o.failed_stage.empty()) ids.push_back(o.id);
            tabular::FeatureTable ft(ids);
            std::size_t row = 0;
            std::vector<std::vector<std::optional<double>>> cols;
            std::vector<std::string> names;
            for (const auto& o : outcomes) {
                if (!o.failed_stage.empty()) continue;
                const auto& items = o.features->items();
                if (names.empty()) {
                    for (const auto& [n, v] : items) names.push_back(n);
                    cols.assign(names.size(), std::vector<std::optional<double>>(ids.size()));
                }
                for (std::size_t k = 0; k < items.size(); ++k) cols[k][row] = items[k].second;
                ++row;
            }
            for (std::size_t k = 0; k < names.size(); ++k) ft.add_column(tabular::Column::continuous(names[k], cols[k]));
            csv::write_file(out.path("radiomics/features.csv"), tabular::to_csv(ft));
            rep["radiomics"] = {{"patients", ids.size()}, {"features", names.size()}};
        }
    }

    // ---- cohort stages
    std::optional<detail::CohortTable> cohort;
    if (c.has("impute")) {
        try {
            const auto clinical_csv = csv::read_file(c.inputs.clinical);
            auto table = tabular::from_csv(clinical_csv, "PatientID", kClinicalCategorical, {kEventColumn, kTimeColumn});
            if (!c.inputs.deep_features.empty())
                table = tabular::join(table, tabular::from_csv(csv::read_file(c.inputs.deep_features), "PatientID"));
            if (c.has("radiomics")) {
                const auto rad = tabular::from_csv(csv::read_file(out.path("radiomics/features.csv")), "PatientID");
                table = tabular::join(table, rad);
            }
            // survival columns and cohort membership
            const auto ev = clinical_csv.require_column(kEventColumn, c.inputs.clinical);
            const auto tm = clinical_csv.require_column(kTimeColumn, c.inputs.clinical);
            std::vector<std::string> keep_ids;
            detail::CohortTable ct;
            std::size_t excluded = 0;
            for (std::size_t r = 0; r < clinical_csv.rows.size(); ++r) {
                const auto& row = clinical_csv.rows[r];
                const auto& id = table.row_ids()[r];
                const auto e = csv::parse_double(row[ev]);
                const auto t = csv::parse_double(row[tm]);
                const bool in_cohort = !needs.any || succeeded.count(id);
                if (!in_cohort || !e || !t) {
                    ++excluded;
                    continue;
                }
                keep_ids.push_back(id);
                ct.event.push_back(static_cast<int>(*e));
                ct.time.push_back(*t);
            }
            tabular::FeatureTable sub(keep_ids);
            for (const auto& col : table.columns()) {
                tabular::Column nc = col;
                nc.values.clear();
                nc.labels.clear();
                for (const auto& id : keep_ids) {
                    const auto r = *table.row_of(id);
                    if (col.kind == tabular::ColumnKind::continuous)
                        nc.values.push_back(col.values[r]);
                    else
                        nc.labels.push_back(col.labels[r]);
                }
                sub.add_column(std::move(nc));
            }
            const auto encoded = tabular::encode_dummies(sub);
            const auto missing = encoded.missing_count();
            ct.features = tabular::iterative_impute(encoded, c.impute);
            detail::write_table(out.path("tabular/imputed.csv"), ct.features, &ct.time, &ct.event);
            rep["impute"] = {{"patients", keep_ids.size()},
                             {"excluded_patients", excluded},
                             {"features", ct.features.cols()},
                             {"imputed_cells", missing}};
            cohort = std::move(ct);
        } catch (const std::exception& e) {
            stage_error("impute", e.what());
        }
    }

    std::optional<survival::SurvivalDataset> dataset;
    if (cohort && c.has("select")) {
        try {
            auto [kept, srep] = select_features(cohort->features, cohort->time, cohort->event, c.select,
                                                derive_seed(c.seed, "select"), threads);
            cohort->features = cohort->features.select(kept);
            detail::write_table(out.path("tabular/selected.csv"), cohort->features, &cohort->time, &cohort->event);
            detail::write_json(out.path("tabular/selection_report.json"), tabular::to_json(srep));
            rep["select"] = {{"count_before", srep.count_before},
                             {"count_after_filter", srep.count_after_filter},
                             {"count_after", srep.count_after},
                             {"kept", srep.kept}};
        } catch (const std::exception& e) {
            stage_error("select", e.what());
            cohort.reset();
        }
    }
    if (cohort) {
        survival::SurvivalDataset d;
        d.x = cohort->features.matrix();
        d.names = cohort->features.column_names();
        d.ids = cohort->features.row_ids();
        d.time = cohort->time;
        d.event = cohort->event;
        dataset = std::move(d);
    }

    std::map<std::string, std::vector<double>> fold_scores;
    std::map<std::string, survival::SurvivalModel> models;
    double mean_train = 0.0, mean_test = 0.0;
    if (dataset && c.has("fit")) {
        try {
            dataset->validate();
            const auto folds = survival::kfold_cv(dataset->event, c.fit.folds, c.fit.stratify, derive_seed(c.seed, "folds"));
            for (const auto& f : folds) {
                mean_train += static_cast<double>(f.train.size()) / static_cast<double>(folds.size());
                mean_test += static_cast<double>(f.test.size()) / static_cast<double>(folds.size());
            }
            csv::Table scores;
            scores.header = {"model", "fold", "c_index", "n_train", "n_test"};
            auto& fr = rep["fit"];
            fr = nlohmann::json::object();
            for (const auto& kind : c.fit.models) {
                const auto seed = derive_seed(c.seed, "fit." + kind);
                try {
                    std::vector<double> cs;
                    for (std::size_t k = 0; k < folds.size(); ++k) {
                        const auto train = dataset->subset(folds[k].train);
                        const auto test = dataset->subset(folds[k].test);
                        const auto m = fit_model(kind, train, c.fit, seed, threads);
                        const auto risk = survival::predict_risk(m, test.x);
                        const double ci = survival::concordance_index(
                            std::span<const double>(risk.data(), static_cast<std::size_t>(risk.size())), test.time, test.event);
                        cs.push_back(ci);
                        scores.rows.push_back({kind, std::to_string(k), csv::format_double(ci),
                                               std::to_string(folds[k].train.size()), std::to_string(folds[k].test.size())});
                    }
                    auto full = fit_model(kind, *dataset, c.fit, seed, threads);
                    survival::save_model(out.path("survival/" + kind + ".json"), full);
                    const double mean = std::accumulate(cs.begin(), cs.end(), 0.0) / static_cast<double>(cs.size());
                    fr[kind] = {{"cv_c_index", cs}, {"mean_cv_c_index", mean}};
                    fold_scores[kind] = cs;
                    models.emplace(kind, std::move(full));
                } catch (const std::exception& e) {
                    stage_error("fit", kind + ": " + e.what());
                }
            }
            csv::write_file(out.path("survival/cv_scores.csv"), scores);
        } catch (const std::exception& e) {
            stage_error("fit", e.what());
        }
    }

    if (c.has("eval") && dataset) {
        auto& er = rep["eval"];
        er = nlohmann::json::object();
        for (const auto& [kind, m] : models) {
            try {
                const auto risk = survival::predict_risk(m, dataset->x);
                csv::Table t;
                t.header = {"PatientID", "risk"};
                for (Eigen::Index i = 0; i < risk.size(); ++i)
                    t.rows.push_back({dataset->ids[static_cast<std::size_t>(i)], csv::format_double(risk(i))});
                csv::write_file(out.path("survival/" + kind + "_risks.csv"), t);
                er[kind] = {{"apparent_c_index",
                             survival::concordance_index(std::span<const double>(risk.data(), static_cast<std::size_t>(risk.size())),
                                                         dataset->time, dataset->event)}};
            } catch (const std::exception& e) {
                stage_error("eval", kind + ": " + e.what());
            }
        }
    }

    if (c.has("compare") && fold_scores.size() >= 2) {
        auto& cr = rep["compare"];
        cr = nlohmann::json::array();
        for (auto a = fold_scores.begin(); a != fold_scores.end(); ++a)
            for (auto b = std::next(a); b != fold_scores.end(); ++b) {
                const auto t = survival::corrected_paired_ttest(a->second, b->second, mean_train, mean_test);
                cr.push_back({{"model_a", a->first},
                              {"model_b", b->first},
                              {"t", std::isfinite(t.t) ? nlohmann::json(t.t) : nlohmann::json(t.t > 0 ? "inf" : "-inf")},
                              {"p", t.p},
                              {"df", t.df},
                              {"significant_at_0.05", t.p < 0.05}});
            }
        detail::write_json(out.path("survival/compare.json"), cr);
    } else if (c.has("compare")) {
        stage_error("compare", "fewer than two models produced fold scores");
    }

    // ---- artifact manifest, sorted by relative path
    std::vector<std::pair<std::string, std::string>> arts;
    for (const auto& e : fs::recursive_directory_iterator(out.root())) {
        if (!e.is_regular_file()) continue;
        const auto rel = fs::relative(e.path(), out.root()).generic_string();
        if (rel == "run_report.json") continue;
        arts.emplace_back(rel, sha256_file(e.path().string()));
    }
    std::sort(arts.begin(), arts.end());
    rep["artifacts"] = nlohmann::json::array();
    for (const auto& [p, h] : arts) rep["artifacts"].push_back({{"path", p}, {"sha256", h}});
    rep["failures"] = result.failures;
    rep["status"] = result.failures ? "failed" : "ok";

    result.report_path = out.path("run_report.json");
    const auto text = rep.dump(1) + "\n";
    {
        std::ofstream o(result.report_path, std::ios::binary);
        if (!o) throw IoError("cannot write " + result.report_path);
        o << text;
    }
    result.report_sha256 = sha256_hex(text);
    return result;
}

} // namespace hnpipe::pipeline
