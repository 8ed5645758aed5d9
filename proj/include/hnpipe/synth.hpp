#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "csv.hpp"
#include "error.hpp"
#include "phantom.hpp"
#include "survival.hpp"
#include "volume_io.hpp"

namespace hnpipe::synth {

/// Exponential proportional-hazards data: x ~ N(0,1), hazard base_rate * exp(x beta),
/// uniform censoring on [0, censor_max].
inline survival::SurvivalDataset synth_survival(std::size_t n, std::size_t p, const std::vector<double>& beta,
                                                std::uint64_t seed, double base_rate = 1.0, double censor_max = 3.0)
{
    if (beta.size() > p) throw InvalidArgument("synth_survival: more coefficients than features");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd;
    std::exponential_distribution<double> ex(1.0);
    std::uniform_real_distribution<double> cu(0.0, censor_max);
    survival::SurvivalDataset d;
    d.x.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < n; ++i) {
        double eta = 0.0;
        for (std::size_t j = 0; j < p; ++j) {
            const double v = nd(rng);
            d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            if (j < beta.size()) eta += beta[j] * v;
        }
        const double t = ex(rng) / (base_rate * std::exp(eta));
        const double c = cu(rng);
        d.time.push_back(std::max(std::min(t, c), 1e-6));
        d.event.push_back(t <= c ? 1 : 0);
        d.ids.push_back("S" + std::to_string(i));
    }
    for (std::size_t j = 0; j < p; ++j) d.names.push_back("x" + std::to_string(j));
    return d;
}

struct CohortSpec {
    std::size_t patients = 40;
    std::size_t centers = 4;
    std::size_t grid = 24;
    std::size_t models = 3;
    std::size_t deep_features = 12;
    double missing_rate = 0.05;
    std::uint64_t seed = 7;
    std::string format = "nifti"; // nifti | raw_json
};

struct CohortFiles {
    std::string manifest;
    std::string clinical;
    std::string deep_features;
    std::string bounding_boxes;
    std::string config;
};

/// Writes images, probability maps, truth masks, clinical and deep-feature tables,
/// bounding boxes, a manifest and a runnable pipeline config under `out_dir`.
/// Progression-free survival depends on tumour radius, HPV status and dl_000.
inline CohortFiles synth_cohort(const CohortSpec& spec, const std::string& out_dir)
{
    namespace fs = std::filesystem;
    if (spec.patients == 0) throw InvalidArgument("synth: need at least one patient");
    if (spec.centers == 0 || spec.models == 0) throw InvalidArgument("synth: need at least one center and model");
    if (spec.grid < 12) throw InvalidArgument("synth: grid edge must be at least 12 voxels");
    if (spec.deep_features < 4) throw InvalidArgument("synth: need at least 4 deep features");
    const fs::path root(out_dir);
    fs::create_directories(root / "images");
    const std::string ext = spec.format == "nifti" ? ".nii.gz" : ".json";

    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> nd;
    auto missing = [&] { return unit(rng) < spec.missing_rate; };
    auto fmt = [](double v) { return csv::format_double(std::round(v * 100.0) / 100.0); };

    csv::Table manifest, clinical, deep, boxes;
    manifest.header = {"patient_id", "ct_path", "pet_path", "probmap_paths", "truth_mask_path", "center_id"};
    clinical.header = {"PatientID", "CenterID", "Age", "Gender", "T", "N", "M", "TNMgroup", "TNMedition", "Tobacco",
                       "Alcohol", "Performance", "HPV", "Chemotherapy", "Progression", "PFS_days"};
    deep.header = {"PatientID"};
    for (std::size_t k = 0; k < spec.deep_features; ++k) {
        char name[16];
        std::snprintf(name, sizeof name, "dl_%03zu", k);
        deep.header.push_back(name);
    }
    boxes.header = {"patient_id", "x0", "y0", "z0", "sx", "sy", "sz"};

    const double edge = static_cast<double>(spec.grid);
    for (std::size_t i = 0; i < spec.patients; ++i) {
        char id_buf[16];
        std::snprintf(id_buf, sizeof id_buf, "P%03zu", i);
        const std::string id = id_buf;
        const std::string center = "C" + std::to_string(i % spec.centers + 1);

        PhantomSpec ps;
        ps.size = spec.grid;
        ps.radius = edge * (0.18 + 0.12 * unit(rng));
        ps.seed = survival::mix_seed(spec.seed, 2 * i + 1);
        ps.intensity_noise = 0.4;
        const auto ph = make_noisy_sphere(ps);
        Volume ct(ph.ct.geom), pet(ph.pet.geom);
        for (std::size_t n = 0; n < ct.size(); ++n) {
            ct.data[n] = 20.0 + 1000.0 * ph.ct.data[n];       // HU, soft tissue around 20
            pet.data[n] = std::max(0.0, 1.0 + 2.0 * ph.pet.data[n]); // SUV
        }
        const auto stem = "images/" + id;
        save_volume(ct, (root / (stem + "_ct" + ext)).string());
        save_volume(pet, (root / (stem + "_pet" + ext)).string());
        save_volume(to_volume(ph.truth), (root / (stem + "_truth" + ext)).string());
        std::string maps;
        for (std::size_t m = 0; m < spec.models; ++m) {
            const auto prob = m == 0 ? ph.prob
                                     : noisy_probability_map(ph.truth, 0.75, 0.25, 0.2,
                                                             survival::mix_seed(spec.seed, 1000 * (i + 1) + m));
            const auto rel = stem + "_prob" + std::to_string(m) + ext;
            save_volume(to_volume(prob), (root / rel).string());
            maps += (m ? ";" : "") + rel;
        }
        manifest.rows.push_back({id, stem + "_ct" + ext, stem + "_pet" + ext, maps, stem + "_truth" + ext, center});
        const std::size_t margin = spec.grid / 12;
        const auto side = std::to_string(spec.grid - 2 * margin);
        boxes.rows.push_back({id, std::to_string(margin), std::to_string(margin), std::to_string(margin), side, side, side});

        // clinical covariates
        const double age = 60.0 + 9.0 * nd(rng);
        const bool hpv = unit(rng) < 0.5;
        const int t_stage = 1 + static_cast<int>(unit(rng) * 4.0);
        const int n_stage = static_cast<int>(unit(rng) * 3.0);
        const bool tobacco = unit(rng) < 0.4;
        std::vector<double> dl(spec.deep_features);
        for (auto& v : dl) v = nd(rng);
        dl[3] = dl[0] + 0.1 * nd(rng);

        const double radius_z = (ps.radius / edge - 0.24) / 0.035;
        const double eta = 0.8 * radius_z + 0.7 * dl[0] - 0.8 * (hpv ? 1.0 : 0.0) + 0.3 * (tobacco ? 1.0 : 0.0);
        const double t_event = -std::log(1.0 - unit(rng)) / (1.0 / 900.0 * std::exp(eta));
        const double t_censor = 300.0 + 1500.0 * unit(rng);
        const bool event = t_event <= t_censor;
        const double days = std::max(1.0, std::round(std::min(t_event, t_censor)));

        auto opt = [&](std::string v) { return missing() ? std::string() : v; };
        clinical.rows.push_back({id,
                                 center,
                                 opt(fmt(age)),
                                 unit(rng) < 0.8 ? "M" : "F",
                                 "T" + std::to_string(t_stage),
                                 "N" + std::to_string(n_stage),
                                 unit(rng) < 0.95 ? "M0" : "M1",
                                 t_stage + n_stage >= 4 ? "IV" : t_stage + n_stage >= 2 ? "III" : "II",
                                 unit(rng) < 0.7 ? "8" : "7",
                                 opt(tobacco ? "Yes" : "No"),
                                 opt(unit(rng) < 0.5 ? "Yes" : "No"),
                                 opt(std::to_string(static_cast<int>(unit(rng) * 3.0))),
                                 opt(hpv ? "Positive" : "Negative"),
                                 unit(rng) < 0.6 ? "Yes" : "No",
                                 event ? "1" : "0",
                                 csv::format_double(days)});
        std::vector<std::string> drow{id};
        for (double v : dl) drow.push_back(fmt(v));
        deep.rows.push_back(std::move(drow));
    }

    CohortFiles f;
    f.manifest = (root / "manifest.csv").string();
    f.clinical = (root / "clinical.csv").string();
    f.deep_features = (root / "deep_features.csv").string();
    f.bounding_boxes = (root / "bbox.csv").string();
    f.config = (root / "pipeline.json").string();
    csv::write_file(f.manifest, manifest);
    csv::write_file(f.clinical, clinical);
    csv::write_file(f.deep_features, deep);
    csv::write_file(f.bounding_boxes, boxes);

    const nlohmann::json cfg = {
        {"version", 1},
        {"seed", spec.seed},
        {"output", "run"},
        {"stages", {"preprocess", "ensemble", "crf", "metrics", "radiomics", "impute", "select", "fit", "eval", "compare"}},
        {"inputs",
         {{"manifest", "manifest.csv"},
          {"clinical", "clinical.csv"},
          {"deep_features", "deep_features.csv"},
          {"bounding_boxes", "bbox.csv"}}},
        {"preprocess", {{"format", spec.format}}},
        {"crf", {{"neighborhood_radius", std::max<std::size_t>(1, spec.grid / 8)}, {"iterations", 5}}},
        {"radiomics", {{"bins", 16}}},
        {"select", {{"folds", 5}, {"grid_size", 50}}},
        {"fit",
         {{"models", {"coxph", "rsf", "mlpcox"}},
          {"folds", 5},
          {"coxph", {{"ridge", 0.1}}},
          {"rsf", {{"n_trees", 50}}},
          {"mlpcox", {{"hidden", {8}}, {"epochs", 100}}}}}};
    std::ofstream o(f.config);
    if (!o) throw IoError("cannot write " + f.config);
    o << cfg.dump(2) << '\n';
    return f;
}

} // namespace hnpipe::synth
