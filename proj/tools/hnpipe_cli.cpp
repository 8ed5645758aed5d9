#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <hnpipe/crf.hpp>
#include <hnpipe/losses.hpp>
#include <hnpipe/model_io.hpp>
#include <hnpipe/pipeline/run.hpp>
#include <hnpipe/seg_metrics.hpp>
#include <hnpipe/synth.hpp>
#include <hnpipe/volume_io.hpp>

using namespace hnpipe;
namespace fs = std::filesystem;

namespace {

struct Common {
    std::string config;
    std::string output;
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
    bool strict = false;
};

void add_common(CLI::App* app, Common& c, bool need_config)
{
    auto* opt = app->add_option("--config", c.config, "pipeline config (JSON)");
    if (need_config) opt->required()->check(CLI::ExistingFile);
    app->add_option("--output", c.output, "output directory, overrides the config");
    app->add_option("--seed", c.seed, "global seed, overrides the config");
    app->add_option("--threads", c.threads, "worker threads (default: HNPIPE_THREADS or all cores)");
    app->add_flag("--strict", c.strict, "reject unknown config keys");
}

void print_json(const nlohmann::json& j) { std::cout << j.dump(2) << '\n'; }

int run_stages(const Common& c, const std::vector<std::string>& stages)
{
    auto cfg = pipeline::load_config(c.config, c.strict);
    if (!c.output.empty()) cfg.output = fs::absolute(c.output).string();
    if (c.seed) cfg.seed = *c.seed;
    if (c.threads) cfg.threads = c.threads;
    if (!stages.empty()) cfg.stages = stages;
    const auto r = pipeline::run_pipeline(cfg);
    std::cerr << "report: " << r.report_path << "\nsha256: " << r.report_sha256 << '\n';
    if (r.failures) std::cerr << r.failures << " failure(s), see the report\n";
    return r.failures ? 1 : 0;
}

void write_json_file(const std::string& path, const nlohmann::json& j)
{
    std::ofstream o(path);
    if (!o) throw IoError("cannot write " + path);
    o << j.dump(2) << '\n';
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Head-and-neck PET/CT segmentation and survival pipeline"};
    app.require_subcommand(1);
    std::map<std::string, Common> common;
    std::function<int()> action;

    // config-driven stages
    const std::vector<std::pair<std::string, std::vector<std::string>>> stage_cmds{
        {"preprocess", {"preprocess"}},
        {"ensemble", {"ensemble"}},
        {"radiomics", {"radiomics"}},
        {"impute", {"impute"}},
        {"select", {"impute", "select"}},
    };
    for (const auto& [name, stages] : stage_cmds) {
        auto* sub = app.add_subcommand(name, "run the " + name + " stage from a config");
        add_common(sub, common[name], true);
        sub->callback([&, name = name, stages = stages] { action = [&, name, stages] { return run_stages(common[name], stages); }; });
    }

    auto* run = app.add_subcommand("run", "run every stage listed in the config");
    add_common(run, common["run"], true);
    run->callback([&] { action = [&] { return run_stages(common["run"], {}); }; });

    // refine: config-driven or a single case from files
    auto* refine = app.add_subcommand("refine", "CRF refinement of a probability map");
    add_common(refine, common["refine"], false);
    std::string prob_path, ct_path, pet_path, marginal_path;
    crf::CrfParams crf_params;
    double crf_threshold = 0.5;
    refine->add_option("--prob", prob_path, "probability map volume");
    refine->add_option("--ct", ct_path, "normalized CT volume, as written by preprocess");
    refine->add_option("--pet", pet_path, "normalized PET volume, as written by preprocess");
    refine->add_option("--radius", crf_params.neighborhood_radius, "pairwise neighbourhood radius in voxels (0: all pairs)");
    refine->add_option("--iterations", crf_params.iterations, "mean-field iterations");
    refine->add_option("--threshold", crf_threshold, "foreground threshold on the marginal");
    refine->add_option("--marginal", marginal_path, "also write the foreground marginal here");
    refine->callback([&] {
        action = [&] {
            auto& c = common["refine"];
            if (!c.config.empty()) return run_stages(c, {"crf"});
            if (prob_path.empty() || ct_path.empty() || pet_path.empty() || c.output.empty())
                throw InvalidArgument("refine needs --config, or --prob, --ct, --pet and --output");
            crf_params.threads = c.threads ? c.threads : default_thread_count();
            const auto r = crf::refine_mask(ProbMap::from_volume(load_volume(prob_path)), load_volume(ct_path),
                                            load_volume(pet_path), crf_params, crf_threshold);
            save_volume(to_volume(r.mask), c.output);
            if (!marginal_path.empty()) save_volume(to_volume(r.marginal), marginal_path);
            std::cerr << "foreground voxels: " << r.mask.count() << '\n';
            return 0;
        };
    });

    auto* metrics = app.add_subcommand("metrics", "DSC, average HD and HD95 of a predicted mask");
    add_common(metrics, common["metrics"], false);
    std::string pred_path, truth_path;
    metrics->add_option("--pred", pred_path, "predicted mask volume");
    metrics->add_option("--truth", truth_path, "ground-truth mask volume");
    metrics->callback([&] {
        action = [&] {
            auto& c = common["metrics"];
            if (!c.config.empty()) return run_stages(c, {"metrics"});
            if (pred_path.empty() || truth_path.empty()) throw InvalidArgument("metrics needs --config, or --pred and --truth");
            const auto s = evaluate_pair(Mask::from_volume(load_volume(pred_path)), Mask::from_volume(load_volume(truth_path)));
            print_json({{"dsc", s.dsc}, {"avg_hd", s.avg_hd}, {"hd95", s.hd95}});
            return 0;
        };
    });

    auto* loss = app.add_subcommand("loss-eval", "segmentation loss of a probability map against a mask");
    std::string loss_kind = "log_cosh_dice_focal";
    losses::LossParams loss_params;
    loss->add_option("--pred", pred_path, "probability map volume")->required();
    loss->add_option("--truth", truth_path, "ground-truth mask volume")->required();
    loss->add_option("--kind", loss_kind, "dice | focal | log_cosh_dice_focal");
    loss->add_option("--gamma", loss_params.gamma, "focal exponent");
    loss->callback([&] {
        action = [&] {
            const auto p = load_volume(pred_path);
            const auto y = load_volume(truth_path);
            if (!(p.geom.dims == y.geom.dims)) throw ShapeMismatch("loss-eval: grids differ");
            print_json({{"kind", loss_kind}, {"loss", losses::evaluate(losses::parse_loss_kind(loss_kind), y.data, p.data, loss_params)}});
            return 0;
        };
    });

    auto* surv = app.add_subcommand("survival", "survival models on a feature CSV (PatientID, features, Progression, PFS_days)");
    surv->require_subcommand(1);
    std::string data_path, model_kind = "coxph", model_path, scores_path, out_path;
    std::uint64_t model_seed = 0;
    unsigned model_threads = 0;

    auto* sfit = surv->add_subcommand("fit", "fit one model on the whole table");
    std::string fit_config;
    sfit->add_option("--data,--features", data_path, "feature CSV")->required()->check(CLI::ExistingFile);
    sfit->add_option("--model", model_kind, "coxph | rsf | mlpcox");
    sfit->add_option("--config", fit_config, "pipeline config whose fit section sets the model options")->check(CLI::ExistingFile);
    sfit->add_option("--output", out_path, "model JSON")->required();
    sfit->add_option("--seed", model_seed, "model seed");
    sfit->add_option("--threads", model_threads, "worker threads");
    sfit->callback([&] {
        action = [&] {
            const auto d = pipeline::survival_dataset_from_csv(csv::read_file(data_path));
            const auto fc = fit_config.empty() ? pipeline::FitConfig{} : pipeline::load_config(fit_config, false).fit;
            const auto m = pipeline::fit_model(model_kind, d, fc, model_seed,
                                               model_threads ? model_threads : default_thread_count());
            survival::save_model(out_path, m);
            return 0;
        };
    });

    auto* seval = surv->add_subcommand("eval", "risk scores and C-index of a saved model");
    seval->add_option("--model", model_path, "model JSON")->required()->check(CLI::ExistingFile);
    seval->add_option("--data,--features", data_path, "feature CSV")->required()->check(CLI::ExistingFile);
    seval->add_option("--output", out_path, "risk CSV");
    seval->callback([&] {
        action = [&] {
            const auto m = survival::load_model(model_path);
            const auto d = pipeline::survival_dataset_from_csv(csv::read_file(data_path));
            const auto& names = survival::model_features(m);
            if (names != d.names) throw ShapeMismatch("survival eval: data columns do not match the model features");
            const auto risk = survival::predict_risk(m, d.x);
            if (!out_path.empty()) {
                csv::Table t;
                t.header = {"PatientID", "risk"};
                for (Eigen::Index i = 0; i < risk.size(); ++i)
                    t.rows.push_back({d.ids[static_cast<std::size_t>(i)], csv::format_double(risk(i))});
                csv::write_file(out_path, t);
            }
            const double ci = survival::concordance_index(
                std::span<const double>(risk.data(), static_cast<std::size_t>(risk.size())), d.time, d.event);
            print_json({{"model", survival::model_kind(m)}, {"patients", d.size()}, {"c_index", ci}});
            return 0;
        };
    });

    auto* scmp = surv->add_subcommand("compare", "corrected resampled t-test on per-fold scores");
    scmp->add_option("--scores", scores_path, "cv_scores.csv from a fit run")->required()->check(CLI::ExistingFile);
    scmp->add_option("--output", out_path, "comparison JSON");
    scmp->callback([&] {
        action = [&] {
            const auto t = csv::read_file(scores_path);
            const auto cm = t.require_column("model", scores_path), cc = t.require_column("c_index", scores_path),
                       ctr = t.require_column("n_train", scores_path), cte = t.require_column("n_test", scores_path);
            std::map<std::string, std::vector<double>> scores;
            double n_train = 0, n_test = 0;
            for (const auto& r : t.rows) {
                const auto v = csv::parse_double(r[cc]);
                if (!v) throw IoError(scores_path + ": non-numeric c_index");
                scores[r[cm]].push_back(*v);
                n_train += csv::parse_double(r[ctr]).value_or(0.0);
                n_test += csv::parse_double(r[cte]).value_or(0.0);
            }
            if (scores.size() < 2) throw InvalidArgument("survival compare: need scores for two models");
            const double rows = static_cast<double>(t.rows.size());
            nlohmann::json out = nlohmann::json::array();
            for (auto a = scores.begin(); a != scores.end(); ++a)
                for (auto b = std::next(a); b != scores.end(); ++b) {
                    const auto r = survival::corrected_paired_ttest(a->second, b->second, n_train / rows, n_test / rows);
                    out.push_back({{"model_a", a->first}, {"model_b", b->first}, {"t", r.t}, {"p", r.p}, {"df", r.df}});
                }
            if (!out_path.empty()) write_json_file(out_path, out);
            print_json(out);
            return 0;
        };
    });

    auto* synth_cmd = app.add_subcommand("synth", "write a synthetic cohort with a runnable config");
    synth::CohortSpec spec;
    std::string synth_out;
    synth_cmd->add_option("--output", synth_out, "cohort directory")->required();
    synth_cmd->add_option("--patients", spec.patients, "number of patients");
    synth_cmd->add_option("--centers", spec.centers, "number of centers");
    synth_cmd->add_option("--grid", spec.grid, "cubic grid edge in voxels");
    synth_cmd->add_option("--models", spec.models, "probability maps per patient");
    synth_cmd->add_option("--seed", spec.seed, "seed");
    synth_cmd->add_option("--format", spec.format, "nifti | raw_json")->check(CLI::IsMember({"nifti", "raw_json"}));
    synth_cmd->callback([&] {
        action = [&] {
            const auto f = synth::synth_cohort(spec, synth_out);
            std::cerr << "config: " << f.config << '\n';
            return 0;
        };
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    try {
        return action ? action() : 0;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
}
