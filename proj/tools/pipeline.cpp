#include <cstdio>
#include <ostream>
#include <sstream>

#include "cli.hpp"
#include "config.hpp"
#include "unmix_gmm/gmm_fit.hpp"
#include "unmix_gmm/parallel.hpp"
#include "unmix_gmm/projection.hpp"

namespace fs = std::filesystem;

namespace unmix_gmm::cli {

namespace {

// Stage seeds are the first draw of a dedicated stream of the run seed.
enum class Stage : std::uint64_t { library = 1, projection, selection, fit, fit_gmm1, template_image, image };

std::uint64_t stage_seed(std::uint64_t seed, Stage stage, std::uint64_t item = 0) {
    return make_rng(seed, (static_cast<std::uint64_t>(stage) << 32) | item)();
}

std::string image_name(std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "image_%03zu", i);
    return buf;
}

json stamp(json j, const InputDigests& inputs) {
    j["tool"] = tool_json();
    j["inputs"] = inputs.to_json();
    return j;
}

void put_json(const fs::path& path, const json& j) { write_file_atomic(path, dump_json(j)); }

json selection_json(const CvicResult& r, int folds) {
    json repeats = json::array();
    for (const auto& rep : r.repeats) {
        repeats.push_back(json{{"seed", rep.seed}, {"scores", rep.scores}, {"chosen", rep.chosen}});
    }
    return json{{"class_names", r.class_names}, {"candidates", r.candidates}, {"threshold", r.threshold},
                {"folds", folds},          {"repeats", std::move(repeats)}, {"chosen", r.chosen},
                {"modal_count", r.modal_count}};
}

json diagnostics_json(const UnmixDiagnostics& d) {
    json steps = json::array();
    for (const auto& s : d.steps) {
        steps.push_back(json{{"accepted", s.accepted}, {"min_step", s.min_step}, {"max_step", s.max_step}});
    }
    return json{{"objective_trace", d.objective_trace},
                {"outer_iterations", d.outer_iterations},
                {"converged", d.converged},
                {"unconverged_pixels", d.unconverged_pixels},
                {"combination_count", d.combination_count},
                {"steps", std::move(steps)},
                {"warnings", d.warnings}};
}

json picks_json(const SyntheticImage& img) {
    json picks = json::array();
    for (Index n = 0; n < img.picks.rows(); ++n) {
        json row = json::array();
        for (Index j = 0; j < img.picks.cols(); ++j) row.push_back(img.picks(n, j));
        picks.push_back(std::move(row));
    }
    return json{{"class_names", img.sets.class_names()}, {"picks", std::move(picks)}};
}

struct Estimator {
    std::string name;
    GmmBundle bundle;
    Matrix totals;
};

}  // namespace

json PipelineConfig::to_json() const {
    json j;
    j["seed"] = seed;
    if (library_path) {
        j["library"] = library_path->generic_string();
    } else {
        const auto& s = synthetic_library;
        j["library"] = json{{"synthetic",
                             {{"class_names", s.class_names},
                              {"bands", s.bands},
                              {"spectra_per_class", s.spectra_per_class},
                              {"modes_per_class", s.modes_per_class},
                              {"mode_separation", s.mode_separation},
                              {"within_mode_sd", s.within_mode_sd},
                              {"brightness_sd", s.brightness_sd}}}};
    }
    j["projection"] = json{{"dimension", dimension}};
    if (force_k) {
        j["force_k"] = *force_k;
    } else {
        j["selection"] = json{{"folds", selection.folds},
                              {"candidates", selection.candidates},
                              {"threshold", selection.threshold},
                              {"repeats", selection.repeats}};
    }
    json abundance_json = config::abundance_to_json(abundance);
    if (std::holds_alternative<TemplateAbundances>(this->abundance)) {
        abundance_json["template_concentration"] = template_concentration;
    }
    j["scenes"] = json{{"images", images},
                       {"rows", shape.rows},
                       {"cols", shape.cols},
                       {"spectra_per_class", spectra_per_class},
                       {"max_active", max_active},
                       {"abundance", abundance_json},
                       {"noise_sd", noise_sd}};
    j["unmix"] = json{{"max_iters", unmix.max_outer_iters},
                      {"tolerance", unmix.tolerance},
                      {"initial_step", unmix.initial_step},
                      {"combination_cap", unmix.combination_cap}};
    json m = json::array();
    for (const auto& c : merge) m.push_back(json{{"name", c.name}, {"classes", c.classes}});
    j["merge"] = std::move(m);
    j["compare_gmm1"] = compare_gmm1;
    return j;
}

PipelineConfig parse_pipeline_config(const json& j, const fs::path& base_dir) {
    using namespace config;
    const std::string what = "pipeline config";
    check_keys(j, {"seed", "library", "projection", "selection", "force_k", "scenes", "unmix", "merge", "compare_gmm1"},
               what);
    PipelineConfig c;
    c.seed = get<std::uint64_t>(j, "seed", what);

    const json& lib = j.contains("library") ? j.at("library") : json{{"synthetic", json::object()}};
    if (lib.is_string()) {
        const fs::path p = lib.get<std::string>();
        c.library_path = p.is_absolute() ? p : base_dir / p;
    } else {
        check_keys(lib, {"synthetic"}, what + " library");
        const json& s = lib.at("synthetic");
        const std::string sw = what + " synthetic library";
        check_keys(s, {"class_names", "bands", "spectra_per_class", "modes_per_class", "mode_separation",
                       "within_mode_sd", "brightness_sd"},
                   sw);
        auto& out = c.synthetic_library;
        out.class_names = get_or(s, "class_names", out.class_names, sw);
        out.bands = get_or<Index>(s, "bands", out.bands, sw);
        out.spectra_per_class = get_or<std::size_t>(s, "spectra_per_class", out.spectra_per_class, sw);
        out.modes_per_class = get_or<int>(s, "modes_per_class", out.modes_per_class, sw);
        out.mode_separation = get_or<double>(s, "mode_separation", out.mode_separation, sw);
        out.within_mode_sd = get_or<double>(s, "within_mode_sd", out.within_mode_sd, sw);
        out.brightness_sd = get_or<double>(s, "brightness_sd", out.brightness_sd, sw);
    }

    if (j.contains("projection")) {
        check_keys(j.at("projection"), {"dimension"}, what + " projection");
        c.dimension = get_or<Index>(j.at("projection"), "dimension", c.dimension, what + " projection");
    }

    if (j.contains("force_k") && j.contains("selection")) {
        throw ValidationError(what + ": 'force_k' and 'selection' are mutually exclusive");
    }
    if (j.contains("force_k")) {
        c.force_k = get<int>(j, "force_k", what);
        if (*c.force_k < 1) throw ValidationError(what + ": force_k must be positive");
    }
    if (j.contains("selection")) {
        const json& s = j.at("selection");
        const std::string sw = what + " selection";
        check_keys(s, {"folds", "candidates", "threshold", "repeats"}, sw);
        c.selection.folds = get_or(s, "folds", c.selection.folds, sw);
        c.selection.candidates = get_or(s, "candidates", c.selection.candidates, sw);
        c.selection.threshold = get_or(s, "threshold", c.selection.threshold, sw);
        c.selection.repeats = get_or(s, "repeats", c.selection.repeats, sw);
    }
    c.selection.validate();

    if (j.contains("scenes")) {
        const json& s = j.at("scenes");
        const std::string sw = what + " scenes";
        check_keys(s, {"images", "rows", "cols", "spectra_per_class", "max_active", "abundance", "noise_sd"}, sw);
        c.images = get_or(s, "images", c.images, sw);
        c.shape.rows = get_or<Index>(s, "rows", c.shape.rows, sw);
        c.shape.cols = get_or<Index>(s, "cols", c.shape.cols, sw);
        c.spectra_per_class = get_or(s, "spectra_per_class", c.spectra_per_class, sw);
        c.max_active = get_or(s, "max_active", c.max_active, sw);
        c.noise_sd = get_or(s, "noise_sd", c.noise_sd, sw);
        if (s.contains("abundance")) {
            json a = s.at("abundance");
            if (a.is_object() && a.contains("template_concentration")) {
                c.template_concentration = get<double>(a, "template_concentration", sw + " abundance");
                a.erase("template_concentration");
                if (a.value("mode", "") != "template") {
                    throw ValidationError(sw + ": 'template_concentration' applies to template mode only");
                }
            }
            c.abundance = parse_abundance(a, sw);
        }
    }
    if (c.images == 0) throw ValidationError(what + ": scenes.images must be positive");
    if (c.shape.rows <= 0 || c.shape.cols <= 0) throw ValidationError(what + ": image shape must be positive");
    if (!(c.template_concentration > 0.0)) throw ValidationError(what + ": template_concentration must be positive");

    if (j.contains("unmix")) {
        const json& u = j.at("unmix");
        const std::string uw = what + " unmix";
        check_keys(u, {"max_iters", "tolerance", "initial_step", "combination_cap"}, uw);
        c.unmix.max_outer_iters = get_or(u, "max_iters", c.unmix.max_outer_iters, uw);
        c.unmix.tolerance = get_or(u, "tolerance", c.unmix.tolerance, uw);
        c.unmix.initial_step = get_or(u, "initial_step", c.unmix.initial_step, uw);
        c.unmix.combination_cap = get_or(u, "combination_cap", c.unmix.combination_cap, uw);
    }
    c.unmix.validate();

    if (j.contains("merge")) c.merge = parse_merge(j.at("merge"));
    c.compare_gmm1 = get_or(j, "compare_gmm1", false, what);
    return c;
}

PipelineSummary run_pipeline(const PipelineConfig& config, const fs::path& out_dir, const InputDigests& inputs,
                             std::ostream& log) {
    if (fs::exists(out_dir) && !(fs::is_directory(out_dir) && fs::is_empty(out_dir))) {
        throw ValidationError("output directory '" + out_dir.string() + "' exists and is not empty");
    }
    const json config_json = config.to_json();
    const std::uint64_t s = config.seed;
    const json seeds{{"run", s},
                     {"library", stage_seed(s, Stage::library)},
                     {"projection", stage_seed(s, Stage::projection)},
                     {"selection", stage_seed(s, Stage::selection)},
                     {"fit", stage_seed(s, Stage::fit)},
                     {"fit_gmm1", stage_seed(s, Stage::fit_gmm1)}};
    log << "unmix-gmm pipeline: config sha256:" << sha256_hex(config_json.dump()) << " seeds " << seeds.dump()
        << "\n";

    fs::path staging = out_dir;
    staging += ".partial";
    fs::remove_all(staging);
    fs::create_directories(staging / "images");
    fs::create_directories(staging / "truth");

    // Library
    const SpectralLibrary library = [&] {
        if (config.library_path) return load_library(*config.library_path);
        auto spec = config.synthetic_library;
        spec.seed = seeds.at("library").get<std::uint64_t>();
        return make_synthetic_library(spec);
    }();
    if (!config.library_path) {
        std::ostringstream os;
        os << inputs.csv_comment();
        write_library_csv(os, library);
        write_file_atomic(staging / "library.csv", os.str());
    }
    const auto names = library.class_names();
    const std::size_t M = names.size();
    for (const auto& c : config.merge) {
        for (const auto& cls : c.classes) {
            if (std::find(names.begin(), names.end(), cls) == names.end()) {
                throw ValidationError("merge category '" + c.name + "' names unknown class '" + cls + "'");
            }
        }
    }

    // Projection, selection, fit
    const auto projection = fit_library_projection(library, config.dimension, seeds.at("projection"));
    put_json(staging / "projection.json", stamp(projection_to_json(projection), inputs));

    std::vector<int> K;
    if (config.force_k) {
        K.assign(M, *config.force_k);
    } else {
        CvicConfig cvic = config.selection;
        cvic.seed = seeds.at("selection");
        const auto result = select_components(project_library(library, projection), names, cvic);
        put_json(staging / "selection.json", stamp(selection_json(result, cvic.folds), inputs));
        K = result.chosen;
    }
    log << "unmix-gmm pipeline: components";
    for (std::size_t j = 0; j < M; ++j) log << " " << names[j] << "=" << K[j];
    log << "\n";

    std::vector<Estimator> estimators;
    estimators.push_back({"gmm", fit_bundle(library, projection, K, seeds.at("fit")), {}});
    put_json(staging / "bundle.json", stamp(bundle_to_json(estimators.back().bundle), inputs));
    if (config.compare_gmm1) {
        const std::vector<int> ones(M, 1);
        estimators.push_back({"gmm1", fit_bundle(library, projection, ones, seeds.at("fit_gmm1")), {}});
        put_json(staging / "bundle_gmm1.json", stamp(bundle_to_json(estimators.back().bundle), inputs));
    }
    for (auto& e : estimators) {
        fs::create_directories(staging / "estimates" / e.name);
        e.totals.resize(static_cast<Index>(config.images), static_cast<Index>(M));
    }

    // Scenes and unmixing
    Matrix true_totals(static_cast<Index>(config.images), static_cast<Index>(M));
    std::vector<std::string> images;
    for (std::size_t i = 0; i < config.images; ++i) {
        const std::string name = image_name(i);
        images.push_back(name);
        SynthSpec spec;
        spec.counts.assign(M, config.spectra_per_class);
        spec.max_active = config.max_active;
        spec.abundance = config.abundance;
        spec.shape = config.shape;
        spec.noise_sd = config.noise_sd;
        spec.seed = stage_seed(s, Stage::image, i);

        std::optional<PixelBlock> templ;
        if (std::holds_alternative<TemplateAbundances>(config.abundance)) {
            SynthSpec t = spec;
            t.abundance = DirichletAbundances{config.template_concentration};
            t.max_active = M;
            t.noise_sd = 0.0;
            t.seed = stage_seed(s, Stage::template_image, i);
            templ = generate(t, library).pixels;
        }
        const auto img = generate(spec, library, templ ? &*templ : nullptr);

        std::ostringstream px, truth;
        px << inputs.csv_comment();
        write_pixels_csv(px, img.pixels);
        write_file_atomic(staging / "images" / (name + ".csv"), px.str());
        put_json(staging / "images" / (name + ".shape.json"), stamp(shape_to_json(*img.pixels.shape()), inputs));
        put_json(staging / "images" / (name + ".picks.json"), stamp(picks_json(img), inputs));
        truth << inputs.csv_comment();
        write_abundance_csv(truth, img.truth, names);
        write_file_atomic(staging / "truth" / (name + ".csv"), truth.str());
        true_totals.row(static_cast<Index>(i)) = total_abundance(img.truth).transpose();

        for (auto& e : estimators) {
            const auto result = unmix(img.pixels, e.bundle, config.unmix);
            for (const auto& w : result.diagnostics.warnings) warn(name + " (" + e.name + "): " + w);
            std::ostringstream est;
            est << inputs.csv_comment();
            write_abundance_csv(est, result.abundances, names);
            const fs::path dir = staging / "estimates" / e.name;
            write_file_atomic(dir / (name + ".csv"), est.str());
            put_json(dir / (name + ".diagnostics.json"), stamp(diagnostics_json(result.diagnostics), inputs));
            e.totals.row(static_cast<Index>(i)) = total_abundance(result.abundances).transpose();
        }
        log << "unmix-gmm pipeline: " << name << " done\n";
    }

    // Evaluation
    std::optional<ClassMerge> merge;
    if (!config.merge.empty()) merge.emplace(config.merge, names);
    PipelineSummary summary;
    summary.class_names = names;
    summary.chosen_k = K;
    summary.combinations = enumerate_combinations(estimators.front().bundle, config.unmix.combination_cap).size();

    json report = stamp(json::object(), inputs);
    report["config"] = config_json;
    report["seeds"] = seeds;
    report["components"] = K;
    report["combinations"] = summary.combinations;
    for (std::size_t e = 0; e < estimators.size(); ++e) {
        const auto& est = estimators[e];
        const auto individual = evaluate_totals(est.totals, true_totals, names);
        std::optional<EvaluationReport> merged;
        if (merge) {
            merged = evaluate_totals(merge->apply(est.totals), merge->apply(true_totals), merge->category_names());
        }
        report[est.name] = report_json(individual, merged, images);
        write_file_atomic(staging / ("points_" + est.name + ".csv"),
                          points_csv(individual, merged, images, inputs.csv_comment()));
        if (e == 0) {
            summary.gmm = individual;
        } else {
            summary.gmm1 = individual;
        }
    }
    put_json(staging / "report.json", report);

    if (fs::exists(out_dir)) fs::remove(out_dir);
    fs::rename(staging, out_dir);
    return summary;
}

}  // namespace unmix_gmm::cli
