#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "config.hpp"
#include "unmix_gmm/gmm_fit.hpp"
#include "unmix_gmm/parallel.hpp"
#include "unmix_gmm/projection.hpp"

namespace fs = std::filesystem;

namespace unmix_gmm::cli {

std::string sha256_hex(std::string_view data) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) {
        throw NumericError("SHA-256 digest failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) {
        os << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
    }
    return os.str();
}

json tool_json() { return json{{"name", "unmix-gmm"}, {"version", version()}}; }

void InputDigests::add(const fs::path& path) { add_bytes(path.filename().string(), read_file(path)); }

void InputDigests::add_bytes(const std::string& name, std::string_view bytes) {
    digests_[name] = sha256_hex(bytes);
}

json InputDigests::to_json() const {
    json j = json::object();
    for (const auto& [name, digest] : digests_) j[name] = "sha256:" + digest;
    return j;
}

std::string InputDigests::csv_comment() const {
    std::string line = std::string("# unmix-gmm ") + version();
    for (const auto& [name, digest] : digests_) line += " " + name + "=sha256:" + digest;
    return line + "\n";
}

namespace {

std::vector<int> parse_int_list(const std::string& text, const std::string& what) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            out.push_back(std::stoi(item, &used));
            if (used != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw ValidationError(what + ": '" + item + "' is not an integer");
        }
    }
    if (out.empty()) throw ValidationError(what + " is empty");
    return out;
}

json stamp(json j, const InputDigests& inputs) {
    j["tool"] = tool_json();
    j["inputs"] = inputs.to_json();
    return j;
}

void write_json(const fs::path& path, const json& j) { write_file_atomic(path, dump_json(j)); }

// Configuration hash of a subcommand invocation: its name plus every option
// value in declaration order.
std::string invocation_hash(const CLI::App& sub) {
    json j;
    j["command"] = sub.get_name();
    for (const auto* opt : sub.get_options()) {
        if (opt->get_name() == "--help") continue;
        j[opt->get_name()] = opt->results();
    }
    return sha256_hex(j.dump());
}

void log_run(std::ostream& err, const std::string& command, const std::string& hash, const json& seeds) {
    err << "unmix-gmm " << command << ": config sha256:" << hash << " seeds " << seeds.dump() << "\n";
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

json selection_json(const CvicResult& r, int folds) {
    json repeats = json::array();
    for (const auto& rep : r.repeats) {
        repeats.push_back(json{{"seed", rep.seed}, {"scores", rep.scores}, {"chosen", rep.chosen}});
    }
    return json{{"class_names", r.class_names}, {"candidates", r.candidates}, {"threshold", r.threshold},
                {"folds", folds},          {"repeats", std::move(repeats)}, {"chosen", r.chosen},
                {"modal_count", r.modal_count}};
}

json picks_json(const SyntheticImage& img) {
    json picks = json::array();
    for (Index n = 0; n < img.picks.rows(); ++n) {
        json row = json::array();
        for (Index j = 0; j < img.picks.cols(); ++j) row.push_back(img.picks(n, j));
        picks.push_back(std::move(row));
    }
    json sets = json::array();
    for (const auto& c : img.sets.classes()) {
        sets.push_back(json{{"class", c.name}, {"spectra", matrix_to_json(c.spectra)}});
    }
    return json{{"class_names", img.sets.class_names()}, {"sets", std::move(sets)}, {"picks", std::move(picks)}};
}

SynthSpec parse_synth_spec(const json& j, const SpectralLibrary& lib) {
    config::check_keys(j, {"counts", "count_per_class", "max_active", "abundance", "rows", "cols", "noise_sd", "seed"},
                       "synth spec");
    SynthSpec s;
    if (j.contains("counts") == j.contains("count_per_class")) {
        throw ValidationError("synth spec needs exactly one of 'counts' and 'count_per_class'");
    }
    if (j.contains("counts")) {
        s.counts = config::get<std::vector<std::size_t>>(j, "counts", "synth spec");
    } else {
        s.counts.assign(lib.class_count(), config::get<std::size_t>(j, "count_per_class", "synth spec"));
    }
    s.max_active = config::get_or<std::size_t>(j, "max_active", 3, "synth spec");
    s.abundance = config::parse_abundance(j.value("abundance", json{{"mode", "dirichlet"}}), "synth spec");
    s.shape.rows = config::get_or<Index>(j, "rows", 64, "synth spec");
    s.shape.cols = config::get_or<Index>(j, "cols", 64, "synth spec");
    s.noise_sd = config::get_or<double>(j, "noise_sd", 0.0, "synth spec");
    s.seed = config::get_or<std::uint64_t>(j, "seed", 0, "synth spec");
    return s;
}

std::vector<fs::path> csv_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw ValidationError("'" + dir.string() + "' is not a directory");
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".csv") out.push_back(e.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

// Reorders columns of `a` to follow `names`.
Matrix align_columns(const LabeledAbundances& a, const std::vector<std::string>& names, const fs::path& path) {
    if (a.class_names.size() != names.size()) {
        throw ValidationError(path.string() + ": expected " + std::to_string(names.size()) + " classes");
    }
    Matrix out(a.abundances.rows(), static_cast<Index>(names.size()));
    for (std::size_t j = 0; j < names.size(); ++j) {
        const auto it = std::find(a.class_names.begin(), a.class_names.end(), names[j]);
        if (it == a.class_names.end()) {
            throw ValidationError(path.string() + ": missing class '" + names[j] + "'");
        }
        out.col(static_cast<Index>(j)) = a.abundances.values().col(it - a.class_names.begin());
    }
    return out;
}

int resolve_threads(int flag) {
    if (flag > 0) return flag;
    if (const char* env = std::getenv("UNMIX_GMM_THREADS")) {
        try {
            const int v = std::stoi(env);
            if (v > 0) return v;
        } catch (const std::exception&) {
        }
        throw ValidationError(std::string("UNMIX_GMM_THREADS must be a positive integer, got '") + env + "'");
    }
    return 0;
}

}  // namespace

json report_json(const EvaluationReport& individual, const std::optional<EvaluationReport>& merged,
                 const std::vector<std::string>& images) {
    auto one = [](const EvaluationReport& r) {
        json ba = json::array();
        for (std::size_t j = 0; j < r.class_names.size(); ++j) {
            const auto& b = r.bland_altman[j];
            ba.push_back(json{{"class", r.class_names[j]},
                              {"mean_difference", b.mean_difference},
                              {"sd", b.sd},
                              {"lower", b.lower},
                              {"upper", b.upper}});
        }
        std::vector<bool> degenerate(r.degenerate.begin(), r.degenerate.end());
        return json{{"classes", r.class_names},
                    {"mad", std::vector<double>(r.mad.data(), r.mad.data() + r.mad.size())},
                    {"r", std::vector<double>(r.r.data(), r.r.data() + r.r.size())},
                    {"r_squared", std::vector<double>(r.r_squared.data(), r.r_squared.data() + r.r_squared.size())},
                    {"degenerate", degenerate},
                    {"average_mad", r.mean_mad},
                    {"average_r_squared", r.mean_r_squared},
                    {"bland_altman", std::move(ba)}};
    };
    json j{{"images", images}, {"individual", one(individual)}};
    if (merged) j["merged"] = one(*merged);
    return j;
}

std::string points_csv(const EvaluationReport& individual, const std::optional<EvaluationReport>& merged,
                       const std::vector<std::string>& images, const std::string& comment) {
    std::string out = comment + "level,category,image,truth,difference\n";
    auto rows = [&](const EvaluationReport& r, const char* level) {
        for (std::size_t j = 0; j < r.class_names.size(); ++j) {
            const auto& pts = r.bland_altman[j].points;
            for (std::size_t i = 0; i < pts.size(); ++i) {
                out += std::string(level) + "," + r.class_names[j] + "," + images[i] + "," +
                       format_double(pts[i].truth) + "," + format_double(pts[i].difference) + "\n";
            }
        }
    };
    rows(individual, "individual");
    if (merged) rows(*merged, "merged");
    return out;
}

std::vector<ClassMerge::Category> parse_merge(const json& j) {
    if (!j.is_array()) throw ValidationError("merge must be an array of {name, classes}");
    std::vector<ClassMerge::Category> out;
    for (const auto& c : j) {
        config::check_keys(c, {"name", "classes"}, "merge category");
        out.push_back({config::get<std::string>(c, "name", "merge category"),
                       config::get<std::vector<std::string>>(c, "classes", "merge category")});
    }
    return out;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Supervised hyperspectral unmixing with per-class Gaussian mixture endmembers", "unmix-gmm"};
    app.set_version_flag("--version", std::string(version()));
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Worker threads (default: UNMIX_GMM_THREADS or all cores)")
        ->check(CLI::PositiveNumber);

    // pca
    std::string library, projection_path, out_path;
    Index dimension = default_projection_dimension;
    std::uint64_t seed = 0;
    auto* pca = app.add_subcommand("pca", "Fit the PCA projection on a class-balanced library subsample");
    pca->add_option("--library", library, "Library CSV")->required()->check(CLI::ExistingFile);
    pca->add_option("--dim", dimension, "Projected dimension")->capture_default_str();
    pca->add_option("--seed", seed, "Subsample seed")->capture_default_str();
    pca->add_option("--out", out_path, "Projection JSON")->required();

    // select
    CvicConfig cvic;
    std::string candidates = "1,2,3,4";
    auto* select = app.add_subcommand("select", "Choose per-class component counts by CVIC");
    select->add_option("--library", library, "Library CSV")->required()->check(CLI::ExistingFile);
    select->add_option("--projection", projection_path, "Projection JSON")->required()->check(CLI::ExistingFile);
    select->add_option("--folds", cvic.folds, "Cross-validation folds")->capture_default_str();
    select->add_option("--candidates", candidates, "Comma-separated candidate counts")->capture_default_str();
    select->add_option("--threshold", cvic.threshold, "CVIC threshold T in [0, 1)")->capture_default_str();
    select->add_option("--repeats", cvic.repeats, "Repeats (repeat r uses seed + r)")->capture_default_str();
    select->add_option("--seed", seed, "Base seed")->capture_default_str();
    select->add_option("--out", out_path, "Selection JSON")->required();

    // fit
    std::string selection_path, k_list;
    int force_k = 0;
    auto* fit = app.add_subcommand("fit", "Fit per-class mixtures and write a bundle");
    fit->add_option("--library", library, "Library CSV")->required()->check(CLI::ExistingFile);
    fit->add_option("--projection", projection_path, "Projection JSON")->required()->check(CLI::ExistingFile);
    auto* sel_opt = fit->add_option("--selection", selection_path, "Selection JSON from `select`")
                        ->check(CLI::ExistingFile);
    auto* k_opt = fit->add_option("--k", k_list, "Comma-separated component counts per class");
    auto* force_opt = fit->add_option("--force-k", force_k, "Same component count for every class")
                          ->check(CLI::PositiveNumber);
    sel_opt->excludes(k_opt)->excludes(force_opt);
    k_opt->excludes(force_opt);
    fit->add_option("--seed", seed, "EM seed (class j uses seed + j)")->capture_default_str();
    fit->add_option("--out", out_path, "Bundle JSON")->required();

    // unmix
    std::string bundle_path, pixels_path, shape_path, diagnostics_path;
    UnmixOptions uopts;
    auto* unmix_cmd = app.add_subcommand("unmix", "Estimate abundances for a pixel CSV");
    unmix_cmd->add_option("--bundle", bundle_path, "Bundle JSON")->required()->check(CLI::ExistingFile);
    unmix_cmd->add_option("--pixels", pixels_path, "Pixel CSV")->required()->check(CLI::ExistingFile);
    unmix_cmd->add_option("--shape", shape_path, "Image shape sidecar JSON")->check(CLI::ExistingFile);
    unmix_cmd->add_option("--out", out_path, "Abundance CSV")->required();
    unmix_cmd->add_option("--diagnostics", diagnostics_path, "Diagnostics JSON (objective trace, steps)");
    unmix_cmd->add_option("--max-iters", uopts.max_outer_iters, "Outer EM iterations")->capture_default_str();
    unmix_cmd->add_option("--tolerance", uopts.tolerance, "Relative per-pixel objective tolerance")
        ->capture_default_str();
    unmix_cmd->add_option("--initial-step", uopts.initial_step, "Initial gradient step")->capture_default_str();
    unmix_cmd->add_option("--combination-cap", uopts.combination_cap, "Largest allowed |K|")->capture_default_str();

    // synth
    std::string spec_path, template_path, template_shape, out_pixels, out_truth, out_picks, out_shape;
    auto* synth = app.add_subcommand("synth", "Generate a synthetic mixed image with ground truth");
    synth->add_option("--library", library, "Library CSV")->required()->check(CLI::ExistingFile);
    synth->add_option("--spec", spec_path, "Synthesis spec JSON")->required()->check(CLI::ExistingFile);
    synth->add_option("--template", template_path, "Template pixel CSV (template abundance mode)")
        ->check(CLI::ExistingFile);
    synth->add_option("--template-shape", template_shape, "Template shape sidecar")->check(CLI::ExistingFile);
    synth->add_option("--out-pixels", out_pixels, "Pixel CSV")->required();
    synth->add_option("--out-truth", out_truth, "Ground-truth abundance CSV")->required();
    synth->add_option("--out-picks", out_picks, "Endmember picks JSON")->required();
    synth->add_option("--out-shape", out_shape, "Shape sidecar JSON");

    // eval
    std::string est_dir, truth_dir, merge_path, points_path;
    auto* eval_cmd = app.add_subcommand("eval", "Compare estimated and true abundances image by image");
    eval_cmd->add_option("--est", est_dir, "Directory of estimated abundance CSVs")->required();
    eval_cmd->add_option("--truth", truth_dir, "Directory of ground-truth abundance CSVs")->required();
    eval_cmd->add_option("--merge", merge_path, "Class merge JSON")->check(CLI::ExistingFile);
    eval_cmd->add_option("--out", out_path, "Report JSON")->required();
    eval_cmd->add_option("--points", points_path, "Bland-Altman points CSV");

    // pipeline
    std::string config_path;
    auto* pipeline = app.add_subcommand("pipeline", "Run the synthetic experiment end to end from a config");
    pipeline->add_option("--config", config_path, "Pipeline config JSON")->required()->check(CLI::ExistingFile);
    pipeline->add_option("--out", out_path, "Output directory (must not exist or be empty)")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 1;
    }

    try {
        set_thread_count(resolve_threads(threads));
        InputDigests inputs;
        const CLI::App* sub = app.get_subcommands().front();
        const std::string hash = invocation_hash(*sub);

        if (sub == pca) {
            log_run(err, "pca", hash, json{{"subsample", seed}});
            inputs.add(library);
            const auto lib = load_library(library);
            const auto model = fit_library_projection(lib, dimension, seed);
            json j = stamp(projection_to_json(model), inputs);
            j["seed"] = seed;
            write_json(out_path, j);
        } else if (sub == select) {
            cvic.candidates = parse_int_list(candidates, "--candidates");
            cvic.seed = seed;
            cvic.validate();
            log_run(err, "select", hash, json{{"base", seed}, {"repeats", cvic.repeats}});
            inputs.add(library);
            inputs.add(projection_path);
            const auto lib = load_library(library);
            const auto proj = projection_from_json(load_json(projection_path));
            const auto result = select_components(project_library(lib, proj), lib.class_names(), cvic);
            write_json(out_path, stamp(selection_json(result, cvic.folds), inputs));
        } else if (sub == fit) {
            log_run(err, "fit", hash, json{{"em", seed}});
            inputs.add(library);
            inputs.add(projection_path);
            const auto lib = load_library(library);
            const auto proj = projection_from_json(load_json(projection_path));
            std::vector<int> K;
            if (!selection_path.empty()) {
                inputs.add(selection_path);
                const json sel = load_json(selection_path);
                K = config::get<std::vector<int>>(sel, "chosen", "selection");
                if (sel.contains("class_names") && sel.at("class_names") != json(lib.class_names())) {
                    throw ValidationError("selection class names do not match the library");
                }
            } else if (!k_list.empty()) {
                K = parse_int_list(k_list, "--k");
            } else if (force_k > 0) {
                K.assign(lib.class_count(), force_k);
            } else {
                throw ValidationError("fit needs one of --selection, --k, --force-k");
            }
            const auto bundle = fit_bundle(lib, proj, K, seed);
            write_json(out_path, stamp(bundle_to_json(bundle), inputs));
        } else if (sub == unmix_cmd) {
            uopts.validate();
            log_run(err, "unmix", hash, json::object());
            inputs.add(bundle_path);
            inputs.add(pixels_path);
            std::optional<fs::path> shape;
            if (!shape_path.empty()) {
                inputs.add(shape_path);
                shape = shape_path;
            }
            const auto bundle = load_bundle(bundle_path);
            const auto pixels = load_pixels(pixels_path, shape);
            const auto result = unmix(pixels, bundle, uopts);
            for (const auto& w : result.diagnostics.warnings) warn(w);
            std::ostringstream csv;
            csv << inputs.csv_comment();
            write_abundance_csv(csv, result.abundances, bundle.class_names());
            if (!diagnostics_path.empty()) {
                write_json(diagnostics_path, stamp(diagnostics_json(result.diagnostics), inputs));
            }
            write_file_atomic(out_path, csv.str());
        } else if (sub == synth) {
            inputs.add(library);
            inputs.add(spec_path);
            const auto lib = load_library(library);
            const auto spec = parse_synth_spec(load_json(spec_path), lib);
            log_run(err, "synth", hash, json{{"synth", spec.seed}});
            std::optional<PixelBlock> templ;
            if (!template_path.empty()) {
                inputs.add(template_path);
                std::optional<fs::path> tshape;
                if (!template_shape.empty()) {
                    inputs.add(template_shape);
                    tshape = template_shape;
                }
                templ = load_pixels(template_path, tshape);
            }
            const auto img = generate(spec, lib, templ ? &*templ : nullptr);
            std::ostringstream px, truth;
            px << inputs.csv_comment();
            write_pixels_csv(px, img.pixels);
            truth << inputs.csv_comment();
            write_abundance_csv(truth, img.truth, lib.class_names());
            write_json(out_picks, stamp(picks_json(img), inputs));
            if (!out_shape.empty() && img.pixels.shape()) {
                write_json(out_shape, stamp(shape_to_json(*img.pixels.shape()), inputs));
            }
            write_file_atomic(out_truth, truth.str());
            write_file_atomic(out_pixels, px.str());
        } else if (sub == eval_cmd) {
            log_run(err, "eval", hash, json::object());
            const auto truth_files = csv_files(truth_dir);
            if (truth_files.empty()) throw ValidationError("no CSV files in '" + truth_dir + "'");
            std::vector<std::string> names, images;
            Matrix est_totals, true_totals;
            for (std::size_t i = 0; i < truth_files.size(); ++i) {
                const fs::path est_file = fs::path(est_dir) / truth_files[i].filename();
                if (!fs::exists(est_file)) {
                    throw ValidationError("no estimate for '" + truth_files[i].filename().string() + "' in '" +
                                          est_dir + "'");
                }
                inputs.add_bytes("truth/" + truth_files[i].filename().string(), read_file(truth_files[i]));
                inputs.add_bytes("est/" + est_file.filename().string(), read_file(est_file));
                const auto t = load_abundances(truth_files[i]);
                const auto e = load_abundances(est_file);
                if (i == 0) {
                    names = t.class_names;
                    est_totals.resize(static_cast<Index>(truth_files.size()), static_cast<Index>(names.size()));
                    true_totals.resizeLike(est_totals);
                }
                const Matrix tv = align_columns(t, names, truth_files[i]);
                const Matrix ev = align_columns(e, names, est_file);
                if (tv.rows() != ev.rows()) {
                    throw ValidationError(est_file.string() + ": pixel count differs from the truth");
                }
                true_totals.row(static_cast<Index>(i)) = tv.colwise().mean();
                est_totals.row(static_cast<Index>(i)) = ev.colwise().mean();
                images.push_back(truth_files[i].stem().string());
            }
            const auto individual = evaluate_totals(est_totals, true_totals, names);
            std::optional<EvaluationReport> merged;
            if (!merge_path.empty()) {
                inputs.add(merge_path);
                const ClassMerge merge(parse_merge(load_json(merge_path)), names);
                merged = evaluate_totals(merge.apply(est_totals), merge.apply(true_totals), merge.category_names());
            }
            if (!points_path.empty()) {
                write_file_atomic(points_path, points_csv(individual, merged, images, inputs.csv_comment()));
            }
            write_json(out_path, stamp(report_json(individual, merged, images), inputs));
        } else if (sub == pipeline) {
            inputs.add(config_path);
            const auto cfg = parse_pipeline_config(load_json(config_path), fs::path(config_path).parent_path());
            if (cfg.library_path) inputs.add(*cfg.library_path);
            const auto summary = run_pipeline(cfg, out_path, inputs, err);
            out << "average MAD (GMM): " << summary.gmm.mean_mad << "\n";
            if (summary.gmm1) out << "average MAD (GMM-1): " << summary.gmm1->mean_mad << "\n";
        }
        set_thread_count(0);
        return 0;
    } catch (const NumericError& e) {
        set_thread_count(0);
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        set_thread_count(0);
        err << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace unmix_gmm::cli
