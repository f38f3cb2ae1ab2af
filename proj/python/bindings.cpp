#include <sstream>

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "unmix_gmm/eval.hpp"
#include "unmix_gmm/gmm_fit.hpp"
#include "unmix_gmm/io.hpp"
#include "unmix_gmm/parallel.hpp"
#include "unmix_gmm/projection.hpp"
#include "unmix_gmm/simplex.hpp"
#include "unmix_gmm/synth.hpp"
#include "unmix_gmm/unmix.hpp"

namespace py = pybind11;
using namespace unmix_gmm;

namespace {

SpectralLibrary library_from_pairs(const std::vector<std::pair<std::string, Matrix>>& classes) {
    std::vector<EndmemberClass> out;
    for (const auto& [name, spectra] : classes) out.push_back({name, spectra});
    return SpectralLibrary(std::move(out));
}

py::dict diagnostics_dict(const UnmixDiagnostics& d) {
    py::dict out;
    out["objective_trace"] = d.objective_trace;
    out["outer_iterations"] = d.outer_iterations;
    out["converged"] = d.converged;
    out["unconverged_pixels"] = d.unconverged_pixels;
    out["combination_count"] = d.combination_count;
    out["warnings"] = d.warnings;
    return out;
}

py::dict report_dict(const EvaluationReport& r) {
    py::dict out;
    out["classes"] = r.class_names;
    out["mad"] = r.mad;
    out["r"] = r.r;
    out["r_squared"] = r.r_squared;
    out["degenerate"] = r.degenerate;
    out["average_mad"] = r.mean_mad;
    out["average_r_squared"] = r.mean_r_squared;
    py::list ba;
    for (const auto& b : r.bland_altman) {
        py::dict e;
        e["mean_difference"] = b.mean_difference;
        e["sd"] = b.sd;
        e["lower"] = b.lower;
        e["upper"] = b.upper;
        ba.append(e);
    }
    out["bland_altman"] = ba;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Supervised hyperspectral unmixing with per-class Gaussian mixture endmembers.";
    m.attr("__version__") = version();

    py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
    py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);

    m.def("set_thread_count", &set_thread_count, py::arg("threads"));
    m.def("thread_count", &thread_count);

    py::class_<SpectralLibrary>(m, "SpectralLibrary")
        .def(py::init(&library_from_pairs), py::arg("classes"),
             "Build from a list of (class name, spectra[N_j, B]) pairs.")
        .def_static("load", [](const std::filesystem::path& p) { return load_library(p); })
        .def("save", [](const SpectralLibrary& lib, const std::filesystem::path& p) {
            std::ostringstream os;
            write_library_csv(os, lib);
            write_file_atomic(p, os.str());
        })
        .def_property_readonly("class_names", &SpectralLibrary::class_names)
        .def_property_readonly("band_count", &SpectralLibrary::band_count)
        .def("spectra", [](const SpectralLibrary& lib, std::size_t j) { return lib[j].spectra; })
        .def("__len__", &SpectralLibrary::class_count);

    py::class_<ProjectionModel>(m, "ProjectionModel")
        .def(py::init<Vector, Matrix>(), py::arg("center"), py::arg("basis"))
        .def_property_readonly("center", &ProjectionModel::center)
        .def_property_readonly("basis", &ProjectionModel::basis)
        .def_property_readonly("dimension", &ProjectionModel::dimension)
        .def("project", [](const ProjectionModel& p, const Matrix& X) { return project(p, X); })
        .def("reconstruct", [](const ProjectionModel& p, const Matrix& Z) { return reconstruct(p, Z); });

    py::class_<GaussianComponent>(m, "GaussianComponent")
        .def_readonly("weight", &GaussianComponent::weight)
        .def_readonly("mean", &GaussianComponent::mean)
        .def_readonly("covariance", &GaussianComponent::covariance);

    py::class_<GmmBundle>(m, "GmmBundle")
        .def_static("load", [](const std::filesystem::path& p) { return load_bundle(p); })
        .def("save", [](const GmmBundle& b, const std::filesystem::path& p) { save_bundle(b, p); })
        .def_property_readonly("class_names", &GmmBundle::class_names)
        .def_property_readonly("component_counts", &GmmBundle::component_counts)
        .def_property_readonly("projection", &GmmBundle::projection)
        .def_property_readonly("noise_covariance", &GmmBundle::noise_covariance)
        .def("components", &GmmBundle::components, py::arg("class_index"));

    m.def("project_simplex", &project_simplex, py::arg("v"));
    m.def("fit_pca", &fit_pca, py::arg("spectra"), py::arg("dimension"));
    m.def("fit_library_projection", &fit_library_projection, py::arg("library"),
          py::arg("dimension") = default_projection_dimension, py::arg("seed") = 0);

    m.def(
        "select_components",
        [](const SpectralLibrary& lib, const ProjectionModel& proj, int folds, std::vector<int> candidates,
           double threshold, int repeats, std::uint64_t seed) {
            CvicConfig c;
            c.folds = folds;
            c.candidates = std::move(candidates);
            c.threshold = threshold;
            c.repeats = repeats;
            c.seed = seed;
            c.validate();
            CvicResult r;
            {
                py::gil_scoped_release release;
                r = select_components(project_library(lib, proj), lib.class_names(), c);
            }
            py::list reps;
            for (const auto& rep : r.repeats) {
                py::dict d;
                d["seed"] = rep.seed;
                d["scores"] = rep.scores;
                d["chosen"] = rep.chosen;
                reps.append(d);
            }
            py::dict out;
            out["chosen"] = r.chosen;
            out["modal_count"] = r.modal_count;
            out["repeats"] = reps;
            return out;
        },
        py::arg("library"), py::arg("projection"), py::arg("folds") = 5,
        py::arg("candidates") = std::vector<int>{1, 2, 3, 4}, py::arg("threshold") = 0.0, py::arg("repeats") = 15,
        py::arg("seed") = 0);

    m.def(
        "fit_bundle",
        [](const SpectralLibrary& lib, const ProjectionModel& proj, const std::vector<int>& K, std::uint64_t seed) {
            py::gil_scoped_release release;
            return fit_bundle(lib, proj, K, seed);
        },
        py::arg("library"), py::arg("projection"), py::arg("components"), py::arg("seed") = 0);

    m.def(
        "unmix",
        [](const Matrix& pixels, const GmmBundle& bundle, int max_iters, double tolerance, double initial_step) {
            UnmixOptions o;
            o.max_outer_iters = max_iters;
            o.tolerance = tolerance;
            o.initial_step = initial_step;
            o.validate();
            std::optional<UnmixResult> r;
            {
                py::gil_scoped_release release;
                r.emplace(unmix(PixelBlock(pixels), bundle, o));
            }
            return py::make_tuple(r->abundances.values(), diagnostics_dict(r->diagnostics));
        },
        py::arg("pixels"), py::arg("bundle"), py::arg("max_iters") = 100, py::arg("tolerance") = 1e-6,
        py::arg("initial_step") = 1e-3,
        "Abundances (N x M) and a diagnostics dict for raw pixels (N x B).");

    m.def(
        "synthetic_library",
        [](std::vector<std::string> class_names, Index bands, std::size_t spectra_per_class, int modes_per_class,
           std::uint64_t seed) {
            SyntheticLibrarySpec s;
            s.class_names = std::move(class_names);
            s.bands = bands;
            s.spectra_per_class = spectra_per_class;
            s.modes_per_class = modes_per_class;
            s.seed = seed;
            return make_synthetic_library(s);
        },
        py::arg("class_names") = SyntheticLibrarySpec{}.class_names, py::arg("bands") = 50,
        py::arg("spectra_per_class") = 200, py::arg("modes_per_class") = 2, py::arg("seed") = 0);

    m.def(
        "generate",
        [](const SpectralLibrary& lib, std::vector<std::size_t> counts, std::size_t max_active, double concentration,
           Index rows, Index cols, double noise_sd, std::uint64_t seed, const std::optional<Matrix>& templ) {
            SynthSpec s;
            s.counts = std::move(counts);
            s.max_active = max_active;
            if (templ) {
                s.abundance = TemplateAbundances{};
            } else {
                s.abundance = DirichletAbundances{concentration};
            }
            s.shape = {rows, cols};
            s.noise_sd = noise_sd;
            s.seed = seed;
            std::optional<PixelBlock> tb;
            if (templ) tb.emplace(*templ);
            std::optional<SyntheticImage> img;
            {
                py::gil_scoped_release release;
                img.emplace(generate(s, lib, tb ? &*tb : nullptr));
            }
            return py::make_tuple(img->pixels.pixels(), img->truth.values(), img->picks);
        },
        py::arg("library"), py::arg("counts"), py::arg("max_active") = 3, py::arg("concentration") = 1.0,
        py::arg("rows") = 64, py::arg("cols") = 64, py::arg("noise_sd") = 0.0, py::arg("seed") = 0,
        py::arg("template") = py::none(),
        "Pixels, true abundances and per-pixel picks. Passing `template` selects template mode.");

    m.def(
        "evaluate_totals",
        [](const Matrix& est, const Matrix& truth, std::vector<std::string> names) {
            return report_dict(evaluate_totals(est, truth, std::move(names)));
        },
        py::arg("estimated_totals"), py::arg("true_totals"), py::arg("class_names"));
}
