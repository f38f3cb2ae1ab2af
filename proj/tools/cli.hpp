// Command line front end. `run` is the whole program minus process setup so
// tests can drive it in-process.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "unmix_gmm/eval.hpp"
#include "unmix_gmm/gmm_fit.hpp"
#include "unmix_gmm/io.hpp"
#include "unmix_gmm/synth.hpp"
#include "unmix_gmm/unmix.hpp"

namespace unmix_gmm::cli {

/// Exit codes: 0 success, 1 invalid input or usage, 2 numerical failure.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

std::string sha256_hex(std::string_view data);

/// {"name": ..., "version": ...} stamped into every JSON output.
json tool_json();

/// Digests of input files keyed by file name.
class InputDigests {
public:
    void add(const std::filesystem::path& path);
    void add_bytes(const std::string& name, std::string_view bytes);
    json to_json() const;
    std::string csv_comment() const;  // "# <tool> <version> name=sha256 ..."

private:
    std::map<std::string, std::string> digests_;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> library_path;  // else synthetic
    SyntheticLibrarySpec synthetic_library;
    Index dimension = 10;
    CvicConfig selection;
    std::optional<int> force_k;
    std::size_t images = 10;
    ImageShape shape{64, 64};
    std::size_t spectra_per_class = 20;
    std::size_t max_active = 3;
    AbundanceSource abundance = TemplateAbundances{};
    double template_concentration = 1.0;  // Dirichlet draws that make the template images
    double noise_sd = 0.0;
    UnmixOptions unmix;
    std::vector<ClassMerge::Category> merge;
    bool compare_gmm1 = false;

    /// Canonical JSON of the effective configuration (hashed into the logs).
    json to_json() const;
};

/// Parses a pipeline config; relative library paths resolve against `base_dir`.
PipelineConfig parse_pipeline_config(const json& j, const std::filesystem::path& base_dir);

struct PipelineSummary {
    std::vector<std::string> class_names;
    std::vector<int> chosen_k;
    std::size_t combinations = 0;
    EvaluationReport gmm;
    std::optional<EvaluationReport> gmm1;
};

/// Runs library -> pca -> select -> fit -> synth -> unmix -> eval, writing every
/// product under `out_dir`. Output goes to a sibling staging directory that
/// is renamed into place at the end; an existing non-empty `out_dir` is an
/// error.
PipelineSummary run_pipeline(const PipelineConfig& config, const std::filesystem::path& out_dir,
                             const InputDigests& inputs, std::ostream& log);

/// Report JSON for `eval` and the pipeline: individual and (optionally) merged
/// metrics.
json report_json(const EvaluationReport& individual, const std::optional<EvaluationReport>& merged,
                 const std::vector<std::string>& images);

/// Rows `level,category,image,truth,difference` for Bland-Altman plotting.
std::string points_csv(const EvaluationReport& individual, const std::optional<EvaluationReport>& merged,
                       const std::vector<std::string>& images, const std::string& comment);

std::vector<ClassMerge::Category> parse_merge(const json& j);

}  // namespace unmix_gmm::cli
