// Text formats: library/pixel/abundance CSV and bundle/projection JSON.
//
// Library CSV:   header `class,band_0,...,band_{B-1}`, one spectrum per row.
// Pixel CSV:     header `band_0,...,band_{B-1}`; optional sidecar JSON
//                `{"rows": R, "cols": C}`.
// Abundance CSV: header is the class names in bundle order.
// Lines starting with '#' are comments in every CSV flavour.
//
// Numbers are written in the shortest decimal form that round-trips to the
// same double, so save/load cycles are bit-exact.

#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "unmix_gmm/core.hpp"

namespace unmix_gmm {

using json = nlohmann::json;

inline constexpr int bundle_format_version = 1;

std::string format_double(double value);

SpectralLibrary parse_library_csv(std::istream& in);
SpectralLibrary load_library(const std::filesystem::path& path);
void write_library_csv(std::ostream& out, const SpectralLibrary& library);

PixelBlock parse_pixels_csv(std::istream& in, std::optional<ImageShape> shape = std::nullopt);
PixelBlock load_pixels(const std::filesystem::path& path,
                       const std::optional<std::filesystem::path>& shape_path = std::nullopt);
void write_pixels_csv(std::ostream& out, const PixelBlock& pixels);

ImageShape load_shape(const std::filesystem::path& path);
json shape_to_json(const ImageShape& shape);

struct LabeledAbundances {
    std::vector<std::string> class_names;
    AbundanceMatrix abundances;
};
LabeledAbundances parse_abundance_csv(std::istream& in);
LabeledAbundances load_abundances(const std::filesystem::path& path);
void write_abundance_csv(std::ostream& out, const AbundanceMatrix& abundances,
                         const std::vector<std::string>& class_names);

json matrix_to_json(const Matrix& m);  // {"rows", "cols", "data" (row-major)}
Matrix matrix_from_json(const json& j, const std::string& what);
json vector_to_json(const Vector& v);
Vector vector_from_json(const json& j, const std::string& what);

json projection_to_json(const ProjectionModel& projection);
ProjectionModel projection_from_json(const json& j);

json bundle_to_json(const GmmBundle& bundle);
GmmBundle bundle_from_json(const json& j);
void save_bundle(const GmmBundle& bundle, const std::filesystem::path& path);
GmmBundle load_bundle(const std::filesystem::path& path);

/// Two-space indented dump with a trailing newline.
std::string dump_json(const json& j);
json load_json(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temporary file and renames it over `path`, so readers
/// never observe a partially written file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace unmix_gmm
