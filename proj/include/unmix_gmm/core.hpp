// Domain types shared by every stage of the unmixing pipeline.
//
// All types validate their invariants on construction and are immutable
// afterwards, so they can be shared freely between threads.

#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace unmix_gmm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Input or model data that violates a documented invariant.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed text input. `line()` is 1-based; 0 when no line applies.
class ParseError : public ValidationError {
public:
    ParseError(const std::string& message, std::size_t line);
    std::size_t line() const noexcept { return line_; }
    /// Message without the line prefix.
    const std::string& detail() const noexcept { return detail_; }

private:
    std::size_t line_;
    std::string detail_;
};

/// A numerical failure such as a covariance that lost positive definiteness.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Reflectance spectrum of length B.
using Spectrum = Vector;

struct EndmemberClass {
    std::string name;
    Matrix spectra;  // N_j x B, one spectrum per row
};

/// Labeled endmember spectra, one block per class.
///
/// Class order is significant: it fixes the abundance column order of every
/// downstream product (bundles, abundance maps, reports).
class SpectralLibrary {
public:
    explicit SpectralLibrary(std::vector<EndmemberClass> classes);

    std::size_t class_count() const noexcept { return classes_.size(); }
    Index band_count() const noexcept { return band_count_; }
    std::size_t total_spectra() const noexcept;

    const std::vector<EndmemberClass>& classes() const noexcept { return classes_; }
    const EndmemberClass& operator[](std::size_t j) const { return classes_.at(j); }
    std::vector<std::string> class_names() const;

    /// All spectra stacked in class order.
    Matrix stacked() const;

private:
    std::vector<EndmemberClass> classes_;
    Index band_count_ = 0;
};

struct ImageShape {
    Index rows = 0;
    Index cols = 0;
    friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

/// N pixels by B bands, optionally carrying the raster shape for map export.
class PixelBlock {
public:
    explicit PixelBlock(Matrix pixels, std::optional<ImageShape> shape = std::nullopt);

    const Matrix& pixels() const noexcept { return pixels_; }
    const std::optional<ImageShape>& shape() const noexcept { return shape_; }
    Index pixel_count() const noexcept { return pixels_.rows(); }
    Index band_count() const noexcept { return pixels_.cols(); }

private:
    Matrix pixels_;
    std::optional<ImageShape> shape_;
};

struct GaussianComponent {
    double weight = 1.0;
    Vector mean;
    Matrix covariance;
};

/// PCA center c (length B) and orthonormal basis E (B x d).
class ProjectionModel {
public:
    static constexpr double orthonormality_tolerance = 1e-10;

    ProjectionModel(Vector center, Matrix basis);

    /// Identity map on R^B (c = 0, E = I); useful when data is already reduced.
    static ProjectionModel identity(Index bands);

    const Vector& center() const noexcept { return center_; }
    const Matrix& basis() const noexcept { return basis_; }
    Index band_count() const noexcept { return basis_.rows(); }
    Index dimension() const noexcept { return basis_.cols(); }

private:
    Vector center_;
    Matrix basis_;
};

/// Per-class Gaussian mixtures fitted in projected space, plus the noise
/// covariance D and the projection the fit was made in.
class GmmBundle {
public:
    static constexpr double weight_sum_tolerance = 1e-10;

    GmmBundle(std::vector<std::string> class_names,
              std::vector<std::vector<GaussianComponent>> per_class,
              Matrix noise_covariance, ProjectionModel projection);

    const std::vector<std::string>& class_names() const noexcept { return class_names_; }
    const std::vector<std::vector<GaussianComponent>>& per_class() const noexcept {
        return per_class_;
    }
    const std::vector<GaussianComponent>& components(std::size_t j) const {
        return per_class_.at(j);
    }
    const Matrix& noise_covariance() const noexcept { return noise_covariance_; }
    const ProjectionModel& projection() const noexcept { return projection_; }

    std::size_t class_count() const noexcept { return per_class_.size(); }
    Index dimension() const noexcept { return projection_.dimension(); }
    std::vector<int> component_counts() const;

private:
    std::vector<std::string> class_names_;
    std::vector<std::vector<GaussianComponent>> per_class_;
    Matrix noise_covariance_;
    ProjectionModel projection_;
};

bool operator==(const ProjectionModel& a, const ProjectionModel& b);
bool operator==(const GaussianComponent& a, const GaussianComponent& b);
bool operator==(const GmmBundle& a, const GmmBundle& b);

/// N x M abundances; each row lies on the probability simplex.
class AbundanceMatrix {
public:
    static constexpr double row_sum_tolerance = 1e-9;

    explicit AbundanceMatrix(Matrix values);

    const Matrix& values() const noexcept { return values_; }
    Index rows() const noexcept { return values_.rows(); }
    Index cols() const noexcept { return values_.cols(); }

private:
    Matrix values_;
};

/// One index tuple k = (k_1, ..., k_M) into the per-class components
/// (0-based), with prior pi_k = prod_j pi_{j,k_j}.
struct MixtureCombination {
    std::vector<int> indices;
    double prior = 1.0;
};

/// Throws ValidationError unless `m` is symmetric positive definite.
void require_spd(const Matrix& m, const std::string& what);

/// Noise variance of D = 0.001^2 I.
inline constexpr double default_noise_variance = 1e-6;

/// Non-fatal data-quality messages (e.g. reflectance overshoot). The default
/// handler prints to stderr; tests and bindings may redirect it.
using WarningHandler = std::function<void(const std::string&)>;
WarningHandler set_warning_handler(WarningHandler handler);
void warn(const std::string& message);

/// Tool version string baked in at build time.
const char* version() noexcept;

}  // namespace unmix_gmm
