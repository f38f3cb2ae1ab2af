#include "unmix_gmm/core.hpp"

#include <cmath>
#include <iostream>
#include <mutex>
#include <set>
#include <sstream>
#include <utility>

namespace unmix_gmm {

namespace {

std::mutex g_warning_mutex;
WarningHandler g_warning_handler;

bool all_finite(const Matrix& m) { return m.allFinite(); }

void require_symmetric(const Matrix& m, const std::string& what) {
    if (m.rows() != m.cols()) {
        throw ValidationError(what + " is not square");
    }
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale) {
        throw ValidationError(what + " is not symmetric");
    }
}

}  // namespace

ParseError::ParseError(const std::string& message, std::size_t line)
    : ValidationError(line > 0 ? "line " + std::to_string(line) + ": " + message : message),
      line_(line),
      detail_(message) {}

void require_spd(const Matrix& m, const std::string& what) {
    if (!all_finite(m)) {
        throw ValidationError(what + " has non-finite entries");
    }
    require_symmetric(m, what);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(m, Eigen::EigenvaluesOnly);
    if (eig.info() != Eigen::Success || eig.eigenvalues().minCoeff() <= 0.0) {
        throw ValidationError(what + " is not positive definite");
    }
}

WarningHandler set_warning_handler(WarningHandler handler) {
    std::lock_guard lock(g_warning_mutex);
    return std::exchange(g_warning_handler, std::move(handler));
}

void warn(const std::string& message) {
    std::lock_guard lock(g_warning_mutex);
    if (g_warning_handler) {
        g_warning_handler(message);
    } else {
        std::cerr << "warning: " << message << '\n';
    }
}

const char* version() noexcept { return UNMIX_GMM_VERSION; }

// ---------------------------------------------------------------------------

SpectralLibrary::SpectralLibrary(std::vector<EndmemberClass> classes)
    : classes_(std::move(classes)) {
    if (classes_.empty()) {
        throw ValidationError("spectral library has no classes");
    }
    band_count_ = classes_.front().spectra.cols();
    if (band_count_ <= 0) {
        throw ValidationError("spectral library has zero bands");
    }
    std::set<std::string> seen;
    for (const auto& c : classes_) {
        if (c.name.empty()) {
            throw ValidationError("spectral library class with empty name");
        }
        if (!seen.insert(c.name).second) {
            throw ValidationError("duplicate class name '" + c.name + "'");
        }
        if (c.spectra.rows() < 1) {
            throw ValidationError("class '" + c.name + "' has no spectra");
        }
        if (c.spectra.cols() != band_count_) {
            throw ValidationError("class '" + c.name + "' has " + std::to_string(c.spectra.cols()) +
                                  " bands, expected " + std::to_string(band_count_));
        }
        if (!all_finite(c.spectra)) {
            throw ValidationError("class '" + c.name + "' has non-finite reflectance");
        }
    }
}

std::size_t SpectralLibrary::total_spectra() const noexcept {
    std::size_t n = 0;
    for (const auto& c : classes_) n += static_cast<std::size_t>(c.spectra.rows());
    return n;
}

std::vector<std::string> SpectralLibrary::class_names() const {
    std::vector<std::string> names;
    names.reserve(classes_.size());
    for (const auto& c : classes_) names.push_back(c.name);
    return names;
}

Matrix SpectralLibrary::stacked() const {
    Matrix out(static_cast<Index>(total_spectra()), band_count_);
    Index row = 0;
    for (const auto& c : classes_) {
        out.middleRows(row, c.spectra.rows()) = c.spectra;
        row += c.spectra.rows();
    }
    return out;
}

// ---------------------------------------------------------------------------

PixelBlock::PixelBlock(Matrix pixels, std::optional<ImageShape> shape)
    : pixels_(std::move(pixels)), shape_(shape) {
    if (pixels_.cols() <= 0) {
        throw ValidationError("pixel block has zero bands");
    }
    if (!all_finite(pixels_)) {
        throw ValidationError("pixel block has non-finite values");
    }
    if (shape_ && (shape_->rows < 0 || shape_->cols < 0 ||
                   shape_->rows * shape_->cols != pixels_.rows())) {
        throw ValidationError("image shape " + std::to_string(shape_->rows) + "x" +
                              std::to_string(shape_->cols) + " does not match " +
                              std::to_string(pixels_.rows()) + " pixels");
    }
}

// ---------------------------------------------------------------------------

ProjectionModel::ProjectionModel(Vector center, Matrix basis)
    : center_(std::move(center)), basis_(std::move(basis)) {
    if (basis_.rows() <= 0 || basis_.cols() <= 0) {
        throw ValidationError("projection basis is empty");
    }
    if (center_.size() != basis_.rows()) {
        throw ValidationError("projection center has length " + std::to_string(center_.size()) +
                              ", basis has " + std::to_string(basis_.rows()) + " rows");
    }
    if (!center_.allFinite() || !basis_.allFinite()) {
        throw ValidationError("projection has non-finite values");
    }
    const Matrix gram = basis_.transpose() * basis_;
    const double err = (gram - Matrix::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff();
    if (err > orthonormality_tolerance) {
        std::ostringstream os;
        os << "projection basis is not orthonormal (max |E^T E - I| = " << err << ")";
        throw ValidationError(os.str());
    }
}

ProjectionModel ProjectionModel::identity(Index bands) {
    return ProjectionModel(Vector::Zero(bands), Matrix::Identity(bands, bands));
}

// ---------------------------------------------------------------------------

GmmBundle::GmmBundle(std::vector<std::string> class_names,
                     std::vector<std::vector<GaussianComponent>> per_class,
                     Matrix noise_covariance, ProjectionModel projection)
    : class_names_(std::move(class_names)),
      per_class_(std::move(per_class)),
      noise_covariance_(std::move(noise_covariance)),
      projection_(std::move(projection)) {
    if (per_class_.empty()) {
        throw ValidationError("bundle has no classes");
    }
    if (class_names_.size() != per_class_.size()) {
        throw ValidationError("bundle has " + std::to_string(class_names_.size()) +
                              " class names for " + std::to_string(per_class_.size()) + " classes");
    }
    std::set<std::string> seen;
    for (const auto& n : class_names_) {
        if (!seen.insert(n).second) {
            throw ValidationError("duplicate class name '" + n + "' in bundle");
        }
    }
    const Index d = projection_.dimension();
    if (noise_covariance_.rows() != d || noise_covariance_.cols() != d) {
        throw ValidationError("noise covariance must be " + std::to_string(d) + "x" +
                              std::to_string(d));
    }
    require_spd(noise_covariance_, "noise covariance");
    for (std::size_t j = 0; j < per_class_.size(); ++j) {
        const auto& comps = per_class_[j];
        const std::string cls = "class '" + class_names_[j] + "'";
        if (comps.empty()) {
            throw ValidationError(cls + " has no mixture components");
        }
        double total = 0.0;
        for (std::size_t k = 0; k < comps.size(); ++k) {
            const auto& c = comps[k];
            const std::string what = cls + " component " + std::to_string(k);
            if (!(c.weight > 0.0 && c.weight <= 1.0)) {
                throw ValidationError(what + " weight must lie in (0, 1]");
            }
            if (c.mean.size() != d || c.covariance.rows() != d || c.covariance.cols() != d) {
                throw ValidationError(what + " does not match projection dimension " +
                                      std::to_string(d));
            }
            if (!c.mean.allFinite()) {
                throw ValidationError(what + " mean has non-finite entries");
            }
            require_spd(c.covariance, what + " covariance");
            total += c.weight;
        }
        if (std::abs(total - 1.0) > weight_sum_tolerance) {
            std::ostringstream os;
            os.precision(17);
            os << cls << " mixture weights sum to " << total << ", expected 1";
            throw ValidationError(os.str());
        }
    }
}

std::vector<int> GmmBundle::component_counts() const {
    std::vector<int> k;
    k.reserve(per_class_.size());
    for (const auto& c : per_class_) k.push_back(static_cast<int>(c.size()));
    return k;
}

namespace {
template <typename A, typename B>
bool same(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}
}  // namespace

bool operator==(const ProjectionModel& a, const ProjectionModel& b) {
    return same(a.center(), b.center()) && same(a.basis(), b.basis());
}

bool operator==(const GaussianComponent& a, const GaussianComponent& b) {
    return a.weight == b.weight && same(a.mean, b.mean) && same(a.covariance, b.covariance);
}

bool operator==(const GmmBundle& a, const GmmBundle& b) {
    return a.class_names() == b.class_names() && a.per_class() == b.per_class() &&
           same(a.noise_covariance(), b.noise_covariance()) && a.projection() == b.projection();
}

// ---------------------------------------------------------------------------

AbundanceMatrix::AbundanceMatrix(Matrix values) : values_(std::move(values)) {
    if (values_.cols() < 1) {
        throw ValidationError("abundance matrix has no classes");
    }
    for (Index n = 0; n < values_.rows(); ++n) {
        const auto row = values_.row(n);
        if (!row.allFinite()) {
            throw ValidationError("abundance row " + std::to_string(n) + " has non-finite values");
        }
        if (row.minCoeff() < 0.0) {
            throw ValidationError("abundance row " + std::to_string(n) + " has negative entries");
        }
        if (std::abs(row.sum() - 1.0) > row_sum_tolerance) {
            std::ostringstream os;
            os.precision(17);
            os << "abundance row " << n << " sums to " << row.sum() << ", expected 1";
            throw ValidationError(os.str());
        }
    }
}

}  // namespace unmix_gmm
