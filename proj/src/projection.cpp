#include "unmix_gmm/projection.hpp"

#include <algorithm>
#include <limits>
#include <sstream>

#include "unmix_gmm/parallel.hpp"

namespace unmix_gmm {

SpectralLibrary balanced_subsample(const SpectralLibrary& library, std::uint64_t seed) {
    Index target = std::numeric_limits<Index>::max();
    for (const auto& c : library.classes()) target = std::min(target, c.spectra.rows());

    std::vector<EndmemberClass> out;
    out.reserve(library.class_count());
    for (std::size_t j = 0; j < library.class_count(); ++j) {
        const auto& c = library[j];
        auto rng = make_rng(seed, j);
        const auto rows = sample_without_replacement(static_cast<std::size_t>(c.spectra.rows()),
                                                     static_cast<std::size_t>(target), rng);
        Matrix picked(target, library.band_count());
        for (Index i = 0; i < target; ++i) {
            picked.row(i) = c.spectra.row(static_cast<Index>(rows[static_cast<std::size_t>(i)]));
        }
        out.push_back({c.name, std::move(picked)});
    }
    return SpectralLibrary(std::move(out));
}

ProjectionModel fit_pca(const Matrix& spectra, Index dimension) {
    if (dimension < 1) {
        throw ValidationError("projection dimension must be at least 1");
    }
    if (spectra.rows() < dimension) {
        throw ValidationError("PCA needs at least " + std::to_string(dimension) + " spectra, got " +
                              std::to_string(spectra.rows()));
    }
    if (dimension > spectra.cols()) {
        throw ValidationError("projection dimension " + std::to_string(dimension) +
                              " exceeds band count " + std::to_string(spectra.cols()));
    }
    const Vector center = spectra.colwise().mean().transpose();
    const Matrix centered = spectra.rowwise() - center.transpose();
    const double denom = std::max<double>(1.0, static_cast<double>(spectra.rows() - 1));
    const Matrix cov = (centered.transpose() * centered) / denom;

    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov);
    if (eig.info() != Eigen::Success) {
        throw NumericError("covariance eigendecomposition failed");
    }
    // Eigen sorts eigenvalues ascending.
    const Vector& values = eig.eigenvalues();
    const Index bands = cov.rows();
    const double largest = std::max(values(bands - 1), 0.0);
    const double cutoff = largest * static_cast<double>(bands) * std::numeric_limits<double>::epsilon() * 16;
    Index rank = 0;
    for (Index i = 0; i < bands; ++i) {
        if (values(i) > cutoff && values(i) > 0.0) ++rank;
    }
    if (dimension > rank) {
        std::ostringstream os;
        os << "projection dimension " << dimension << " exceeds the rank of the centered data; "
           << "achievable rank is " << rank;
        throw ValidationError(os.str());
    }

    Matrix basis(bands, dimension);
    for (Index i = 0; i < dimension; ++i) {
        Vector v = eig.eigenvectors().col(bands - 1 - i);
        Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        basis.col(i) = v;
    }
    return ProjectionModel(center, std::move(basis));
}

ProjectionModel fit_library_projection(const SpectralLibrary& library, Index dimension,
                                       std::uint64_t seed) {
    return fit_pca(balanced_subsample(library, seed).stacked(), dimension);
}

Matrix project(const ProjectionModel& model, const Matrix& X) {
    if (X.cols() != model.band_count()) {
        throw ValidationError("cannot project data with " + std::to_string(X.cols()) +
                              " bands using a projection for " +
                              std::to_string(model.band_count()) + " bands");
    }
    return (X.rowwise() - model.center().transpose()) * model.basis();
}

Matrix reconstruct(const ProjectionModel& model, const Matrix& Z) {
    if (Z.cols() != model.dimension()) {
        throw ValidationError("reconstruct expects " + std::to_string(model.dimension()) +
                              " columns, got " + std::to_string(Z.cols()));
    }
    return (Z * model.basis().transpose()).rowwise() + model.center().transpose();
}

}  // namespace unmix_gmm
