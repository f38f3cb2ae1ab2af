// PCA projection fitted on a class-balanced subsample of the library.
//
// Spectra are mapped as z = E^T (y - c). The map is affine, so convex
// combinations (and therefore abundances) are preserved by projection.

#pragma once

#include <cstdint>

#include "unmix_gmm/core.hpp"

namespace unmix_gmm {

inline constexpr Index default_projection_dimension = 10;

/// Every class reduced to n* = min_j N_j spectra, drawn uniformly without
/// replacement (deterministic per seed). Selected spectra keep their
/// original relative order.
SpectralLibrary balanced_subsample(const SpectralLibrary& library, std::uint64_t seed);

/// Column mean plus the top-`dimension` eigenvectors of the sample
/// covariance, ordered by decreasing eigenvalue. Each basis column is signed
/// so that its largest-magnitude entry is positive.
///
/// Throws ValidationError when `dimension` exceeds the numerical rank of the
/// centered data; the message states the achievable rank.
ProjectionModel fit_pca(const Matrix& spectra, Index dimension);

/// Balanced subsample followed by fit_pca on the stacked spectra.
ProjectionModel fit_library_projection(const SpectralLibrary& library, Index dimension,
                                       std::uint64_t seed);

/// Rows of X (N x B) mapped to N x d.
Matrix project(const ProjectionModel& model, const Matrix& X);

/// Inverse map from N x d back to band space: Z E^T + c.
Matrix reconstruct(const ProjectionModel& model, const Matrix& Z);

}  // namespace unmix_gmm
