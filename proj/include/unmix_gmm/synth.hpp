// Synthetic linear-mixing scenes with known ground truth.
//
// Endmember sets are sampled per image from a full library; abundances come
// either from a template image (fully constrained least squares against the
// sampled spectra, trimmed to the largest `max_active` class totals) or from
// per-pixel Dirichlet draws trimmed the same way. Every pixel then mixes one
// spectrum per class, redrawn per pixel from the sampled sets.
//
// All randomness uses per-pixel streams, so results do not depend on thread
// count or processing order.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "unmix_gmm/core.hpp"

namespace unmix_gmm {

struct TemplateAbundances {};

struct DirichletAbundances {
    double concentration = 1.0;
};

using AbundanceSource = std::variant<TemplateAbundances, DirichletAbundances>;

struct SynthSpec {
    std::vector<std::size_t> counts;  // spectra sampled per class
    std::size_t max_active = 3;
    AbundanceSource abundance = DirichletAbundances{};
    ImageShape shape{64, 64};  // Dirichlet mode only; template mode follows the template
    double noise_sd = 0.0;
    std::uint64_t seed = 0;

    void validate(std::size_t class_count) const;
};

using EndmemberPicks = Eigen::Matrix<Index, Eigen::Dynamic, Eigen::Dynamic>;  // N x M

struct SyntheticImage {
    PixelBlock pixels;
    AbundanceMatrix truth;
    EndmemberPicks picks;  // row into the sampled set of each class
    SpectralLibrary sets;
};

/// Per class, spec.counts[j] spectra drawn without replacement.
SpectralLibrary sample_endmember_sets(const SpectralLibrary& library, const SynthSpec& spec);

/// Nonnegative least squares (Lawson-Hanson active set): argmin |Ax - b|, x >= 0.
Vector nnls(const Matrix& A, const Vector& b);

/// Fully constrained least squares of y against the columns of `endmembers`
/// (B x P): nonnegative coefficients summing to one.
Vector fcls(const Matrix& endmembers, const Vector& y);

/// Keeps the `max_active` largest entries (lower index wins ties), zeroes the
/// rest and rescales to unit sum.
Vector keep_largest(const Vector& totals, std::size_t max_active);

AbundanceMatrix sparse_abundances_from_template(const PixelBlock& templ, const SpectralLibrary& sets,
                                                std::size_t max_active);

AbundanceMatrix dirichlet_abundances(Index pixels, Index classes, double concentration,
                                     std::size_t max_active, std::uint64_t seed);

/// Uniform per-pixel picks into each class's sampled set.
EndmemberPicks draw_picks(Index pixels, const SpectralLibrary& sets, std::uint64_t seed);

/// y_n = sum_j alpha_nj m_{n,j} + noise, noise ~ N(0, noise_sd^2 I).
PixelBlock mix_pixels(const AbundanceMatrix& abundances, const EndmemberPicks& picks,
                      const SpectralLibrary& sets, double noise_sd, std::uint64_t seed,
                      std::optional<ImageShape> shape = std::nullopt);

/// Template mode requires `templ`; Dirichlet mode ignores it.
SyntheticImage generate(const SynthSpec& spec, const SpectralLibrary& library,
                        const PixelBlock* templ = nullptr);

/// Smooth reflectance-like library whose classes are mixtures of distinct
/// spectral modes, for runs without field data.
struct SyntheticLibrarySpec {
    std::vector<std::string> class_names{"turfgrass", "npv", "paved", "roof"};
    Index bands = 50;
    std::size_t spectra_per_class = 200;
    int modes_per_class = 2;
    double mode_separation = 0.08;  // amplitude of the per-mode shape offset
    double within_mode_sd = 0.01;   // amplitude of per-spectrum smooth variation
    double brightness_sd = 0.03;
    std::uint64_t seed = 0;
};

SpectralLibrary make_synthetic_library(const SyntheticLibrarySpec& spec);

}  // namespace unmix_gmm
