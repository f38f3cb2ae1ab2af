// Per-class Gaussian mixture fitting and cross-validated selection of the
// number of components.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "unmix_gmm/core.hpp"

namespace unmix_gmm {

struct EmOptions {
    double tolerance = 1e-6;  // relative change of the training objective
    int max_iterations = 500;
    /// Ridge eps = regularization_scale * trace(S) / d, S the data covariance.
    double regularization_scale = 1e-6;
    int kmeans_iterations = 10;
    /// Collapse-repair rounds before collapsed components are left alone.
    int max_reinitializations = 10;
};

struct GmmFit {
    std::vector<GaussianComponent> components;
    /// Training objective per iteration: log-likelihood with every component
    /// density scaled by exp(-eps tr(Sigma^-1) / 2). The ridge update
    /// Sigma = S_k + eps I is the exact EM step for this objective, so the
    /// trace is non-decreasing between collapse repairs.
    std::vector<double> objective_trace;
    std::vector<int> reinitialized_at;  // iterations that repaired a collapse
    double log_likelihood = 0.0;        // plain training log-likelihood
    double regularization = 0.0;        // eps
    int iterations = 0;
    bool converged = false;
};

/// EM for a K-component full-covariance mixture.
///
/// Initialization: k-means++ seeding and `kmeans_iterations` Lloyd steps,
/// then EM from the hard assignment. A component whose effective count drops
/// below 2 is re-seeded at the point farthest from all other component means,
/// with the pooled data covariance and weight 1/K.
GmmFit fit_gmm_em(const Matrix& X, int K, std::uint64_t seed, const EmOptions& options = {});

/// log p(x) under the mixture, for every row of X.
Vector gmm_log_densities(const std::vector<GaussianComponent>& components, const Matrix& X);

/// Fold id in [0, folds) for each of n rows: a seeded shuffle cut into
/// contiguous near-equal blocks.
std::vector<int> assign_folds(std::size_t n, int folds, std::uint64_t seed);

/// Held-out log-likelihood per fold: fold v is scored by a model fitted on
/// all other rows (kept in their original order) with EM seed `seed`.
std::vector<double> cvic_fold_scores(const Matrix& X, int K, std::span<const int> fold_of_row,
                                     int folds, std::uint64_t seed, const EmOptions& options = {});

/// Cross-validated log-likelihood L_K, the sum of cvic_fold_scores over a
/// seeded fold assignment.
double cvic_score(const Matrix& X, int K, int folds, std::uint64_t seed,
                  const EmOptions& options = {});

struct CvicConfig {
    int folds = 5;
    std::vector<int> candidates{1, 2, 3, 4};
    double threshold = 0.0;  // T_CVIC in [0, 1)
    int repeats = 15;
    std::uint64_t seed = 0;
    EmOptions em{};

    void validate() const;
};

struct CvicRepeat {
    std::uint64_t seed = 0;
    std::vector<std::vector<double>> scores;  // [class][candidate]
    std::vector<int> chosen;                  // K_j per class
};

struct CvicResult {
    std::vector<std::string> class_names;
    std::vector<int> candidates;
    double threshold = 0.0;
    std::vector<CvicRepeat> repeats;
    std::vector<int> chosen;  // modal tuple over repeats
    int modal_count = 0;      // repeats that produced `chosen`
};

/// Smallest candidate whose score is within threshold * |L'| of the best
/// score L'. With threshold 0 this is the (first) argmax.
int apply_threshold_rule(std::span<const double> scores, std::span<const int> candidates,
                         double threshold);

/// Most frequent tuple; ties go to the lexicographically smallest.
std::vector<int> modal_tuple(const std::vector<std::vector<int>>& tuples, int* count = nullptr);

/// Runs CVIC on every class for `config.repeats` repeats (repeat r uses seed
/// config.seed + r) and reports per-repeat choices plus the modal tuple.
CvicResult select_components(const std::vector<Matrix>& projected_classes,
                             const std::vector<std::string>& class_names,
                             const CvicConfig& config);

/// Library spectra of each class mapped through the projection.
std::vector<Matrix> project_library(const SpectralLibrary& library,
                                    const ProjectionModel& projection);

/// Fits class j with chosen_K[j] components on all of its projected spectra
/// (EM seed `seed + j`) and attaches D = 0.001^2 I_d.
GmmBundle fit_bundle(const SpectralLibrary& library, const ProjectionModel& projection,
                     std::span<const int> chosen_K, std::uint64_t seed,
                     const EmOptions& options = {});

}  // namespace unmix_gmm
