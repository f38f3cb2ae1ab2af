// Maximum-likelihood abundance estimation under the GMM pixel density.
//
// For a combination k = (k_1, ..., k_M) of one component per class, pixel n
// follows N(mu_nk, Sigma_nk) with
//
//     mu_nk    = sum_j alpha_nj mu_{j,k_j}
//     Sigma_nk = sum_j alpha_nj^2 Sigma_{j,k_j} + D
//
// and prior pi_k = prod_j pi_{j,k_j}. The negative log-likelihood
// E(A) = -sum_n log sum_k pi_k N(y_n | mu_nk, Sigma_nk) is minimized over
// simplex-constrained rows of A by generalized EM: responsibilities in closed
// form, then projected-gradient steps on the expected complete-data objective
// E_M with the responsibilities held fixed.

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "unmix_gmm/core.hpp"

namespace unmix_gmm {

inline constexpr std::size_t default_combination_cap = 10'000;

/// All |K| = prod_j K_j combinations, last class varying fastest.
/// Throws ValidationError when |K| exceeds `cap`.
std::vector<MixtureCombination> enumerate_combinations(const GmmBundle& bundle,
                                                       std::size_t cap = default_combination_cap);

/// Bundle parameters rearranged per combination: stacked means R_k (M x d)
/// and log priors.
class UnmixModel {
public:
    explicit UnmixModel(GmmBundle bundle, std::size_t combination_cap = default_combination_cap);

    const GmmBundle& bundle() const noexcept { return bundle_; }
    const std::vector<MixtureCombination>& combinations() const noexcept { return combinations_; }
    std::size_t combination_count() const noexcept { return combinations_.size(); }
    std::size_t class_count() const noexcept { return bundle_.class_count(); }
    Index dimension() const noexcept { return bundle_.dimension(); }

    const Matrix& stacked_means(std::size_t k) const { return stacked_means_[k]; }
    double log_prior(std::size_t k) const { return log_priors_[k]; }
    const Matrix& covariance(std::size_t j, int component) const {
        return bundle_.components(j)[static_cast<std::size_t>(component)].covariance;
    }

private:
    GmmBundle bundle_;
    std::vector<MixtureCombination> combinations_;
    std::vector<Matrix> stacked_means_;
    std::vector<double> log_priors_;
};

struct PixelGaussian {
    Vector mean;
    Matrix covariance;
};

/// mu_nk and Sigma_nk for one pixel's abundances and one combination.
PixelGaussian pixel_mixture_params(const Vector& alpha, const MixtureCombination& combination,
                                   const GmmBundle& bundle);

/// E(A) for projected pixels Y (N x d). Throws NumericError naming the pixel
/// and combination if some Sigma_nk is not positive definite.
double negative_log_likelihood(const Matrix& Y, const Matrix& A, const UnmixModel& model);

/// Responsibilities Gamma (N x |K|), computed in the log domain.
Matrix e_step(const Matrix& Y, const Matrix& A, const UnmixModel& model);

/// E_M(A) = -sum_n sum_k gamma_nk (log pi_k + log N(y_n | mu_nk, Sigma_nk)).
double m_step_objective(const Matrix& Y, const Matrix& A, const Matrix& gamma,
                        const UnmixModel& model);

/// dE_M/dA with gamma fixed (N x M):
///   -sum_k Lambda_k R_k^T - 2 A o sum_k Psi_k S_k^T.
Matrix m_step_gradient(const Matrix& Y, const Matrix& A, const Matrix& gamma,
                       const UnmixModel& model);

struct UnmixOptions {
    int max_outer_iters = 100;
    int m_step_iters = 1;         // projected-gradient passes per E-step
    double initial_step = 1e-3;   // tau_0
    double step_growth = 10.0;    // tau grows by this after a decrease, shrinks otherwise
    int max_step_shrinks = 8;
    double tolerance = 1e-6;      // relative objective decrease that freezes a pixel
    /// Initialization ridge eps_k = init_ridge_scale * trace(R_k R_k^T) / M,
    /// unless init_ridge gives an absolute value.
    double init_ridge_scale = 1e-4;
    std::optional<double> init_ridge;
    std::size_t combination_cap = default_combination_cap;

    void validate() const;
};

/// Per pixel: ridge solve alpha_k = (R_k R_k^T + eps I)^-1 R_k y for every
/// combination, simplex projection, then keep the combination with the
/// smallest reconstruction error |y - R_k^T alpha_k|^2 (lowest index on ties).
Matrix init_abundances(const Matrix& Y, const UnmixModel& model, const UnmixOptions& options = {});

struct StepStats {
    std::size_t accepted = 0;  // pixels whose step was accepted this iteration
    double min_step = 0.0;
    double max_step = 0.0;
};

struct UnmixDiagnostics {
    std::vector<double> objective_trace;  // E(A) after init and after every iteration
    std::vector<StepStats> steps;
    int outer_iterations = 0;
    bool converged = false;
    std::size_t unconverged_pixels = 0;
    std::size_t combination_count = 0;
    std::vector<std::string> warnings;
};

struct UnmixResult {
    AbundanceMatrix abundances;
    UnmixDiagnostics diagnostics;
};

/// Unmixes already-projected pixels.
///
/// Step sizes are adapted per pixel: a step that strictly decreases the
/// pixel's E_M term is accepted and tau grows by `step_growth`; otherwise tau
/// shrinks and the step is retried up to `max_step_shrinks` times. A pixel is
/// frozen once its objective decrease falls below `tolerance` (relative) or
/// no step size gives a decrease twice in a row. Because E(A) is a sum of
/// independent per-pixel terms, each term and hence the total is
/// non-increasing. Running out of iterations is reported in diagnostics, not
/// thrown.
UnmixResult unmix_projected(const Matrix& Y, const UnmixModel& model,
                            const UnmixOptions& options = {});

/// Projects raw pixels with the bundle's projection and unmixes them.
UnmixResult unmix(const PixelBlock& pixels, const GmmBundle& bundle,
                  const UnmixOptions& options = {});

}  // namespace unmix_gmm
