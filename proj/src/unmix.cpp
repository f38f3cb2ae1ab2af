#include "unmix_gmm/unmix.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "unmix_gmm/parallel.hpp"
#include "unmix_gmm/projection.hpp"
#include "unmix_gmm/simplex.hpp"

namespace unmix_gmm {

std::vector<MixtureCombination> enumerate_combinations(const GmmBundle& bundle, std::size_t cap) {
    const auto counts = bundle.component_counts();
    std::size_t total = 1;
    for (int k : counts) {
        if (total > cap / static_cast<std::size_t>(k) + 1) {
            total = cap + 1;
            break;
        }
        total *= static_cast<std::size_t>(k);
    }
    if (total > cap) {
        std::ostringstream os;
        os << "number of mixture combinations exceeds the cap of " << cap
           << "; choose a larger CVIC threshold to reduce the component counts";
        throw ValidationError(os.str());
    }

    std::vector<MixtureCombination> out;
    out.reserve(total);
    std::vector<int> idx(counts.size(), 0);
    for (std::size_t t = 0; t < total; ++t) {
        double prior = 1.0;
        for (std::size_t j = 0; j < idx.size(); ++j) {
            prior *= bundle.components(j)[static_cast<std::size_t>(idx[j])].weight;
        }
        out.push_back({idx, prior});
        for (std::size_t j = idx.size(); j-- > 0;) {
            if (++idx[j] < counts[j]) break;
            idx[j] = 0;
        }
    }
    return out;
}

UnmixModel::UnmixModel(GmmBundle bundle, std::size_t combination_cap)
    : bundle_(std::move(bundle)), combinations_(enumerate_combinations(bundle_, combination_cap)) {
    const auto M = static_cast<Index>(bundle_.class_count());
    stacked_means_.reserve(combinations_.size());
    log_priors_.reserve(combinations_.size());
    for (const auto& combo : combinations_) {
        Matrix R(M, bundle_.dimension());
        for (Index j = 0; j < M; ++j) {
            R.row(j) = bundle_.components(static_cast<std::size_t>(j))[static_cast<std::size_t>(
                                                                           combo.indices[static_cast<std::size_t>(j)])]
                           .mean.transpose();
        }
        stacked_means_.push_back(std::move(R));
        log_priors_.push_back(std::log(combo.prior));
    }
}

PixelGaussian pixel_mixture_params(const Vector& alpha, const MixtureCombination& combination,
                                   const GmmBundle& bundle) {
    if (alpha.size() != static_cast<Index>(bundle.class_count()) ||
        combination.indices.size() != bundle.class_count()) {
        throw ValidationError("abundance/combination length does not match the bundle");
    }
    PixelGaussian out{Vector::Zero(bundle.dimension()), bundle.noise_covariance()};
    for (std::size_t j = 0; j < bundle.class_count(); ++j) {
        const auto& c = bundle.components(j)[static_cast<std::size_t>(combination.indices[j])];
        const double a = alpha(static_cast<Index>(j));
        out.mean += a * c.mean;
        out.covariance += (a * a) * c.covariance;
    }
    return out;
}

namespace {

const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Scratch space for one worker; sizes fixed by the model so Eigen does not
// reallocate in the per-pixel loops.
struct Workspace {
    Matrix sigma;
    Vector mean;
    Vector resid;
    Vector solved;
    Matrix inverse;
    Eigen::LLT<Matrix> llt;
    Vector log_terms;

    explicit Workspace(const UnmixModel& model)
        : sigma(model.dimension(), model.dimension()),
          mean(model.dimension()),
          resid(model.dimension()),
          solved(model.dimension()),
          inverse(model.dimension(), model.dimension()),
          llt(model.dimension()),
          log_terms(static_cast<Index>(model.combination_count())) {}
};

// Factorizes Sigma_nk into ws.llt and fills ws.mean / ws.resid = y - mu_nk.
// Returns log N(y | mu_nk, Sigma_nk).
double factor_and_log_density(const Eigen::Ref<const Vector>& y, const Eigen::Ref<const Vector>& alpha,
                              const UnmixModel& model, std::size_t k, Index pixel, Workspace& ws) {
    const auto& combo = model.combinations()[k];
    ws.sigma = model.bundle().noise_covariance();
    for (std::size_t j = 0; j < combo.indices.size(); ++j) {
        const double a = alpha(static_cast<Index>(j));
        if (a != 0.0) ws.sigma.noalias() += (a * a) * model.covariance(j, combo.indices[j]);
    }
    ws.mean.noalias() = model.stacked_means(k).transpose() * alpha;
    ws.resid = y - ws.mean;
    ws.llt.compute(ws.sigma);
    if (ws.llt.info() != Eigen::Success) {
        throw NumericError("pixel covariance is not positive definite at pixel " +
                           std::to_string(pixel) + ", combination " + std::to_string(k));
    }
    const auto& L = ws.llt.matrixLLT();
    double logdet = 0.0;
    for (Index i = 0; i < L.rows(); ++i) logdet += std::log(L(i, i));
    logdet *= 2.0;
    ws.solved = ws.resid;
    ws.llt.matrixL().solveInPlace(ws.solved);
    return -0.5 * (static_cast<double>(y.size()) * kLog2Pi + logdet + ws.solved.squaredNorm());
}

// Responsibilities for one pixel; returns -log p(y | alpha).
double pixel_e_step(const Eigen::Ref<const Vector>& y, const Eigen::Ref<const Vector>& alpha,
                    const UnmixModel& model, Index pixel, Workspace& ws, Eigen::Ref<Vector> gamma) {
    const std::size_t K = model.combination_count();
    for (std::size_t k = 0; k < K; ++k) {
        ws.log_terms(static_cast<Index>(k)) =
            model.log_prior(k) + factor_and_log_density(y, alpha, model, k, pixel, ws);
    }
    const double mx = ws.log_terms.maxCoeff();
    const double lse = mx + std::log((ws.log_terms.array() - mx).exp().sum());
    gamma = (ws.log_terms.array() - lse).exp().matrix();
    return -lse;
}

double pixel_m_objective(const Eigen::Ref<const Vector>& y, const Eigen::Ref<const Vector>& alpha,
                         const Eigen::Ref<const Vector>& gamma, const UnmixModel& model, Index pixel,
                         Workspace& ws) {
    double total = 0.0;
    for (std::size_t k = 0; k < model.combination_count(); ++k) {
        const double g = gamma(static_cast<Index>(k));
        if (g == 0.0) continue;
        total -= g * (model.log_prior(k) + factor_and_log_density(y, alpha, model, k, pixel, ws));
    }
    return total;
}

// dE_M/dalpha_j = -sum_k lambda_k . mu_{j,k_j} - 2 alpha_j sum_k <Psi_k, Sigma_{j,k_j}>
// with lambda_k = gamma_k Sigma^-1 r and Psi_k = gamma_k / 2 (Sigma^-1 r r^T Sigma^-1 - Sigma^-1).
void pixel_gradient(const Eigen::Ref<const Vector>& y, const Eigen::Ref<const Vector>& alpha,
                    const Eigen::Ref<const Vector>& gamma, const UnmixModel& model, Index pixel,
                    Workspace& ws, Eigen::Ref<Vector> grad) {
    grad.setZero();
    const Index d = model.dimension();
    for (std::size_t k = 0; k < model.combination_count(); ++k) {
        const double g = gamma(static_cast<Index>(k));
        if (g == 0.0) continue;
        factor_and_log_density(y, alpha, model, k, pixel, ws);
        ws.solved = ws.llt.solve(ws.resid);  // Sigma^-1 r
        ws.inverse.setIdentity(d, d);
        ws.llt.solveInPlace(ws.inverse);
        const auto& combo = model.combinations()[k];
        const Matrix& R = model.stacked_means(k);
        for (Index j = 0; j < grad.size(); ++j) {
            const Matrix& cov = model.covariance(static_cast<std::size_t>(j),
                                                 combo.indices[static_cast<std::size_t>(j)]);
            const double mean_term = R.row(j).dot(ws.solved);
            const double psi_dot = 0.5 * g *
                                   (ws.solved.dot(cov * ws.solved) - ws.inverse.cwiseProduct(cov).sum());
            grad(j) += -g * mean_term - 2.0 * alpha(j) * psi_dot;
        }
    }
}

void check_shapes(const Matrix& Y, const Matrix& A, const UnmixModel& model) {
    if (Y.cols() != model.dimension()) {
        throw ValidationError("pixels have " + std::to_string(Y.cols()) +
                              " dimensions, bundle expects " + std::to_string(model.dimension()));
    }
    if (A.rows() != Y.rows() || A.cols() != static_cast<Index>(model.class_count())) {
        throw ValidationError("abundance matrix must be N x M");
    }
}

void check_gamma(const Matrix& Y, const Matrix& gamma, const UnmixModel& model) {
    if (gamma.rows() != Y.rows() || gamma.cols() != static_cast<Index>(model.combination_count())) {
        throw ValidationError("responsibility matrix must be N x |K|");
    }
}

}  // namespace

double negative_log_likelihood(const Matrix& Y, const Matrix& A, const UnmixModel& model) {
    check_shapes(Y, A, model);
    Vector per_pixel(Y.rows());
    parallel_for(static_cast<std::size_t>(Y.rows()), [&](std::size_t begin, std::size_t end) {
        Workspace ws(model);
        Vector gamma(static_cast<Index>(model.combination_count()));
        for (auto n = static_cast<Index>(begin); n < static_cast<Index>(end); ++n) {
            per_pixel(n) = pixel_e_step(Y.row(n).transpose(), A.row(n).transpose(), model, n, ws, gamma);
        }
    });
    return per_pixel.sum();
}

Matrix e_step(const Matrix& Y, const Matrix& A, const UnmixModel& model) {
    check_shapes(Y, A, model);
    Matrix gamma(Y.rows(), static_cast<Index>(model.combination_count()));
    parallel_for(static_cast<std::size_t>(Y.rows()), [&](std::size_t begin, std::size_t end) {
        Workspace ws(model);
        Vector g(gamma.cols());
        for (auto n = static_cast<Index>(begin); n < static_cast<Index>(end); ++n) {
            pixel_e_step(Y.row(n).transpose(), A.row(n).transpose(), model, n, ws, g);
            gamma.row(n) = g.transpose();
        }
    });
    return gamma;
}

double m_step_objective(const Matrix& Y, const Matrix& A, const Matrix& gamma,
                        const UnmixModel& model) {
    check_shapes(Y, A, model);
    check_gamma(Y, gamma, model);
    Vector per_pixel(Y.rows());
    parallel_for(static_cast<std::size_t>(Y.rows()), [&](std::size_t begin, std::size_t end) {
        Workspace ws(model);
        for (auto n = static_cast<Index>(begin); n < static_cast<Index>(end); ++n) {
            per_pixel(n) = pixel_m_objective(Y.row(n).transpose(), A.row(n).transpose(),
                                             gamma.row(n).transpose(), model, n, ws);
        }
    });
    return per_pixel.sum();
}

Matrix m_step_gradient(const Matrix& Y, const Matrix& A, const Matrix& gamma,
                       const UnmixModel& model) {
    check_shapes(Y, A, model);
    check_gamma(Y, gamma, model);
    Matrix grad(A.rows(), A.cols());
    parallel_for(static_cast<std::size_t>(Y.rows()), [&](std::size_t begin, std::size_t end) {
        Workspace ws(model);
        Vector g(A.cols());
        for (auto n = static_cast<Index>(begin); n < static_cast<Index>(end); ++n) {
            pixel_gradient(Y.row(n).transpose(), A.row(n).transpose(), gamma.row(n).transpose(),
                           model, n, ws, g);
            grad.row(n) = g.transpose();
        }
    });
    return grad;
}

void UnmixOptions::validate() const {
    if (max_outer_iters < 1 || m_step_iters < 1 || max_step_shrinks < 0) {
        throw ValidationError("unmix iteration counts must be positive");
    }
    if (!(initial_step > 0.0) || !(step_growth > 1.0)) {
        throw ValidationError("unmix step size must be positive and growth factor above 1");
    }
    if (!(tolerance >= 0.0) || !(init_ridge_scale > 0.0)) {
        throw ValidationError("unmix tolerance must be non-negative and ridge scale positive");
    }
    if (init_ridge && !(*init_ridge > 0.0)) {
        throw ValidationError("initialization ridge must be positive");
    }
    if (combination_cap < 1) {
        throw ValidationError("combination cap must be positive");
    }
}

Matrix init_abundances(const Matrix& Y, const UnmixModel& model, const UnmixOptions& options) {
    if (Y.cols() != model.dimension()) {
        throw ValidationError("pixels have " + std::to_string(Y.cols()) +
                              " dimensions, bundle expects " + std::to_string(model.dimension()));
    }
    const auto M = static_cast<Index>(model.class_count());
    const std::size_t K = model.combination_count();
    std::vector<Eigen::LLT<Matrix>> normal;
    normal.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
        const Matrix& R = model.stacked_means(k);
        const Matrix gram = R * R.transpose();
        const double eps = options.init_ridge ? *options.init_ridge
                                              : options.init_ridge_scale * gram.trace() / static_cast<double>(M);
        normal.emplace_back(gram + std::max(eps, std::numeric_limits<double>::min()) * Matrix::Identity(M, M));
    }

    Matrix A(Y.rows(), M);
    parallel_for(static_cast<std::size_t>(Y.rows()), [&](std::size_t begin, std::size_t end) {
        Vector alpha(M), best_alpha(M);
        for (auto n = static_cast<Index>(begin); n < static_cast<Index>(end); ++n) {
            const Vector y = Y.row(n).transpose();
            double best = std::numeric_limits<double>::infinity();
            for (std::size_t k = 0; k < K; ++k) {
                const Matrix& R = model.stacked_means(k);
                alpha = project_simplex(normal[k].solve(R * y));
                const double err = (y - R.transpose() * alpha).squaredNorm();
                if (err < best) {
                    best = err;
                    best_alpha = alpha;
                }
            }
            A.row(n) = best_alpha.transpose();
        }
    });
    return A;
}

UnmixResult unmix_projected(const Matrix& Y, const UnmixModel& model, const UnmixOptions& options) {
    options.validate();
    if (!Y.allFinite()) {
        throw ValidationError("projected pixels contain non-finite values");
    }
    const Index N = Y.rows();
    const auto M = static_cast<Index>(model.class_count());
    const auto K = static_cast<Index>(model.combination_count());

    Matrix A = init_abundances(Y, model, options);
    Matrix gamma(N, K);
    Vector energy(N);
    parallel_for(static_cast<std::size_t>(N), [&](std::size_t begin, std::size_t end) {
        Workspace ws(model);
        Vector g(K);
        for (auto n = static_cast<Index>(begin); n < static_cast<Index>(end); ++n) {
            energy(n) = pixel_e_step(Y.row(n).transpose(), A.row(n).transpose(), model, n, ws, g);
            gamma.row(n) = g.transpose();
        }
    });

    UnmixDiagnostics diag;
    diag.combination_count = model.combination_count();
    diag.objective_trace.push_back(energy.sum());

    Vector tau = Vector::Constant(N, options.initial_step);
    Vector accepted_step = Vector::Zero(N);
    std::vector<unsigned char> active(static_cast<std::size_t>(N), 1);
    std::vector<int> failures(static_cast<std::size_t>(N), 0);

    for (int it = 0; it < options.max_outer_iters; ++it) {
        if (std::none_of(active.begin(), active.end(), [](unsigned char a) { return a != 0; })) break;
        accepted_step.setZero();

        parallel_for(static_cast<std::size_t>(N), [&](std::size_t begin, std::size_t end) {
            Workspace ws(model);
            Vector alpha(M), candidate(M), grad(M), g(K), new_gamma(K);
            for (auto n = static_cast<Index>(begin); n < static_cast<Index>(end); ++n) {
                const auto sn = static_cast<std::size_t>(n);
                if (!active[sn]) continue;
                const Vector y = Y.row(n).transpose();
                alpha = A.row(n).transpose();
                g = gamma.row(n).transpose();

                bool moved = false;
                double step = tau(n);
                for (int pass = 0; pass < options.m_step_iters; ++pass) {
                    pixel_gradient(y, alpha, g, model, n, ws, grad);
                    const double before = pixel_m_objective(y, alpha, g, model, n, ws);
                    bool accepted = false;
                    for (int attempt = 0; attempt <= options.max_step_shrinks; ++attempt) {
                        candidate = project_simplex(alpha - step * grad);
                        if (pixel_m_objective(y, candidate, g, model, n, ws) < before) {
                            alpha = candidate;
                            accepted_step(n) = step;
                            step *= options.step_growth;
                            accepted = true;
                            break;
                        }
                        step /= options.step_growth;
                    }
                    if (!accepted) break;
                    moved = true;
                }
                tau(n) = step;

                if (!moved) {
                    if (++failures[sn] >= 2) active[sn] = 0;
                    continue;
                }
                failures[sn] = 0;
                const double after = pixel_e_step(y, alpha, model, n, ws, new_gamma);
                if (after <= energy(n)) {
                    const double decrease = energy(n) - after;
                    const double scale = std::max(1.0, std::abs(energy(n)));
                    A.row(n) = alpha.transpose();
                    gamma.row(n) = new_gamma.transpose();
                    energy(n) = after;
                    if (decrease <= options.tolerance * scale) active[sn] = 0;
                } else {
                    // Rounding made E(A) tick up; keep the previous iterate.
                    accepted_step(n) = 0.0;
                    active[sn] = 0;
                }
            }
        });

        StepStats stats;
        for (Index n = 0; n < N; ++n) {
            const double s = accepted_step(n);
            if (s <= 0.0) continue;
            stats.min_step = stats.accepted == 0 ? s : std::min(stats.min_step, s);
            stats.max_step = stats.accepted == 0 ? s : std::max(stats.max_step, s);
            ++stats.accepted;
        }
        diag.steps.push_back(stats);
        diag.objective_trace.push_back(energy.sum());
        diag.outer_iterations = it + 1;
    }

    diag.unconverged_pixels =
        static_cast<std::size_t>(std::count(active.begin(), active.end(), static_cast<unsigned char>(1)));
    diag.converged = diag.unconverged_pixels == 0;
    if (!diag.converged) {
        diag.warnings.push_back("reached max_outer_iters (" + std::to_string(options.max_outer_iters) +
                                ") with " + std::to_string(diag.unconverged_pixels) +
                                " pixel(s) still improving");
    }

    return {AbundanceMatrix(std::move(A)), std::move(diag)};
}

UnmixResult unmix(const PixelBlock& pixels, const GmmBundle& bundle, const UnmixOptions& options) {
    const UnmixModel model(bundle, options.combination_cap);
    return unmix_projected(project(bundle.projection(), pixels.pixels()), model, options);
}

}  // namespace unmix_gmm
