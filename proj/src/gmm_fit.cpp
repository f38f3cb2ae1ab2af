#include "unmix_gmm/gmm_fit.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "unmix_gmm/parallel.hpp"
#include "unmix_gmm/projection.hpp"

namespace unmix_gmm {

namespace {

constexpr double kCollapseCount = 2.0;

struct Moments {
    Vector mean;
    Matrix covariance;  // maximum-likelihood (divide by N)
};

Moments moments(const Matrix& X) {
    Moments m;
    m.mean = X.colwise().mean().transpose();
    const Matrix centered = X.rowwise() - m.mean.transpose();
    m.covariance = centered.transpose() * centered / static_cast<double>(X.rows());
    m.covariance = 0.5 * (m.covariance + m.covariance.transpose());
    return m;
}

// Cached Cholesky data for evaluating one Gaussian at many points.
struct GaussianEval {
    Eigen::LLT<Matrix> llt;
    double log_norm = 0.0;  // -0.5 (d log 2pi + log det Sigma)
    Vector mean;

    explicit GaussianEval(const GaussianComponent& c) : llt(c.covariance), mean(c.mean) {
        if (llt.info() != Eigen::Success) {
            throw NumericError("mixture component covariance is not positive definite");
        }
        const double logdet = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
        log_norm = -0.5 * (static_cast<double>(mean.size()) * std::log(2.0 * std::numbers::pi) + logdet);
    }

    Vector log_density(const Matrix& X) const {
        Matrix diff = (X.rowwise() - mean.transpose()).transpose();
        llt.matrixL().solveInPlace(diff);
        return (log_norm - 0.5 * diff.colwise().squaredNorm().array()).matrix().transpose();
    }
};

// Row-wise log-sum-exp of an N x K matrix of log weights.
Vector log_sum_exp_rows(const Matrix& logw) {
    Vector out(logw.rows());
    for (Index n = 0; n < logw.rows(); ++n) {
        const double mx = logw.row(n).maxCoeff();
        if (!std::isfinite(mx)) {
            out(n) = mx;
            continue;
        }
        out(n) = mx + std::log((logw.row(n).array() - mx).exp().sum());
    }
    return out;
}

// k-means++ seeding followed by Lloyd iterations; returns hard labels.
std::vector<int> kmeans_labels(const Matrix& X, int K, int iterations, Rng& rng) {
    const Index N = X.rows();
    Matrix centers(K, X.cols());
    std::uniform_int_distribution<Index> first(0, N - 1);
    centers.row(0) = X.row(first(rng));
    Vector dist2 = (X.rowwise() - centers.row(0)).rowwise().squaredNorm();
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int k = 1; k < K; ++k) {
        const double total = dist2.sum();
        Index chosen = 0;
        if (total > 0.0) {
            const double target = unit(rng) * total;
            double acc = 0.0;
            chosen = N - 1;
            for (Index n = 0; n < N; ++n) {
                acc += dist2(n);
                if (acc > target && dist2(n) > 0.0) {
                    chosen = n;
                    break;
                }
            }
        } else {
            chosen = first(rng);
        }
        centers.row(k) = X.row(chosen);
        dist2 = dist2.cwiseMin((X.rowwise() - centers.row(k)).rowwise().squaredNorm());
    }

    std::vector<int> labels(static_cast<std::size_t>(N), 0);
    for (int it = 0; it <= iterations; ++it) {
        bool changed = false;
        for (Index n = 0; n < N; ++n) {
            Index best = 0;
            (centers.rowwise() - X.row(n)).rowwise().squaredNorm().minCoeff(&best);
            if (labels[static_cast<std::size_t>(n)] != static_cast<int>(best)) {
                labels[static_cast<std::size_t>(n)] = static_cast<int>(best);
                changed = true;
            }
        }
        if (it == iterations || (it > 0 && !changed)) break;
        Matrix sums = Matrix::Zero(K, X.cols());
        Vector counts = Vector::Zero(K);
        for (Index n = 0; n < N; ++n) {
            sums.row(labels[static_cast<std::size_t>(n)]) += X.row(n);
            counts(labels[static_cast<std::size_t>(n)]) += 1.0;
        }
        for (int k = 0; k < K; ++k) {
            if (counts(k) > 0.0) centers.row(k) = sums.row(k) / counts(k);
        }
    }
    return labels;
}

// Sets weights, means, and ridge covariances from responsibilities.
// Returns effective counts N_k.
Vector m_step(const Matrix& X, const Matrix& gamma, double eps,
              std::vector<GaussianComponent>& comps) {
    const Index N = X.rows();
    const Index d = X.cols();
    const Vector counts = gamma.colwise().sum().transpose();
    const Matrix ridge = eps * Matrix::Identity(d, d);
    for (Index k = 0; k < gamma.cols(); ++k) {
        auto& c = comps[static_cast<std::size_t>(k)];
        c.weight = counts(k) / static_cast<double>(N);
        if (counts(k) <= 0.0) continue;  // repaired or kept from the previous step
        c.mean = (X.transpose() * gamma.col(k)) / counts(k);
        const Matrix centered = X.rowwise() - c.mean.transpose();
        Matrix cov = centered.transpose() * (centered.array().colwise() * gamma.col(k).array()).matrix();
        cov /= counts(k);
        c.covariance = 0.5 * (cov + cov.transpose()) + ridge;
    }
    return counts;
}

void normalize_weights(std::vector<GaussianComponent>& comps) {
    double total = 0.0;
    for (const auto& c : comps) total += c.weight;
    for (auto& c : comps) c.weight /= total;
}

// Re-seeds collapsed components; returns true if any was touched.
bool repair_collapsed(const Matrix& X, const Vector& counts, const Moments& pooled, double eps,
                      std::vector<GaussianComponent>& comps) {
    const int K = static_cast<int>(comps.size());
    std::vector<int> collapsed;
    for (int k = 0; k < K; ++k) {
        if (counts(k) < kCollapseCount) collapsed.push_back(k);
    }
    if (collapsed.empty()) return false;

    const Matrix ridge = eps * Matrix::Identity(X.cols(), X.cols());
    for (int k : collapsed) {
        Vector nearest = Vector::Constant(X.rows(), std::numeric_limits<double>::infinity());
        for (int j = 0; j < K; ++j) {
            if (j == k) continue;
            nearest = nearest.cwiseMin((X.rowwise() - comps[static_cast<std::size_t>(j)].mean.transpose())
                                           .rowwise()
                                           .squaredNorm());
        }
        Index far = 0;
        if (K > 1) nearest.maxCoeff(&far);
        auto& c = comps[static_cast<std::size_t>(k)];
        c.mean = X.row(far).transpose();
        c.covariance = pooled.covariance + ridge;
    }
    double kept = 0.0;
    for (int k = 0; k < K; ++k) {
        if (counts(k) >= kCollapseCount) kept += comps[static_cast<std::size_t>(k)].weight;
    }
    const double reseeded_mass = static_cast<double>(collapsed.size()) / K;
    for (int k = 0; k < K; ++k) {
        auto& c = comps[static_cast<std::size_t>(k)];
        if (counts(k) < kCollapseCount) {
            c.weight = 1.0 / K;
        } else if (kept > 0.0) {
            c.weight *= (1.0 - reseeded_mass) / kept;
        }
    }
    normalize_weights(comps);
    return true;
}

// E-step of the ridge-penalized objective. Fills gamma, returns the objective.
double penalized_e_step(const Matrix& X, const std::vector<GaussianComponent>& comps, double eps,
                        Matrix& gamma) {
    const Index K = static_cast<Index>(comps.size());
    Matrix logw(X.rows(), K);
    for (Index k = 0; k < K; ++k) {
        const auto& c = comps[static_cast<std::size_t>(k)];
        const GaussianEval g(c);
        const Matrix inv = g.llt.solve(Matrix::Identity(c.covariance.rows(), c.covariance.cols()));
        const double penalty = -0.5 * eps * inv.trace();
        const double logw_k = c.weight > 0.0 ? std::log(c.weight) : -std::numeric_limits<double>::infinity();
        logw.col(k) = (g.log_density(X).array() + logw_k + penalty).matrix();
    }
    const Vector lse = log_sum_exp_rows(logw);
    gamma = (logw.colwise() - lse).array().exp().matrix();
    return lse.sum();
}

}  // namespace

GmmFit fit_gmm_em(const Matrix& X, int K, std::uint64_t seed, const EmOptions& options) {
    const Index N = X.rows();
    const Index d = X.cols();
    if (K < 1) {
        throw ValidationError("number of components must be at least 1");
    }
    if (d < 1) {
        throw ValidationError("cannot fit a mixture to zero-dimensional data");
    }
    if (N < K) {
        throw ValidationError("cannot fit " + std::to_string(K) + " components to " +
                              std::to_string(N) + " points");
    }
    if (!X.allFinite()) {
        throw ValidationError("mixture training data has non-finite values");
    }

    const Moments pooled = moments(X);
    GmmFit fit;
    fit.regularization = options.regularization_scale * pooled.covariance.trace() / static_cast<double>(d);
    if (!(fit.regularization > 0.0)) {
        // Degenerate data (all points equal): fall back to an absolute ridge.
        fit.regularization = options.regularization_scale;
    }
    const double eps = fit.regularization;

    auto rng = make_rng(seed);
    const auto labels = kmeans_labels(X, K, options.kmeans_iterations, rng);
    Matrix gamma = Matrix::Zero(N, K);
    for (Index n = 0; n < N; ++n) gamma(n, labels[static_cast<std::size_t>(n)]) = 1.0;

    fit.components.assign(static_cast<std::size_t>(K),
                          GaussianComponent{1.0 / K, pooled.mean, pooled.covariance});
    int repairs = 0;
    double previous = -std::numeric_limits<double>::infinity();
    for (int iter = 0; iter < options.max_iterations; ++iter) {
        const Vector counts = m_step(X, gamma, eps, fit.components);
        bool repaired = false;
        if (repairs < options.max_reinitializations) {
            repaired = repair_collapsed(X, counts, pooled, eps, fit.components);
        }
        if (repaired) {
            ++repairs;
            fit.reinitialized_at.push_back(iter);
        } else {
            for (auto& c : fit.components) c.weight = std::max(c.weight, 1e-300);
            normalize_weights(fit.components);
        }

        const double objective = penalized_e_step(X, fit.components, eps, gamma);
        fit.objective_trace.push_back(objective);
        fit.iterations = iter + 1;
        if (iter > 0 && !repaired) {
            assert(objective >= previous - 1e-8 * std::max(1.0, std::abs(previous)));
            if (std::abs(objective - previous) < options.tolerance * std::max(1.0, std::abs(previous))) {
                fit.converged = true;
                break;
            }
        }
        previous = objective;
    }

    fit.log_likelihood = gmm_log_densities(fit.components, X).sum();
    return fit;
}

Vector gmm_log_densities(const std::vector<GaussianComponent>& components, const Matrix& X) {
    Matrix logw(X.rows(), static_cast<Index>(components.size()));
    for (std::size_t k = 0; k < components.size(); ++k) {
        const GaussianEval g(components[k]);
        logw.col(static_cast<Index>(k)) = (g.log_density(X).array() + std::log(components[k].weight)).matrix();
    }
    return log_sum_exp_rows(logw);
}

std::vector<int> assign_folds(std::size_t n, int folds, std::uint64_t seed) {
    if (folds < 2) {
        throw ValidationError("cross-validation needs at least 2 folds");
    }
    if (n < static_cast<std::size_t>(folds)) {
        throw ValidationError("cannot split " + std::to_string(n) + " points into " +
                              std::to_string(folds) + " non-empty folds");
    }
    auto rng = make_rng(seed, 0xF01D);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i);
        std::swap(perm[i], perm[pick(rng)]);
    }
    std::vector<int> fold_of(n);
    for (std::size_t pos = 0; pos < n; ++pos) {
        fold_of[perm[pos]] = static_cast<int>(pos * static_cast<std::size_t>(folds) / n);
    }
    return fold_of;
}

std::vector<double> cvic_fold_scores(const Matrix& X, int K, std::span<const int> fold_of_row,
                                     int folds, std::uint64_t seed, const EmOptions& options) {
    if (fold_of_row.size() != static_cast<std::size_t>(X.rows())) {
        throw ValidationError("fold assignment length does not match the data");
    }
    std::vector<double> scores(static_cast<std::size_t>(folds), 0.0);
    for (int v = 0; v < folds; ++v) {
        std::vector<Index> train, test;
        for (Index n = 0; n < X.rows(); ++n) {
            (fold_of_row[static_cast<std::size_t>(n)] == v ? test : train).push_back(n);
        }
        if (test.empty()) {
            throw ValidationError("cross-validation fold " + std::to_string(v) + " has 0 points");
        }
        const Matrix Xtrain = X(train, Eigen::all);
        const Matrix Xtest = X(test, Eigen::all);
        const GmmFit fit = fit_gmm_em(Xtrain, K, seed, options);
        scores[static_cast<std::size_t>(v)] = gmm_log_densities(fit.components, Xtest).sum();
    }
    return scores;
}

double cvic_score(const Matrix& X, int K, int folds, std::uint64_t seed, const EmOptions& options) {
    const auto fold_of = assign_folds(static_cast<std::size_t>(X.rows()), folds, seed);
    double total = 0.0;
    for (double s : cvic_fold_scores(X, K, fold_of, folds, seed, options)) total += s;
    return total;
}

void CvicConfig::validate() const {
    if (folds < 2) throw ValidationError("CVIC needs at least 2 folds");
    if (candidates.empty()) throw ValidationError("CVIC candidate list is empty");
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (candidates[i] < 1) throw ValidationError("CVIC candidates must be positive");
        if (i > 0 && candidates[i] <= candidates[i - 1]) {
            throw ValidationError("CVIC candidates must be strictly increasing");
        }
    }
    if (!(threshold >= 0.0 && threshold < 1.0)) {
        throw ValidationError("CVIC threshold must lie in [0, 1)");
    }
    if (repeats < 1) throw ValidationError("CVIC repeats must be at least 1");
}

int apply_threshold_rule(std::span<const double> scores, std::span<const int> candidates,
                         double threshold) {
    if (scores.empty() || scores.size() != candidates.size()) {
        throw ValidationError("score and candidate lists must be non-empty and equally long");
    }
    const double best = *std::max_element(scores.begin(), scores.end());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (std::abs(scores[i] - best) <= threshold * std::abs(best)) return candidates[i];
    }
    return candidates.back();  // unreachable: the maximum always qualifies
}

std::vector<int> modal_tuple(const std::vector<std::vector<int>>& tuples, int* count) {
    if (tuples.empty()) {
        throw ValidationError("no tuples to take the mode of");
    }
    std::map<std::vector<int>, int> counts;  // ordered: first max is lexicographically smallest
    for (const auto& t : tuples) ++counts[t];
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
        if (it->second > best->second) best = it;
    }
    if (count) *count = best->second;
    return best->first;
}

CvicResult select_components(const std::vector<Matrix>& projected_classes,
                             const std::vector<std::string>& class_names,
                             const CvicConfig& config) {
    config.validate();
    if (projected_classes.size() != class_names.size() || projected_classes.empty()) {
        throw ValidationError("select_components needs one name per class");
    }
    const std::size_t M = projected_classes.size();
    const std::size_t C = config.candidates.size();
    const auto R = static_cast<std::size_t>(config.repeats);

    // One task per (repeat, class, candidate); reduced in index order.
    std::vector<double> scores(R * M * C, 0.0);
    parallel_for(scores.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t t = begin; t < end; ++t) {
            const std::size_t r = t / (M * C);
            const std::size_t j = (t / C) % M;
            const std::size_t c = t % C;
            scores[t] = cvic_score(projected_classes[j], config.candidates[c], config.folds,
                                   config.seed + r, config.em);
        }
    });

    CvicResult result;
    result.class_names = class_names;
    result.candidates = config.candidates;
    result.threshold = config.threshold;
    std::vector<std::vector<int>> tuples;
    for (std::size_t r = 0; r < R; ++r) {
        CvicRepeat rep;
        rep.seed = config.seed + r;
        for (std::size_t j = 0; j < M; ++j) {
            const auto first = scores.begin() + static_cast<std::ptrdiff_t>((r * M + j) * C);
            rep.scores.emplace_back(first, first + static_cast<std::ptrdiff_t>(C));
            rep.chosen.push_back(
                apply_threshold_rule(rep.scores.back(), config.candidates, config.threshold));
        }
        tuples.push_back(rep.chosen);
        result.repeats.push_back(std::move(rep));
    }
    result.chosen = modal_tuple(tuples, &result.modal_count);
    return result;
}

std::vector<Matrix> project_library(const SpectralLibrary& library,
                                    const ProjectionModel& projection) {
    std::vector<Matrix> out;
    out.reserve(library.class_count());
    for (const auto& c : library.classes()) out.push_back(project(projection, c.spectra));
    return out;
}

GmmBundle fit_bundle(const SpectralLibrary& library, const ProjectionModel& projection,
                     std::span<const int> chosen_K, std::uint64_t seed, const EmOptions& options) {
    if (chosen_K.size() != library.class_count()) {
        throw ValidationError("need one component count per class (" +
                              std::to_string(library.class_count()) + "), got " +
                              std::to_string(chosen_K.size()));
    }
    const auto projected = project_library(library, projection);
    std::vector<std::vector<GaussianComponent>> per_class(library.class_count());
    parallel_for(per_class.size(), [&](std::size_t begin, std::size_t end) {
        for (std::size_t j = begin; j < end; ++j) {
            per_class[j] = fit_gmm_em(projected[j], chosen_K[j], seed + j, options).components;
        }
    });
    const Index d = projection.dimension();
    return GmmBundle(library.class_names(), std::move(per_class),
                     default_noise_variance * Matrix::Identity(d, d), projection);
}

}  // namespace unmix_gmm
