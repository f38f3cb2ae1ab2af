// Slow, direct reference computations used to check the library. None of
// these share code with src/.

#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Projection onto the simplex by trying every support set: on support S the
// closest point is v_S shifted by a constant so it sums to one.
inline Vector simplex_projection(const Vector& v) {
    const auto M = static_cast<int>(v.size());
    Vector best;
    double best_dist = std::numeric_limits<double>::infinity();
    for (unsigned mask = 1; mask < (1u << M); ++mask) {
        double sum = 0.0;
        int size = 0;
        for (int i = 0; i < M; ++i) {
            if (mask & (1u << i)) {
                sum += v(i);
                ++size;
            }
        }
        const double shift = (sum - 1.0) / size;
        Vector x = Vector::Zero(M);
        bool feasible = true;
        for (int i = 0; i < M; ++i) {
            if (mask & (1u << i)) {
                x(i) = v(i) - shift;
                if (x(i) < 0.0) feasible = false;
            }
        }
        if (!feasible) continue;
        const double dist = (x - v).squaredNorm();
        if (dist < best_dist) {
            best_dist = dist;
            best = x;
        }
    }
    return best;
}

// Plain-arithmetic Gaussian density via explicit inverse and determinant.
inline double gaussian_density(const Vector& y, const Vector& mu, const Matrix& sigma) {
    const auto d = static_cast<double>(y.size());
    const Vector r = y - mu;
    const double q = r.dot(sigma.inverse() * r);
    return std::exp(-0.5 * q) / std::sqrt(std::pow(2.0 * std::numbers::pi, d) * sigma.determinant());
}

inline double log_gaussian_density(const Vector& y, const Vector& mu, const Matrix& sigma) {
    const auto d = static_cast<double>(y.size());
    const Vector r = y - mu;
    return -0.5 * (d * std::log(2.0 * std::numbers::pi) + std::log(sigma.determinant()) +
                   r.dot(sigma.inverse() * r));
}

// Per-class mixture: weights, means (d), covariances (d x d).
struct ClassMixture {
    std::vector<double> weights;
    std::vector<Vector> means;
    std::vector<Matrix> covs;
};

struct Problem {
    std::vector<ClassMixture> classes;
    Matrix D;
};

// Combination tuples generated by nested counting, last class fastest.
inline std::vector<std::vector<int>> combinations(const Problem& p) {
    std::vector<std::vector<int>> out{{}};
    for (const auto& c : p.classes) {
        std::vector<std::vector<int>> next;
        for (const auto& prefix : out) {
            for (int k = 0; k < static_cast<int>(c.weights.size()); ++k) {
                auto t = prefix;
                t.push_back(k);
                next.push_back(t);
            }
        }
        out = next;
    }
    return out;
}

inline double prior(const Problem& p, const std::vector<int>& combo) {
    double pi = 1.0;
    for (std::size_t j = 0; j < combo.size(); ++j) pi *= p.classes[j].weights[combo[j]];
    return pi;
}

inline Vector mixed_mean(const Problem& p, const Vector& a, const std::vector<int>& combo) {
    Vector mu = Vector::Zero(p.D.rows());
    for (std::size_t j = 0; j < combo.size(); ++j) mu += a(j) * p.classes[j].means[combo[j]];
    return mu;
}

inline Matrix mixed_cov(const Problem& p, const Vector& a, const std::vector<int>& combo) {
    Matrix s = p.D;
    for (std::size_t j = 0; j < combo.size(); ++j) s += a(j) * a(j) * p.classes[j].covs[combo[j]];
    return s;
}

// -sum_n log sum_k pi_k N(y_n | mu_nk, Sigma_nk), densities summed directly.
inline double negative_log_likelihood(const Problem& p, const Matrix& Y, const Matrix& A) {
    const auto combos = combinations(p);
    double e = 0.0;
    for (Eigen::Index n = 0; n < Y.rows(); ++n) {
        const Vector a = A.row(n).transpose();
        const Vector y = Y.row(n).transpose();
        double s = 0.0;
        for (const auto& c : combos) s += prior(p, c) * gaussian_density(y, mixed_mean(p, a, c), mixed_cov(p, a, c));
        e -= std::log(s);
    }
    return e;
}

// Bayes rule with unnormalized densities.
inline Matrix responsibilities(const Problem& p, const Matrix& Y, const Matrix& A) {
    const auto combos = combinations(p);
    Matrix G(Y.rows(), static_cast<Eigen::Index>(combos.size()));
    for (Eigen::Index n = 0; n < Y.rows(); ++n) {
        const Vector a = A.row(n).transpose();
        const Vector y = Y.row(n).transpose();
        double total = 0.0;
        for (std::size_t k = 0; k < combos.size(); ++k) {
            const double w = prior(p, combos[k]) *
                             gaussian_density(y, mixed_mean(p, a, combos[k]), mixed_cov(p, a, combos[k]));
            G(n, static_cast<Eigen::Index>(k)) = w;
            total += w;
        }
        G.row(n) /= total;
    }
    return G;
}

// E_M with Gamma held fixed.
inline double expected_objective(const Problem& p, const Matrix& Y, const Matrix& A, const Matrix& G) {
    const auto combos = combinations(p);
    double e = 0.0;
    for (Eigen::Index n = 0; n < Y.rows(); ++n) {
        const Vector a = A.row(n).transpose();
        const Vector y = Y.row(n).transpose();
        for (std::size_t k = 0; k < combos.size(); ++k) {
            e -= G(n, static_cast<Eigen::Index>(k)) *
                 (std::log(prior(p, combos[k])) +
                  log_gaussian_density(y, mixed_mean(p, a, combos[k]), mixed_cov(p, a, combos[k])));
        }
    }
    return e;
}

// Central differences of E_M in every abundance entry.
inline Matrix finite_difference_gradient(const Problem& p, const Matrix& Y, const Matrix& A,
                                         const Matrix& G, double h) {
    Matrix grad(A.rows(), A.cols());
    for (Eigen::Index n = 0; n < A.rows(); ++n) {
        for (Eigen::Index j = 0; j < A.cols(); ++j) {
            Matrix up = A;
            Matrix down = A;
            up(n, j) += h;
            down(n, j) -= h;
            grad(n, j) = (expected_objective(p, Y, up, G) - expected_objective(p, Y, down, G)) / (2.0 * h);
        }
    }
    return grad;
}

// Leading eigenvectors of a symmetric PSD matrix by power iteration with
// deflation.
inline Matrix power_eigenvectors(Matrix S, int count, int iterations = 5000) {
    Matrix out(S.rows(), count);
    std::mt19937_64 rng(12345);
    std::normal_distribution<double> g;
    for (int c = 0; c < count; ++c) {
        Vector v(S.rows());
        for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = g(rng);
        v.normalize();
        for (int it = 0; it < iterations; ++it) {
            Vector w = S * v;
            w.normalize();
            v = w;
        }
        const double lambda = v.dot(S * v);
        out.col(c) = v;
        S -= lambda * v * v.transpose();
    }
    return out;
}

// Minimizes f over the probability simplex: coarse grid search for the
// basin, then compass search along the edge directions e_i - e_j with a
// shrinking step.
inline Vector minimize_on_simplex(const std::function<double(const Vector&)>& f, int M,
                                  int grid = 40, double final_step = 1e-10) {
    Vector best = Vector::Constant(M, 1.0 / M);
    double best_f = f(best);
    // Enumerate grid points with integer coordinates summing to `grid`.
    std::vector<int> counts(static_cast<std::size_t>(M), 0);
    std::function<void(int, int)> walk = [&](int j, int left) {
        if (j == M - 1) {
            counts[static_cast<std::size_t>(j)] = left;
            Vector a(M);
            for (int i = 0; i < M; ++i) a(i) = static_cast<double>(counts[static_cast<std::size_t>(i)]) / grid;
            const double v = f(a);
            if (v < best_f) {
                best_f = v;
                best = a;
            }
            return;
        }
        for (int c = 0; c <= left; ++c) {
            counts[static_cast<std::size_t>(j)] = c;
            walk(j + 1, left - c);
        }
    };
    walk(0, grid);

    double step = 1.0 / grid;
    while (step > final_step) {
        bool improved = false;
        for (int i = 0; i < M; ++i) {
            for (int j = 0; j < M; ++j) {
                if (i == j) continue;
                const double t = std::min(step, best(j));
                if (t <= 0.0) continue;
                Vector a = best;
                a(i) += t;
                a(j) -= t;
                const double v = f(a);
                if (v < best_f) {
                    best_f = v;
                    best = a;
                    improved = true;
                }
            }
        }
        if (!improved) step *= 0.5;
    }
    return best;
}

// Single-Gaussian (one component per class) pixel objective:
// 0.5 (y - R^T a)^T S(a)^-1 (y - R^T a) + 0.5 log det S(a), S(a) = sum a_j^2 C_j + D.
inline double single_gaussian_objective(const std::vector<Vector>& means, const std::vector<Matrix>& covs,
                                        const Matrix& D, const Vector& y, const Vector& a) {
    Vector mu = Vector::Zero(y.size());
    Matrix s = D;
    for (std::size_t j = 0; j < means.size(); ++j) {
        mu += a(static_cast<Eigen::Index>(j)) * means[j];
        s += a(static_cast<Eigen::Index>(j)) * a(static_cast<Eigen::Index>(j)) * covs[j];
    }
    const Vector r = y - mu;
    const Eigen::LDLT<Matrix> ldlt(s);
    return 0.5 * r.dot(ldlt.solve(r)) + 0.5 * ldlt.vectorD().array().log().sum();
}

}  // namespace oracle
