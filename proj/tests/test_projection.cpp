#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "unmix_gmm/projection.hpp"

using namespace unmix_gmm;

namespace {

Matrix random_matrix(Index rows, Index cols, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> g;
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = g(rng);
    return m;
}

SpectralLibrary uneven_library() {
    Matrix a = random_matrix(7, 5, 1);
    Matrix b = random_matrix(3, 5, 2);
    Matrix c = random_matrix(12, 5, 3);
    // Tag rows so the original order is observable.
    for (Index i = 0; i < a.rows(); ++i) a(i, 0) = static_cast<double>(i);
    for (Index i = 0; i < c.rows(); ++i) c(i, 0) = static_cast<double>(i);
    return SpectralLibrary({{"a", a}, {"b", b}, {"c", c}});
}

}  // namespace

TEST_CASE("balanced subsample keeps min class size and row order") {
    const auto lib = uneven_library();
    const auto sub = balanced_subsample(lib, 42);
    REQUIRE(sub.class_count() == 3);
    for (std::size_t j = 0; j < 3; ++j) CHECK(sub[j].spectra.rows() == 3);
    CHECK(sub[1].spectra == lib[1].spectra);
    for (std::size_t j : {0u, 2u}) {
        for (Index i = 1; i < 3; ++i) CHECK(sub[j].spectra(i, 0) > sub[j].spectra(i - 1, 0));
    }
    const auto again = balanced_subsample(lib, 42);
    CHECK(again[0].spectra == sub[0].spectra);
    CHECK(again[2].spectra == sub[2].spectra);
}

TEST_CASE("PCA basis matches power iteration on the sample covariance") {
    Matrix X = random_matrix(200, 6, 9);
    // Give the data distinct variances along the axes.
    for (Index j = 0; j < 6; ++j) X.col(j) *= static_cast<double>(6 - j);
    const auto model = fit_pca(X, 3);
    const Vector mean = X.colwise().mean().transpose();
    CHECK((model.center() - mean).norm() < 1e-12);
    const Matrix C = X.rowwise() - mean.transpose();
    const Matrix S = C.transpose() * C / static_cast<double>(X.rows() - 1);
    const Matrix ref = oracle::power_eigenvectors(S, 3);
    for (Index c = 0; c < 3; ++c) {
        CHECK(std::abs(std::abs(model.basis().col(c).dot(ref.col(c))) - 1.0) < 1e-8);
        Index arg;
        model.basis().col(c).cwiseAbs().maxCoeff(&arg);
        CHECK(model.basis()(arg, c) > 0.0);
    }
    CHECK((model.basis().transpose() * model.basis() - Matrix::Identity(3, 3)).norm() < 1e-10);
}

TEST_CASE("PCA rejects dimensions beyond the data rank") {
    // Three points span a 2-D affine subspace.
    Matrix X = random_matrix(3, 5, 4);
    CHECK_NOTHROW(fit_pca(X, 2));
    CHECK_THROWS_WITH_AS(fit_pca(X, 3), doctest::Contains("achievable rank is 2"), ValidationError);
}

TEST_CASE("projection is affine and preserves convex combinations") {
    Matrix X = random_matrix(40, 8, 5);
    const auto model = fit_pca(X, 4);
    const Matrix Z = project(model, X);
    CHECK(Z.rows() == 40);
    CHECK(Z.cols() == 4);
    const Vector w = (Vector(3) << 0.2, 0.5, 0.3).finished();
    const Vector mix = w(0) * X.row(0) + w(1) * X.row(1) + w(2) * X.row(2);
    const Matrix zmix = project(model, mix.transpose());
    const Vector expected = w(0) * Z.row(0) + w(1) * Z.row(1) + w(2) * Z.row(2);
    CHECK((zmix.row(0).transpose() - expected).norm() < 1e-12);
    CHECK_THROWS_AS(project(model, Matrix::Zero(2, 7)), ValidationError);

    const auto full = fit_pca(X, 8);
    CHECK((reconstruct(full, project(full, X)) - X).norm() < 1e-10);
}

TEST_CASE("library projection is deterministic per seed") {
    const auto lib = uneven_library();
    const auto a = fit_library_projection(lib, 2, 3);
    const auto b = fit_library_projection(lib, 2, 3);
    CHECK(a == b);
}
