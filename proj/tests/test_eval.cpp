#include <doctest.h>

#include <random>

#include "unmix_gmm/eval.hpp"

using namespace unmix_gmm;

TEST_CASE("total abundance") {
    Matrix one(1, 3);
    one << 0.2, 0.3, 0.5;
    CHECK(total_abundance(AbundanceMatrix(one)) == one.row(0).transpose());
    Matrix checker(4, 2);
    checker << 1, 0, 0, 1, 1, 0, 0, 1;
    const Vector t = total_abundance(AbundanceMatrix(checker));
    CHECK(t(0) == 0.5);
    CHECK(t(1) == 0.5);
    const Vector u = total_abundance(AbundanceMatrix(Matrix::Constant(5, 4, 0.25)));
    CHECK((u.array() - 0.25).abs().maxCoeff() < 1e-15);
}

TEST_CASE("mean absolute difference") {
    Matrix est(1, 3), gt(1, 3);
    est << 0.3, 0.3, 0.4;
    gt << 0.2, 0.4, 0.4;
    const Vector m = mean_absolute_difference(est, gt);
    CHECK(m(0) == doctest::Approx(0.1));
    CHECK(m(2) == 0.0);
    CHECK(mean_absolute_difference(gt, gt).isZero());
    CHECK_THROWS_AS(mean_absolute_difference(est, Matrix::Zero(2, 3)), ValidationError);
}

TEST_CASE("Pearson correlation") {
    const Vector x = (Vector(5) << 0.1, 0.4, 0.2, 0.8, 0.5).finished();
    CHECK(pearson(x, x).r == doctest::Approx(1.0));
    const Vector neg = (-x).array() + 2.0;
    const auto c = pearson(neg, x);
    CHECK(c.r == doctest::Approx(-1.0));
    CHECK(c.r_squared == doctest::Approx(1.0));
    const auto flat = pearson(Vector::Constant(5, 0.3), x);
    CHECK(flat.degenerate);
    CHECK(flat.r == 0.0);

    std::mt19937_64 rng(1);
    std::normal_distribution<double> g;
    Vector a(30), b(30);
    for (int i = 0; i < 30; ++i) {
        a(i) = g(rng);
        b(i) = 0.5 * a(i) + g(rng);
    }
    // Textbook formula with raw sums.
    const double n = 30.0;
    const double sa = a.sum(), sb = b.sum(), sab = a.dot(b), saa = a.squaredNorm(), sbb = b.squaredNorm();
    const double r = (n * sab - sa * sb) / std::sqrt((n * saa - sa * sa) * (n * sbb - sb * sb));
    CHECK(std::abs(pearson(a, b).r - r) < 1e-12);
}

TEST_CASE("class merge") {
    const std::vector<std::string> classes{"turfgrass", "tree", "npv", "soil", "paved", "roof"};
    const ClassMerge merge({{"green vegetation", {"turfgrass", "tree"}},
                            {"pervious", {"npv", "soil"}},
                            {"impervious", {"paved", "roof"}}},
                           classes);
    const Vector merged = merge.apply(Vector(Vector::Constant(6, 1.0 / 6.0)));
    CHECK((merged.array() - 1.0 / 3.0).abs().maxCoeff() < 1e-15);

    const ClassMerge identity({{"a", {"a"}}, {"b", {"b"}}}, {"a", "b"});
    const Vector v = (Vector(2) << 0.3, 0.7).finished();
    CHECK(identity.apply(v) == v);

    CHECK_THROWS_AS(ClassMerge({{"x", {"a"}}}, {"a", "b"}), ValidationError);
    CHECK_THROWS_AS(ClassMerge({{"x", {"a", "b"}}, {"y", {"b"}}}, {"a", "b"}), ValidationError);
    CHECK_THROWS_AS(ClassMerge({{"x", {"a", "c"}}}, {"a"}), ValidationError);
}

TEST_CASE("merge commutes with totals, MAD does not") {
    Matrix A(3, 4);
    A << 0.1, 0.2, 0.3, 0.4, 0.5, 0.5, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25;
    const ClassMerge m({{"x", {"a", "b"}}, {"y", {"c", "d"}}}, {"a", "b", "c", "d"});
    const Vector lhs = m.apply(total_abundance(AbundanceMatrix(A)));
    const Vector rhs = total_abundance(AbundanceMatrix(m.apply(A)));
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);

    // Two images; errors cancel inside a category for image 1.
    Matrix est(2, 4), gt(2, 4);
    est << 0.3, 0.2, 0.25, 0.25, 0.25, 0.25, 0.25, 0.25;
    gt << 0.2, 0.3, 0.25, 0.25, 0.25, 0.25, 0.35, 0.15;
    const Vector merged_mad = mean_absolute_difference(m.apply(est), m.apply(gt));
    const Vector summed_mad = m.apply(Vector(mean_absolute_difference(est, gt)));
    CHECK(merged_mad(0) == doctest::Approx(0.0));
    CHECK(summed_mad(0) == doctest::Approx(0.1));
    CHECK(merged_mad(1) == doctest::Approx(0.0));
    CHECK(summed_mad(1) == doctest::Approx(0.1));
    const auto report = evaluate_totals(m.apply(est), m.apply(gt), m.category_names());
    CHECK(report.mad == merged_mad);
}

TEST_CASE("Bland-Altman statistics") {
    const Vector gt = (Vector(2) << 0.3, 0.5).finished();
    const Vector est = (Vector(2) << 0.4, 0.4).finished();
    const auto ba = bland_altman(est, gt);
    CHECK(ba.mean_difference == doctest::Approx(0.0));
    CHECK(ba.sd == doctest::Approx(0.1));
    CHECK(ba.upper == doctest::Approx(0.2));
    CHECK(ba.lower == doctest::Approx(-0.2));
    REQUIRE(ba.points.size() == 2);
    CHECK(ba.points[0].truth == 0.3);
    CHECK(ba.points[0].difference == doctest::Approx(0.1));

    const auto same = bland_altman(gt, gt);
    CHECK(same.mean_difference == 0.0);
    CHECK(same.sd == 0.0);

    const Vector shifted = est.array() + 0.05;
    const auto s = bland_altman(shifted, gt);
    CHECK(s.mean_difference == doctest::Approx(0.05));
    CHECK(s.sd == doctest::Approx(ba.sd));
}

TEST_CASE("metrics are invariant to image order") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u;
    Matrix est(6, 3), gt(6, 3);
    for (Index i = 0; i < 6; ++i)
        for (Index j = 0; j < 3; ++j) {
            est(i, j) = u(rng);
            gt(i, j) = u(rng);
        }
    const auto a = evaluate_totals(est, gt, {"a", "b", "c"});
    const Eigen::PermutationMatrix<Eigen::Dynamic> perm(Eigen::VectorXi{{3, 0, 5, 1, 4, 2}});
    const auto b = evaluate_totals(perm * est, perm * gt, {"a", "b", "c"});
    CHECK((a.mad - b.mad).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((a.r_squared - b.r_squared).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(a.mad.minCoeff() >= 0.0);
}
