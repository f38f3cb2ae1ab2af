#include "unmix_gmm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace unmix_gmm {

Vector total_abundance(const AbundanceMatrix& abundances) {
    return abundances.values().colwise().mean().transpose();
}

Vector mean_absolute_difference(const Matrix& estimate, const Matrix& truth) {
    if (estimate.rows() != truth.rows() || estimate.cols() != truth.cols()) {
        throw ValidationError("estimate is " + std::to_string(estimate.rows()) + "x" +
                              std::to_string(estimate.cols()) + ", truth is " +
                              std::to_string(truth.rows()) + "x" + std::to_string(truth.cols()));
    }
    if (estimate.rows() == 0) throw ValidationError("mean absolute difference of zero rows");
    return (estimate - truth).cwiseAbs().colwise().mean().transpose();
}

Correlation pearson(const Vector& x, const Vector& y) {
    if (x.size() != y.size()) throw ValidationError("correlation of vectors with different lengths");
    if (x.size() < 2) throw ValidationError("correlation needs at least two points");
    const Vector dx = x.array() - x.mean();
    const Vector dy = y.array() - y.mean();
    const double sxx = dx.squaredNorm();
    const double syy = dy.squaredNorm();
    Correlation c;
    if (sxx == 0.0 || syy == 0.0) {
        c.degenerate = true;
        return c;
    }
    c.r = dx.dot(dy) / std::sqrt(sxx * syy);
    c.r = std::clamp(c.r, -1.0, 1.0);
    c.r_squared = c.r * c.r;
    return c;
}

ClassMerge::ClassMerge(std::vector<Category> categories, const std::vector<std::string>& class_names) {
    std::map<std::string, std::size_t> assigned;
    for (std::size_t c = 0; c < categories.size(); ++c) {
        if (categories[c].name.empty()) throw ValidationError("merge category with an empty name");
        for (const auto& cls : categories[c].classes) {
            if (!assigned.emplace(cls, c).second) {
                throw ValidationError("class '" + cls + "' appears in more than one merge category");
            }
        }
        names_.push_back(std::move(categories[c].name));
    }
    for (const auto& cls : class_names) {
        auto it = assigned.find(cls);
        if (it == assigned.end()) throw ValidationError("class '" + cls + "' is not in any merge category");
        category_of_.push_back(it->second);
        assigned.erase(it);
    }
    if (!assigned.empty()) {
        throw ValidationError("merge names unknown class '" + assigned.begin()->first + "'");
    }
}

Vector ClassMerge::apply(const Vector& per_class) const {
    if (per_class.size() != static_cast<Index>(category_of_.size())) {
        throw ValidationError("merge expects " + std::to_string(category_of_.size()) + " classes, got " +
                              std::to_string(per_class.size()));
    }
    Vector out = Vector::Zero(static_cast<Index>(names_.size()));
    for (std::size_t j = 0; j < category_of_.size(); ++j) {
        out(static_cast<Index>(category_of_[j])) += per_class(static_cast<Index>(j));
    }
    return out;
}

Matrix ClassMerge::apply(const Matrix& per_class) const {
    if (per_class.cols() != static_cast<Index>(category_of_.size())) {
        throw ValidationError("merge expects " + std::to_string(category_of_.size()) + " classes, got " +
                              std::to_string(per_class.cols()));
    }
    Matrix out = Matrix::Zero(per_class.rows(), static_cast<Index>(names_.size()));
    for (std::size_t j = 0; j < category_of_.size(); ++j) {
        out.col(static_cast<Index>(category_of_[j])) += per_class.col(static_cast<Index>(j));
    }
    return out;
}

BlandAltman bland_altman(const Vector& estimate, const Vector& truth) {
    if (estimate.size() != truth.size() || estimate.size() == 0) {
        throw ValidationError("Bland-Altman needs equal-length, non-empty inputs");
    }
    const Vector diff = estimate - truth;
    BlandAltman out;
    out.mean_difference = diff.mean();
    out.sd = std::sqrt((diff.array() - out.mean_difference).square().mean());
    out.lower = out.mean_difference - 2.0 * out.sd;
    out.upper = out.mean_difference + 2.0 * out.sd;
    for (Index i = 0; i < diff.size(); ++i) out.points.push_back({truth(i), diff(i)});
    return out;
}

EvaluationReport evaluate_totals(const Matrix& estimated_totals, const Matrix& true_totals,
                                 std::vector<std::string> class_names) {
    if (static_cast<Index>(class_names.size()) != true_totals.cols()) {
        throw ValidationError("evaluation has " + std::to_string(class_names.size()) + " names for " +
                              std::to_string(true_totals.cols()) + " classes");
    }
    EvaluationReport report;
    report.mad = mean_absolute_difference(estimated_totals, true_totals);
    const Index M = true_totals.cols();
    report.r.resize(M);
    report.r_squared.resize(M);
    for (Index j = 0; j < M; ++j) {
        const Vector est = estimated_totals.col(j);
        const Vector tru = true_totals.col(j);
        if (true_totals.rows() >= 2) {
            const auto c = pearson(est, tru);
            report.r(j) = c.r;
            report.r_squared(j) = c.r_squared;
            report.degenerate.push_back(c.degenerate);
        } else {
            report.r(j) = 0.0;
            report.r_squared(j) = 0.0;
            report.degenerate.push_back(true);
        }
        report.bland_altman.push_back(bland_altman(est, tru));
    }
    report.mean_mad = report.mad.mean();
    report.mean_r_squared = report.r_squared.mean();
    report.class_names = std::move(class_names);
    return report;
}

}  // namespace unmix_gmm
