// Agreement between estimated and true abundances.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "unmix_gmm/core.hpp"

namespace unmix_gmm {

/// Per-class mean abundance over the pixels of an image.
Vector total_abundance(const AbundanceMatrix& abundances);

/// Mean absolute difference per class.
Vector mean_absolute_difference(const Matrix& estimate, const Matrix& truth);

struct Correlation {
    double r = 0.0;
    double r_squared = 0.0;
    bool degenerate = false;  // one side has zero variance; r is reported as 0
};

Correlation pearson(const Vector& x, const Vector& y);

/// Maps classes onto coarser categories; abundances of a category are the sum
/// over its member classes.
class ClassMerge {
public:
    struct Category {
        std::string name;
        std::vector<std::string> classes;
    };

    ClassMerge(std::vector<Category> categories, const std::vector<std::string>& class_names);

    std::size_t category_count() const noexcept { return names_.size(); }
    const std::vector<std::string>& category_names() const noexcept { return names_; }
    const std::vector<std::size_t>& category_of() const noexcept { return category_of_; }

    Vector apply(const Vector& per_class) const;
    Matrix apply(const Matrix& per_class) const;  // rows are pixels or images

private:
    std::vector<std::string> names_;
    std::vector<std::size_t> category_of_;
};

struct BlandAltmanPoint {
    double truth = 0.0;
    double difference = 0.0;  // estimate - truth
};

struct BlandAltman {
    double mean_difference = 0.0;
    double sd = 0.0;  // population standard deviation of the differences
    double lower = 0.0;
    double upper = 0.0;
    std::vector<BlandAltmanPoint> points;
};

/// Differences plotted against the true value, limits mean +- 2 sd.
BlandAltman bland_altman(const Vector& estimate, const Vector& truth);

/// Image-level totals for a set of images; rows are images.
struct EvaluationReport {
    std::vector<std::string> class_names;
    Vector mad;  // per class, over images
    Vector r;
    Vector r_squared;
    std::vector<bool> degenerate;
    double mean_mad = 0.0;
    double mean_r_squared = 0.0;
    std::vector<BlandAltman> bland_altman;  // per class
};

EvaluationReport evaluate_totals(const Matrix& estimated_totals, const Matrix& true_totals,
                                 std::vector<std::string> class_names);

}  // namespace unmix_gmm
