#pragma once

#include "unmix_gmm/core.hpp"

namespace unmix_gmm {

/// Euclidean projection of v onto {x >= 0, sum(x) = 1} by sorting and
/// thresholding (Duchi et al. 2008), O(M log M).
Vector project_simplex(const Vector& v);

/// Row-wise project_simplex.
Matrix project_simplex_rows(const Matrix& A);

}  // namespace unmix_gmm
