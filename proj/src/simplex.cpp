#include "unmix_gmm/simplex.hpp"

#include <algorithm>
#include <functional>
#include <vector>

namespace unmix_gmm {

Vector project_simplex(const Vector& v) {
    const Index M = v.size();
    if (M == 0) {
        throw ValidationError("cannot project an empty vector onto the simplex");
    }
    if (!v.allFinite()) {
        throw ValidationError("cannot project a non-finite vector onto the simplex");
    }
    std::vector<double> u(v.data(), v.data() + M);
    std::sort(u.begin(), u.end(), std::greater<>());
    double cumulative = 0.0;
    double theta = 0.0;
    for (Index i = 0; i < M; ++i) {
        cumulative += u[static_cast<std::size_t>(i)];
        const double t = (cumulative - 1.0) / static_cast<double>(i + 1);
        if (u[static_cast<std::size_t>(i)] - t > 0.0) theta = t;
    }
    return (v.array() - theta).cwiseMax(0.0).matrix();
}

Matrix project_simplex_rows(const Matrix& A) {
    Matrix out(A.rows(), A.cols());
    for (Index n = 0; n < A.rows(); ++n) out.row(n) = project_simplex(A.row(n).transpose()).transpose();
    return out;
}

}  // namespace unmix_gmm
