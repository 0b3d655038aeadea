#include "record/tensor.hpp"

#include <cmath>

#include "record/simd/kernels.hpp"

namespace record {

Matrix matmul_transposed(const Matrix& a, const Matrix& b, double scale) {
    if (a.cols() != b.cols()) throw ShapeMismatch("matmul_transposed: inner dimensions differ");
    Matrix c(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto ai = a.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) c(i, j) = scale * simd::dot(ai, b.row(j));
    }
    return c;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
    if (a.cols() != b.rows()) throw ShapeMismatch("matmul: inner dimensions differ");
    Matrix c(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        auto ci = c.row(i);
        for (std::size_t k = 0; k < a.cols(); ++k) simd::axpy(a(i, k), b.row(k), ci);
    }
    return c;
}

void softmax_rows(Matrix& m) {
    for (std::size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        const double peak = simd::max(row);
        for (double& v : row) v = std::exp(v - peak);
        simd::scale(1.0 / simd::sum(row), row);
    }
}

bool all_finite(std::span<const double> values) noexcept {
    for (double v : values)
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace record
