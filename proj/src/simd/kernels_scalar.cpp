#include "record/simd/kernels.hpp"

#include <limits>

namespace record::simd {
namespace {

double dot(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

double sum(const double* x, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += x[i];
    return acc;
}

double max(const double* x, std::size_t n) {
    double m = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) m = x[i] > m ? x[i] : m;
    return m;
}

void axpy(double a, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

void scale(double a, double* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) x[i] *= a;
}

void mul(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void one_minus(const double* a, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = 1.0 - a[i];
}

void guidance(const double* u, const double* c, double s, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = u[i] + s * (c[i] - u[i]);
}

}  // namespace

const KernelTable& scalar_kernels() {
    static const KernelTable table{"scalar", dot, sum, max, axpy, scale, mul, one_minus, guidance};
    return table;
}

}  // namespace record::simd
