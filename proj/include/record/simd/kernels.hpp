#pragma once

// Data-parallel inner loops used by the attention, guidance and loss code.
//
// Every kernel has a scalar reference implementation; vector variants
// (AVX2+FMA on x86-64, NEON on aarch64) are selected once per process at
// first use. Set RECORD_SIMD=scalar to force the reference path.
//
// Elementwise kernels (mul, one_minus, copy-like ops, max) are bit-identical
// across variants. Reductions (dot, sum) and fused updates (axpy, guidance)
// may differ in the last bits because of summation order and FMA.

#include <cstddef>
#include <span>
#include <string_view>

namespace record::simd {

struct KernelTable {
    const char* name;
    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* x, std::size_t n);
    double (*max)(const double* x, std::size_t n);
    // y += a * x
    void (*axpy)(double a, const double* x, double* y, std::size_t n);
    // x *= a
    void (*scale)(double a, double* x, std::size_t n);
    // out = a * b (elementwise)
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
    // out = 1 - a
    void (*one_minus)(const double* a, double* out, std::size_t n);
    // out = u + s * (c - u)
    void (*guidance)(const double* u, const double* c, double s, double* out, std::size_t n);
};

const KernelTable& scalar_kernels();
// nullptr when the variant was not compiled in or the CPU lacks it.
const KernelTable* avx2_kernels();
const KernelTable* neon_kernels();

/// The table used by the library. Chosen on first call.
const KernelTable& active();

/// Forces a table by name ("scalar", "avx2", "neon"); returns false when the
/// variant is unavailable. Intended for tests and benchmarks.
bool select(std::string_view name);

// Span front-ends over the active table.

inline double dot(std::span<const double> a, std::span<const double> b) {
    return active().dot(a.data(), b.data(), a.size());
}
inline double sum(std::span<const double> x) { return active().sum(x.data(), x.size()); }
inline double max(std::span<const double> x) { return active().max(x.data(), x.size()); }
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
    active().axpy(a, x.data(), y.data(), y.size());
}
inline void scale(double a, std::span<double> x) { active().scale(a, x.data(), x.size()); }
inline void mul(std::span<const double> a, std::span<const double> b, std::span<double> out) {
    active().mul(a.data(), b.data(), out.data(), out.size());
}
inline void one_minus(std::span<const double> a, std::span<double> out) {
    active().one_minus(a.data(), out.data(), out.size());
}
inline void guidance(std::span<const double> u, std::span<const double> c, double s,
                     std::span<double> out) {
    active().guidance(u.data(), c.data(), s, out.data(), out.size());
}

}  // namespace record::simd
