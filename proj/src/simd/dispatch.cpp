#include "record/simd/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string>

namespace record::simd {

#if defined(RECORD_HAVE_AVX2)
const KernelTable& avx2_table_unchecked();
#endif
#if defined(RECORD_HAVE_NEON)
const KernelTable& neon_table();
#endif

const KernelTable* avx2_kernels() {
#if defined(RECORD_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported ? &avx2_table_unchecked() : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable* neon_kernels() {
#if defined(RECORD_HAVE_NEON)
    return &neon_table();
#else
    return nullptr;
#endif
}

namespace {

const KernelTable* best_available() {
    if (const char* env = std::getenv("RECORD_SIMD"); env != nullptr) {
        const std::string want(env);
        if (want == "scalar") return &scalar_kernels();
        if (want == "avx2" && avx2_kernels() != nullptr) return avx2_kernels();
        if (want == "neon" && neon_kernels() != nullptr) return neon_kernels();
    }
    if (const auto* t = avx2_kernels()) return t;
    if (const auto* t = neon_kernels()) return t;
    return &scalar_kernels();
}

std::atomic<const KernelTable*>& slot() {
    static std::atomic<const KernelTable*> current{best_available()};
    return current;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

bool select(std::string_view name) {
    const KernelTable* table = nullptr;
    if (name == "scalar") table = &scalar_kernels();
    else if (name == "avx2") table = avx2_kernels();
    else if (name == "neon") table = neon_kernels();
    if (table == nullptr) return false;
    slot().store(table, std::memory_order_release);
    return true;
}

}  // namespace record::simd
