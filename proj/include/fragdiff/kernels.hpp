#pragma once

#include <cstddef>
#include <string_view>

// Inner-loop arithmetic for the dense layers. Every kernel has a scalar
// reference implementation; SIMD variants are compiled in separate
// translation units and selected once at startup from CPUID.

namespace fragdiff::kernels {

enum class Isa { Scalar, Avx2 };

struct KernelTable {
    Isa isa;
    // sum_i a[i] * b[i]
    double (*dot)(const double* a, const double* b, std::size_t n);
    // y[i] += alpha * x[i]
    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
    // y[i] *= alpha
    void (*scale)(double alpha, double* y, std::size_t n);
};

const KernelTable& scalar_table();
// nullptr when the binary was built without the variant or the CPU lacks it.
const KernelTable* avx2_table();

// Table in use. Resolved on first call: honours FRAGDIFF_ISA=scalar|avx2,
// otherwise picks the widest ISA the CPU supports.
const KernelTable& active();
// Forces a table (tests, benchmarks). Returns false if unavailable.
bool select(Isa isa);
std::string_view isa_name(Isa isa);

inline double dot(const double* a, const double* b, std::size_t n) { return active().dot(a, b, n); }
inline void axpy(double alpha, const double* x, double* y, std::size_t n) { active().axpy(alpha, x, y, n); }
inline void scale(double alpha, double* y, std::size_t n) { active().scale(alpha, y, n); }

namespace scalar {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* y, std::size_t n);
}  // namespace scalar

#if defined(FRAGDIFF_HAVE_AVX2)
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
void scale(double alpha, double* y, std::size_t n);
}  // namespace avx2
#endif

}  // namespace fragdiff::kernels
