#include "fragdiff/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <string_view>

namespace fragdiff::kernels {

namespace {

const KernelTable kScalar{Isa::Scalar, &scalar::dot, &scalar::axpy, &scalar::scale};

#if defined(FRAGDIFF_HAVE_AVX2)
const KernelTable kAvx2{Isa::Avx2, &avx2::dot, &avx2::axpy, &avx2::scale};

bool cpu_has_avx2() {
#if defined(__GNUC__) && (defined(__x86_64__) || defined(__i386__))
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}
#endif

const KernelTable* resolve() {
    const char* env = std::getenv("FRAGDIFF_ISA");
    std::string_view want = env ? env : "";
    if (want == "scalar") return &kScalar;
    if (const KernelTable* t = avx2_table()) return t;
    return &kScalar;
}

std::atomic<const KernelTable*> g_active{nullptr};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

const KernelTable* avx2_table() {
#if defined(FRAGDIFF_HAVE_AVX2)
    static const bool ok = cpu_has_avx2();
    return ok ? &kAvx2 : nullptr;
#else
    return nullptr;
#endif
}

const KernelTable& active() {
    const KernelTable* t = g_active.load(std::memory_order_acquire);
    if (t == nullptr) {
        t = resolve();
        g_active.store(t, std::memory_order_release);
    }
    return *t;
}

bool select(Isa isa) {
    const KernelTable* t = isa == Isa::Scalar ? &kScalar : avx2_table();
    if (t == nullptr) return false;
    g_active.store(t, std::memory_order_release);
    return true;
}

std::string_view isa_name(Isa isa) {
    switch (isa) {
        case Isa::Scalar: return "scalar";
        case Isa::Avx2: return "avx2";
    }
    return "unknown";
}

}  // namespace fragdiff::kernels
