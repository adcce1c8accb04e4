#include <atomic>
#include <cassert>

#include "cmla/simd.hpp"

namespace cmla::simd {
namespace {

struct KernelTable {
    double (*dot)(const double*, const double*, std::size_t) noexcept;
    double (*squared_distance)(const double*, const double*, std::size_t) noexcept;
    void (*axpy)(double, const double*, double*, std::size_t) noexcept;
};

constexpr KernelTable kScalar{&scalar::dot, &scalar::squared_distance, &scalar::axpy};
#if defined(CMLA_HAVE_AVX2_KERNELS)
constexpr KernelTable kAvx2{&avx2::dot, &avx2::squared_distance, &avx2::axpy};
#endif

const KernelTable& table_for(Isa isa) noexcept {
#if defined(CMLA_HAVE_AVX2_KERNELS)
    if (isa == Isa::avx2) return kAvx2;
#endif
    (void)isa;
    return kScalar;
}

std::atomic<Isa>& current() noexcept {
    static std::atomic<Isa> isa{detect_isa()};
    return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
    switch (isa) {
        case Isa::avx2: return "avx2";
        case Isa::scalar: break;
    }
    return "scalar";
}

Isa detect_isa() noexcept {
#if defined(CMLA_HAVE_AVX2_KERNELS) && (defined(__GNUC__) || defined(__clang__))
    __builtin_cpu_init();
    if (__builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma")) return Isa::avx2;
#endif
    return Isa::scalar;
}

Isa active_isa() noexcept { return current().load(std::memory_order_relaxed); }

Isa set_isa(Isa isa) noexcept {
    if (isa == Isa::avx2 && detect_isa() != Isa::avx2) isa = Isa::scalar;
    current().store(isa, std::memory_order_relaxed);
    return isa;
}

double dot(std::span<const double> a, std::span<const double> b) noexcept {
    assert(a.size() == b.size());
    return table_for(active_isa()).dot(a.data(), b.data(), a.size());
}

double squared_distance(std::span<const double> a, std::span<const double> b) noexcept {
    assert(a.size() == b.size());
    return table_for(active_isa()).squared_distance(a.data(), b.data(), a.size());
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept {
    assert(x.size() == y.size());
    table_for(active_isa()).axpy(alpha, x.data(), y.data(), x.size());
}

}  // namespace cmla::simd
