#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Inner-loop kernels used by distance computations and the affine layers.
// Every kernel has a scalar reference implementation; an AVX2 variant is
// selected at runtime when the CPU supports it.

namespace cmla::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa) noexcept;

/// Best ISA supported by this CPU (and compiled in).
Isa detect_isa() noexcept;

/// ISA currently used by the dispatching entry points.
Isa active_isa() noexcept;

/// Pin dispatch to `isa`. Falls back to scalar when `isa` is unavailable;
/// returns the ISA actually selected. Not thread-safe against concurrent
/// kernel calls.
Isa set_isa(Isa isa) noexcept;

double dot(std::span<const double> a, std::span<const double> b) noexcept;
double squared_distance(std::span<const double> a, std::span<const double> b) noexcept;
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y) noexcept;

namespace scalar {
double dot(const double* a, const double* b, std::size_t n) noexcept;
double squared_distance(const double* a, const double* b, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define CMLA_HAVE_AVX2_KERNELS 1
namespace avx2 {
double dot(const double* a, const double* b, std::size_t n) noexcept;
double squared_distance(const double* a, const double* b, std::size_t n) noexcept;
void axpy(double alpha, const double* x, double* y, std::size_t n) noexcept;
}  // namespace avx2
#endif

}  // namespace cmla::simd
