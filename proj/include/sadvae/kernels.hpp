#pragma once

// Inner-loop arithmetic used by every affine layer and loss.
//
// Each kernel has a portable scalar reference and an AVX2/FMA variant. The
// variant is chosen once per process from the CPU features, and can be pinned
// with SADVAE_KERNELS=scalar|avx2|auto. Results of the two paths agree to
// rounding; a fixed path is bit-reproducible run to run.

#include <cstddef>
#include <span>
#include <string_view>

namespace sadvae::kernels {

enum class Isa { scalar, avx2 };

template <typename T>
struct KernelTable {
    Isa isa;
    /// sum_i a[i] * b[i]
    T (*dot)(const T* a, const T* b, std::size_t n);
    /// y[i] += alpha * x[i]
    void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
    /// sum_i (a[i] - b[i])^2
    T (*squared_distance)(const T* a, const T* b, std::size_t n);
};

bool avx2_supported();

/// Table for a specific instruction set. Throws ArgumentError when the CPU
/// cannot run it.
template <typename T>
const KernelTable<T>& table(Isa isa);

/// Table selected for this process.
template <typename T>
const KernelTable<T>& active();

Isa active_isa();

std::string_view isa_name(Isa isa);

namespace scalar {
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
float squared_distance(const float* a, const float* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
} // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
#define SADVAE_HAVE_AVX2_KERNELS 1
namespace avx2 {
float dot(const float* a, const float* b, std::size_t n);
double dot(const double* a, const double* b, std::size_t n);
void axpy(float alpha, const float* x, float* y, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);
float squared_distance(const float* a, const float* b, std::size_t n);
double squared_distance(const double* a, const double* b, std::size_t n);
} // namespace avx2
#else
#define SADVAE_HAVE_AVX2_KERNELS 0
#endif

template <typename T>
T dot(std::span<const T> a, std::span<const T> b)
{
    return active<T>().dot(a.data(), b.data(), a.size());
}

template <typename T>
void axpy(T alpha, std::span<const T> x, std::span<T> y)
{
    active<T>().axpy(alpha, x.data(), y.data(), x.size());
}

template <typename T>
T squared_distance(std::span<const T> a, std::span<const T> b)
{
    return active<T>().squared_distance(a.data(), b.data(), a.size());
}

} // namespace sadvae::kernels
