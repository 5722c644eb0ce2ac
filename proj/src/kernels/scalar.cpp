#include "sadvae/kernels.hpp"

namespace sadvae::kernels::scalar {

namespace {

template <typename T>
T dot_impl(const T* a, const T* b, std::size_t n)
{
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        acc += a[i] * b[i];
    }
    return acc;
}

template <typename T>
void axpy_impl(T alpha, const T* x, T* y, std::size_t n)
{
    for (std::size_t i = 0; i < n; ++i) {
        y[i] += alpha * x[i];
    }
}

template <typename T>
T squared_distance_impl(const T* a, const T* b, std::size_t n)
{
    T acc = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const T d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

} // namespace

float dot(const float* a, const float* b, std::size_t n) { return dot_impl(a, b, n); }
double dot(const double* a, const double* b, std::size_t n) { return dot_impl(a, b, n); }
void axpy(float alpha, const float* x, float* y, std::size_t n) { axpy_impl(alpha, x, y, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { axpy_impl(alpha, x, y, n); }
float squared_distance(const float* a, const float* b, std::size_t n) { return squared_distance_impl(a, b, n); }
double squared_distance(const double* a, const double* b, std::size_t n) { return squared_distance_impl(a, b, n); }

} // namespace sadvae::kernels::scalar
