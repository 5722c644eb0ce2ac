#include "sadvae/kernels.hpp"

#include "sadvae/error.hpp"

#include <cstdlib>
#include <string>

namespace sadvae::kernels {

namespace {

template <typename T>
constexpr KernelTable<T> scalar_table{
    Isa::scalar,
    static_cast<T (*)(const T*, const T*, std::size_t)>(&scalar::dot),
    static_cast<void (*)(T, const T*, T*, std::size_t)>(&scalar::axpy),
    static_cast<T (*)(const T*, const T*, std::size_t)>(&scalar::squared_distance),
};

#if SADVAE_HAVE_AVX2_KERNELS
template <typename T>
constexpr KernelTable<T> avx2_table{
    Isa::avx2,
    static_cast<T (*)(const T*, const T*, std::size_t)>(&avx2::dot),
    static_cast<void (*)(T, const T*, T*, std::size_t)>(&avx2::axpy),
    static_cast<T (*)(const T*, const T*, std::size_t)>(&avx2::squared_distance),
};
#endif

Isa select_isa()
{
    const char* env = std::getenv("SADVAE_KERNELS");
    const std::string request = env != nullptr ? env : "auto";
    if (request == "scalar") {
        return Isa::scalar;
    }
    if (request == "avx2") {
        if (!avx2_supported()) {
            throw ArgumentError("SADVAE_KERNELS=avx2 requested but the CPU lacks AVX2/FMA");
        }
        return Isa::avx2;
    }
    if (request != "auto") {
        throw ArgumentError("SADVAE_KERNELS must be scalar, avx2 or auto, got '" + request + "'");
    }
    return avx2_supported() ? Isa::avx2 : Isa::scalar;
}

} // namespace

bool avx2_supported()
{
#if SADVAE_HAVE_AVX2_KERNELS && (defined(__GNUC__) || defined(__clang__))
    static const bool supported = __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    return supported;
#else
    return false;
#endif
}

template <typename T>
const KernelTable<T>& table(Isa isa)
{
    switch (isa) {
    case Isa::scalar:
        return scalar_table<T>;
    case Isa::avx2:
#if SADVAE_HAVE_AVX2_KERNELS
        if (avx2_supported()) {
            return avx2_table<T>;
        }
#endif
        throw ArgumentError("AVX2 kernels are not available on this CPU");
    }
    throw ArgumentError("unknown instruction set");
}

Isa active_isa()
{
    static const Isa isa = select_isa();
    return isa;
}

template <typename T>
const KernelTable<T>& active()
{
    static const KernelTable<T>& chosen = table<T>(active_isa());
    return chosen;
}

std::string_view isa_name(Isa isa)
{
    return isa == Isa::avx2 ? "avx2" : "scalar";
}

template const KernelTable<float>& table<float>(Isa);
template const KernelTable<double>& table<double>(Isa);
template const KernelTable<float>& active<float>();
template const KernelTable<double>& active<double>();

} // namespace sadvae::kernels
