#pragma once

#include "sadvae/model.hpp"

#include <span>
#include <vector>

namespace sadvae {

/// Lower clamp for discriminator outputs before taking logs.
inline constexpr double kDiscriminatorEpsilon = 1e-7;

/// Standard-normal draws feeding the reparameterization of z_r, z_v, z_y.
template <typename T>
struct LatentNoise {
    Matrix<T> r;
    Matrix<T> v;
    Matrix<T> y;
};

template <typename T>
LatentNoise<T> draw_noise(Rng& rng, std::size_t batch, const ModelDims& dims);

template <typename T>
LatentNoise<T> zero_noise(std::size_t batch, const ModelDims& dims);

/// Annealed coefficients in effect for one step.
struct Coefficients {
    double lambda1 = 1.0;
    double lambda2 = 0.0;
    double beta_x = 0.0;
    double beta_y = 0.0;
};

template <typename T>
struct LossBreakdown {
    T l_x{};
    T l_y{};
    T l_vae{};
    T l_c{};
    T l_t{};
    T total{};
};

/// 0.5 * sum(mean^2 + exp(logvar) - 1 - logvar) for a single posterior.
template <typename T>
T kl_to_standard_normal(std::span<const T> mean, std::span<const T> log_variance);

/// Batch mean of the per-row KL divergence to N(0, I).
template <typename T>
T kl_to_standard_normal(const GaussianLatent<T>& latent);

/// Squared L2 error summed over features, averaged over rows.
template <typename T>
T reconstruction_error(const Matrix<T>& reconstruction, const Matrix<T>& target);

template <typename T>
struct VaeTerms {
    T l_x{};
    T l_y{};
    T l_vae{};
};

// The loss functions below overwrite *grad (when non-null) with the gradient
// of the returned quantity with respect to every model parameter.

template <typename T>
VaeTerms<T> vae_loss(const ModelParams<T>& params, const Matrix<T>& fx, const Matrix<T>& fy,
                     const LatentNoise<T>& noise, T beta_x, T beta_y, ModelParams<T>* grad = nullptr);

template <typename T>
T cross_alignment_loss(const ModelParams<T>& params, const Matrix<T>& fx, const Matrix<T>& fy,
                       const LatentNoise<T>& noise, ModelParams<T>* grad = nullptr);

/// Row i of the result is row perm[i] of v.
template <typename T>
Matrix<T> shuffle_pairs(const Matrix<T>& v, std::span<const std::size_t> perm);

/// Fisher-Yates permutation drawn from rng, then applied.
template <typename T>
Matrix<T> shuffle_pairs(const Matrix<T>& v, Rng& rng);

/// mean log D(z) + mean log(1 - D(z_shuffled)). Gradients are optional and
/// independent: discriminator parameters, and each latent input.
template <typename T>
T total_correlation_loss(const ModelParams<T>& params, const Matrix<T>& z, const Matrix<T>& z_shuffled,
                         ModelParams<T>* grad = nullptr, Matrix<T>* grad_z = nullptr,
                         Matrix<T>* grad_z_shuffled = nullptr);

/// l_vae + lambda1 * l_c + lambda2 * l_t.
template <typename T>
T total_loss(T l_vae, T l_c, T l_t, T lambda1, T lambda2);

/// The full encoder/decoder objective for one batch. With a permutation the
/// total-correlation term is included and back-propagated through both the
/// matched and the shuffled latents. latent_out, when given, receives the
/// sampled z_v (+) z_r rows.
template <typename T>
LossBreakdown<T> objective(const ModelParams<T>& params, const Matrix<T>& fx, const Matrix<T>& fy,
                           const LatentNoise<T>& noise, const std::vector<std::size_t>* permutation,
                           const Coefficients& coefficients, ModelParams<T>* grad = nullptr,
                           Matrix<T>* latent_out = nullptr);

} // namespace sadvae
