#pragma once

#include "sadvae/matrix.hpp"
#include "sadvae/rng.hpp"
#include "sadvae/tensor_file.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace sadvae {

/// y = W x + b, with W stored out x in.
template <typename T>
struct AffineLayer {
    Matrix<T> weight;
    std::vector<T> bias;

    AffineLayer() = default;
    AffineLayer(std::size_t in, std::size_t out) : weight(out, in), bias(out, T{0}) {}

    std::size_t in_width() const { return weight.cols(); }
    std::size_t out_width() const { return weight.rows(); }

    /// Weights uniform in +-1/sqrt(fan_in), biases zero.
    void init_uniform(Rng& rng);

    /// Batch forward: one input row per sample.
    Matrix<T> forward(const Matrix<T>& input) const;

    /// Accumulates dL/dW and dL/db into grad, and, when grad_input is
    /// non-null, writes dL/dinput into it.
    void backward(const Matrix<T>& input, const Matrix<T>& grad_output, AffineLayer* grad,
                  Matrix<T>* grad_input) const;

    template <typename U>
    AffineLayer<U> cast() const
    {
        AffineLayer<U> out;
        out.weight = weight.template cast<U>();
        out.bias.assign(bias.begin(), bias.end());
        return out;
    }

    friend bool operator==(const AffineLayer&, const AffineLayer&) = default;
};

/// Diagonal Gaussian posterior per row.
template <typename T>
struct GaussianLatent {
    Matrix<T> mean;
    Matrix<T> log_variance;

    std::size_t rows() const { return mean.rows(); }
    std::size_t width() const { return mean.cols(); }
};

struct ModelDims {
    std::size_t d_x = 0;
    std::size_t d_y = 0;
    std::size_t dim_r = 0;
    std::size_t dim_v = 0;

    /// Discriminator hidden width, equal to its input width.
    std::size_t hidden() const { return dim_v + dim_r; }
    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

enum class ParamGroup { vae, discriminator };

/// Every learnable tensor of the cross-modal model.
template <typename T>
struct ModelParams {
    ModelDims dims;
    AffineLayer<T> head_r;    // f_x -> [mean_r ; logvar_r]
    AffineLayer<T> head_v;    // f_x -> [mean_v ; logvar_v]
    AffineLayer<T> text;      // f_y -> [mean_y ; logvar_y]
    AffineLayer<T> decoder_x; // z_v (+) z_r -> f_x
    AffineLayer<T> decoder_y; // z_r or z_y -> f_y
    AffineLayer<T> disc_hidden;
    AffineLayer<T> disc_out;

    static ModelParams zeros(const ModelDims& dims);
    static ModelParams initialized(const ModelDims& dims, Rng& rng);

    template <typename F>
    void for_each(F&& f)
    {
        f("skeleton_encoder.head_r", ParamGroup::vae, head_r);
        f("skeleton_encoder.head_v", ParamGroup::vae, head_v);
        f("text_encoder", ParamGroup::vae, text);
        f("decoder_x", ParamGroup::vae, decoder_x);
        f("decoder_y", ParamGroup::vae, decoder_y);
        f("discriminator.layer1", ParamGroup::discriminator, disc_hidden);
        f("discriminator.layer2", ParamGroup::discriminator, disc_out);
    }

    template <typename F>
    void for_each(F&& f) const
    {
        const_cast<ModelParams*>(this)->for_each(
            [&](const char* name, ParamGroup group, AffineLayer<T>& layer) { f(name, group, std::as_const(layer)); });
    }

    template <typename U>
    ModelParams<U> cast() const
    {
        ModelParams<U> out;
        out.dims = dims;
        out.head_r = head_r.template cast<U>();
        out.head_v = head_v.template cast<U>();
        out.text = text.template cast<U>();
        out.decoder_x = decoder_x.template cast<U>();
        out.decoder_y = decoder_y.template cast<U>();
        out.disc_hidden = disc_hidden.template cast<U>();
        out.disc_out = disc_out.template cast<U>();
        return out;
    }

    friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Parameters plus Adam moments. The VAE and discriminator groups are stepped
/// by separate optimizers, each with its own step count.
template <typename T>
struct ModelState {
    ModelParams<T> params;
    ModelParams<T> first_moment;
    ModelParams<T> second_moment;
    std::uint64_t vae_steps = 0;
    std::uint64_t discriminator_steps = 0;

    static ModelState initialized(const ModelDims& dims, Rng& rng);
    friend bool operator==(const ModelState&, const ModelState&) = default;
};

template <typename T>
struct SkeletonPosterior {
    GaussianLatent<T> r;
    GaussianLatent<T> v;
};

template <typename T>
SkeletonPosterior<T> encode_skeleton(const ModelParams<T>& params, const Matrix<T>& features);

template <typename T>
GaussianLatent<T> encode_text(const ModelParams<T>& params, const Matrix<T>& features);

/// Splits an encoder head output [mean ; log_variance] into a posterior.
template <typename T>
GaussianLatent<T> split_head_output(const Matrix<T>& head_output);

/// mean + exp(log_variance / 2) * noise, elementwise.
template <typename T>
Matrix<T> reparameterize(const GaussianLatent<T>& latent, const Matrix<T>& noise);

template <typename T>
Matrix<T> decode(const AffineLayer<T>& decoder, const Matrix<T>& z);

/// Discriminator probability per row of z = z_v (+) z_r.
template <typename T>
std::vector<T> discriminate(const ModelParams<T>& params, const Matrix<T>& z);

/// Throws DataError when any value is non-finite.
template <typename T>
void require_finite(const Matrix<T>& m, const char* what);

std::vector<TensorRecord> model_to_tensors(const ModelState<float>& state);
ModelState<float> model_from_tensors(const std::vector<TensorRecord>& tensors);
void save_model(const std::filesystem::path& path, const ModelState<float>& state);
ModelState<float> load_model(const std::filesystem::path& path);

void append_layer_tensors(std::vector<TensorRecord>& out, const std::string& name, const AffineLayer<float>& layer);
AffineLayer<float> layer_from_tensors(const std::vector<TensorRecord>& tensors, const std::string& name);

} // namespace sadvae
