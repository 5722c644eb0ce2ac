#include "sadvae/losses.hpp"

#include "sadvae/kernels.hpp"

#include <cmath>

namespace sadvae {

namespace {

template <typename T>
Matrix<T> standard_normal(Rng& rng, std::size_t rows, std::size_t cols)
{
    Matrix<T> m(rows, cols);
    for (auto& v : m.values()) {
        v = static_cast<T>(rng.normal());
    }
    return m;
}

template <typename T>
void require_same_shape(const Matrix<T>& a, const Matrix<T>& b, const char* what)
{
    if (a.rows() != b.rows() || a.cols() != b.cols()) {
        throw ShapeError(std::string(what) + ": shapes differ (" + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()) + ")");
    }
}

/// scale * (a - b), the gradient of scale/2 * ||a - b||^2.
template <typename T>
Matrix<T> scaled_difference(const Matrix<T>& a, const Matrix<T>& b, T scale)
{
    Matrix<T> out(a.rows(), a.cols());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out.storage()[i] = scale * (a.storage()[i] - b.storage()[i]);
    }
    return out;
}

template <typename T>
void add_into(Matrix<T>& dst, const Matrix<T>& src, std::size_t src_col, std::size_t count)
{
    for (std::size_t r = 0; r < dst.rows(); ++r) {
        for (std::size_t c = 0; c < count; ++c) {
            dst(r, c) += src(r, src_col + c);
        }
    }
}

/// Head gradient [d mean ; d logvar] from the sampled-latent gradient plus a
/// weighted KL term (already divided by the batch size).
template <typename T>
Matrix<T> head_gradient(const GaussianLatent<T>& latent, const Matrix<T>& noise, const Matrix<T>& grad_z, T kl_weight)
{
    const std::size_t w = latent.width();
    Matrix<T> g(latent.rows(), 2 * w);
    for (std::size_t r = 0; r < latent.rows(); ++r) {
        for (std::size_t c = 0; c < w; ++c) {
            const T mean = latent.mean(r, c);
            const T logvar = latent.log_variance(r, c);
            const T sigma = std::exp(T{0.5} * logvar);
            g(r, c) = grad_z(r, c) + kl_weight * mean;
            g(r, w + c) = grad_z(r, c) * T{0.5} * sigma * noise(r, c) + kl_weight * T{0.5} * (sigma * sigma - T{1});
        }
    }
    return g;
}

struct TermWeights {
    double x = 1;
    double y = 1;
    double c = 0;
    double t = 0;
    double beta_x = 0;
    double beta_y = 0;
};

template <typename T>
T total_correlation_impl(const ModelParams<T>& params, const Matrix<T>& z, const Matrix<T>& zs, T scale,
                         ModelParams<T>* grad, Matrix<T>* grad_z, Matrix<T>* grad_zs)
{
    require_same_shape(z, zs, "total_correlation_loss");
    if (z.cols() != params.disc_hidden.in_width()) {
        throw ShapeError("discriminator expects width " + std::to_string(params.disc_hidden.in_width()));
    }
    if (z.rows() == 0) {
        throw ArgumentError("total_correlation_loss: empty batch");
    }
    const T eps = static_cast<T>(kDiscriminatorEpsilon);
    const T inv_b = T{1} / static_cast<T>(z.rows());
    T loss = 0;

    // matched rows: log D, shuffled rows: log(1 - D)
    for (int pass = 0; pass < 2; ++pass) {
        const bool matched = pass == 0;
        const Matrix<T>& input = matched ? z : zs;
        const Matrix<T> pre = params.disc_hidden.forward(input);
        Matrix<T> hidden = pre;
        for (auto& h : hidden.values()) {
            h = std::max(h, T{0});
        }
        const Matrix<T> logits = params.disc_out.forward(hidden);
        Matrix<T> g_logit(input.rows(), 1);
        for (std::size_t i = 0; i < input.rows(); ++i) {
            const T sig = T{1} / (T{1} + std::exp(-logits(i, 0)));
            const bool clamped = sig < eps || sig > T{1} - eps;
            const T p = std::clamp(sig, eps, T{1} - eps);
            if (matched) {
                loss += std::log(p);
                g_logit(i, 0) = clamped ? T{0} : scale * inv_b * (T{1} - sig);
            } else {
                loss += std::log(T{1} - p);
                g_logit(i, 0) = clamped ? T{0} : -scale * inv_b * sig;
            }
        }
        Matrix<T>* input_grad = matched ? grad_z : grad_zs;
        if (grad == nullptr && input_grad == nullptr) {
            continue;
        }
        Matrix<T> g_hidden;
        params.disc_out.backward(hidden, g_logit, grad != nullptr ? &grad->disc_out : nullptr, &g_hidden);
        for (std::size_t i = 0; i < g_hidden.size(); ++i) {
            if (pre.storage()[i] <= T{0}) {
                g_hidden.storage()[i] = T{0};
            }
        }
        params.disc_hidden.backward(input, g_hidden, grad != nullptr ? &grad->disc_hidden : nullptr, input_grad);
    }
    return loss * inv_b;
}

template <typename T>
LossBreakdown<T> evaluate(const ModelParams<T>& params, const Matrix<T>& fx, const Matrix<T>& fy,
                          const LatentNoise<T>& noise, const std::vector<std::size_t>* perm, const TermWeights& w,
                          ModelParams<T>* grad, Matrix<T>* latent_out)
{
    const ModelDims& d = params.dims;
    const std::size_t batch = fx.rows();
    if (batch == 0) {
        throw ArgumentError("loss evaluated on an empty batch");
    }
    if (fy.rows() != batch) {
        throw ShapeError("skeleton and text batches have different row counts");
    }
    if (noise.r.rows() != batch || noise.r.cols() != d.dim_r || noise.v.rows() != batch ||
        noise.v.cols() != d.dim_v || noise.y.rows() != batch || noise.y.cols() != d.dim_r) {
        throw ShapeError("latent noise does not match batch and model dims");
    }
    if (perm != nullptr && perm->size() != batch) {
        throw ShapeError("permutation length does not match batch");
    }

    const auto post = encode_skeleton(params, fx);
    const auto text = encode_text(params, fy);
    const Matrix<T> zr = reparameterize(post.r, noise.r);
    const Matrix<T> zv = reparameterize(post.v, noise.v);
    const Matrix<T> zy = reparameterize(text, noise.y);
    const Matrix<T> zx = hconcat(zv, zr);
    const Matrix<T> rec_x = params.decoder_x.forward(zx);
    const Matrix<T> rec_y = params.decoder_y.forward(zy);
    const Matrix<T> cross_in_x = hconcat(zv, zy);
    const Matrix<T> cross_x = params.decoder_x.forward(cross_in_x);
    const Matrix<T> cross_y = params.decoder_y.forward(zr);

    const T bx = static_cast<T>(w.beta_x);
    const T by = static_cast<T>(w.beta_y);
    LossBreakdown<T> out;
    out.l_x = reconstruction_error(rec_x, fx) + bx * (kl_to_standard_normal(post.r) + kl_to_standard_normal(post.v));
    out.l_y = reconstruction_error(rec_y, fy) + by * kl_to_standard_normal(text);
    out.l_vae = out.l_x + out.l_y;
    out.l_c = reconstruction_error(cross_y, fy) + reconstruction_error(cross_x, fx);

    Matrix<T> zt;
    if (perm != nullptr) {
        zt = hconcat(shuffle_pairs(zv, *perm), zr);
    }
    Matrix<T> g_z;
    Matrix<T> g_zt;
    const bool tc_backward = grad != nullptr && perm != nullptr && w.t != 0.0;
    if (tc_backward) {
        *grad = ModelParams<T>::zeros(d);
        out.l_t = total_correlation_impl(params, zx, zt, static_cast<T>(w.t), grad, &g_z, &g_zt);
    } else {
        if (grad != nullptr) {
            *grad = ModelParams<T>::zeros(d);
        }
        out.l_t = perm != nullptr ? total_correlation_impl<T>(params, zx, zt, T{1}, nullptr, nullptr, nullptr) : T{0};
    }
    out.total = total_loss(out.l_vae, out.l_c, out.l_t, static_cast<T>(w.c), static_cast<T>(w.t));
    if (latent_out != nullptr) {
        *latent_out = zx;
    }
    if (grad == nullptr) {
        return out;
    }

    const T inv_b = T{1} / static_cast<T>(batch);
    Matrix<T> g_zr(batch, d.dim_r);
    Matrix<T> g_zv(batch, d.dim_v);
    Matrix<T> g_zy(batch, d.dim_r);
    Matrix<T> tmp;

    if (w.x != 0.0) {
        params.decoder_x.backward(zx, scaled_difference(rec_x, fx, static_cast<T>(2 * w.x) * inv_b), &grad->decoder_x,
                                  &tmp);
        add_into(g_zv, tmp, 0, d.dim_v);
        add_into(g_zr, tmp, d.dim_v, d.dim_r);
    }
    if (w.y != 0.0) {
        params.decoder_y.backward(zy, scaled_difference(rec_y, fy, static_cast<T>(2 * w.y) * inv_b), &grad->decoder_y,
                                  &tmp);
        add_into(g_zy, tmp, 0, d.dim_r);
    }
    if (w.c != 0.0) {
        const T s = static_cast<T>(2 * w.c) * inv_b;
        params.decoder_y.backward(zr, scaled_difference(cross_y, fy, s), &grad->decoder_y, &tmp);
        add_into(g_zr, tmp, 0, d.dim_r);
        params.decoder_x.backward(cross_in_x, scaled_difference(cross_x, fx, s), &grad->decoder_x, &tmp);
        add_into(g_zv, tmp, 0, d.dim_v);
        add_into(g_zy, tmp, d.dim_v, d.dim_r);
    }
    if (tc_backward) {
        add_into(g_zv, g_z, 0, d.dim_v);
        add_into(g_zr, g_z, d.dim_v, d.dim_r);
        add_into(g_zr, g_zt, d.dim_v, d.dim_r);
        for (std::size_t i = 0; i < batch; ++i) {
            for (std::size_t c = 0; c < d.dim_v; ++c) {
                g_zv((*perm)[i], c) += g_zt(i, c);
            }
        }
    }

    const T kl_x = static_cast<T>(w.x * w.beta_x) * inv_b;
    const T kl_y = static_cast<T>(w.y * w.beta_y) * inv_b;
    params.head_r.backward(fx, head_gradient(post.r, noise.r, g_zr, kl_x), &grad->head_r, nullptr);
    params.head_v.backward(fx, head_gradient(post.v, noise.v, g_zv, kl_x), &grad->head_v, nullptr);
    params.text.backward(fy, head_gradient(text, noise.y, g_zy, kl_y), &grad->text, nullptr);
    return out;
}

} // namespace

template <typename T>
LatentNoise<T> draw_noise(Rng& rng, std::size_t batch, const ModelDims& dims)
{
    LatentNoise<T> n;
    n.r = standard_normal<T>(rng, batch, dims.dim_r);
    n.v = standard_normal<T>(rng, batch, dims.dim_v);
    n.y = standard_normal<T>(rng, batch, dims.dim_r);
    return n;
}

template <typename T>
LatentNoise<T> zero_noise(std::size_t batch, const ModelDims& dims)
{
    return {Matrix<T>(batch, dims.dim_r), Matrix<T>(batch, dims.dim_v), Matrix<T>(batch, dims.dim_r)};
}

template <typename T>
T kl_to_standard_normal(std::span<const T> mean, std::span<const T> log_variance)
{
    if (mean.size() != log_variance.size()) {
        throw ShapeError("kl_to_standard_normal: mean and log-variance widths differ");
    }
    T acc = 0;
    for (std::size_t i = 0; i < mean.size(); ++i) {
        const T lv = log_variance[i];
        if (!std::isfinite(mean[i]) || !std::isfinite(lv)) {
            throw DataError("kl_to_standard_normal: non-finite latent");
        }
        acc += mean[i] * mean[i] + std::exp(lv) - T{1} - lv;
    }
    return T{0.5} * acc;
}

template <typename T>
T kl_to_standard_normal(const GaussianLatent<T>& latent)
{
    if (latent.rows() == 0) {
        return T{0};
    }
    T acc = 0;
    for (std::size_t r = 0; r < latent.rows(); ++r) {
        acc += kl_to_standard_normal<T>(latent.mean.row(r), latent.log_variance.row(r));
    }
    return acc / static_cast<T>(latent.rows());
}

template <typename T>
T reconstruction_error(const Matrix<T>& reconstruction, const Matrix<T>& target)
{
    require_same_shape(reconstruction, target, "reconstruction_error");
    if (target.rows() == 0) {
        return T{0};
    }
    const auto& k = kernels::active<T>();
    T acc = 0;
    for (std::size_t r = 0; r < target.rows(); ++r) {
        acc += k.squared_distance(reconstruction.row(r).data(), target.row(r).data(), target.cols());
    }
    return acc / static_cast<T>(target.rows());
}

template <typename T>
VaeTerms<T> vae_loss(const ModelParams<T>& params, const Matrix<T>& fx, const Matrix<T>& fy,
                     const LatentNoise<T>& noise, T beta_x, T beta_y, ModelParams<T>* grad)
{
    TermWeights w;
    w.beta_x = beta_x;
    w.beta_y = beta_y;
    const auto b = evaluate<T>(params, fx, fy, noise, nullptr, w, grad, nullptr);
    return {b.l_x, b.l_y, b.l_vae};
}

template <typename T>
T cross_alignment_loss(const ModelParams<T>& params, const Matrix<T>& fx, const Matrix<T>& fy,
                       const LatentNoise<T>& noise, ModelParams<T>* grad)
{
    TermWeights w;
    w.x = 0;
    w.y = 0;
    w.c = 1;
    return evaluate<T>(params, fx, fy, noise, nullptr, w, grad, nullptr).l_c;
}

template <typename T>
Matrix<T> shuffle_pairs(const Matrix<T>& v, std::span<const std::size_t> perm)
{
    if (perm.size() != v.rows()) {
        throw ShapeError("shuffle_pairs: permutation length does not match batch");
    }
    return v.gather(perm);
}

template <typename T>
Matrix<T> shuffle_pairs(const Matrix<T>& v, Rng& rng)
{
    if (v.rows() == 0) {
        throw ArgumentError("shuffle_pairs: empty batch");
    }
    const auto perm = rng.permutation(v.rows());
    return v.gather(perm);
}

template <typename T>
T total_correlation_loss(const ModelParams<T>& params, const Matrix<T>& z, const Matrix<T>& z_shuffled,
                         ModelParams<T>* grad, Matrix<T>* grad_z, Matrix<T>* grad_z_shuffled)
{
    if (grad != nullptr) {
        *grad = ModelParams<T>::zeros(params.dims);
    }
    return total_correlation_impl(params, z, z_shuffled, T{1}, grad, grad_z, grad_z_shuffled);
}

template <typename T>
T total_loss(T l_vae, T l_c, T l_t, T lambda1, T lambda2)
{
    if (lambda1 < T{0} || lambda2 < T{0}) {
        throw ArgumentError("total_loss: coefficients must be non-negative");
    }
    return l_vae + lambda1 * l_c + lambda2 * l_t;
}

template <typename T>
LossBreakdown<T> objective(const ModelParams<T>& params, const Matrix<T>& fx, const Matrix<T>& fy,
                           const LatentNoise<T>& noise, const std::vector<std::size_t>* permutation,
                           const Coefficients& coefficients, ModelParams<T>* grad, Matrix<T>* latent_out)
{
    if (coefficients.lambda1 < 0 || coefficients.lambda2 < 0 || coefficients.beta_x < 0 || coefficients.beta_y < 0) {
        throw ArgumentError("objective: coefficients must be non-negative");
    }
    TermWeights w;
    w.c = coefficients.lambda1;
    w.t = coefficients.lambda2;
    w.beta_x = coefficients.beta_x;
    w.beta_y = coefficients.beta_y;
    return evaluate(params, fx, fy, noise, permutation, w, grad, latent_out);
}

#define SADVAE_INSTANTIATE_LOSSES(T)                                                                                 \
    template LatentNoise<T> draw_noise<T>(Rng&, std::size_t, const ModelDims&);                                      \
    template LatentNoise<T> zero_noise<T>(std::size_t, const ModelDims&);                                            \
    template T kl_to_standard_normal<T>(std::span<const T>, std::span<const T>);                                     \
    template T kl_to_standard_normal<T>(const GaussianLatent<T>&);                                                   \
    template T reconstruction_error<T>(const Matrix<T>&, const Matrix<T>&);                                         \
    template VaeTerms<T> vae_loss<T>(const ModelParams<T>&, const Matrix<T>&, const Matrix<T>&,                      \
                                     const LatentNoise<T>&, T, T, ModelParams<T>*);                                  \
    template T cross_alignment_loss<T>(const ModelParams<T>&, const Matrix<T>&, const Matrix<T>&,                    \
                                       const LatentNoise<T>&, ModelParams<T>*);                                      \
    template Matrix<T> shuffle_pairs<T>(const Matrix<T>&, std::span<const std::size_t>);                             \
    template Matrix<T> shuffle_pairs<T>(const Matrix<T>&, Rng&);                                                     \
    template T total_correlation_loss<T>(const ModelParams<T>&, const Matrix<T>&, const Matrix<T>&, ModelParams<T>*, \
                                         Matrix<T>*, Matrix<T>*);                                                    \
    template T total_loss<T>(T, T, T, T, T);                                                                         \
    template LossBreakdown<T> objective<T>(const ModelParams<T>&, const Matrix<T>&, const Matrix<T>&,                \
                                           const LatentNoise<T>&, const std::vector<std::size_t>*,                   \
                                           const Coefficients&, ModelParams<T>*, Matrix<T>*);

SADVAE_INSTANTIATE_LOSSES(float)
SADVAE_INSTANTIATE_LOSSES(double)

} // namespace sadvae
