#include "sadvae/model.hpp"

#include "sadvae/kernels.hpp"

#include <cmath>

namespace sadvae {

template <typename T>
void AffineLayer<T>::init_uniform(Rng& rng)
{
    const std::size_t fan_in = in_width();
    const double bound = fan_in > 0 ? 1.0 / std::sqrt(static_cast<double>(fan_in)) : 0.0;
    for (auto& w : weight.values()) {
        w = static_cast<T>(rng.uniform(-bound, bound));
    }
    std::fill(bias.begin(), bias.end(), T{0});
}

template <typename T>
Matrix<T> AffineLayer<T>::forward(const Matrix<T>& input) const
{
    if (input.cols() != in_width()) {
        throw ShapeError("affine layer expects width " + std::to_string(in_width()) + ", got " +
                         std::to_string(input.cols()));
    }
    const auto& k = kernels::active<T>();
    Matrix<T> out(input.rows(), out_width());
    for (std::size_t r = 0; r < input.rows(); ++r) {
        const T* x = input.row(r).data();
        T* y = out.row(r).data();
        for (std::size_t o = 0; o < out_width(); ++o) {
            y[o] = k.dot(weight.row(o).data(), x, in_width()) + bias[o];
        }
    }
    return out;
}

template <typename T>
void AffineLayer<T>::backward(const Matrix<T>& input, const Matrix<T>& grad_output, AffineLayer* grad,
                              Matrix<T>* grad_input) const
{
    if (grad_output.cols() != out_width() || input.cols() != in_width() || input.rows() != grad_output.rows()) {
        throw ShapeError("affine backward: operand shapes disagree");
    }
    const auto& k = kernels::active<T>();
    if (grad_input != nullptr) {
        *grad_input = Matrix<T>(input.rows(), in_width());
    }
    for (std::size_t r = 0; r < input.rows(); ++r) {
        const T* x = input.row(r).data();
        const T* g = grad_output.row(r).data();
        for (std::size_t o = 0; o < out_width(); ++o) {
            if (g[o] == T{0}) {
                continue;
            }
            if (grad != nullptr) {
                k.axpy(g[o], x, grad->weight.row(o).data(), in_width());
                grad->bias[o] += g[o];
            }
            if (grad_input != nullptr) {
                k.axpy(g[o], weight.row(o).data(), grad_input->row(r).data(), in_width());
            }
        }
    }
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros(const ModelDims& d)
{
    ModelParams p;
    p.dims = d;
    p.head_r = AffineLayer<T>(d.d_x, 2 * d.dim_r);
    p.head_v = AffineLayer<T>(d.d_x, 2 * d.dim_v);
    p.text = AffineLayer<T>(d.d_y, 2 * d.dim_r);
    p.decoder_x = AffineLayer<T>(d.dim_v + d.dim_r, d.d_x);
    p.decoder_y = AffineLayer<T>(d.dim_r, d.d_y);
    p.disc_hidden = AffineLayer<T>(d.dim_v + d.dim_r, d.hidden());
    p.disc_out = AffineLayer<T>(d.hidden(), 1);
    return p;
}

template <typename T>
ModelParams<T> ModelParams<T>::initialized(const ModelDims& dims, Rng& rng)
{
    if (dims.d_x < 1 || dims.d_y < 1 || dims.dim_r < 1) {
        throw ArgumentError("model dims d_x, d_y and dim_r must be >= 1");
    }
    ModelParams p = zeros(dims);
    p.for_each([&](const char*, ParamGroup, AffineLayer<T>& layer) { layer.init_uniform(rng); });
    return p;
}

template <typename T>
ModelState<T> ModelState<T>::initialized(const ModelDims& dims, Rng& rng)
{
    ModelState s;
    s.params = ModelParams<T>::initialized(dims, rng);
    s.first_moment = ModelParams<T>::zeros(dims);
    s.second_moment = ModelParams<T>::zeros(dims);
    return s;
}

template <typename T>
void require_finite(const Matrix<T>& m, const char* what)
{
    if (!m.all_finite()) {
        throw DataError(std::string(what) + " contains non-finite values");
    }
}

template <typename T>
GaussianLatent<T> split_head_output(const Matrix<T>& head_output)
{
    const std::size_t w = head_output.cols() / 2;
    return {head_output.columns(0, w), head_output.columns(w, w)};
}

template <typename T>
SkeletonPosterior<T> encode_skeleton(const ModelParams<T>& params, const Matrix<T>& features)
{
    if (features.cols() != params.dims.d_x) {
        throw ShapeError("skeleton features have width " + std::to_string(features.cols()) + ", model expects " +
                         std::to_string(params.dims.d_x));
    }
    require_finite(features, "skeleton features");
    return {split_head_output(params.head_r.forward(features)), split_head_output(params.head_v.forward(features))};
}

template <typename T>
GaussianLatent<T> encode_text(const ModelParams<T>& params, const Matrix<T>& features)
{
    if (features.cols() != params.dims.d_y) {
        throw ShapeError("text features have width " + std::to_string(features.cols()) + ", model expects " +
                         std::to_string(params.dims.d_y));
    }
    require_finite(features, "text features");
    return split_head_output(params.text.forward(features));
}

template <typename T>
Matrix<T> reparameterize(const GaussianLatent<T>& latent, const Matrix<T>& noise)
{
    if (noise.rows() != latent.rows() || noise.cols() != latent.width()) {
        throw ShapeError("reparameterize: noise shape does not match latent");
    }
    Matrix<T> z(latent.rows(), latent.width());
    for (std::size_t i = 0; i < z.size(); ++i) {
        z.storage()[i] = latent.mean.storage()[i] +
                         std::exp(T{0.5} * latent.log_variance.storage()[i]) * noise.storage()[i];
    }
    return z;
}

template <typename T>
Matrix<T> decode(const AffineLayer<T>& decoder, const Matrix<T>& z)
{
    return decoder.forward(z);
}

template <typename T>
std::vector<T> discriminate(const ModelParams<T>& params, const Matrix<T>& z)
{
    Matrix<T> hidden = params.disc_hidden.forward(z);
    for (auto& h : hidden.values()) {
        h = std::max(h, T{0});
    }
    const Matrix<T> logits = params.disc_out.forward(hidden);
    std::vector<T> probs(z.rows());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        probs[i] = T{1} / (T{1} + std::exp(-logits(i, 0)));
    }
    return probs;
}

void append_layer_tensors(std::vector<TensorRecord>& out, const std::string& name, const AffineLayer<float>& layer)
{
    out.push_back({name + ".weight", {layer.weight.rows(), layer.weight.cols()}, layer.weight.storage()});
    out.push_back({name + ".bias", {layer.bias.size()}, layer.bias});
}

AffineLayer<float> layer_from_tensors(const std::vector<TensorRecord>& tensors, const std::string& name)
{
    const auto& w = find_tensor(tensors, name + ".weight");
    const auto& b = find_tensor(tensors, name + ".bias");
    if (w.shape.size() != 2 || b.shape.size() != 1 || b.shape[0] != w.shape[0]) {
        throw FormatError("checkpoint layer '" + name + "' has inconsistent shapes");
    }
    AffineLayer<float> layer;
    layer.weight = Matrix<float>(w.shape[0], w.shape[1], w.data);
    layer.bias = b.data;
    return layer;
}

namespace {

void append_params(std::vector<TensorRecord>& out, const std::string& prefix, const ModelParams<float>& p)
{
    p.for_each([&](const char* name, ParamGroup, const AffineLayer<float>& layer) {
        append_layer_tensors(out, prefix + name, layer);
    });
}

ModelParams<float> params_from_tensors(const std::vector<TensorRecord>& tensors, const std::string& prefix)
{
    ModelParams<float> p;
    p.for_each([&](const char* name, ParamGroup, AffineLayer<float>& layer) {
        layer = layer_from_tensors(tensors, prefix + name);
    });
    p.dims.d_x = p.head_r.in_width();
    p.dims.dim_r = p.head_r.out_width() / 2;
    p.dims.dim_v = p.head_v.out_width() / 2;
    p.dims.d_y = p.text.in_width();
    const ModelParams<float> expected = ModelParams<float>::zeros(p.dims);
    bool consistent = true;
    p.for_each([&](const char* name, ParamGroup, const AffineLayer<float>& layer) {
        expected.for_each([&](const char* other, ParamGroup, const AffineLayer<float>& ref) {
            if (std::string_view(name) == other &&
                (layer.in_width() != ref.in_width() || layer.out_width() != ref.out_width())) {
                consistent = false;
            }
        });
    });
    if (!consistent) {
        throw FormatError("checkpoint layer shapes are mutually inconsistent");
    }
    return p;
}

std::vector<float> split_u64(std::uint64_t v)
{
    // Exact for any count below 2^48.
    return {static_cast<float>(v >> 24), static_cast<float>(v & 0xFFFFFFu)};
}

std::uint64_t join_u64(const TensorRecord& t)
{
    if (t.data.size() != 2) {
        throw FormatError("checkpoint counter '" + t.name + "' malformed");
    }
    return (static_cast<std::uint64_t>(t.data[0]) << 24) | static_cast<std::uint64_t>(t.data[1]);
}

} // namespace

std::vector<TensorRecord> model_to_tensors(const ModelState<float>& state)
{
    std::vector<TensorRecord> out;
    append_params(out, "", state.params);
    append_params(out, "adam.m.", state.first_moment);
    append_params(out, "adam.v.", state.second_moment);
    out.push_back({"adam.vae_steps", {2}, split_u64(state.vae_steps)});
    out.push_back({"adam.discriminator_steps", {2}, split_u64(state.discriminator_steps)});
    return out;
}

ModelState<float> model_from_tensors(const std::vector<TensorRecord>& tensors)
{
    ModelState<float> s;
    s.params = params_from_tensors(tensors, "");
    s.first_moment = params_from_tensors(tensors, "adam.m.");
    s.second_moment = params_from_tensors(tensors, "adam.v.");
    if (!(s.first_moment.dims == s.params.dims) || !(s.second_moment.dims == s.params.dims)) {
        throw FormatError("optimizer moments do not match parameter shapes");
    }
    s.vae_steps = join_u64(find_tensor(tensors, "adam.vae_steps"));
    s.discriminator_steps = join_u64(find_tensor(tensors, "adam.discriminator_steps"));
    return s;
}

void save_model(const std::filesystem::path& path, const ModelState<float>& state)
{
    write_tensor_file(path, "SADM", model_to_tensors(state));
}

ModelState<float> load_model(const std::filesystem::path& path)
{
    return model_from_tensors(read_tensor_file(path, "SADM"));
}

#define SADVAE_INSTANTIATE_MODEL(T)                                                                                  \
    template struct AffineLayer<T>;                                                                                  \
    template struct ModelParams<T>;                                                                                  \
    template struct ModelState<T>;                                                                                   \
    template void require_finite<T>(const Matrix<T>&, const char*);                                                  \
    template GaussianLatent<T> split_head_output<T>(const Matrix<T>&);                                              \
    template SkeletonPosterior<T> encode_skeleton<T>(const ModelParams<T>&, const Matrix<T>&);                       \
    template GaussianLatent<T> encode_text<T>(const ModelParams<T>&, const Matrix<T>&);                              \
    template Matrix<T> reparameterize<T>(const GaussianLatent<T>&, const Matrix<T>&);                                \
    template Matrix<T> decode<T>(const AffineLayer<T>&, const Matrix<T>&);                                           \
    template std::vector<T> discriminate<T>(const ModelParams<T>&, const Matrix<T>&);

SADVAE_INSTANTIATE_MODEL(float)
SADVAE_INSTANTIATE_MODEL(double)

} // namespace sadvae
