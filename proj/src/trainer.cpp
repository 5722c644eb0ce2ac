#include "sadvae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace sadvae {

namespace {

enum Stream : std::uint64_t { kInit = 11, kOrder = 12, kNoise = 13, kPermutation = 14 };

} // namespace

double anneal_coefficient(std::size_t k, std::size_t n, double target)
{
    if (n == 0) {
        throw ArgumentError("anneal_coefficient: n must be > 0");
    }
    if (k > n || target < 0) {
        throw ArgumentError("anneal_coefficient: need 0 <= k <= n and target >= 0");
    }
    // k < n/3 compared in integers to avoid rounding at the boundary.
    if (3 * k < n) {
        return 0.0;
    }
    return 1.5 * (static_cast<double>(k) / static_cast<double>(n) - 1.0 / 3.0) * target;
}

double lambda1_for_epoch(std::size_t epoch_index) { return epoch_index == 0 ? 0.0 : 1.0; }

template <typename T>
void adam_update(std::span<T> params, std::span<T> first_moment, std::span<T> second_moment,
                 std::span<const T> gradient, std::uint64_t step, const AdamConfig& config)
{
    if (params.size() != gradient.size() || first_moment.size() != params.size() ||
        second_moment.size() != params.size()) {
        throw ShapeError("adam_update: buffer sizes differ");
    }
    if (step == 0) {
        throw ArgumentError("adam_update: step is 1-based");
    }
    const T b1 = static_cast<T>(config.beta1);
    const T b2 = static_cast<T>(config.beta2);
    const T lr = static_cast<T>(config.learning_rate);
    const T eps = static_cast<T>(config.epsilon);
    const T correction1 = T{1} - static_cast<T>(std::pow(config.beta1, static_cast<double>(step)));
    const T correction2 = T{1} - static_cast<T>(std::pow(config.beta2, static_cast<double>(step)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        const T g = gradient[i];
        first_moment[i] = b1 * first_moment[i] + (T{1} - b1) * g;
        second_moment[i] = b2 * second_moment[i] + (T{1} - b2) * g * g;
        const T m_hat = first_moment[i] / correction1;
        const T v_hat = second_moment[i] / correction2;
        params[i] -= lr * m_hat / (std::sqrt(v_hat) + eps);
    }
}

template <typename T>
void adam_update(ModelState<T>& state, const ModelParams<T>& gradient, ParamGroup group, const AdamConfig& config)
{
    if (!(gradient.dims == state.params.dims)) {
        throw ShapeError("adam_update: gradient shapes differ from parameters");
    }
    std::uint64_t& steps = group == ParamGroup::vae ? state.vae_steps : state.discriminator_steps;
    ++steps;
    std::vector<AffineLayer<T>*> params;
    std::vector<AffineLayer<T>*> m;
    std::vector<AffineLayer<T>*> v;
    std::vector<const AffineLayer<T>*> g;
    std::vector<ParamGroup> groups;
    state.params.for_each([&](const char*, ParamGroup grp, AffineLayer<T>& l) {
        params.push_back(&l);
        groups.push_back(grp);
    });
    state.first_moment.for_each([&](const char*, ParamGroup, AffineLayer<T>& l) { m.push_back(&l); });
    state.second_moment.for_each([&](const char*, ParamGroup, AffineLayer<T>& l) { v.push_back(&l); });
    gradient.for_each([&](const char*, ParamGroup, const AffineLayer<T>& l) { g.push_back(&l); });
    for (std::size_t i = 0; i < params.size(); ++i) {
        if (groups[i] != group) {
            continue;
        }
        adam_update<T>(params[i]->weight.values(), m[i]->weight.values(), v[i]->weight.values(),
                       g[i]->weight.values(), steps, config);
        adam_update<T>(params[i]->bias, m[i]->bias, v[i]->bias, g[i]->bias, steps, config);
    }
}

template <typename T>
StepOutcome<T> train_step(ModelState<T>& state, const Matrix<T>& fx, const Matrix<T>& fy,
                          const Coefficients& coefficients, Rng& noise_rng, Rng& permutation_rng,
                          const StepOptions& options)
{
    if (fx.rows() == 0) {
        throw ArgumentError("train_step: empty batch");
    }
    if (options.n_d == 0) {
        throw ArgumentError("train_step: n_d must be >= 1");
    }
    const ModelDims dims = state.params.dims;
    const bool use_tc = options.discriminator && dims.dim_v > 0;
    const auto noise = draw_noise<T>(noise_rng, fx.rows(), dims);
    std::vector<std::size_t> perm;
    if (use_tc) {
        perm = permutation_rng.permutation(fx.rows());
    }
    Coefficients effective = coefficients;
    if (!use_tc) {
        effective.lambda2 = 0.0;
    }

    StepOutcome<T> outcome;
    ModelParams<T> grad;
    Matrix<T> latents;
    outcome.losses =
        objective(state.params, fx, fy, noise, use_tc ? &perm : nullptr, effective, &grad, &latents);
    adam_update(state, grad, ParamGroup::vae, options.adam);

    if (use_tc && options.step_index % options.n_d == 0) {
        // Maximize l_t over the discriminator: descend on -l_t with the
        // latents held fixed.
        const auto shuffle = permutation_rng.permutation(fx.rows());
        const Matrix<T> zv = latents.columns(0, dims.dim_v);
        const Matrix<T> zr = latents.columns(dims.dim_v, dims.dim_r);
        const Matrix<T> shuffled = hconcat(shuffle_pairs(zv, shuffle), zr);
        ModelParams<T> disc_grad;
        total_correlation_loss(state.params, latents, shuffled, &disc_grad);
        disc_grad.for_each([](const char*, ParamGroup, AffineLayer<T>& l) {
            for (auto& w : l.weight.values()) {
                w = -w;
            }
            for (auto& b : l.bias) {
                b = -b;
            }
        });
        adam_update(state, disc_grad, ParamGroup::discriminator, options.adam);
        outcome.discriminator_updated = true;
    }
    return outcome;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows)
{
    std::string out = "step,epoch,l_x,l_y,l_c,l_t,total,lambda1,lambda2,beta_x,beta_y\n";
    char line[512];
    for (const auto& r : rows) {
        std::snprintf(line, sizeof line, "%llu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n",
                      static_cast<unsigned long long>(r.step), r.epoch, r.l_x, r.l_y, r.l_c, r.l_t, r.total,
                      r.lambda1, r.lambda2, r.beta_x, r.beta_y);
        out += line;
    }
    return out;
}

ModelDims model_dims(const Dataset& dataset, const RunConfig& config)
{
    return {dataset.manifest.d_x, dataset.manifest.d_y, config.dim_r, config.dim_v};
}

ModelState<float> initial_state(const Dataset& dataset, const RunConfig& config, std::uint64_t seed)
{
    Rng init(Rng::derive(seed, kInit));
    return ModelState<float>::initialized(model_dims(dataset, config), init);
}

FeatureMatrix paired_text(const Dataset& dataset, std::span<const std::size_t> indices)
{
    FeatureMatrix fy(indices.size(), dataset.text.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto src = dataset.text.row(dataset.labels[indices[i]]);
        std::copy(src.begin(), src.end(), fy.row(i).begin());
    }
    return fy;
}

TrainResult train(const Dataset& dataset, std::span<const std::size_t> train_indices, const RunConfig& config,
                  std::uint64_t seed)
{
    config.validate();
    if (train_indices.empty()) {
        throw ArgumentError("train: no seen-class training samples");
    }
    TrainResult result;
    result.state = initial_state(dataset, config, seed);
    Rng order_rng(Rng::derive(seed, kOrder));
    Rng noise_rng(Rng::derive(seed, kNoise));
    Rng perm_rng(Rng::derive(seed, kPermutation));

    std::vector<std::size_t> order(train_indices.begin(), train_indices.end());
    const std::size_t n = order.size();
    const std::size_t batch = config.batch_size;
    StepOptions options;
    options.n_d = config.n_d;
    options.discriminator = config.discriminator;
    options.adam.learning_rate = config.learning_rate;

    std::uint64_t step = 0;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        order_rng.shuffle(std::span<std::size_t>(order));
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t end = std::min(start + batch, n);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const FeatureMatrix fx = dataset.skeleton.gather(idx);
            const FeatureMatrix fy = paired_text(dataset, idx);

            Coefficients c;
            c.lambda1 = lambda1_for_epoch(epoch);
            c.lambda2 = anneal_coefficient(end, n, config.lambda2);
            c.beta_x = anneal_coefficient(end, n, config.beta_x);
            c.beta_y = anneal_coefficient(end, n, config.beta_y);

            options.step_index = ++step;
            const auto outcome = train_step(result.state, fx, fy, c, noise_rng, perm_rng, options);
            if (outcome.discriminator_updated) {
                ++result.discriminator_updates;
            }
            const auto& l = outcome.losses;
            result.metrics.push_back({step, epoch, l.l_x, l.l_y, l.l_c, l.l_t, l.total, c.lambda1,
                                      options.discriminator && config.dim_v > 0 ? c.lambda2 : 0.0, c.beta_x,
                                      c.beta_y});
            if (!std::isfinite(l.total)) {
                throw DataError("training diverged: non-finite loss at step " + std::to_string(step));
            }
        }
    }
    return result;
}

TrainResult train(const Dataset& dataset, const ClassSplit& split, const RunConfig& config)
{
    validate_split(split, dataset.manifest.num_classes());
    if (split.seen.empty()) {
        throw ArgumentError("train: split has no seen classes");
    }
    const auto part = partition_samples(dataset.labels, split, config.holdout_fraction, config.seed);
    return train(dataset, part.train, config, config.seed);
}

#define SADVAE_INSTANTIATE_TRAINER(T)                                                                                \
    template void adam_update<T>(std::span<T>, std::span<T>, std::span<T>, std::span<const T>, std::uint64_t,        \
                                 const AdamConfig&);                                                                 \
    template void adam_update<T>(ModelState<T>&, const ModelParams<T>&, ParamGroup, const AdamConfig&);              \
    template StepOutcome<T> train_step<T>(ModelState<T>&, const Matrix<T>&, const Matrix<T>&, const Coefficients&,   \
                                          Rng&, Rng&, const StepOptions&);

SADVAE_INSTANTIATE_TRAINER(float)
SADVAE_INSTANTIATE_TRAINER(double)

} // namespace sadvae
