#pragma once

#include "sadvae/data_io.hpp"
#include "sadvae/losses.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace sadvae {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Per-epoch ramp: 0 while k < n/3, then 1.5 * (k/n - 1/3) * target.
double anneal_coefficient(std::size_t k, std::size_t n, double target);

/// 0 for the first epoch, 1 afterwards.
double lambda1_for_epoch(std::size_t epoch_index);

/// One bias-corrected Adam step on flat buffers. step is the 1-based count of
/// updates including this one.
template <typename T>
void adam_update(std::span<T> params, std::span<T> first_moment, std::span<T> second_moment,
                 std::span<const T> gradient, std::uint64_t step, const AdamConfig& config);

/// Adam step on every layer of one parameter group; increments that group's
/// step count. Layers outside the group are left untouched.
template <typename T>
void adam_update(ModelState<T>& state, const ModelParams<T>& gradient, ParamGroup group, const AdamConfig& config);

template <typename T>
struct StepOutcome {
    LossBreakdown<T> losses;
    bool discriminator_updated = false;
};

struct StepOptions {
    std::uint64_t step_index = 1; // 1-based global VAE step number
    std::size_t n_d = 1;
    bool discriminator = true;
    AdamConfig adam;
};

/// One VAE/encoder update on the batch, followed by a discriminator update
/// when step_index is a multiple of n_d. The discriminator step reuses the
/// batch's sampled latents (detached) with a fresh permutation.
template <typename T>
StepOutcome<T> train_step(ModelState<T>& state, const Matrix<T>& fx, const Matrix<T>& fy,
                          const Coefficients& coefficients, Rng& noise_rng, Rng& permutation_rng,
                          const StepOptions& options);

struct MetricsRow {
    std::uint64_t step = 0;
    std::size_t epoch = 0;
    double l_x = 0;
    double l_y = 0;
    double l_c = 0;
    double l_t = 0;
    double total = 0;
    double lambda1 = 0;
    double lambda2 = 0;
    double beta_x = 0;
    double beta_y = 0;
};

std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct TrainResult {
    ModelState<float> state;
    std::vector<MetricsRow> metrics;
    std::uint64_t discriminator_updates = 0;
};

ModelDims model_dims(const Dataset& dataset, const RunConfig& config);

/// Fresh model exactly as train() initializes it for this seed.
ModelState<float> initial_state(const Dataset& dataset, const RunConfig& config, std::uint64_t seed);

/// Trains on the given sample indices (all must belong to seen classes).
TrainResult train(const Dataset& dataset, std::span<const std::size_t> train_indices, const RunConfig& config,
                  std::uint64_t seed);

/// Trains on the training partition of the split's seen classes.
TrainResult train(const Dataset& dataset, const ClassSplit& split, const RunConfig& config);

/// f_y rows matching each sample's label.
FeatureMatrix paired_text(const Dataset& dataset, std::span<const std::size_t> indices);

} // namespace sadvae
