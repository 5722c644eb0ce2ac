#pragma once

#include "sadvae/classifiers.hpp"
#include "sadvae/trainer.hpp"

namespace sadvae {

/// C_s on the given seen-class samples and C_u on the unseen text features.
/// The gate is left empty apart from k and T; calibration fills it in.
GzslPredictor assemble_predictor(const Dataset& dataset, const ClassSplit& split,
                                 std::span<const std::size_t> train_indices, const ModelParams<float>& model,
                                 const RunConfig& config, std::uint64_t seed);

/// Carves |unseen| proxy-unseen classes out of the seen classes, retrains the
/// model and both classifiers on what is left, and fits the gate on held-out
/// proxy-seen (label 1) and proxy-unseen (label 0) samples.
///
/// seen_pool is the set of seen-class samples calibration may touch.
/// Requires |seen| - |unseen| >= |unseen| so top-k pooling is defined.
GateFit calibrate_gzsl(const Dataset& dataset, const ClassSplit& split, std::span<const std::size_t> seen_pool,
                       const RunConfig& config, std::uint64_t seed);

struct PipelineResult {
    TrainResult training;
    SamplePartition partition;
    GzslPredictor predictor;
    GateFit gate_fit;
};

/// train -> C_s/C_u -> calibrate, all seeded from config.seed.
PipelineResult fit_pipeline(const Dataset& dataset, const ClassSplit& split, const RunConfig& config);

/// The predictor without a calibrated gate, enough for ZSL.
PipelineResult fit_zsl(const Dataset& dataset, const ClassSplit& split, const RunConfig& config);

} // namespace sadvae
