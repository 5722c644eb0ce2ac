#pragma once

#include "sadvae/data_io.hpp"

#include <functional>
#include <string>

namespace sadvae {

/// Two-phase random search space. Phase 1 samples (beta_x, beta_y) with the
/// other items at their initial values; phase 2 keeps the best betas and
/// samples the rest.
struct SearchSpace {
    double beta_low = 0.0;
    double beta_high = 1.0;
    double lr_exponent_low = -6.0;
    double lr_exponent_high = -3.0;
    std::vector<std::size_t> batch_sizes{32, 64, 128, 256};
    std::size_t n_d_low = 1;
    std::size_t n_d_high = 16;
    std::vector<std::size_t> dim_r_values{128, 144, 160, 176, 192, 208, 224, 240, 256};
    std::vector<std::size_t> dim_v_values{8, 12, 16, 20, 24, 28, 32};

    double initial_lr_exponent = -5.0;
    std::size_t initial_batch_size = 64;
    std::size_t initial_n_d = 10;
    std::size_t initial_dim_r = 192;
    std::size_t initial_dim_v = 8;

    std::size_t phase1_trials = 5;
    std::size_t phase2_trials = 100;

    void validate() const;
};

struct TrialRecord {
    std::size_t index = 0;
    int phase = 1;
    RunConfig config;
    double harmonic_mean = 0;
};

struct SearchResult {
    RunConfig best;
    std::vector<TrialRecord> trials; // ordered by index
};

/// Scores one candidate; higher is better. Must be safe to call from several
/// threads at once when threads > 1.
using TrialEvaluator = std::function<double(const RunConfig&, std::size_t trial_index)>;

/// Deterministic in seed: all candidates are drawn from one seeded stream in
/// index order, and scores are collected by index whatever the thread count.
/// The winner is the best phase-2 trial, ties going to the lower index.
SearchResult hyperparameter_search(const RunConfig& base, const SearchSpace& space, std::uint64_t seed,
                                   const TrialEvaluator& evaluate, std::size_t threads = 1);

/// The validation evaluator: |unseen| proxy-unseen classes are carved from
/// the seen classes and the full pipeline is scored by GZSL H on them. The
/// real unseen classes are never touched.
TrialEvaluator validation_evaluator(const Dataset& dataset, const ClassSplit& split, std::uint64_t seed);

/// SADVAE_THREADS, defaulting to 1.
std::size_t thread_count_from_env();

std::string trial_log_csv(const SearchResult& result);

} // namespace sadvae
