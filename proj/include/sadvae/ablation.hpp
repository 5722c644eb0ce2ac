#pragma once

#include "sadvae/evaluation.hpp"
#include "sadvae/model.hpp"

#include <string>
#include <string_view>

namespace sadvae {

enum class AblationVariant { naive, fd, fd_tc };

std::string_view variant_name(AblationVariant variant);
/// Throws ArgumentError for an unknown tag.
AblationVariant parse_variant(std::string_view tag);

/// naive drops the v head and the discriminator, fd drops the discriminator,
/// fd_tc leaves the config alone. dim_r is never changed.
RunConfig variant_config(const RunConfig& config, AblationVariant variant);

struct Dependence {
    double value = 0;         // largest canonical correlation, in [0, 1]
    bool degenerate = false;  // a block had no variance
};

/// Largest canonical correlation between the r and v posterior means over
/// the batch. Needs at least 10 rows.
Dependence latent_dependence(const ModelParams<float>& model, const FeatureMatrix& features);
/// Same statistic on two explicit blocks with equal row counts.
Dependence max_canonical_correlation(const Matrix<double>& a, const Matrix<double>& b);

struct AblationRow {
    AblationVariant variant = AblationVariant::fd_tc;
    std::uint64_t seed = 0;
    double zsl = 0;
    bool has_gzsl = false;
    GzslReport gzsl;
    Dependence dependence;
};

struct AblationOptions {
    bool gzsl = true; // calibrate and report GZSL too (doubles the training cost)
};

/// Each variant sees the same data, split, order and seeds; only the config
/// differs. One row per (variant, seed).
std::vector<AblationRow> run_ablation(const Dataset& dataset, const ClassSplit& split, const RunConfig& config,
                                      std::span<const AblationVariant> variants, std::span<const std::uint64_t> seeds,
                                      const AblationOptions& options = {});

/// Mean ZSL accuracy per variant over all rows of that variant.
double mean_zsl(std::span<const AblationRow> rows, AblationVariant variant);

std::string ablation_csv(std::span<const AblationRow> rows);

} // namespace sadvae
