#pragma once

#include "sadvae/classifiers.hpp"
#include "sadvae/data_io.hpp"

#include <map>
#include <string>

namespace sadvae {

/// Percentages in [0, 100].
struct GzslReport {
    double acc_seen = 0;
    double acc_unseen = 0;
    double harmonic_mean = 0;
    std::size_t seen_count = 0;
    std::size_t unseen_count = 0;

    friend bool operator==(const GzslReport&, const GzslReport&) = default;
};

/// 2ab / (a + b), or 0 when a + b is 0.
double harmonic_mean(double acc_seen, double acc_unseen);

/// Hit rate in percent. Throws ArgumentError on length mismatch or an empty set.
double accuracy(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth);

/// ZSL accuracy of precomputed predictions; every label must be unseen.
double zsl_accuracy(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> labels,
                    std::span<const std::uint32_t> unseen_ids);
double zsl_accuracy(const GzslPredictor& predictor, const FeatureMatrix& features,
                    std::span<const std::uint32_t> labels);

/// Micro accuracy inside the seen and unseen partitions of the test labels.
GzslReport gzsl_metrics(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> labels,
                        const ClassSplit& split);
GzslReport gzsl_metrics(const GzslPredictor& predictor, const FeatureMatrix& features,
                        std::span<const std::uint32_t> labels, const ClassSplit& split);

/// Hit rate per true class; classes missing from labels are absent.
std::map<std::uint32_t, double> per_class_accuracy(std::span<const std::uint32_t> predicted,
                                                   std::span<const std::uint32_t> labels);

/// ZSL and GZSL numbers for one split of one dataset.
struct SplitEvaluation {
    double zsl = 0;
    GzslReport gzsl;
    std::map<std::uint32_t, double> unseen_per_class;
};

/// Evaluates a calibrated predictor on the partition's test samples.
SplitEvaluation evaluate_split(const GzslPredictor& predictor, const Dataset& dataset, const ClassSplit& split,
                               const SamplePartition& partition);

struct RepeatReport {
    std::uint64_t split_seed = 0;
    ClassSplit split;
    SplitEvaluation result;
};

struct ProtocolReport {
    std::vector<RepeatReport> repeats;
    double zsl = 0;
    GzslReport gzsl; // arithmetic means of the per-repeat values
};

/// Plain arithmetic mean of per-repeat metrics.
ProtocolReport average_repeats(std::vector<RepeatReport> repeats);

/// For r in [0, repeats): split with seed base_seed + r, then the full
/// train -> calibrate -> evaluate pipeline.
ProtocolReport run_random_split_protocol(const Dataset& dataset, std::size_t num_unseen, std::size_t repeats,
                                         const RunConfig& config, std::uint64_t base_seed);

std::string report_to_json(const SplitEvaluation& evaluation);
std::string report_to_json(const ProtocolReport& report);
/// One row per repeat and a final "average" row.
std::string protocol_csv(const ProtocolReport& report);

} // namespace sadvae
