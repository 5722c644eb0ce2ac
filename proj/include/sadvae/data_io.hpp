#pragma once

#include "sadvae/matrix.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace sadvae {

using FeatureMatrix = Matrix<float>;
using LabelVector = std::vector<std::uint32_t>;

// Binary feature file: "SADV", u32 version = 1, u64 rows, u64 cols, then
// rows * cols float32, all little-endian, row-major.
FeatureMatrix read_feature_matrix(const std::filesystem::path& path);
void write_feature_matrix(const FeatureMatrix& matrix, const std::filesystem::path& path);

// Binary label file: "SADL", u32 version = 1, u64 count, then count u32.
LabelVector read_labels(const std::filesystem::path& path);
void write_labels(const LabelVector& labels, const std::filesystem::path& path);

struct ClassEntry {
    std::uint32_t id = 0;
    std::string label;
};

/// Dataset description. Paths are stored as written in the manifest; relative
/// paths resolve against the manifest's directory.
struct DatasetManifest {
    std::vector<ClassEntry> classes;
    std::string skeleton_features;
    std::string skeleton_labels;
    std::string text_features;
    std::size_t d_x = 0;
    std::size_t d_y = 0;
    std::filesystem::path base_dir;

    std::size_t num_classes() const { return classes.size(); }
    std::filesystem::path resolve(const std::string& p) const;
};

DatasetManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// A manifest with its three payloads loaded and cross-checked.
struct Dataset {
    DatasetManifest manifest;
    FeatureMatrix skeleton;
    LabelVector labels;
    FeatureMatrix text;
};

Dataset load_dataset(const std::filesystem::path& manifest_path);
/// Throws DataError if the payloads contradict the manifest.
void validate_dataset(const Dataset& dataset);

struct ClassSplit {
    std::vector<std::uint32_t> seen;   // sorted
    std::vector<std::uint32_t> unseen; // sorted

    bool is_seen(std::uint32_t id) const;
    bool is_unseen(std::uint32_t id) const;
    friend bool operator==(const ClassSplit&, const ClassSplit&) = default;
};

/// Checks disjointness, that ids exist in the manifest and that unseen is
/// nonempty.
void validate_split(const ClassSplit& split, std::size_t num_classes);

/// Uniform sample of num_unseen class ids without replacement. Pure in
/// (class table, num_unseen, seed).
ClassSplit make_random_split(const DatasetManifest& manifest, std::size_t num_unseen, std::uint64_t seed);
ClassSplit make_random_split(std::span<const std::uint32_t> class_ids, std::size_t num_unseen, std::uint64_t seed);

std::string split_to_json(const ClassSplit& split);
ClassSplit split_from_json(const std::string& text);

/// Sample indices used for fitting and for testing under a class split.
/// A fixed fraction of every seen class is held out for seen-class testing;
/// all unseen-class samples are test samples.
struct SamplePartition {
    std::vector<std::size_t> train;
    std::vector<std::size_t> test_seen;
    std::vector<std::size_t> test_unseen;
};

SamplePartition partition_samples(std::span<const std::uint32_t> labels, std::span<const std::size_t> pool,
                                  const ClassSplit& split, double holdout_fraction, std::uint64_t seed);
SamplePartition partition_samples(const LabelVector& labels, const ClassSplit& split, double holdout_fraction,
                                  std::uint64_t seed);

/// Training and evaluation hyperparameters. Defaults follow the NTU-60
/// comparison setting; desk_defaults() is sized for synthetic data.
struct RunConfig {
    double beta_x = 0.023;
    double beta_y = 0.011;
    double lambda2 = 0.011;
    double learning_rate = 3.39e-5;
    std::size_t batch_size = 32;
    std::size_t epochs = 10;
    std::size_t n_d = 5;
    std::size_t dim_r = 160;
    std::size_t dim_v = 8;
    double temperature = 2.0;
    std::size_t samples_per_class = 200;
    std::uint64_t seed = 0;
    bool discriminator = true;
    std::size_t classifier_epochs = 50;
    double classifier_learning_rate = 1e-3;
    std::size_t classifier_batch_size = 64;
    double gate_c = 1.0;
    double holdout_fraction = 0.2;

    static RunConfig desk_defaults();
    void validate() const;
};

RunConfig read_config(const std::filesystem::path& path);
RunConfig config_from_json(const std::string& text, const RunConfig& base = RunConfig{});
std::string config_to_json(const RunConfig& config);

struct SyntheticSpec {
    std::size_t num_classes = 40;
    std::size_t samples_per_class = 200;
    std::size_t d_x = 64;
    std::size_t d_y = 32;
    std::size_t signal_dim = 16;
    std::size_t nuisance_dim = 48;
    double noise_scale = 0.5;
    std::uint64_t seed = 0;
};

/// Generated data plus the generator's ground truth, used by probes.
struct SyntheticData {
    FeatureMatrix skeleton;
    LabelVector labels;
    FeatureMatrix text;
    Matrix<double> codes;    // num_classes x signal_dim, s_c
    Matrix<double> signal;   // per sample s_c + eps
    Matrix<double> nuisance; // per sample u
};

SyntheticData synthesize(const SyntheticSpec& spec);

/// Writes manifest.json, skeleton.sadv, labels.sadl and text.sadv into dir and
/// returns the manifest path.
std::filesystem::path write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir);

} // namespace sadvae
