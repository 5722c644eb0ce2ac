#pragma once

#include "sadvae/data_io.hpp"
#include "sadvae/model.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace sadvae {

/// Affine layer with a softmax over an ordered class-id table. class_ids is
/// kept ascending so index order is id order.
struct SoftmaxClassifier {
    AffineLayer<float> layer;
    std::vector<std::uint32_t> class_ids;

    std::size_t input_width() const { return layer.in_width(); }
    std::size_t num_classes() const { return class_ids.size(); }

    Matrix<float> logits(const Matrix<float>& input) const;
    /// Softmax rows, computed in double.
    Matrix<double> probabilities(const Matrix<float>& input) const;
    /// Arg-max class id per row; ties go to the lowest id.
    std::vector<std::uint32_t> predict(const Matrix<float>& input) const;

    friend bool operator==(const SoftmaxClassifier&, const SoftmaxClassifier&) = default;
};

struct ClassifierTraining {
    std::size_t epochs = 50;
    double learning_rate = 1e-3;
    std::size_t batch_size = 64;

    static ClassifierTraining from(const RunConfig& config);
};

/// Mean cross-entropy minimized with Adam over seeded mini-batches.
/// targets[i] indexes the output unit of row i.
AffineLayer<float> train_softmax(const Matrix<float>& inputs, std::span<const std::size_t> targets,
                                 std::size_t num_outputs, const ClassifierTraining& training, Rng& rng);

/// C_u: trained on samples_per_class reparameterized draws of z_y from each
/// unseen class's text posterior. text_rows[i] is the text feature of
/// unseen_ids[i].
SoftmaxClassifier train_unseen_classifier(const ModelParams<float>& model, const FeatureMatrix& text_rows,
                                          std::span<const std::uint32_t> unseen_ids, std::size_t samples_per_class,
                                          const ClassifierTraining& training, Rng& rng);

/// C_s over raw skeleton features. Samples are put in a canonical order
/// before the seeded shuffling, so input order does not matter.
SoftmaxClassifier train_seen_classifier(const FeatureMatrix& features, std::span<const std::uint32_t> labels,
                                        std::span<const std::uint32_t> seen_ids, const ClassifierTraining& training,
                                        Rng& rng);

/// softmax(logits / T), sorted descending, first k entries.
std::vector<double> temperature_topk_pool(std::span<const double> seen_logits, double temperature, std::size_t k);

/// Logistic regression over [pooled seen probabilities ; unseen
/// probabilities] giving p_d, the probability of a seen class.
struct DomainGate {
    std::vector<double> weights;
    double bias = 0;
    double temperature = 2.0;
    std::size_t k = 0;

    double probability(std::span<const double> features) const;
    friend bool operator==(const DomainGate&, const DomainGate&) = default;
};

std::vector<double> gate_features(std::span<const double> seen_logits, std::span<const double> unseen_probs,
                                  double temperature, std::size_t k);

struct GateFit {
    DomainGate gate;
    double gradient_norm = 0;
    std::size_t iterations = 0;
    bool converged = false;
};

/// Minimizes 0.5 * |w|^2 + C * sum_i logloss_i (bias unpenalized) with
/// L-BFGS to an infinity-norm gradient of 1e-6. labels: 1 seen, 0 unseen.
/// Learned values are rounded to float32 so the gate survives a checkpoint
/// round trip unchanged.
GateFit train_domain_gate(const Matrix<double>& rows, std::span<const int> labels, double c, double temperature,
                          std::size_t k);

/// Everything needed at inference: the semantic head of the skeleton encoder,
/// C_s, C_u and the gate.
struct GzslPredictor {
    AffineLayer<float> encoder_r;
    SoftmaxClassifier seen;
    SoftmaxClassifier unseen;
    DomainGate gate;

    /// Throws ArgumentError when the parts do not fit together.
    void validate() const;
    friend bool operator==(const GzslPredictor&, const GzslPredictor&) = default;
};

/// Posterior means of z_r.
Matrix<float> semantic_means(const AffineLayer<float>& encoder_r, const Matrix<float>& features);

std::uint32_t predict_zsl(const GzslPredictor& predictor, std::span<const float> features);
std::vector<std::uint32_t> predict_zsl(const GzslPredictor& predictor, const FeatureMatrix& features);

struct GzslPrediction {
    std::uint32_t class_id = 0;
    double p_d = 0;
    /// p_d * p_s (+) (1 - p_d) * p_u, seen classes first.
    std::vector<double> fused;
};

GzslPrediction predict_gzsl(const GzslPredictor& predictor, std::span<const float> features);
std::vector<GzslPrediction> predict_gzsl(const GzslPredictor& predictor, const FeatureMatrix& features);

/// Fuses already computed distributions and picks the arg-max class id.
GzslPrediction fuse_gzsl(std::span<const double> seen_probs, std::span<const double> unseen_probs, double p_d,
                         std::span<const std::uint32_t> seen_ids, std::span<const std::uint32_t> unseen_ids);

void save_predictor(const std::filesystem::path& path, const GzslPredictor& predictor);
GzslPredictor load_predictor(const std::filesystem::path& path);

} // namespace sadvae
