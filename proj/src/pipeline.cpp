#include "sadvae/pipeline.hpp"

namespace sadvae {

namespace {

constexpr std::uint64_t kSeenClassifier = 21;
constexpr std::uint64_t kUnseenClassifier = 22;
constexpr std::uint64_t kProxySplit = 23;
constexpr std::uint64_t kProxySeed = 24;

FeatureMatrix text_rows(const Dataset& dataset, std::span<const std::uint32_t> ids)
{
    std::vector<std::size_t> rows(ids.begin(), ids.end());
    return dataset.text.gather(rows);
}

} // namespace

GzslPredictor assemble_predictor(const Dataset& dataset, const ClassSplit& split,
                                 std::span<const std::size_t> train_indices, const ModelParams<float>& model,
                                 const RunConfig& config, std::uint64_t seed)
{
    const auto training = ClassifierTraining::from(config);
    GzslPredictor p;
    p.encoder_r = model.head_r;

    LabelVector labels;
    labels.reserve(train_indices.size());
    for (const auto i : train_indices) {
        labels.push_back(dataset.labels[i]);
    }
    Rng seen_rng(Rng::derive(seed, kSeenClassifier));
    p.seen = train_seen_classifier(dataset.skeleton.gather(train_indices), labels, split.seen, training, seen_rng);

    Rng unseen_rng(Rng::derive(seed, kUnseenClassifier));
    p.unseen = train_unseen_classifier(model, text_rows(dataset, split.unseen), split.unseen, config.samples_per_class,
                                       training, unseen_rng);

    p.gate.k = split.unseen.size();
    p.gate.temperature = static_cast<float>(config.temperature);
    p.gate.weights.assign(2 * p.gate.k, 0.0);
    return p;
}

GateFit calibrate_gzsl(const Dataset& dataset, const ClassSplit& split, std::span<const std::size_t> seen_pool,
                       const RunConfig& config, std::uint64_t seed)
{
    const std::size_t k = split.unseen.size();
    if (split.seen.size() <= k || split.seen.size() - k < k) {
        throw ArgumentError("calibrate_gzsl: need at least " + std::to_string(2 * k) +
                            " seen classes to carve a proxy split with " + std::to_string(k) + " proxy-unseen classes");
    }
    const ClassSplit proxy = make_random_split(split.seen, k, Rng::derive(seed, kProxySplit));
    const std::uint64_t proxy_seed = Rng::derive(seed, kProxySeed);
    const auto part = partition_samples(dataset.labels, seen_pool, proxy, config.holdout_fraction, proxy_seed);
    if (part.test_seen.empty() || part.test_unseen.empty()) {
        throw ArgumentError("calibrate_gzsl: proxy split leaves no gate training samples");
    }

    const auto trained = train(dataset, part.train, config, proxy_seed);
    const auto predictor =
        assemble_predictor(dataset, proxy, part.train, trained.state.params, config, proxy_seed);

    std::vector<std::size_t> rows = part.test_seen;
    rows.insert(rows.end(), part.test_unseen.begin(), part.test_unseen.end());
    std::vector<int> labels(rows.size(), 0);
    std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(part.test_seen.size()), 1);

    const FeatureMatrix fx = dataset.skeleton.gather(rows);
    const Matrix<float> seen_logits = predictor.seen.logits(fx);
    const Matrix<double> unseen_probs = predictor.unseen.probabilities(semantic_means(predictor.encoder_r, fx));
    Matrix<double> features(rows.size(), 2 * k);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const std::vector<double> logits(seen_logits.row(r).begin(), seen_logits.row(r).end());
        const auto f = gate_features(logits, unseen_probs.row(r), config.temperature, k);
        std::copy(f.begin(), f.end(), features.row(r).begin());
    }
    return train_domain_gate(features, labels, config.gate_c, config.temperature, k);
}

PipelineResult fit_zsl(const Dataset& dataset, const ClassSplit& split, const RunConfig& config)
{
    validate_split(split, dataset.manifest.num_classes());
    PipelineResult out;
    out.partition = partition_samples(dataset.labels, split, config.holdout_fraction, config.seed);
    out.training = train(dataset, out.partition.train, config, config.seed);
    out.predictor =
        assemble_predictor(dataset, split, out.partition.train, out.training.state.params, config, config.seed);
    return out;
}

PipelineResult fit_pipeline(const Dataset& dataset, const ClassSplit& split, const RunConfig& config)
{
    PipelineResult out = fit_zsl(dataset, split, config);
    out.gate_fit = calibrate_gzsl(dataset, split, out.partition.train, config, config.seed);
    out.predictor.gate = out.gate_fit.gate;
    out.predictor.validate();
    return out;
}

} // namespace sadvae
