#include "sadvae/classifiers.hpp"

#include "sadvae/lbfgs.hpp"
#include "sadvae/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sadvae {

namespace {

void softmax_in_place(std::span<double> v)
{
    const double mx = *std::max_element(v.begin(), v.end());
    double sum = 0;
    for (auto& x : v) {
        x = std::exp(x - mx);
        sum += x;
    }
    for (auto& x : v) {
        x /= sum;
    }
}

double softplus(double t) { return t > 0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

double sigmoid(double t)
{
    if (t >= 0) {
        return 1.0 / (1.0 + std::exp(-t));
    }
    const double e = std::exp(t);
    return e / (1.0 + e);
}

// The volatile keeps the narrowing: GCC 11's SLP vectorizer at -O3 was seen to
// drop a float round trip stored next to other narrowed values.
double to_float_exact(double v)
{
    volatile float f = static_cast<float>(v);
    return f;
}

std::vector<float> ids_to_floats(const std::vector<std::uint32_t>& ids)
{
    std::vector<float> out;
    for (const auto id : ids) {
        if (id >= (1u << 24)) {
            throw ArgumentError("class id too large for checkpoint storage");
        }
        out.push_back(static_cast<float>(id));
    }
    return out;
}

std::vector<std::uint32_t> floats_to_ids(const std::vector<float>& values)
{
    std::vector<std::uint32_t> out;
    for (const float v : values) {
        out.push_back(static_cast<std::uint32_t>(v));
    }
    return out;
}

float scalar_tensor(const std::vector<TensorRecord>& tensors, const std::string& name)
{
    const auto& t = find_tensor(tensors, name);
    if (t.data.size() != 1) {
        throw FormatError("checkpoint scalar '" + name + "' malformed");
    }
    return t.data[0];
}

} // namespace

Matrix<float> SoftmaxClassifier::logits(const Matrix<float>& input) const { return layer.forward(input); }

Matrix<double> SoftmaxClassifier::probabilities(const Matrix<float>& input) const
{
    Matrix<double> p = logits(input).cast<double>();
    for (std::size_t r = 0; r < p.rows(); ++r) {
        softmax_in_place(p.row(r));
    }
    return p;
}

std::vector<std::uint32_t> SoftmaxClassifier::predict(const Matrix<float>& input) const
{
    const Matrix<float> z = logits(input);
    std::vector<std::uint32_t> out(z.rows());
    for (std::size_t r = 0; r < z.rows(); ++r) {
        const auto row = z.row(r);
        const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        out[r] = class_ids[best];
    }
    return out;
}

ClassifierTraining ClassifierTraining::from(const RunConfig& config)
{
    return {config.classifier_epochs, config.classifier_learning_rate, config.classifier_batch_size};
}

AffineLayer<float> train_softmax(const Matrix<float>& inputs, std::span<const std::size_t> targets,
                                 std::size_t num_outputs, const ClassifierTraining& training, Rng& rng)
{
    if (inputs.rows() != targets.size()) {
        throw ShapeError("train_softmax: one target per input row required");
    }
    if (num_outputs == 0 || inputs.rows() == 0) {
        throw ArgumentError("train_softmax: need at least one class and one sample");
    }
    AffineLayer<float> layer(inputs.cols(), num_outputs);
    layer.init_uniform(rng);
    AffineLayer<float> m(inputs.cols(), num_outputs);
    AffineLayer<float> v(inputs.cols(), num_outputs);
    AdamConfig adam;
    adam.learning_rate = training.learning_rate;
    std::uint64_t step = 0;
    const std::size_t n = inputs.rows();
    for (std::size_t epoch = 0; epoch < training.epochs; ++epoch) {
        const auto order = rng.permutation(n);
        for (std::size_t start = 0; start < n; start += training.batch_size) {
            const std::size_t end = std::min(start + training.batch_size, n);
            const std::span<const std::size_t> idx(order.data() + start, end - start);
            const Matrix<float> x = inputs.gather(idx);
            Matrix<float> g = layer.forward(x);
            const float inv_b = 1.0f / static_cast<float>(idx.size());
            for (std::size_t r = 0; r < g.rows(); ++r) {
                std::vector<double> p(g.row(r).begin(), g.row(r).end());
                softmax_in_place(p);
                for (std::size_t c = 0; c < num_outputs; ++c) {
                    const double target = c == targets[idx[r]] ? 1.0 : 0.0;
                    g(r, c) = static_cast<float>(p[c] - target) * inv_b;
                }
            }
            AffineLayer<float> grad(inputs.cols(), num_outputs);
            layer.backward(x, g, &grad, nullptr);
            ++step;
            adam_update<float>(layer.weight.values(), m.weight.values(), v.weight.values(), grad.weight.values(), step,
                               adam);
            adam_update<float>(layer.bias, m.bias, v.bias, grad.bias, step, adam);
        }
    }
    return layer;
}

SoftmaxClassifier train_unseen_classifier(const ModelParams<float>& model, const FeatureMatrix& text_rows,
                                          std::span<const std::uint32_t> unseen_ids, std::size_t samples_per_class,
                                          const ClassifierTraining& training, Rng& rng)
{
    if (unseen_ids.empty()) {
        throw ArgumentError("train_unseen_classifier: no unseen classes");
    }
    if (text_rows.rows() != unseen_ids.size()) {
        throw ShapeError("train_unseen_classifier: one text row per unseen class required");
    }
    if (!std::is_sorted(unseen_ids.begin(), unseen_ids.end())) {
        throw ArgumentError("train_unseen_classifier: class ids must be ascending");
    }
    const auto posterior = encode_text(model, text_rows);
    const std::size_t width = posterior.width();
    Matrix<float> samples(unseen_ids.size() * samples_per_class, width);
    std::vector<std::size_t> targets(samples.rows());
    for (std::size_t c = 0; c < unseen_ids.size(); ++c) {
        for (std::size_t s = 0; s < samples_per_class; ++s) {
            const std::size_t row = c * samples_per_class + s;
            targets[row] = c;
            for (std::size_t j = 0; j < width; ++j) {
                const float sigma = std::exp(0.5f * posterior.log_variance(c, j));
                samples(row, j) = posterior.mean(c, j) + sigma * static_cast<float>(rng.normal());
            }
        }
    }
    SoftmaxClassifier out;
    out.layer = train_softmax(samples, targets, unseen_ids.size(), training, rng);
    out.class_ids.assign(unseen_ids.begin(), unseen_ids.end());
    return out;
}

SoftmaxClassifier train_seen_classifier(const FeatureMatrix& features, std::span<const std::uint32_t> labels,
                                        std::span<const std::uint32_t> seen_ids, const ClassifierTraining& training,
                                        Rng& rng)
{
    if (features.rows() != labels.size()) {
        throw ShapeError("train_seen_classifier: one label per feature row required");
    }
    if (seen_ids.empty() || !std::is_sorted(seen_ids.begin(), seen_ids.end())) {
        throw ArgumentError("train_seen_classifier: seen ids must be nonempty and ascending");
    }
    std::vector<std::size_t> target_of(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const auto it = std::lower_bound(seen_ids.begin(), seen_ids.end(), labels[i]);
        if (it == seen_ids.end() || *it != labels[i]) {
            throw DataError("train_seen_classifier: label " + std::to_string(labels[i]) + " is not a seen class");
        }
        target_of[i] = static_cast<std::size_t>(it - seen_ids.begin());
    }
    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (labels[a] != labels[b]) {
            return labels[a] < labels[b];
        }
        const auto ra = features.row(a);
        const auto rb = features.row(b);
        return std::lexicographical_compare(ra.begin(), ra.end(), rb.begin(), rb.end());
    });
    const Matrix<float> inputs = features.gather(order);
    std::vector<std::size_t> targets(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        targets[i] = target_of[order[i]];
    }
    SoftmaxClassifier out;
    out.layer = train_softmax(inputs, targets, seen_ids.size(), training, rng);
    out.class_ids.assign(seen_ids.begin(), seen_ids.end());
    return out;
}

std::vector<double> temperature_topk_pool(std::span<const double> seen_logits, double temperature, std::size_t k)
{
    if (!(temperature > 0)) {
        throw ArgumentError("temperature_topk_pool: temperature must be > 0");
    }
    if (k == 0 || k > seen_logits.size()) {
        throw ArgumentError("temperature_topk_pool: k must be in [1, number of seen classes]");
    }
    std::vector<double> p(seen_logits.begin(), seen_logits.end());
    for (auto& v : p) {
        v /= temperature;
    }
    softmax_in_place(p);
    std::sort(p.begin(), p.end(), std::greater<>());
    p.resize(k);
    return p;
}

double DomainGate::probability(std::span<const double> features) const
{
    if (features.size() != weights.size()) {
        throw ShapeError("domain gate expects " + std::to_string(weights.size()) + " features");
    }
    double s = bias;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        s += weights[i] * features[i];
    }
    return sigmoid(s);
}

std::vector<double> gate_features(std::span<const double> seen_logits, std::span<const double> unseen_probs,
                                  double temperature, std::size_t k)
{
    std::vector<double> f = temperature_topk_pool(seen_logits, temperature, k);
    f.insert(f.end(), unseen_probs.begin(), unseen_probs.end());
    return f;
}

GateFit train_domain_gate(const Matrix<double>& rows, std::span<const int> labels, double c, double temperature,
                          std::size_t k)
{
    if (rows.rows() != labels.size()) {
        throw ShapeError("train_domain_gate: one label per row required");
    }
    if (rows.cols() != 2 * k) {
        throw ShapeError("train_domain_gate: rows must have width 2k");
    }
    if (!(c > 0)) {
        throw ArgumentError("train_domain_gate: C must be > 0");
    }
    const bool has_seen = std::find(labels.begin(), labels.end(), 1) != labels.end();
    const bool has_unseen = std::find(labels.begin(), labels.end(), 0) != labels.end();
    if (!has_seen || !has_unseen) {
        throw ArgumentError("train_domain_gate: both seen (1) and unseen (0) labels are required");
    }
    const std::size_t d = rows.cols();
    const SmoothObjective objective = [&](std::span<const double> x, std::span<double> grad) {
        double f = 0;
        std::fill(grad.begin(), grad.end(), 0.0);
        for (std::size_t j = 0; j < d; ++j) {
            f += 0.5 * x[j] * x[j];
            grad[j] = x[j];
        }
        for (std::size_t i = 0; i < rows.rows(); ++i) {
            const double y = labels[i] == 1 ? 1.0 : -1.0;
            const auto r = rows.row(i);
            double s = x[d];
            for (std::size_t j = 0; j < d; ++j) {
                s += x[j] * r[j];
            }
            f += c * softplus(-y * s);
            const double coef = -c * y * sigmoid(-y * s);
            for (std::size_t j = 0; j < d; ++j) {
                grad[j] += coef * r[j];
            }
            grad[d] += coef;
        }
        return f;
    };
    const auto fit = minimize_lbfgs(objective, std::vector<double>(d + 1, 0.0));

    GateFit out;
    out.gate.weights.resize(d);
    for (std::size_t j = 0; j < d; ++j) {
        out.gate.weights[j] = to_float_exact(fit.x[j]);
    }
    out.gate.bias = to_float_exact(fit.x[d]);
    out.gate.temperature = to_float_exact(temperature);
    out.gate.k = k;
    out.gradient_norm = fit.gradient_norm;
    out.iterations = fit.iterations;
    out.converged = fit.converged;
    return out;
}

void GzslPredictor::validate() const
{
    if (unseen.class_ids.empty()) {
        throw ArgumentError("predictor has no unseen classes");
    }
    if (gate.k != unseen.class_ids.size()) {
        throw ArgumentError("gate k must equal the number of unseen classes");
    }
    if (!seen.class_ids.empty() && gate.k > seen.class_ids.size()) {
        throw ArgumentError("gate k exceeds the number of seen classes");
    }
    if (unseen.input_width() != encoder_r.out_width() / 2) {
        throw ArgumentError("unseen classifier width does not match the semantic latent width");
    }
}

Matrix<float> semantic_means(const AffineLayer<float>& encoder_r, const Matrix<float>& features)
{
    require_finite(features, "skeleton features");
    return encoder_r.forward(features).columns(0, encoder_r.out_width() / 2);
}

std::vector<std::uint32_t> predict_zsl(const GzslPredictor& predictor, const FeatureMatrix& features)
{
    if (predictor.unseen.class_ids.empty()) {
        throw ArgumentError("predict_zsl: predictor has no unseen classes");
    }
    if (features.cols() != predictor.encoder_r.in_width()) {
        throw ShapeError("predict_zsl: feature width does not match the encoder");
    }
    return predictor.unseen.predict(semantic_means(predictor.encoder_r, features));
}

std::uint32_t predict_zsl(const GzslPredictor& predictor, std::span<const float> features)
{
    const FeatureMatrix row(1, features.size(), std::vector<float>(features.begin(), features.end()));
    return predict_zsl(predictor, row)[0];
}

GzslPrediction fuse_gzsl(std::span<const double> seen_probs, std::span<const double> unseen_probs, double p_d,
                         std::span<const std::uint32_t> seen_ids, std::span<const std::uint32_t> unseen_ids)
{
    if (seen_probs.size() != seen_ids.size() || unseen_probs.size() != unseen_ids.size()) {
        throw ShapeError("fuse_gzsl: probability and id tables differ in length");
    }
    if (unseen_ids.empty()) {
        throw ArgumentError("fuse_gzsl: no unseen classes");
    }
    GzslPrediction out;
    out.p_d = p_d;
    out.fused.reserve(seen_probs.size() + unseen_probs.size());
    for (const double p : seen_probs) {
        out.fused.push_back(p_d * p);
    }
    for (const double p : unseen_probs) {
        out.fused.push_back((1.0 - p_d) * p);
    }
    auto id_at = [&](std::size_t i) { return i < seen_ids.size() ? seen_ids[i] : unseen_ids[i - seen_ids.size()]; };
    std::size_t best = 0;
    for (std::size_t i = 1; i < out.fused.size(); ++i) {
        if (out.fused[i] > out.fused[best] || (out.fused[i] == out.fused[best] && id_at(i) < id_at(best))) {
            best = i;
        }
    }
    out.class_id = id_at(best);
    return out;
}

std::vector<GzslPrediction> predict_gzsl(const GzslPredictor& predictor, const FeatureMatrix& features)
{
    predictor.validate();
    if (features.cols() != predictor.encoder_r.in_width() || features.cols() != predictor.seen.input_width()) {
        throw ShapeError("predict_gzsl: feature width does not match the predictor");
    }
    const Matrix<float> seen_logits = predictor.seen.logits(features);
    const Matrix<double> seen_probs = predictor.seen.probabilities(features);
    const Matrix<double> unseen_probs = predictor.unseen.probabilities(semantic_means(predictor.encoder_r, features));
    std::vector<GzslPrediction> out;
    out.reserve(features.rows());
    for (std::size_t r = 0; r < features.rows(); ++r) {
        const std::vector<double> logits(seen_logits.row(r).begin(), seen_logits.row(r).end());
        const auto f = gate_features(logits, unseen_probs.row(r), predictor.gate.temperature, predictor.gate.k);
        const double p_d = predictor.gate.probability(f);
        out.push_back(fuse_gzsl(seen_probs.row(r), unseen_probs.row(r), p_d, predictor.seen.class_ids,
                                predictor.unseen.class_ids));
    }
    return out;
}

GzslPrediction predict_gzsl(const GzslPredictor& predictor, std::span<const float> features)
{
    const FeatureMatrix row(1, features.size(), std::vector<float>(features.begin(), features.end()));
    return predict_gzsl(predictor, row)[0];
}

void save_predictor(const std::filesystem::path& path, const GzslPredictor& p)
{
    p.validate();
    std::vector<TensorRecord> t;
    append_layer_tensors(t, "encoder_r", p.encoder_r);
    append_layer_tensors(t, "seen", p.seen.layer);
    t.push_back({"seen.class_ids", {p.seen.class_ids.size()}, ids_to_floats(p.seen.class_ids)});
    append_layer_tensors(t, "unseen", p.unseen.layer);
    t.push_back({"unseen.class_ids", {p.unseen.class_ids.size()}, ids_to_floats(p.unseen.class_ids)});
    std::vector<float> w(p.gate.weights.begin(), p.gate.weights.end());
    t.push_back({"gate.weights", {w.size()}, w});
    t.push_back({"gate.bias", {1}, {static_cast<float>(p.gate.bias)}});
    t.push_back({"gate.temperature", {1}, {static_cast<float>(p.gate.temperature)}});
    t.push_back({"gate.k", {1}, {static_cast<float>(p.gate.k)}});
    write_tensor_file(path, "SADC", t);
}

GzslPredictor load_predictor(const std::filesystem::path& path)
{
    const auto t = read_tensor_file(path, "SADC");
    GzslPredictor p;
    p.encoder_r = layer_from_tensors(t, "encoder_r");
    p.seen.layer = layer_from_tensors(t, "seen");
    p.seen.class_ids = floats_to_ids(find_tensor(t, "seen.class_ids").data);
    p.unseen.layer = layer_from_tensors(t, "unseen");
    p.unseen.class_ids = floats_to_ids(find_tensor(t, "unseen.class_ids").data);
    const auto& w = find_tensor(t, "gate.weights").data;
    p.gate.weights.assign(w.begin(), w.end());
    p.gate.bias = scalar_tensor(t, "gate.bias");
    p.gate.temperature = scalar_tensor(t, "gate.temperature");
    p.gate.k = static_cast<std::size_t>(scalar_tensor(t, "gate.k"));
    if (p.seen.layer.out_width() != p.seen.class_ids.size() || p.unseen.layer.out_width() != p.unseen.class_ids.size()) {
        throw FormatError("predictor checkpoint: class tables do not match classifier widths");
    }
    p.validate();
    return p;
}

} // namespace sadvae
