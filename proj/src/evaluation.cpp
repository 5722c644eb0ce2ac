#include "sadvae/evaluation.hpp"

#include "sadvae/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <json.hpp>

namespace sadvae {

using json = nlohmann::ordered_json;

double harmonic_mean(double acc_seen, double acc_unseen)
{
    const double sum = acc_seen + acc_unseen;
    return sum > 0 ? 2.0 * acc_seen * acc_unseen / sum : 0.0;
}

double accuracy(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> truth)
{
    if (predicted.size() != truth.size()) {
        throw ArgumentError("accuracy: prediction and label counts differ");
    }
    if (truth.empty()) {
        throw ArgumentError("accuracy: empty test set");
    }
    std::size_t hits = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        hits += predicted[i] == truth[i] ? 1 : 0;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(truth.size());
}

double zsl_accuracy(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> labels,
                    std::span<const std::uint32_t> unseen_ids)
{
    for (const auto y : labels) {
        if (std::find(unseen_ids.begin(), unseen_ids.end(), y) == unseen_ids.end()) {
            throw DataError("zsl_accuracy: label " + std::to_string(y) + " is not an unseen class");
        }
    }
    return accuracy(predicted, labels);
}

double zsl_accuracy(const GzslPredictor& predictor, const FeatureMatrix& features,
                    std::span<const std::uint32_t> labels)
{
    if (features.rows() != labels.size()) {
        throw ShapeError("zsl_accuracy: one label per feature row required");
    }
    const auto& ids = predictor.unseen.class_ids;
    for (const auto y : labels) {
        if (std::find(ids.begin(), ids.end(), y) == ids.end()) {
            throw DataError("zsl_accuracy: label " + std::to_string(y) + " is not an unseen class");
        }
    }
    return accuracy(predict_zsl(predictor, features), labels);
}

GzslReport gzsl_metrics(std::span<const std::uint32_t> predicted, std::span<const std::uint32_t> labels,
                        const ClassSplit& split)
{
    if (predicted.size() != labels.size()) {
        throw ArgumentError("gzsl_metrics: prediction and label counts differ");
    }
    std::vector<std::uint32_t> ps, ls, pu, lu;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (split.is_seen(labels[i])) {
            ps.push_back(predicted[i]);
            ls.push_back(labels[i]);
        } else if (split.is_unseen(labels[i])) {
            pu.push_back(predicted[i]);
            lu.push_back(labels[i]);
        } else {
            throw DataError("gzsl_metrics: label " + std::to_string(labels[i]) + " is in neither class set");
        }
    }
    if (ls.empty() || lu.empty()) {
        throw ArgumentError("gzsl_metrics: seen and unseen test partitions must both be nonempty");
    }
    GzslReport r;
    r.acc_seen = accuracy(ps, ls);
    r.acc_unseen = accuracy(pu, lu);
    r.harmonic_mean = harmonic_mean(r.acc_seen, r.acc_unseen);
    r.seen_count = ls.size();
    r.unseen_count = lu.size();
    return r;
}

GzslReport gzsl_metrics(const GzslPredictor& predictor, const FeatureMatrix& features,
                        std::span<const std::uint32_t> labels, const ClassSplit& split)
{
    if (features.rows() != labels.size()) {
        throw ShapeError("gzsl_metrics: one label per feature row required");
    }
    const auto predictions = predict_gzsl(predictor, features);
    std::vector<std::uint32_t> ids;
    ids.reserve(predictions.size());
    for (const auto& p : predictions) {
        ids.push_back(p.class_id);
    }
    return gzsl_metrics(ids, labels, split);
}

std::map<std::uint32_t, double> per_class_accuracy(std::span<const std::uint32_t> predicted,
                                                   std::span<const std::uint32_t> labels)
{
    if (predicted.size() != labels.size()) {
        throw ArgumentError("per_class_accuracy: prediction and label counts differ");
    }
    std::map<std::uint32_t, std::pair<std::size_t, std::size_t>> counts;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto& c = counts[labels[i]];
        c.first += predicted[i] == labels[i] ? 1 : 0;
        ++c.second;
    }
    std::map<std::uint32_t, double> out;
    for (const auto& [id, c] : counts) {
        out[id] = 100.0 * static_cast<double>(c.first) / static_cast<double>(c.second);
    }
    return out;
}

SplitEvaluation evaluate_split(const GzslPredictor& predictor, const Dataset& dataset, const ClassSplit& split,
                               const SamplePartition& partition)
{
    SplitEvaluation out;
    const FeatureMatrix fu = dataset.skeleton.gather(partition.test_unseen);
    LabelVector lu;
    for (const auto i : partition.test_unseen) {
        lu.push_back(dataset.labels[i]);
    }
    const auto zsl_pred = predict_zsl(predictor, fu);
    out.zsl = zsl_accuracy(zsl_pred, lu, split.unseen);
    out.unseen_per_class = per_class_accuracy(zsl_pred, lu);

    std::vector<std::size_t> rows = partition.test_seen;
    rows.insert(rows.end(), partition.test_unseen.begin(), partition.test_unseen.end());
    LabelVector labels;
    for (const auto i : rows) {
        labels.push_back(dataset.labels[i]);
    }
    out.gzsl = gzsl_metrics(predictor, dataset.skeleton.gather(rows), labels, split);
    return out;
}

ProtocolReport average_repeats(std::vector<RepeatReport> repeats)
{
    if (repeats.empty()) {
        throw ArgumentError("protocol: at least one repeat required");
    }
    ProtocolReport out;
    const double n = static_cast<double>(repeats.size());
    for (const auto& r : repeats) {
        out.zsl += r.result.zsl / n;
        out.gzsl.acc_seen += r.result.gzsl.acc_seen / n;
        out.gzsl.acc_unseen += r.result.gzsl.acc_unseen / n;
        out.gzsl.harmonic_mean += r.result.gzsl.harmonic_mean / n;
        out.gzsl.seen_count += r.result.gzsl.seen_count;
        out.gzsl.unseen_count += r.result.gzsl.unseen_count;
    }
    out.repeats = std::move(repeats);
    return out;
}

ProtocolReport run_random_split_protocol(const Dataset& dataset, std::size_t num_unseen, std::size_t repeats,
                                         const RunConfig& config, std::uint64_t base_seed)
{
    if (repeats == 0) {
        throw ArgumentError("protocol: at least one repeat required");
    }
    std::vector<RepeatReport> out;
    for (std::size_t r = 0; r < repeats; ++r) {
        RepeatReport rep;
        rep.split_seed = base_seed + r;
        rep.split = make_random_split(dataset.manifest, num_unseen, rep.split_seed);
        const auto fitted = fit_pipeline(dataset, rep.split, config);
        rep.result = evaluate_split(fitted.predictor, dataset, rep.split, fitted.partition);
        out.push_back(std::move(rep));
    }
    return average_repeats(std::move(out));
}

namespace {

json gzsl_json(const GzslReport& g)
{
    return json{{"acc_seen", g.acc_seen},
                {"acc_unseen", g.acc_unseen},
                {"harmonic_mean", g.harmonic_mean},
                {"seen_count", g.seen_count},
                {"unseen_count", g.unseen_count}};
}

json evaluation_json(const SplitEvaluation& e)
{
    json per_class = json::object();
    for (const auto& [id, acc] : e.unseen_per_class) {
        per_class[std::to_string(id)] = acc;
    }
    return json{{"zsl_accuracy", e.zsl}, {"gzsl", gzsl_json(e.gzsl)}, {"unseen_per_class", per_class}};
}

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

} // namespace

std::string report_to_json(const SplitEvaluation& evaluation) { return evaluation_json(evaluation).dump(2) + "\n"; }

std::string report_to_json(const ProtocolReport& report)
{
    json repeats = json::array();
    for (const auto& r : report.repeats) {
        repeats.push_back(json{{"split_seed", r.split_seed},
                               {"seen", r.split.seen},
                               {"unseen", r.split.unseen},
                               {"result", evaluation_json(r.result)}});
    }
    json doc{{"repeats", repeats}, {"average", json{{"zsl_accuracy", report.zsl}, {"gzsl", gzsl_json(report.gzsl)}}}};
    return doc.dump(2) + "\n";
}

std::string protocol_csv(const ProtocolReport& report)
{
    std::string out = "repeat,split_seed,zsl,acc_seen,acc_unseen,harmonic_mean\n";
    for (std::size_t i = 0; i < report.repeats.size(); ++i) {
        const auto& r = report.repeats[i];
        out += std::to_string(i) + "," + std::to_string(r.split_seed) + "," + fmt(r.result.zsl) + "," +
               fmt(r.result.gzsl.acc_seen) + "," + fmt(r.result.gzsl.acc_unseen) + "," +
               fmt(r.result.gzsl.harmonic_mean) + "\n";
    }
    out += "average,," + fmt(report.zsl) + "," + fmt(report.gzsl.acc_seen) + "," + fmt(report.gzsl.acc_unseen) + "," +
           fmt(report.gzsl.harmonic_mean) + "\n";
    return out;
}

} // namespace sadvae
