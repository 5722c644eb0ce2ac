#include "sadvae/data_io.hpp"

#include "sadvae/binary.hpp"
#include "sadvae/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace sadvae {

using nlohmann::json;

namespace {

constexpr std::string_view kFeatureMagic = "SADV";
constexpr std::string_view kLabelMagic = "SADL";

// Nuisance construction: each sample picks one of kStyles fixed offsets and
// adds a uniform jitter. Both are independent of the class.
constexpr std::size_t kStyles = 6;
constexpr double kStyleAmplitude = 1.5;
constexpr double kJitterAmplitude = 0.75;
constexpr double kTextNoise = 0.02;

} // namespace

FeatureMatrix read_feature_matrix(const std::filesystem::path& path)
{
    const std::string raw = binary::read_file(path);
    const std::string what = "feature matrix " + path.string();
    binary::Reader in(raw, what);
    binary::expect_header(in, kFeatureMagic, what);
    const std::uint64_t rows = in.u64();
    const std::uint64_t cols = in.u64();
    if (cols != 0 && rows > (UINT64_MAX / 4) / cols) {
        throw FormatError(what + ": shape overflow");
    }
    const std::uint64_t count = rows * cols;
    in.need(count * 4);
    std::vector<float> data(count);
    for (auto& v : data) {
        v = in.f32();
        if (!std::isfinite(v)) {
            throw DataError(what + ": non-finite value");
        }
    }
    return FeatureMatrix(rows, cols, std::move(data));
}

void write_feature_matrix(const FeatureMatrix& matrix, const std::filesystem::path& path)
{
    if (!matrix.all_finite()) {
        throw DataError("refusing to write non-finite feature matrix to " + path.string());
    }
    binary::Writer out;
    out.bytes(kFeatureMagic);
    out.u32(1);
    out.u64(matrix.rows());
    out.u64(matrix.cols());
    for (const float v : matrix.values()) {
        out.f32(v);
    }
    binary::write_file(path, out.data());
}

LabelVector read_labels(const std::filesystem::path& path)
{
    const std::string raw = binary::read_file(path);
    const std::string what = "label file " + path.string();
    binary::Reader in(raw, what);
    binary::expect_header(in, kLabelMagic, what);
    const std::uint64_t count = in.u64();
    if (count > UINT64_MAX / 4) {
        throw FormatError(what + ": count overflow");
    }
    in.need(count * 4);
    LabelVector labels(count);
    for (auto& l : labels) {
        l = in.u32();
    }
    return labels;
}

void write_labels(const LabelVector& labels, const std::filesystem::path& path)
{
    binary::Writer out;
    out.bytes(kLabelMagic);
    out.u32(1);
    out.u64(labels.size());
    for (const auto l : labels) {
        out.u32(l);
    }
    binary::write_file(path, out.data());
}

std::filesystem::path DatasetManifest::resolve(const std::string& p) const
{
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
}

DatasetManifest read_manifest(const std::filesystem::path& path)
{
    json doc;
    try {
        doc = json::parse(binary::read_file(path));
    } catch (const json::parse_error& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
    DatasetManifest m;
    try {
        for (const auto& c : doc.at("classes")) {
            m.classes.push_back({c.at("id").get<std::uint32_t>(), c.at("label").get<std::string>()});
        }
        m.skeleton_features = doc.at("skeleton_features").get<std::string>();
        m.skeleton_labels = doc.at("skeleton_labels").get<std::string>();
        m.text_features = doc.at("text_features").get<std::string>();
        m.d_x = doc.at("d_x").get<std::size_t>();
        m.d_y = doc.at("d_y").get<std::size_t>();
    } catch (const json::exception& e) {
        throw FormatError("manifest " + path.string() + ": " + e.what());
    }
    for (std::size_t i = 0; i < m.classes.size(); ++i) {
        if (m.classes[i].id != i) {
            throw FormatError("manifest " + path.string() + ": class ids must be 0..n-1 in order");
        }
    }
    m.base_dir = path.parent_path();
    return m;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& path)
{
    json classes = json::array();
    for (const auto& c : manifest.classes) {
        classes.push_back({{"id", c.id}, {"label", c.label}});
    }
    const json doc = {
        {"classes", classes},
        {"skeleton_features", manifest.skeleton_features},
        {"skeleton_labels", manifest.skeleton_labels},
        {"text_features", manifest.text_features},
        {"d_x", manifest.d_x},
        {"d_y", manifest.d_y},
    };
    binary::write_file(path, doc.dump(2) + "\n");
}

void validate_dataset(const Dataset& d)
{
    const auto& m = d.manifest;
    if (d.text.rows() != m.num_classes()) {
        throw DataError("text features have " + std::to_string(d.text.rows()) + " rows for " +
                        std::to_string(m.num_classes()) + " classes");
    }
    if (d.skeleton.cols() != m.d_x || d.text.cols() != m.d_y) {
        throw DataError("feature widths do not match manifest d_x/d_y");
    }
    if (d.labels.size() != d.skeleton.rows()) {
        throw DataError("label count does not match skeleton sample count");
    }
    for (const auto l : d.labels) {
        if (l >= m.num_classes()) {
            throw DataError("label " + std::to_string(l) + " out of range");
        }
    }
}

Dataset load_dataset(const std::filesystem::path& manifest_path)
{
    Dataset d;
    d.manifest = read_manifest(manifest_path);
    d.skeleton = read_feature_matrix(d.manifest.resolve(d.manifest.skeleton_features));
    d.labels = read_labels(d.manifest.resolve(d.manifest.skeleton_labels));
    d.text = read_feature_matrix(d.manifest.resolve(d.manifest.text_features));
    validate_dataset(d);
    return d;
}

bool ClassSplit::is_seen(std::uint32_t id) const { return std::binary_search(seen.begin(), seen.end(), id); }
bool ClassSplit::is_unseen(std::uint32_t id) const { return std::binary_search(unseen.begin(), unseen.end(), id); }

void validate_split(const ClassSplit& split, std::size_t num_classes)
{
    if (split.unseen.empty()) {
        throw ArgumentError("class split has no unseen classes");
    }
    std::set<std::uint32_t> all;
    for (const auto* ids : {&split.seen, &split.unseen}) {
        if (!std::is_sorted(ids->begin(), ids->end())) {
            throw ArgumentError("class split ids must be sorted");
        }
        for (const auto id : *ids) {
            if (id >= num_classes) {
                throw ArgumentError("class split id " + std::to_string(id) + " not in manifest");
            }
            if (!all.insert(id).second) {
                throw ArgumentError("class " + std::to_string(id) + " appears twice in split");
            }
        }
    }
}

ClassSplit make_random_split(std::span<const std::uint32_t> class_ids, std::size_t num_unseen, std::uint64_t seed)
{
    if (num_unseen == 0 || num_unseen >= class_ids.size()) {
        throw ArgumentError("num_unseen must be in (0, " + std::to_string(class_ids.size()) + ")");
    }
    std::vector<std::uint32_t> ids(class_ids.begin(), class_ids.end());
    Rng rng(seed);
    rng.shuffle(std::span<std::uint32_t>(ids));
    ClassSplit split;
    split.unseen.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(num_unseen));
    split.seen.assign(ids.begin() + static_cast<std::ptrdiff_t>(num_unseen), ids.end());
    std::sort(split.unseen.begin(), split.unseen.end());
    std::sort(split.seen.begin(), split.seen.end());
    return split;
}

ClassSplit make_random_split(const DatasetManifest& manifest, std::size_t num_unseen, std::uint64_t seed)
{
    std::vector<std::uint32_t> ids;
    ids.reserve(manifest.num_classes());
    for (const auto& c : manifest.classes) {
        ids.push_back(c.id);
    }
    return make_random_split(ids, num_unseen, seed);
}

std::string split_to_json(const ClassSplit& split)
{
    return json{{"seen", split.seen}, {"unseen", split.unseen}}.dump(2) + "\n";
}

ClassSplit split_from_json(const std::string& text)
{
    try {
        const json doc = json::parse(text);
        ClassSplit split;
        split.seen = doc.at("seen").get<std::vector<std::uint32_t>>();
        split.unseen = doc.at("unseen").get<std::vector<std::uint32_t>>();
        return split;
    } catch (const json::exception& e) {
        throw FormatError(std::string("class split: ") + e.what());
    }
}

SamplePartition partition_samples(std::span<const std::uint32_t> labels, std::span<const std::size_t> pool,
                                  const ClassSplit& split, double holdout_fraction, std::uint64_t seed)
{
    if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
        throw ArgumentError("holdout_fraction must be in [0, 1)");
    }
    SamplePartition part;
    Rng rng(Rng::derive(seed, 0x686f6c64));
    for (const auto cls : split.seen) {
        std::vector<std::size_t> members;
        for (const auto i : pool) {
            if (labels[i] == cls) {
                members.push_back(i);
            }
        }
        rng.shuffle(std::span<std::size_t>(members));
        const auto held = static_cast<std::size_t>(std::floor(holdout_fraction * static_cast<double>(members.size())));
        part.test_seen.insert(part.test_seen.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(held));
        part.train.insert(part.train.end(), members.begin() + static_cast<std::ptrdiff_t>(held), members.end());
    }
    for (const auto i : pool) {
        if (split.is_unseen(labels[i])) {
            part.test_unseen.push_back(i);
        }
    }
    std::sort(part.train.begin(), part.train.end());
    std::sort(part.test_seen.begin(), part.test_seen.end());
    return part;
}

SamplePartition partition_samples(const LabelVector& labels, const ClassSplit& split, double holdout_fraction,
                                  std::uint64_t seed)
{
    std::vector<std::size_t> pool(labels.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    return partition_samples(labels, pool, split, holdout_fraction, seed);
}

RunConfig RunConfig::desk_defaults()
{
    RunConfig c;
    c.learning_rate = 1e-3;
    c.batch_size = 32;
    c.epochs = 15;
    c.n_d = 5;
    c.dim_r = 16;
    c.dim_v = 16;
    c.classifier_epochs = 30;
    return c;
}

void RunConfig::validate() const
{
    if (beta_x < 0 || beta_y < 0 || lambda2 < 0 || learning_rate <= 0 || gate_c <= 0 ||
        classifier_learning_rate <= 0) {
        throw ArgumentError("config weights must be >= 0 and learning rates > 0");
    }
    if (batch_size < 1 || n_d < 1 || dim_r < 1 || classifier_batch_size < 1 || samples_per_class < 1) {
        throw ArgumentError("config sizes must be >= 1");
    }
    if (temperature <= 0) {
        throw ArgumentError("temperature must be > 0");
    }
    if (holdout_fraction < 0 || holdout_fraction >= 1) {
        throw ArgumentError("holdout_fraction must be in [0, 1)");
    }
}

namespace {

template <typename T>
void read_key(const json& doc, const char* key, T& field)
{
    if (doc.contains(key)) {
        field = doc.at(key).get<T>();
    }
}

} // namespace

RunConfig config_from_json(const std::string& text, const RunConfig& base)
{
    static const std::set<std::string> known = {
        "beta_x", "beta_y", "lambda2", "learning_rate", "batch_size", "epochs", "n_d", "dim_r", "dim_v",
        "temperature", "samples_per_class", "seed", "discriminator", "classifier_epochs",
        "classifier_learning_rate", "classifier_batch_size", "gate_c", "holdout_fraction"};
    RunConfig c = base;
    try {
        const json doc = json::parse(text);
        if (!doc.is_object()) {
            throw FormatError("config must be a flat key-value object");
        }
        for (const auto& [key, value] : doc.items()) {
            if (!known.contains(key)) {
                throw FormatError("unknown config key '" + key + "'");
            }
        }
        read_key(doc, "beta_x", c.beta_x);
        read_key(doc, "beta_y", c.beta_y);
        read_key(doc, "lambda2", c.lambda2);
        read_key(doc, "learning_rate", c.learning_rate);
        read_key(doc, "batch_size", c.batch_size);
        read_key(doc, "epochs", c.epochs);
        read_key(doc, "n_d", c.n_d);
        read_key(doc, "dim_r", c.dim_r);
        read_key(doc, "dim_v", c.dim_v);
        read_key(doc, "temperature", c.temperature);
        read_key(doc, "samples_per_class", c.samples_per_class);
        read_key(doc, "seed", c.seed);
        read_key(doc, "discriminator", c.discriminator);
        read_key(doc, "classifier_epochs", c.classifier_epochs);
        read_key(doc, "classifier_learning_rate", c.classifier_learning_rate);
        read_key(doc, "classifier_batch_size", c.classifier_batch_size);
        read_key(doc, "gate_c", c.gate_c);
        read_key(doc, "holdout_fraction", c.holdout_fraction);
    } catch (const json::exception& e) {
        throw FormatError(std::string("config: ") + e.what());
    }
    c.validate();
    return c;
}

RunConfig read_config(const std::filesystem::path& path) { return config_from_json(binary::read_file(path)); }

std::string config_to_json(const RunConfig& c)
{
    const json doc = {
        {"beta_x", c.beta_x},
        {"beta_y", c.beta_y},
        {"lambda2", c.lambda2},
        {"learning_rate", c.learning_rate},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"n_d", c.n_d},
        {"dim_r", c.dim_r},
        {"dim_v", c.dim_v},
        {"temperature", c.temperature},
        {"samples_per_class", c.samples_per_class},
        {"seed", c.seed},
        {"discriminator", c.discriminator},
        {"classifier_epochs", c.classifier_epochs},
        {"classifier_learning_rate", c.classifier_learning_rate},
        {"classifier_batch_size", c.classifier_batch_size},
        {"gate_c", c.gate_c},
        {"holdout_fraction", c.holdout_fraction},
    };
    return doc.dump(2) + "\n";
}

SyntheticData synthesize(const SyntheticSpec& spec)
{
    if (spec.num_classes < 1 || spec.samples_per_class < 1 || spec.d_x < 1 || spec.d_y < 1 || spec.signal_dim < 1) {
        throw ArgumentError("synthetic dataset counts and dims must be >= 1");
    }
    if (spec.signal_dim + spec.nuisance_dim > spec.d_x) {
        throw ArgumentError("signal_dim + nuisance_dim must not exceed d_x");
    }
    if (spec.noise_scale < 0) {
        throw ArgumentError("noise_scale must be >= 0");
    }
    const std::size_t latent_dim = spec.signal_dim + spec.nuisance_dim;
    const std::size_t n = spec.num_classes * spec.samples_per_class;

    // Separate streams so that, e.g., changing the noise scale does not move
    // the class codes or the mixing maps.
    Rng structure(Rng::derive(spec.seed, 1));
    Rng sampling(Rng::derive(spec.seed, 2));

    SyntheticData out;
    out.codes = Matrix<double>(spec.num_classes, spec.signal_dim);
    for (auto& v : out.codes.values()) {
        v = structure.normal();
    }
    // Gaussian maps are full rank with probability one.
    Matrix<double> mix_x(spec.d_x, latent_dim);
    for (auto& v : mix_x.values()) {
        v = structure.normal() / std::sqrt(static_cast<double>(latent_dim));
    }
    std::vector<double> offset_x(spec.d_x);
    for (auto& v : offset_x) {
        v = 0.5 * structure.normal();
    }
    Matrix<double> mix_y(spec.d_y, spec.signal_dim);
    for (auto& v : mix_y.values()) {
        v = structure.normal() / std::sqrt(static_cast<double>(spec.signal_dim));
    }
    Matrix<double> styles(kStyles, spec.nuisance_dim);
    for (auto& v : styles.values()) {
        v = structure.uniform(-kStyleAmplitude, kStyleAmplitude);
    }

    out.text = FeatureMatrix(spec.num_classes, spec.d_y);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t j = 0; j < spec.d_y; ++j) {
            double acc = 0;
            for (std::size_t s = 0; s < spec.signal_dim; ++s) {
                acc += mix_y(j, s) * out.codes(c, s);
            }
            out.text(c, j) = static_cast<float>(acc + kTextNoise * structure.normal());
        }
    }

    out.skeleton = FeatureMatrix(n, spec.d_x);
    out.labels.resize(n);
    out.signal = Matrix<double>(n, spec.signal_dim);
    out.nuisance = Matrix<double>(n, spec.nuisance_dim);
    std::vector<double> latent(latent_dim);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        for (std::size_t k = 0; k < spec.samples_per_class; ++k) {
            const std::size_t i = c * spec.samples_per_class + k;
            out.labels[i] = static_cast<std::uint32_t>(c);
            for (std::size_t s = 0; s < spec.signal_dim; ++s) {
                latent[s] = out.codes(c, s) + spec.noise_scale * sampling.normal();
                out.signal(i, s) = latent[s];
            }
            const auto style = static_cast<std::size_t>(sampling.below(kStyles));
            for (std::size_t u = 0; u < spec.nuisance_dim; ++u) {
                const double value = styles(style, u) + sampling.uniform(-kJitterAmplitude, kJitterAmplitude);
                latent[spec.signal_dim + u] = value;
                out.nuisance(i, u) = value;
            }
            for (std::size_t j = 0; j < spec.d_x; ++j) {
                double acc = offset_x[j];
                for (std::size_t l = 0; l < latent_dim; ++l) {
                    acc += mix_x(j, l) * latent[l];
                }
                out.skeleton(i, j) = static_cast<float>(acc);
            }
        }
    }
    return out;
}

std::filesystem::path write_synthetic_dataset(const SyntheticSpec& spec, const std::filesystem::path& dir)
{
    const SyntheticData data = synthesize(spec);
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) {
        throw IoError("cannot create " + dir.string() + ": " + ec.message());
    }
    write_feature_matrix(data.skeleton, dir / "skeleton.sadv");
    write_labels(data.labels, dir / "labels.sadl");
    write_feature_matrix(data.text, dir / "text.sadv");

    DatasetManifest m;
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        m.classes.push_back({static_cast<std::uint32_t>(c), "synthetic class " + std::to_string(c)});
    }
    m.skeleton_features = "skeleton.sadv";
    m.skeleton_labels = "labels.sadl";
    m.text_features = "text.sadv";
    m.d_x = spec.d_x;
    m.d_y = spec.d_y;
    const auto manifest_path = dir / "manifest.json";
    write_manifest(m, manifest_path);
    return manifest_path;
}

} // namespace sadvae
