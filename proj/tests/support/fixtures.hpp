#pragma once

#include "sadvae/data_io.hpp"

#include "sadvae/rng.hpp"

#include <string>

namespace fixture {

/// In-memory Dataset around generated data, no files involved.
inline sadvae::Dataset dataset_from(const sadvae::SyntheticData& data, std::size_t d_x, std::size_t d_y)
{
    sadvae::Dataset ds;
    for (std::uint32_t c = 0; c < data.text.rows(); ++c) {
        ds.manifest.classes.push_back({c, "class " + std::to_string(c)});
    }
    ds.manifest.d_x = d_x;
    ds.manifest.d_y = d_y;
    ds.skeleton = data.skeleton;
    ds.labels = data.labels;
    ds.text = data.text;
    return ds;
}

inline sadvae::Dataset synthetic(const sadvae::SyntheticSpec& spec)
{
    return dataset_from(sadvae::synthesize(spec), spec.d_x, spec.d_y);
}

/// Small and fast: 12 classes, 40 samples each.
inline sadvae::SyntheticSpec small_spec(std::uint64_t seed = 0)
{
    sadvae::SyntheticSpec s;
    s.num_classes = 12;
    s.samples_per_class = 40;
    s.d_x = 24;
    s.d_y = 12;
    s.signal_dim = 6;
    s.nuisance_dim = 12;
    s.seed = seed;
    return s;
}

/// Config sized for the small spec; a few seconds at most per fit.
inline sadvae::RunConfig small_config()
{
    auto c = sadvae::RunConfig::desk_defaults();
    c.epochs = 4;
    c.dim_r = 6;
    c.dim_v = 4;
    c.samples_per_class = 40;
    c.classifier_epochs = 10;
    return c;
}

/// Class c lives on axis c of the skeleton space (value 5, noise 0.1). A
/// softmax trained on some classes has no weight on the axes of the others,
/// so it is confident on its own classes and near-uniform elsewhere.
inline sadvae::Dataset axis_dataset(std::size_t classes, std::size_t per_class, std::uint64_t seed)
{
    sadvae::Rng rng(seed);
    sadvae::Dataset ds;
    ds.manifest.d_x = classes;
    ds.manifest.d_y = 8;
    for (std::uint32_t c = 0; c < classes; ++c) {
        ds.manifest.classes.push_back({c, "axis" + std::to_string(c)});
    }
    ds.skeleton = sadvae::FeatureMatrix(classes * per_class, classes);
    for (std::size_t i = 0; i < classes * per_class; ++i) {
        const auto c = static_cast<std::uint32_t>(i % classes);
        ds.labels.push_back(c);
        for (std::size_t j = 0; j < classes; ++j) {
            ds.skeleton(i, j) = static_cast<float>(0.1 * rng.normal() + (j == c ? 5.0 : 0.0));
        }
    }
    ds.text = sadvae::FeatureMatrix(classes, 8);
    for (auto& v : ds.text.values()) {
        v = static_cast<float>(rng.normal());
    }
    sadvae::validate_dataset(ds);
    return ds;
}

} // namespace fixture
