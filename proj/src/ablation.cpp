#include "sadvae/ablation.hpp"

#include "sadvae/pipeline.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cstdio>

namespace sadvae {

std::string_view variant_name(AblationVariant variant)
{
    switch (variant) {
    case AblationVariant::naive:
        return "naive";
    case AblationVariant::fd:
        return "fd";
    case AblationVariant::fd_tc:
        return "fd_tc";
    }
    return "?";
}

AblationVariant parse_variant(std::string_view tag)
{
    for (const auto v : {AblationVariant::naive, AblationVariant::fd, AblationVariant::fd_tc}) {
        if (variant_name(v) == tag) {
            return v;
        }
    }
    throw ArgumentError("unknown variant '" + std::string(tag) + "' (expected naive, fd or fd_tc)");
}

RunConfig variant_config(const RunConfig& config, AblationVariant variant)
{
    RunConfig c = config;
    if (variant == AblationVariant::naive) {
        c.dim_v = 0;
        c.discriminator = false;
    } else if (variant == AblationVariant::fd) {
        c.discriminator = false;
    }
    return c;
}

namespace {

using Mat = Eigen::MatrixXd;

// Orthonormal basis of the centred column space, or an empty matrix.
Mat whitened_basis(const Matrix<double>& m)
{
    Mat x(m.rows(), m.cols());
    for (std::size_t r = 0; r < m.rows(); ++r) {
        for (std::size_t c = 0; c < m.cols(); ++c) {
            x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = m(r, c);
        }
    }
    x.rowwise() -= x.colwise().mean();
    if (x.cols() == 0) {
        return Mat(x.rows(), 0);
    }
    Eigen::JacobiSVD<Mat> svd(x, Eigen::ComputeThinU);
    const auto& s = svd.singularValues();
    const double tol = std::max(1e-9, s(0) * 1e-7 * static_cast<double>(std::max(x.rows(), x.cols())));
    Eigen::Index rank = 0;
    while (rank < s.size() && s(rank) > tol) {
        ++rank;
    }
    return svd.matrixU().leftCols(rank);
}

} // namespace

Dependence max_canonical_correlation(const Matrix<double>& a, const Matrix<double>& b)
{
    if (a.rows() != b.rows()) {
        throw ShapeError("canonical correlation: blocks differ in row count");
    }
    const Mat ua = whitened_basis(a);
    const Mat ub = whitened_basis(b);
    if (ua.cols() == 0 || ub.cols() == 0) {
        return {0.0, true};
    }
    const Mat cross = ua.transpose() * ub;
    Eigen::JacobiSVD<Mat> svd(cross);
    return {std::clamp(svd.singularValues()(0), 0.0, 1.0), false};
}

Dependence latent_dependence(const ModelParams<float>& model, const FeatureMatrix& features)
{
    if (features.rows() < 10) {
        throw ArgumentError("latent_dependence: need a batch of at least 10 samples");
    }
    const auto post = encode_skeleton(model, features);
    return max_canonical_correlation(post.r.mean.cast<double>(), post.v.mean.cast<double>());
}

std::vector<AblationRow> run_ablation(const Dataset& dataset, const ClassSplit& split, const RunConfig& config,
                                      std::span<const AblationVariant> variants, std::span<const std::uint64_t> seeds,
                                      const AblationOptions& options)
{
    if (variants.empty()) {
        throw ArgumentError("run_ablation: no variants");
    }
    if (seeds.empty()) {
        throw ArgumentError("run_ablation: no seeds");
    }
    std::vector<AblationRow> rows;
    for (const auto seed : seeds) {
        for (const auto variant : variants) {
            RunConfig c = variant_config(config, variant);
            c.seed = seed;
            const auto fitted = options.gzsl ? fit_pipeline(dataset, split, c) : fit_zsl(dataset, split, c);
            AblationRow row;
            row.variant = variant;
            row.seed = seed;
            if (options.gzsl) {
                const auto eval = evaluate_split(fitted.predictor, dataset, split, fitted.partition);
                row.zsl = eval.zsl;
                row.gzsl = eval.gzsl;
                row.has_gzsl = true;
            } else {
                const FeatureMatrix fu = dataset.skeleton.gather(fitted.partition.test_unseen);
                LabelVector lu;
                for (const auto i : fitted.partition.test_unseen) {
                    lu.push_back(dataset.labels[i]);
                }
                row.zsl = zsl_accuracy(fitted.predictor, fu, lu);
            }
            const FeatureMatrix probe = dataset.skeleton.gather(fitted.partition.test_unseen);
            row.dependence = latent_dependence(fitted.training.state.params, probe);
            rows.push_back(row);
        }
    }
    return rows;
}

double mean_zsl(std::span<const AblationRow> rows, AblationVariant variant)
{
    double sum = 0;
    std::size_t n = 0;
    for (const auto& r : rows) {
        if (r.variant == variant) {
            sum += r.zsl;
            ++n;
        }
    }
    if (n == 0) {
        throw ArgumentError("mean_zsl: no rows for variant " + std::string(variant_name(variant)));
    }
    return sum / static_cast<double>(n);
}

std::string ablation_csv(std::span<const AblationRow> rows)
{
    auto fmt = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.9g", v);
        return std::string(buf);
    };
    std::string out = "variant,seed,zsl,acc_seen,acc_unseen,harmonic_mean,latent_dependence,dependence_degenerate\n";
    for (const auto& r : rows) {
        out += std::string(variant_name(r.variant)) + "," + std::to_string(r.seed) + "," + fmt(r.zsl) + ",";
        if (r.has_gzsl) {
            out += fmt(r.gzsl.acc_seen) + "," + fmt(r.gzsl.acc_unseen) + "," + fmt(r.gzsl.harmonic_mean) + ",";
        } else {
            out += ",,,";
        }
        out += fmt(r.dependence.value) + "," + (r.dependence.degenerate ? "1" : "0") + "\n";
    }
    return out;
}

} // namespace sadvae
