#include "sadvae/binary.hpp"
#include "sadvae/classifiers.hpp"
#include "sadvae/pipeline.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace sadvae;

namespace {

ClassifierTraining quick()
{
    return {20, 1e-2, 32};
}

Matrix<float> random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double scale = 1.0)
{
    Matrix<float> m(rows, cols);
    for (auto& v : m.values()) {
        v = static_cast<float>(scale * rng.normal());
    }
    return m;
}

AffineLayer<float> random_layer(Rng& rng, std::size_t in, std::size_t out)
{
    AffineLayer<float> l(in, out);
    for (auto& w : l.weight.values()) {
        w = static_cast<float>(rng.normal());
    }
    for (auto& b : l.bias) {
        b = static_cast<float>(rng.normal());
    }
    return l;
}

// Seen ids {0..n_s-1}, unseen ids {n_s..n_s+n_u-1}.
GzslPredictor random_predictor(Rng& rng, std::size_t d_x, std::size_t dim_r, std::size_t n_s, std::size_t n_u)
{
    GzslPredictor p;
    p.encoder_r = random_layer(rng, d_x, 2 * dim_r);
    p.seen.layer = random_layer(rng, d_x, n_s);
    p.unseen.layer = random_layer(rng, dim_r, n_u);
    for (std::uint32_t i = 0; i < n_s; ++i) {
        p.seen.class_ids.push_back(i);
    }
    for (std::uint32_t i = 0; i < n_u; ++i) {
        p.unseen.class_ids.push_back(static_cast<std::uint32_t>(n_s) + i);
    }
    p.gate.k = n_u;
    p.gate.temperature = 2.0;
    p.gate.weights.resize(2 * n_u);
    for (auto& w : p.gate.weights) {
        w = rng.normal();
    }
    p.gate.bias = rng.normal();
    return p;
}

std::vector<double> softmax(std::vector<double> v)
{
    const double mx = *std::max_element(v.begin(), v.end());
    double s = 0;
    for (auto& x : v) {
        x = std::exp(x - mx);
        s += x;
    }
    for (auto& x : v) {
        x /= s;
    }
    return v;
}

// Text-only model: mean of z_y = W f_y, log-variance = logvar everywhere.
ModelParams<float> text_model(std::size_t d_y, std::size_t dim_r, float logvar)
{
    auto m = ModelParams<float>::zeros({4, d_y, dim_r, 1});
    for (std::size_t j = 0; j < std::min(d_y, dim_r); ++j) {
        m.text.weight(j, j) = 1.0f;
    }
    for (std::size_t j = 0; j < dim_r; ++j) {
        m.text.bias[dim_r + j] = logvar;
    }
    return m;
}

// Fresh reparameterized draws from the text posteriors, labelled by row.
std::pair<Matrix<float>, std::vector<std::uint32_t>> posterior_draws(const ModelParams<float>& m,
                                                                     const FeatureMatrix& text,
                                                                     std::span<const std::uint32_t> ids,
                                                                     std::size_t per_class, Rng& rng)
{
    const auto post = encode_text(m, text);
    Matrix<float> z(ids.size() * per_class, post.width());
    std::vector<std::uint32_t> y;
    for (std::size_t c = 0; c < ids.size(); ++c) {
        for (std::size_t s = 0; s < per_class; ++s) {
            const std::size_t r = c * per_class + s;
            for (std::size_t j = 0; j < post.width(); ++j) {
                z(r, j) = post.mean(c, j) + std::exp(0.5f * post.log_variance(c, j)) * static_cast<float>(rng.normal());
            }
            y.push_back(ids[c]);
        }
    }
    return {z, y};
}

double hit_rate(const std::vector<std::uint32_t>& a, const std::vector<std::uint32_t>& b)
{
    std::size_t hits = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        hits += a[i] == b[i] ? 1 : 0;
    }
    return static_cast<double>(hits) / static_cast<double>(a.size());
}

} // namespace

TEST_CASE("temperature_topk_pool")
{
    const std::vector<double> logits{2, 1, 0};
    const auto p = temperature_topk_pool(logits, 2.0, 2);
    // softmax(1, 0.5, 0) by hand.
    const double z = std::exp(1.0) + std::exp(0.5) + 1.0;
    REQUIRE(p.size() == 2);
    CHECK(p[0] == doctest::Approx(std::exp(1.0) / z).epsilon(1e-12));
    CHECK(p[1] == doctest::Approx(std::exp(0.5) / z).epsilon(1e-12));
    CHECK(p[0] == doctest::Approx(0.5065).epsilon(1e-4));
    CHECK(p[1] == doctest::Approx(0.3072).epsilon(1e-4));

    const std::vector<double> mixed{0.3, -1.0, 2.5, 0.0};
    const auto full = temperature_topk_pool(mixed, 1.0, 4);
    auto expect = softmax(mixed);
    std::sort(expect.begin(), expect.end(), std::greater<>());
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(full[i] == doctest::Approx(expect[i]).epsilon(1e-12));
        CHECK(full[i] > 0.0);
        CHECK(full[i] < 1.0);
        if (i > 0) {
            CHECK(full[i] <= full[i - 1]);
        }
    }

    const std::vector<double> flat(5, 3.0);
    for (const double v : temperature_topk_pool(flat, 0.7, 3)) {
        CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
    }
    for (const double v : temperature_topk_pool(mixed, 1e6, 4)) {
        CHECK(std::abs(v - 0.25) <= 1e-4);
    }

    CHECK_THROWS_AS(temperature_topk_pool(logits, 2.0, 4), ArgumentError);
    CHECK_THROWS_AS(temperature_topk_pool(logits, 0.0, 1), ArgumentError);
    CHECK_THROWS_AS(temperature_topk_pool(logits, -1.0, 1), ArgumentError);
}

TEST_CASE("softmax classifier basics")
{
    Rng rng(1);
    SoftmaxClassifier c{random_layer(rng, 5, 4), {2, 5, 7, 9}};
    const auto x = random_matrix(rng, 30, 5);
    const auto p = c.probabilities(x);
    for (std::size_t r = 0; r < 30; ++r) {
        double s = 0;
        for (const double v : p.row(r)) {
            s += v;
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    // Ties go to the lowest id.
    SoftmaxClassifier tie{AffineLayer<float>(5, 4), {2, 5, 7, 9}};
    for (const auto y : tie.predict(x)) {
        CHECK(y == 2);
    }
}

TEST_CASE("unseen classifier")
{
    Rng rng(2);
    const std::vector<std::uint32_t> one{7};
    const auto m = text_model(4, 4, -2.0f);
    const auto c1 = train_unseen_classifier(m, random_matrix(rng, 1, 4), one, 20, quick(), rng);
    for (const auto y : c1.predict(random_matrix(rng, 50, 4, 5.0))) {
        CHECK(y == 7);
    }

    SUBCASE("far apart posteriors are separated")
    {
        const std::vector<std::uint32_t> ids{3, 8};
        FeatureMatrix text(2, 4, 0.0f);
        text(0, 0) = 10;
        text(1, 0) = -10;
        const auto c = train_unseen_classifier(m, text, ids, 200, quick(), rng);
        auto [z, y] = posterior_draws(m, text, ids, 500, rng);
        CHECK(hit_rate(c.predict(z), y) >= 0.99);

        // The centroid oracle agrees that the problem is separable.
        std::vector<std::uint32_t> nearest;
        for (std::size_t r = 0; r < z.rows(); ++r) {
            nearest.push_back(std::abs(z(r, 0) - 10) < std::abs(z(r, 0) + 10) ? 3u : 8u);
        }
        CHECK(hit_rate(nearest, y) >= 0.99);
    }
    SUBCASE("identical text gives a coin flip")
    {
        const std::vector<std::uint32_t> ids{0, 1};
        FeatureMatrix text(2, 4, 1.0f);
        const auto c = train_unseen_classifier(m, text, ids, 200, quick(), rng);
        auto [z, y] = posterior_draws(m, text, ids, 2000, rng);
        CHECK(std::abs(hit_rate(c.predict(z), y) - 0.5) <= 0.05);
    }
    CHECK_THROWS_AS(train_unseen_classifier(m, FeatureMatrix(0, 4), std::vector<std::uint32_t>{}, 10, quick(), rng),
                    ArgumentError);
}

TEST_CASE("seen classifier")
{
    Rng rng(3);
    const std::vector<std::uint32_t> ids{1, 4};
    FeatureMatrix x(400, 6);
    LabelVector y(400);
    for (std::size_t i = 0; i < 400; ++i) {
        y[i] = i % 2 == 0 ? 1 : 4;
        for (std::size_t j = 0; j < 6; ++j) {
            x(i, j) = static_cast<float>(rng.normal());
        }
        x(i, 2) += y[i] == 1 ? 4.0f : -4.0f; // separable along one axis
    }
    Rng ra(10);
    const auto c = train_seen_classifier(x, y, ids, quick(), ra);
    CHECK(hit_rate(c.predict(x), y) >= 0.99);

    // Same samples in another order, same seed: same weights.
    std::vector<std::size_t> perm(400);
    std::iota(perm.begin(), perm.end(), 0);
    Rng shuffle(4);
    shuffle.shuffle(std::span<std::size_t>(perm));
    LabelVector yp;
    for (const auto i : perm) {
        yp.push_back(y[i]);
    }
    Rng rb(10);
    const auto cp = train_seen_classifier(x.gather(perm), yp, ids, quick(), rb);
    CHECK(cp == c);

    const std::vector<std::uint32_t> single{4};
    LabelVector all4(400, 4);
    Rng rc(11);
    const auto c1 = train_seen_classifier(x, all4, single, quick(), rc);
    for (const auto p : c1.predict(x)) {
        CHECK(p == 4);
    }

    LabelVector stray = y;
    stray[17] = 2;
    CHECK_THROWS_AS(train_seen_classifier(x, stray, ids, quick(), rc), DataError);
}

namespace {

// Independent gradient of 0.5|w|^2 + C sum logloss at the gate's parameters.
double gate_gradient_norm(const DomainGate& g, const Matrix<double>& rows, std::span<const int> labels, double c)
{
    std::vector<double> grad(g.weights.begin(), g.weights.end());
    grad.push_back(0.0);
    for (std::size_t i = 0; i < rows.rows(); ++i) {
        double s = g.bias;
        for (std::size_t j = 0; j < g.weights.size(); ++j) {
            s += g.weights[j] * rows(i, j);
        }
        const double p = 1.0 / (1.0 + std::exp(-s));
        const double r = c * (p - labels[i]);
        for (std::size_t j = 0; j < g.weights.size(); ++j) {
            grad[j] += r * rows(i, j);
        }
        grad.back() += r;
    }
    double worst = 0;
    for (const double v : grad) {
        worst = std::max(worst, std::abs(v));
    }
    return worst;
}

} // namespace

TEST_CASE("domain gate")
{
    Rng rng(5);
    const std::size_t k = 2;
    const std::size_t n = 300;

    SUBCASE("separable")
    {
        Matrix<double> rows(n, 2 * k);
        std::vector<int> labels(n);
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = i % 2;
            for (std::size_t j = 0; j < 2 * k; ++j) {
                rows(i, j) = rng.uniform(0, 1);
            }
            rows(i, 0) = labels[i] == 1 ? rng.uniform(2, 3) : rng.uniform(-3, -2);
        }
        const auto fit = train_domain_gate(rows, labels, 1.0, 2.0, k);
        CHECK(fit.converged);
        CHECK(fit.gradient_norm <= 1e-6);
        // Stored as float32, so every learned value must already be one.
        for (const double w : fit.gate.weights) {
            CHECK(static_cast<double>(static_cast<float>(w)) == w);
        }
        CHECK(static_cast<double>(static_cast<float>(fit.gate.bias)) == fit.gate.bias);
        std::size_t hits = 0;
        double p_seen = 0, p_unseen = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double p = fit.gate.probability(rows.row(i));
            CHECK(p > 0.0);
            CHECK(p < 1.0);
            hits += (p > 0.5) == (labels[i] == 1) ? 1 : 0;
            (labels[i] == 1 ? p_seen : p_unseen) += p / (n / 2);
        }
        CHECK(hits == n);
        CHECK(p_seen > 0.95);
        CHECK(p_unseen < 0.05);
        // Float rounding of the stored weights moves the gradient by little.
        CHECK(gate_gradient_norm(fit.gate, rows, labels, 1.0) < 1e-3);
    }
    SUBCASE("uninformative inputs give the prior")
    {
        // Enough rows for the fitted weights to settle near zero.
        const std::size_t m = 6000;
        Matrix<double> rows(m, 2 * k);
        std::vector<int> labels(m);
        for (std::size_t i = 0; i < m; ++i) {
            labels[i] = i % 3 == 0 ? 1 : 0; // prior 1/3
            for (std::size_t j = 0; j < 2 * k; ++j) {
                rows(i, j) = rng.uniform(0, 1);
            }
        }
        const auto fit = train_domain_gate(rows, labels, 1.0, 2.0, k);
        double mean_p = 0;
        for (std::size_t i = 0; i < m; ++i) {
            const double p = fit.gate.probability(rows.row(i));
            CHECK(std::abs(p - 1.0 / 3.0) <= 0.05);
            mean_p += p / m;
        }
        // Unpenalized bias: at the optimum the fitted probabilities average to
        // the label frequency.
        CHECK(mean_p == doctest::Approx(1.0 / 3.0).epsilon(1e-4));
    }
    SUBCASE("duplicated rows with half the C give the same gate")
    {
        Matrix<double> rows(60, 2 * k);
        std::vector<int> labels(60);
        for (std::size_t i = 0; i < 60; ++i) {
            labels[i] = rng.uniform() < 0.5 ? 1 : 0;
            for (std::size_t j = 0; j < 2 * k; ++j) {
                rows(i, j) = rng.normal() + (labels[i] == 1 ? 0.5 : 0.0);
            }
        }
        Matrix<double> twice(120, 2 * k);
        std::vector<int> labels2;
        for (std::size_t i = 0; i < 120; ++i) {
            std::copy(rows.row(i % 60).begin(), rows.row(i % 60).end(), twice.row(i).begin());
            labels2.push_back(labels[i % 60]);
        }
        const auto a = train_domain_gate(rows, labels, 1.0, 2.0, k);
        const auto b = train_domain_gate(twice, labels2, 0.5, 2.0, k);
        for (std::size_t j = 0; j < 2 * k; ++j) {
            CHECK(std::abs(a.gate.weights[j] - b.gate.weights[j]) <= 1e-6);
        }
        CHECK(std::abs(a.gate.bias - b.gate.bias) <= 1e-6);
    }

    Matrix<double> rows(10, 2 * k, 0.5);
    std::vector<int> ones(10, 1);
    CHECK_THROWS_AS(train_domain_gate(rows, ones, 1.0, 2.0, k), ArgumentError);
    std::vector<int> mixed(10, 0);
    mixed[0] = 1;
    CHECK_THROWS_AS(train_domain_gate(Matrix<double>(10, 3), mixed, 1.0, 2.0, k), ShapeError);
}

TEST_CASE("predict_zsl")
{
    Rng rng(6);
    auto p = random_predictor(rng, 10, 4, 6, 3);
    const auto x = random_matrix(rng, 100, 10);
    const auto got = predict_zsl(p, x);
    for (std::size_t i = 0; i < 100; ++i) {
        // encoder mean -> C_u logits -> arg-max, all by hand.
        const auto h = oracle::affine<float>(p.encoder_r, x.row(i));
        const std::vector<float> mean(h.begin(), h.begin() + 4);
        const auto logits = oracle::affine<float>(p.unseen.layer, mean);
        const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
        CHECK(got[i] == p.unseen.class_ids[static_cast<std::size_t>(best)]);
        CHECK(predict_zsl(p, x.row(i)) == got[i]);
    }

    // C_s and the gate do not matter.
    auto q = p;
    q.seen.layer = random_layer(rng, 10, 6);
    q.gate.bias = 100;
    CHECK(predict_zsl(q, x) == got);

    auto forced = p;
    forced.unseen.layer = AffineLayer<float>(4, 3);
    forced.unseen.layer.bias[1] = 10;
    for (const auto y : predict_zsl(forced, x)) {
        CHECK(y == forced.unseen.class_ids[1]);
    }

    auto single = random_predictor(rng, 10, 4, 6, 1);
    for (const auto y : predict_zsl(single, x)) {
        CHECK(y == 6);
    }
    CHECK_THROWS_AS(predict_zsl(p, random_matrix(rng, 2, 9)), ShapeError);
}

TEST_CASE("fusion")
{
    const std::vector<double> ps{0.6, 0.4};
    const std::vector<double> pu{0.9, 0.1};
    const std::vector<std::uint32_t> seen{0, 1};
    const std::vector<std::uint32_t> unseen{2, 3};
    const auto f = fuse_gzsl(ps, pu, 0.5, seen, unseen);
    REQUIRE(f.fused.size() == 4);
    CHECK(f.fused[0] == doctest::Approx(0.30));
    CHECK(f.fused[1] == doctest::Approx(0.20));
    CHECK(f.fused[2] == doctest::Approx(0.45));
    CHECK(f.fused[3] == doctest::Approx(0.05));
    CHECK(f.class_id == 2);

    CHECK(fuse_gzsl(ps, pu, 1.0, seen, unseen).class_id == 0);
    CHECK(fuse_gzsl(ps, pu, 0.0, seen, unseen).class_id == 2);
    // Exact tie across the two halves: lowest id.
    const std::vector<double> half{0.5, 0.5};
    CHECK(fuse_gzsl(half, half, 0.5, std::vector<std::uint32_t>{5, 6}, std::vector<std::uint32_t>{1, 9}).class_id ==
          1);
}

TEST_CASE("predict_gzsl")
{
    Rng rng(7);
    auto p = random_predictor(rng, 10, 4, 6, 3);
    const auto x = random_matrix(rng, 200, 10);
    for (const auto& g : predict_gzsl(p, x)) {
        CHECK(std::accumulate(g.fused.begin(), g.fused.end(), 0.0) == doctest::Approx(1.0).epsilon(1e-6));
    }

    auto seen_only = p;
    std::fill(seen_only.gate.weights.begin(), seen_only.gate.weights.end(), 0.0);
    seen_only.gate.bias = 1000; // p_d = 1
    const auto s = seen_only.seen.predict(x);
    auto unseen_only = seen_only;
    unseen_only.gate.bias = -1000; // p_d = 0
    const auto u = predict_zsl(unseen_only, x);
    const auto gs = predict_gzsl(seen_only, x);
    const auto gu = predict_gzsl(unseen_only, x);
    for (std::size_t i = 0; i < 200; ++i) {
        CHECK(gs[i].p_d == 1.0);
        CHECK(gs[i].class_id == s[i]);
        CHECK(gu[i].p_d == 0.0);
        CHECK(gu[i].class_id == u[i]);
    }

    auto empty = p;
    empty.unseen.class_ids.clear();
    CHECK_THROWS_AS(predict_gzsl(empty, x), ArgumentError);
    auto bad_k = p;
    bad_k.gate.k = 2;
    CHECK_THROWS_AS(predict_gzsl(bad_k, x), ArgumentError);
}

TEST_CASE("predictor checkpoint")
{
    const auto dir = oracle::temp_dir("predictor");
    Rng rng(8);
    auto p = random_predictor(rng, 10, 4, 6, 3);
    // Gates from training are float-representable; make this one so too.
    for (auto& w : p.gate.weights) {
        w = static_cast<float>(w);
    }
    p.gate.bias = static_cast<float>(p.gate.bias);
    p.seen.class_ids = {0, 3, 4, 10, 11, 12};
    p.unseen.class_ids = {1, 2, 70000};

    save_predictor(dir / "p.sadc", p);
    const auto back = load_predictor(dir / "p.sadc");
    CHECK(back == p);
    save_predictor(dir / "q.sadc", back);
    const auto bytes = binary::read_file(dir / "p.sadc");
    CHECK(bytes == binary::read_file(dir / "q.sadc"));
    CHECK(bytes.substr(0, 4) == "SADC");

    for (std::size_t n = 0; n < bytes.size(); n += 11) {
        binary::write_file(dir / "cut.sadc", bytes.substr(0, n));
        CHECK_THROWS_AS(load_predictor(dir / "cut.sadc"), LengthError);
    }
    // A model checkpoint is not a predictor.
    save_model(dir / "m.sadm", ModelState<float>::initialized({4, 3, 2, 1}, rng));
    CHECK_THROWS_AS(load_predictor(dir / "m.sadm"), FormatError);
}

TEST_CASE("calibrate_gzsl")
{
    auto spec = fixture::small_spec();
    spec.noise_scale = 0.2;
    const auto ds = fixture::synthetic(spec);
    const auto config = fixture::small_config();
    const auto split = make_random_split(ds.manifest, 3, 1);
    const auto part = partition_samples(ds.labels, split, config.holdout_fraction, config.seed);

    const auto a = calibrate_gzsl(ds, split, part.train, config, 5);
    const auto b = calibrate_gzsl(ds, split, part.train, config, 5);
    CHECK(a.gate == b.gate);
    CHECK(a.gate.k == 3);
    CHECK(a.gate.weights.size() == 6);

    // Boundary: proxy-seen classes == k.
    auto six = fixture::small_spec();
    six.num_classes = 6;
    const auto ds6 = fixture::synthetic(six);
    const auto split6 = make_random_split(ds6.manifest, 2, 0);
    const auto part6 = partition_samples(ds6.labels, split6, config.holdout_fraction, 0);
    CHECK_NOTHROW(calibrate_gzsl(ds6, split6, part6.train, config, 0));

    auto five = six;
    five.num_classes = 5;
    const auto ds5 = fixture::synthetic(five);
    const auto split5 = make_random_split(ds5.manifest, 2, 0);
    const auto part5 = partition_samples(ds5.labels, split5, config.holdout_fraction, 0);
    CHECK_THROWS_AS(calibrate_gzsl(ds5, split5, part5.train, config, 0), ArgumentError);
}

TEST_CASE("calibrated gate separates seen from unseen samples")
{
    const auto ds = fixture::axis_dataset(12, 50, 9);
    auto config = fixture::small_config();
    config.classifier_epochs = 100;
    config.classifier_learning_rate = 1e-2;
    const auto split = make_random_split(ds.manifest, 3, 2);
    const auto fitted = fit_pipeline(ds, split, config);

    std::vector<std::size_t> rows = fitted.partition.test_seen;
    rows.insert(rows.end(), fitted.partition.test_unseen.begin(), fitted.partition.test_unseen.end());
    const auto fx = ds.skeleton.gather(rows);
    const auto gz = predict_gzsl(fitted.predictor, fx);
    const auto seen_probs = fitted.predictor.seen.probabilities(fx);

    std::size_t gate_hits = 0;
    std::vector<std::pair<double, int>> confidence;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const int is_seen = split.is_seen(ds.labels[rows[i]]) ? 1 : 0;
        gate_hits += (gz[i].p_d > 0.5) == (is_seen == 1) ? 1 : 0;
        const auto r = seen_probs.row(i);
        confidence.emplace_back(*std::max_element(r.begin(), r.end()), is_seen);
    }
    const double gate_acc = static_cast<double>(gate_hits) / rows.size();

    // Oracle: best single threshold on max seen probability, chosen with
    // hindsight on these very rows.
    std::sort(confidence.begin(), confidence.end());
    std::size_t seen_total = 0;
    for (const auto& c : confidence) {
        seen_total += c.second;
    }
    std::size_t best = seen_total; // threshold below everything
    std::size_t unseen_below = 0, seen_below = 0;
    for (const auto& c : confidence) {
        (c.second ? seen_below : unseen_below) += 1;
        best = std::max(best, unseen_below + (seen_total - seen_below));
    }
    const double oracle_acc = static_cast<double>(best) / rows.size();
    MESSAGE("gate accuracy " << gate_acc << ", threshold oracle " << oracle_acc);
    CHECK(gate_acc >= 0.9);
    CHECK(gate_acc >= oracle_acc - 0.05);
}
