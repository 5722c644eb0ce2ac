#include "sadvae/binary.hpp"
#include "sadvae/model.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

using namespace sadvae;

namespace {

const ModelDims kDims{12, 8, 6, 3};

Matrix<double> random_matrix(Rng& rng, std::size_t rows, std::size_t cols)
{
    Matrix<double> m(rows, cols);
    for (auto& v : m.values()) {
        v = rng.normal();
    }
    return m;
}

ModelParams<double> random_params(std::uint64_t seed)
{
    Rng rng(seed);
    auto p = ModelParams<double>::initialized(kDims, rng);
    p.for_each([&](const char*, ParamGroup, AffineLayer<double>& l) {
        for (auto& b : l.bias) {
            b = rng.uniform(-0.5, 0.5);
        }
    });
    return p;
}

} // namespace

TEST_CASE("shapes follow the dims")
{
    const auto p = ModelParams<float>::zeros(kDims);
    CHECK(p.head_r.in_width() == 12);
    CHECK(p.head_r.out_width() == 12);
    CHECK(p.head_v.out_width() == 6);
    CHECK(p.text.in_width() == 8);
    CHECK(p.text.out_width() == 12);
    CHECK(p.decoder_x.in_width() == 9);
    CHECK(p.decoder_x.out_width() == 12);
    CHECK(p.decoder_y.in_width() == 6);
    CHECK(p.disc_hidden.in_width() == 9);
    CHECK(p.disc_hidden.out_width() == kDims.hidden());
    CHECK(p.disc_out.out_width() == 1);
}

TEST_CASE("initialization range")
{
    Rng rng(1);
    const auto p = ModelParams<double>::initialized(kDims, rng);
    p.for_each([](const char*, ParamGroup, const AffineLayer<double>& l) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(l.in_width()));
        for (const double w : l.weight.values()) {
            CHECK(std::abs(w) <= bound);
        }
        for (const double b : l.bias) {
            CHECK(b == 0.0);
        }
    });
}

TEST_CASE("zero parameters give standard normal posteriors, zero decodes and D = 0.5")
{
    const auto p = ModelParams<double>::zeros(kDims);
    Rng rng(2);
    const auto fx = random_matrix(rng, 5, 12);
    const auto post = encode_skeleton(p, fx);
    for (const auto* m : {&post.r.mean, &post.r.log_variance, &post.v.mean, &post.v.log_variance}) {
        for (const double v : m->values()) {
            CHECK(v == 0.0);
        }
    }
    const auto ty = encode_text(p, random_matrix(rng, 3, 8));
    for (const double v : ty.mean.values()) {
        CHECK(v == 0.0);
    }
    const auto decoded = decode(p.decoder_y, random_matrix(rng, 4, 6));
    for (const double v : decoded.values()) {
        CHECK(v == 0.0);
    }
    for (const double d : discriminate(p, random_matrix(rng, 4, 9))) {
        CHECK(d == 0.5);
    }
}

TEST_CASE("forward passes agree with a straight-line oracle")
{
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto p = random_params(seed);
        Rng rng(seed + 100);
        const auto fx = random_matrix(rng, 7, 12);
        const auto fy = random_matrix(rng, 7, 8);
        const auto post = encode_skeleton(p, fx);
        const auto ty = encode_text(p, fy);
        for (std::size_t i = 0; i < 7; ++i) {
            const auto hr = oracle::affine<double>(p.head_r, fx.row(i));
            const auto hv = oracle::affine<double>(p.head_v, fx.row(i));
            const auto ht = oracle::affine<double>(p.text, fy.row(i));
            for (std::size_t j = 0; j < 6; ++j) {
                CHECK(post.r.mean(i, j) == doctest::Approx(hr[j]).epsilon(1e-12));
                CHECK(post.r.log_variance(i, j) == doctest::Approx(hr[6 + j]).epsilon(1e-12));
                CHECK(ty.mean(i, j) == doctest::Approx(ht[j]).epsilon(1e-12));
                CHECK(ty.log_variance(i, j) == doctest::Approx(ht[6 + j]).epsilon(1e-12));
            }
            for (std::size_t j = 0; j < 3; ++j) {
                CHECK(post.v.mean(i, j) == doctest::Approx(hv[j]).epsilon(1e-12));
                CHECK(post.v.log_variance(i, j) == doctest::Approx(hv[3 + j]).epsilon(1e-12));
            }
        }

        const auto z = random_matrix(rng, 6, 9);
        const auto d = discriminate(p, z);
        const auto rec = decode(p.decoder_x, z);
        for (std::size_t i = 0; i < 6; ++i) {
            auto h = oracle::affine<double>(p.disc_hidden, z.row(i));
            for (auto& v : h) {
                v = std::max(0.0, v);
            }
            const auto logit = oracle::affine(oracle::rows_of(p.disc_out.weight),
                                              std::vector<double>(p.disc_out.bias.begin(), p.disc_out.bias.end()), h);
            CHECK(d[i] == doctest::Approx(1.0 / (1.0 + std::exp(-logit[0]))).epsilon(1e-12));
            CHECK(d[i] > 0.0);
            CHECK(d[i] < 1.0);
            const auto expect = oracle::affine<double>(p.decoder_x, z.row(i));
            for (std::size_t j = 0; j < 12; ++j) {
                CHECK(rec(i, j) == doctest::Approx(expect[j]).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("batch rows are independent")
{
    const auto p = random_params(3).cast<float>();
    Rng rng(4);
    const auto big = random_matrix(rng, 32, 12).cast<float>();
    const auto all = encode_skeleton(p, big);
    for (const std::size_t i : {0u, 17u, 31u}) {
        const Matrix<float> one(1, 12, std::vector<float>(big.row(i).begin(), big.row(i).end()));
        const auto single = encode_skeleton(p, one);
        for (std::size_t j = 0; j < 6; ++j) {
            CHECK(single.r.mean(0, j) == all.r.mean(i, j));
            CHECK(single.r.log_variance(0, j) == all.r.log_variance(i, j));
        }
    }
}

TEST_CASE("heads share no parameters")
{
    auto p = random_params(5);
    Rng rng(6);
    const auto fx = random_matrix(rng, 4, 12);
    const auto before = encode_skeleton(p, fx);
    for (auto& w : p.head_v.weight.values()) {
        w += 1.0;
    }
    const auto after = encode_skeleton(p, fx);
    CHECK(after.r.mean == before.r.mean);
    CHECK(after.r.log_variance == before.r.log_variance);
    CHECK_FALSE(after.v.mean == before.v.mean);
}

TEST_CASE("identity decoder and monotone discriminator")
{
    AffineLayer<double> id(4, 4);
    for (std::size_t i = 0; i < 4; ++i) {
        id.weight(i, i) = 1.0;
    }
    Rng rng(7);
    const auto z = random_matrix(rng, 3, 4);
    CHECK(decode(id, z) == z);

    auto p = ModelParams<double>::zeros(kDims);
    p.disc_out.bias[0] = 0;
    Matrix<double> ones(1, 9, 0.05);
    double last = 0.5;
    for (double scale = 0.25; scale <= 2; scale *= 2) {
        for (auto& w : p.disc_hidden.weight.values()) {
            w = scale;
        }
        for (auto& w : p.disc_out.weight.values()) {
            w = scale;
        }
        const double d = discriminate(p, ones)[0];
        CHECK(d > last);
        CHECK(d <= 1.0);
        last = d;
    }
    CHECK(last > 0.999);
}

TEST_CASE("reparameterize")
{
    GaussianLatent<double> lat{Matrix<double>(1, 2, std::vector<double>{0.3, -1.0}),
                               Matrix<double>(1, 2, std::vector<double>{0.0, std::log(4.0)})};
    CHECK(reparameterize(lat, Matrix<double>(1, 2, 0.0)) == lat.mean);
    const auto s = reparameterize(lat, Matrix<double>(1, 2, std::vector<double>{1.0, 1.0}));
    CHECK(s(0, 0) == doctest::Approx(1.3));
    CHECK(s(0, 1) == doctest::Approx(1.0));
    CHECK_THROWS_AS(reparameterize(lat, Matrix<double>(1, 3, 0.0)), ShapeError);

    // Monte Carlo: 10^6 draws, mean and variance within 1%.
    GaussianLatent<double> one{Matrix<double>(1, 1, 2.0), Matrix<double>(1, 1, std::log(0.5))};
    Rng rng(8);
    const std::size_t n = 1000000;
    double sum = 0, sum2 = 0;
    Matrix<double> noise(1, 1);
    for (std::size_t i = 0; i < n; ++i) {
        noise(0, 0) = rng.normal();
        const double x = reparameterize(one, noise)(0, 0);
        sum += x;
        sum2 += x * x;
    }
    const double mean = sum / n;
    const double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean - 2.0) <= 0.02);
    CHECK(std::abs(var - 0.5) <= 0.005);
}

TEST_CASE("shape and finiteness errors")
{
    const auto p = ModelParams<double>::zeros(kDims);
    CHECK_THROWS_AS(encode_skeleton(p, Matrix<double>(2, 11)), ShapeError);
    CHECK_THROWS_AS(encode_text(p, Matrix<double>(2, 9)), ShapeError);
    CHECK_THROWS_AS(decode(p.decoder_y, Matrix<double>(2, 5)), ShapeError);
    CHECK_THROWS_AS(discriminate(p, Matrix<double>(2, 8)), ShapeError);
    Matrix<double> bad(1, 12);
    bad(0, 3) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(encode_skeleton(p, bad), DataError);
}

TEST_CASE("model checkpoint round trip is bit exact")
{
    const auto dir = oracle::temp_dir("model_ckpt");
    Rng rng(9);
    auto state = ModelState<float>::initialized(kDims, rng);
    state.params.head_r.bias[0] = -0.0f;
    state.params.text.weight(0, 0) = std::numeric_limits<float>::denorm_min();
    for (auto& v : state.first_moment.decoder_x.weight.values()) {
        v = static_cast<float>(rng.normal());
    }
    for (auto& v : state.second_moment.disc_out.bias) {
        v = 1e-30f;
    }
    state.vae_steps = (std::uint64_t{1} << 40) + 12345;
    state.discriminator_steps = 16777217; // 2^24 + 1 is not a float

    save_model(dir / "m.sadm", state);
    const auto back = load_model(dir / "m.sadm");
    CHECK(back == state);
    CHECK(std::signbit(back.params.head_r.bias[0]));
    CHECK(back.vae_steps == state.vae_steps);
    CHECK(back.discriminator_steps == 16777217);

    save_model(dir / "n.sadm", back);
    CHECK(binary::read_file(dir / "m.sadm") == binary::read_file(dir / "n.sadm"));
    CHECK(binary::read_file(dir / "m.sadm").substr(0, 4) == "SADM");
}

TEST_CASE("model checkpoint errors")
{
    const auto dir = oracle::temp_dir("model_ckpt_err");
    Rng rng(10);
    save_model(dir / "m.sadm", ModelState<float>::initialized(kDims, rng));
    const auto bytes = binary::read_file(dir / "m.sadm");
    for (std::size_t n = 0; n < bytes.size(); n += 7) {
        binary::write_file(dir / "cut.sadm", bytes.substr(0, n));
        CHECK_THROWS_AS(load_model(dir / "cut.sadm"), LengthError);
    }
    binary::write_file(dir / "long.sadm", bytes + "x");
    CHECK_THROWS_AS(load_model(dir / "long.sadm"), FormatError);

    auto wrong = bytes;
    wrong[3] = 'C';
    binary::write_file(dir / "wrong.sadm", wrong);
    CHECK_THROWS_AS(load_model(dir / "wrong.sadm"), FormatError);

    // A checkpoint missing a tensor is rejected.
    auto tensors = model_to_tensors(ModelState<float>::initialized(kDims, rng));
    tensors.erase(tensors.begin());
    CHECK_THROWS_AS(model_from_tensors(tensors), FormatError);
}
