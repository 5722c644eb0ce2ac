#include "sadvae/search.hpp"
#include "sadvae/pipeline.hpp"
#include "support/fixtures.hpp"

#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>

using namespace sadvae;

namespace {

double mock_h(const RunConfig& c, std::size_t)
{
    return -(c.beta_x - 0.3) * (c.beta_x - 0.3);
}

SearchSpace counts(std::size_t p1, std::size_t p2)
{
    SearchSpace s;
    s.phase1_trials = p1;
    s.phase2_trials = p2;
    return s;
}

} // namespace

TEST_CASE("mock objective picks the beta closest to 0.3")
{
    const auto base = RunConfig::desk_defaults();
    const auto space = counts(5, 100);
    const auto r = hyperparameter_search(base, space, 11, mock_h);
    REQUIRE(r.trials.size() == 105);

    std::size_t closest = 0;
    for (std::size_t i = 0; i < 5; ++i) {
        const auto& t = r.trials[i];
        CHECK(t.index == i);
        CHECK(t.phase == 1);
        CHECK(t.config.beta_x > 0.0);
        CHECK(t.config.beta_x < 1.0);
        CHECK(t.config.beta_y > 0.0);
        CHECK(t.config.beta_y < 1.0);
        // Everything but the betas sits at its initial value.
        CHECK(t.config.learning_rate == doctest::Approx(1e-5).epsilon(1e-12));
        CHECK(t.config.batch_size == 64);
        CHECK(t.config.n_d == 10);
        CHECK(t.config.dim_r == 192);
        CHECK(t.config.dim_v == 8);
        if (std::abs(t.config.beta_x - 0.3) < std::abs(r.trials[closest].config.beta_x - 0.3)) {
            closest = i;
        }
    }
    const auto& winner1 = r.trials[closest].config;

    double best_h = -std::numeric_limits<double>::infinity();
    std::size_t best = 0;
    for (std::size_t i = 5; i < 105; ++i) {
        const auto& c = r.trials[i].config;
        CHECK(r.trials[i].phase == 2);
        CHECK(c.beta_x == winner1.beta_x);
        CHECK(c.beta_y == winner1.beta_y);
        const double e = std::log10(c.learning_rate);
        CHECK(e >= -6.0 - 1e-12);
        CHECK(e <= -3.0 + 1e-12);
        CHECK(std::ranges::count(space.batch_sizes, c.batch_size) == 1);
        CHECK(c.n_d >= 1);
        CHECK(c.n_d <= 16);
        CHECK(std::ranges::count(space.dim_r_values, c.dim_r) == 1);
        CHECK(std::ranges::count(space.dim_v_values, c.dim_v) == 1);
        if (r.trials[i].harmonic_mean > best_h) {
            best_h = r.trials[i].harmonic_mean;
            best = i;
        }
    }
    // Phase 2 keeps the betas, so every phase-2 score ties: lowest index wins.
    CHECK(best == 5);
    CHECK(config_to_json(r.best) == config_to_json(r.trials[5].config));

    // Phase 2 does sample every item.
    std::vector<std::size_t> batches, dims;
    for (std::size_t i = 5; i < 105; ++i) {
        batches.push_back(r.trials[i].config.batch_size);
        dims.push_back(r.trials[i].config.dim_r);
    }
    std::ranges::sort(batches);
    std::ranges::sort(dims);
    CHECK(std::ranges::unique(batches).begin() - batches.begin() == 4);
    CHECK(std::ranges::unique(dims).begin() - dims.begin() >= 8);
}

TEST_CASE("phase-2 winner is the best score")
{
    const auto by_lr = [](const RunConfig& c, std::size_t) { return -std::abs(std::log10(c.learning_rate) + 4.5); };
    const auto r = hyperparameter_search(RunConfig::desk_defaults(), counts(2, 30), 3, by_lr);
    const auto it = std::max_element(r.trials.begin() + 2, r.trials.end(),
                                     [](const auto& a, const auto& b) { return a.harmonic_mean < b.harmonic_mean; });
    CHECK(r.best.learning_rate == it->config.learning_rate);
}

TEST_CASE("single trials and determinism")
{
    const auto base = RunConfig::desk_defaults();
    const auto one = hyperparameter_search(base, counts(1, 1), 5, mock_h);
    REQUIRE(one.trials.size() == 2);
    CHECK(config_to_json(one.best) == config_to_json(one.trials[1].config));
    CHECK(one.best.beta_x == one.trials[0].config.beta_x);

    const auto a = hyperparameter_search(base, counts(3, 10), 9, mock_h);
    const auto b = hyperparameter_search(base, counts(3, 10), 9, mock_h);
    CHECK(trial_log_csv(a) == trial_log_csv(b));
    CHECK(config_to_json(a.best) == config_to_json(b.best));
    const auto c = hyperparameter_search(base, counts(3, 10), 10, mock_h);
    CHECK(trial_log_csv(a) != trial_log_csv(c));

    // Thread count changes nothing but the wall time.
    std::atomic<int> calls{0};
    const auto counted = [&](const RunConfig& cfg, std::size_t i) {
        ++calls;
        return mock_h(cfg, i);
    };
    const auto threaded = hyperparameter_search(base, counts(3, 10), 9, counted, 4);
    CHECK(calls == 13);
    CHECK(trial_log_csv(threaded) == trial_log_csv(a));

    const auto csv = trial_log_csv(a);
    CHECK(csv.rfind("trial,phase,beta_x,beta_y,learning_rate,batch_size,n_d,dim_r,dim_v,harmonic_mean\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 14);
}

TEST_CASE("search space validation")
{
    CHECK_NOTHROW(SearchSpace{}.validate());
    CHECK_THROWS_AS(counts(0, 1).validate(), ArgumentError);
    auto s = SearchSpace{};
    s.batch_sizes.clear();
    CHECK_THROWS_AS(s.validate(), ArgumentError);
    s = SearchSpace{};
    s.lr_exponent_low = -2;
    CHECK_THROWS_AS(s.validate(), ArgumentError);
}

TEST_CASE("thread count from the environment")
{
    ::unsetenv("SADVAE_THREADS");
    CHECK(thread_count_from_env() == 1);
    ::setenv("SADVAE_THREADS", "3", 1);
    CHECK(thread_count_from_env() == 3);
    ::setenv("SADVAE_THREADS", "0", 1);
    CHECK_THROWS_AS(thread_count_from_env(), ArgumentError);
    ::setenv("SADVAE_THREADS", "two", 1);
    CHECK_THROWS_AS(thread_count_from_env(), ArgumentError);
    ::unsetenv("SADVAE_THREADS");
}

TEST_CASE("validation evaluator never reads unseen-class samples")
{
    const auto ds = fixture::synthetic(fixture::small_spec());
    const auto split = make_random_split(ds.manifest, 3, 0);
    const auto config = fixture::small_config();

    auto poisoned = ds;
    for (std::size_t i = 0; i < poisoned.labels.size(); ++i) {
        if (split.is_unseen(poisoned.labels[i])) {
            for (auto& v : poisoned.skeleton.row(i)) {
                v = std::numeric_limits<float>::quiet_NaN();
            }
        }
    }
    for (const auto id : split.unseen) {
        for (auto& v : poisoned.text.row(id)) {
            v = std::numeric_limits<float>::quiet_NaN();
        }
    }
    const auto clean = validation_evaluator(ds, split, 4);
    const auto dirty = validation_evaluator(poisoned, split, 4);
    const double h = clean(config, 0);
    CHECK(std::isfinite(h));
    CHECK(h >= 0.0);
    CHECK(h <= 100.0);
    CHECK(dirty(config, 0) == h);
}
