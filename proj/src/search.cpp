#include "sadvae/search.hpp"

#include "sadvae/evaluation.hpp"
#include "sadvae/pipeline.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>

namespace sadvae {

void SearchSpace::validate() const
{
    if (!(beta_low < beta_high) || !(lr_exponent_low < lr_exponent_high) || n_d_low < 1 || n_d_low > n_d_high) {
        throw ArgumentError("search space: empty range");
    }
    if (batch_sizes.empty() || dim_r_values.empty() || dim_v_values.empty()) {
        throw ArgumentError("search space: empty choice set");
    }
    if (phase1_trials == 0 || phase2_trials == 0) {
        throw ArgumentError("search space: trial counts must be >= 1");
    }
}

namespace {

template <typename T>
T pick(Rng& rng, const std::vector<T>& values)
{
    return values[static_cast<std::size_t>(rng.below(values.size()))];
}

void run_trials(std::vector<TrialRecord>& trials, std::size_t begin, const TrialEvaluator& evaluate,
                std::size_t threads)
{
    const std::size_t end = trials.size();
    if (threads <= 1 || end - begin <= 1) {
        for (std::size_t i = begin; i < end; ++i) {
            trials[i].harmonic_mean = evaluate(trials[i].config, trials[i].index);
        }
        return;
    }
    std::atomic<std::size_t> next{begin};
    std::exception_ptr failure;
    std::mutex failure_lock;
    auto worker = [&] {
        for (std::size_t i = next++; i < end; i = next++) {
            try {
                trials[i].harmonic_mean = evaluate(trials[i].config, trials[i].index);
            } catch (...) {
                const std::lock_guard lock(failure_lock);
                if (!failure) {
                    failure = std::current_exception();
                }
            }
        }
    };
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(threads, end - begin); ++t) {
        pool.emplace_back(worker);
    }
    pool.clear();
    if (failure) {
        std::rethrow_exception(failure);
    }
}

std::size_t best_of(const std::vector<TrialRecord>& trials, std::size_t begin)
{
    std::size_t best = begin;
    for (std::size_t i = begin + 1; i < trials.size(); ++i) {
        if (trials[i].harmonic_mean > trials[best].harmonic_mean) {
            best = i;
        }
    }
    return best;
}

} // namespace

SearchResult hyperparameter_search(const RunConfig& base, const SearchSpace& space, std::uint64_t seed,
                                   const TrialEvaluator& evaluate, std::size_t threads)
{
    space.validate();
    Rng rng(Rng::derive(seed, 0x7365617263));
    RunConfig initial = base;
    initial.learning_rate = std::pow(10.0, space.initial_lr_exponent);
    initial.batch_size = space.initial_batch_size;
    initial.n_d = space.initial_n_d;
    initial.dim_r = space.initial_dim_r;
    initial.dim_v = space.initial_dim_v;

    SearchResult result;
    for (std::size_t t = 0; t < space.phase1_trials; ++t) {
        TrialRecord rec;
        rec.index = result.trials.size();
        rec.phase = 1;
        rec.config = initial;
        rec.config.beta_x = rng.uniform(space.beta_low, space.beta_high);
        rec.config.beta_y = rng.uniform(space.beta_low, space.beta_high);
        result.trials.push_back(rec);
    }
    run_trials(result.trials, 0, evaluate, threads);
    const RunConfig& phase1_best = result.trials[best_of(result.trials, 0)].config;

    const std::size_t phase2_begin = result.trials.size();
    for (std::size_t t = 0; t < space.phase2_trials; ++t) {
        TrialRecord rec;
        rec.index = result.trials.size();
        rec.phase = 2;
        rec.config = base;
        rec.config.beta_x = phase1_best.beta_x;
        rec.config.beta_y = phase1_best.beta_y;
        rec.config.learning_rate = std::pow(10.0, rng.uniform(space.lr_exponent_low, space.lr_exponent_high));
        rec.config.batch_size = pick(rng, space.batch_sizes);
        rec.config.n_d = space.n_d_low + static_cast<std::size_t>(rng.below(space.n_d_high - space.n_d_low + 1));
        rec.config.dim_r = pick(rng, space.dim_r_values);
        rec.config.dim_v = pick(rng, space.dim_v_values);
        result.trials.push_back(rec);
    }
    run_trials(result.trials, phase2_begin, evaluate, threads);
    result.best = result.trials[best_of(result.trials, phase2_begin)].config;
    return result;
}

TrialEvaluator validation_evaluator(const Dataset& dataset, const ClassSplit& split, std::uint64_t seed)
{
    const ClassSplit validation = make_random_split(split.seen, split.unseen.size(), Rng::derive(seed, 0x76616c));
    return [&dataset, validation](const RunConfig& config, std::size_t) {
        const auto fitted = fit_pipeline(dataset, validation, config);
        return evaluate_split(fitted.predictor, dataset, validation, fitted.partition).gzsl.harmonic_mean;
    };
}

std::size_t thread_count_from_env()
{
    const char* value = std::getenv("SADVAE_THREADS");
    if (value == nullptr || *value == '\0') {
        return 1;
    }
    char* end = nullptr;
    const long n = std::strtol(value, &end, 10);
    if (*end != '\0' || n < 1) {
        throw ArgumentError("SADVAE_THREADS must be a positive integer");
    }
    return static_cast<std::size_t>(n);
}

std::string trial_log_csv(const SearchResult& result)
{
    std::string out = "trial,phase,beta_x,beta_y,learning_rate,batch_size,n_d,dim_r,dim_v,harmonic_mean\n";
    char buf[256];
    for (const auto& t : result.trials) {
        const auto& c = t.config;
        std::snprintf(buf, sizeof buf, "%zu,%d,%.9g,%.9g,%.9g,%zu,%zu,%zu,%zu,%.9g\n", t.index, t.phase, c.beta_x,
                      c.beta_y, c.learning_rate, c.batch_size, c.n_d, c.dim_r, c.dim_v, t.harmonic_mean);
        out += buf;
    }
    return out;
}

} // namespace sadvae
