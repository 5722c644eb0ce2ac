#include "sadvae/cli.hpp"

#include "sadvae/ablation.hpp"
#include "sadvae/binary.hpp"
#include "sadvae/evaluation.hpp"
#include "sadvae/pipeline.hpp"
#include "sadvae/search.hpp"

#include <CLI11.hpp>
#include <algorithm>
#include <json.hpp>
#include <optional>

namespace sadvae {

namespace {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

// Files shared between the stages of one output directory.
constexpr const char* kConfigFile = "config.json";
constexpr const char* kSplitFile = "split.json";
constexpr const char* kModelFile = "model.sadm";
constexpr const char* kMetricsFile = "metrics.csv";
constexpr const char* kPredictorFile = "predictor.sadc";

// Bad flag values; reported like parse errors.
struct UsageError : ArgumentError {
    using ArgumentError::ArgumentError;
};

struct Common {
    std::string manifest;
    std::string config;
    std::string preset = "desk";
    std::string out;
    std::optional<std::uint64_t> seed;
    std::uint64_t split_seed = 0;
    std::size_t unseen = 5;
    std::optional<std::size_t> epochs;
};

void write_text(const fs::path& path, const std::string& text)
{
    binary::write_file(path, text);
}

std::string read_text(const fs::path& path)
{
    return binary::read_file(path);
}

RunConfig base_config(const Common& c)
{
    if (c.preset != "desk" && c.preset != "full") {
        throw UsageError("--preset must be desk or full");
    }
    const RunConfig base = c.preset == "desk" ? RunConfig::desk_defaults() : RunConfig{};
    RunConfig config = c.config.empty() ? base : config_from_json(read_text(c.config), base);
    if (c.seed) {
        config.seed = *c.seed;
    }
    if (c.epochs) {
        config.epochs = *c.epochs;
    }
    config.validate();
    return config;
}

void require(const std::string& value, const char* flag)
{
    if (value.empty()) {
        throw UsageError(std::string(flag) + " is required");
    }
}

fs::path out_dir(const Common& c)
{
    require(c.out, "--out");
    fs::create_directories(c.out);
    return c.out;
}

Dataset dataset_of(const Common& c)
{
    require(c.manifest, "--manifest");
    return load_dataset(c.manifest);
}

// State written by `train` and read back by the later stages.
struct Stage {
    Dataset dataset;
    RunConfig config;
    ClassSplit split;
    SamplePartition partition;
    fs::path dir;
};

Stage load_stage(const Common& c)
{
    Stage s;
    s.dir = out_dir(c);
    s.dataset = dataset_of(c);
    s.config = config_from_json(read_text(s.dir / kConfigFile));
    s.split = split_from_json(read_text(s.dir / kSplitFile));
    validate_split(s.split, s.dataset.manifest.num_classes());
    s.partition = partition_samples(s.dataset.labels, s.split, s.config.holdout_fraction, s.config.seed);
    return s;
}

std::uint64_t stage_seed(const Common& c, const Stage& s) { return c.seed.value_or(s.config.seed); }

void cmd_gen_synth(const Common& c, const SyntheticSpec& base, std::ostream& out)
{
    SyntheticSpec spec = base;
    spec.seed = c.seed.value_or(0);
    const auto dir = out_dir(c);
    const auto manifest = write_synthetic_dataset(spec, dir);
    const json report{{"command", "gen-synth"},
                      {"manifest", manifest.filename().string()},
                      {"num_classes", spec.num_classes},
                      {"samples_per_class", spec.samples_per_class},
                      {"d_x", spec.d_x},
                      {"d_y", spec.d_y},
                      {"signal_dim", spec.signal_dim},
                      {"nuisance_dim", spec.nuisance_dim},
                      {"noise_scale", spec.noise_scale},
                      {"seed", spec.seed}};
    write_text(dir / "gen-synth.json", report.dump(2) + "\n");
    out << manifest.string() << "\n";
}

void cmd_train(const Common& c, std::ostream& out)
{
    const auto dir = out_dir(c);
    const Dataset dataset = dataset_of(c);
    const RunConfig config = base_config(c);
    const ClassSplit split = make_random_split(dataset.manifest, c.unseen, c.split_seed);
    const auto result = train(dataset, split, config);
    write_text(dir / kConfigFile, config_to_json(config));
    write_text(dir / kSplitFile, split_to_json(split));
    save_model(dir / kModelFile, result.state);
    write_text(dir / kMetricsFile, metrics_csv(result.metrics));
    json report{{"command", "train"},
                {"steps", result.metrics.size()},
                {"discriminator_updates", result.discriminator_updates}};
    if (!result.metrics.empty()) {
        const auto& m = result.metrics.back();
        report["final"] = {{"l_x", m.l_x}, {"l_y", m.l_y}, {"l_c", m.l_c}, {"l_t", m.l_t}, {"total", m.total}};
    }
    write_text(dir / "train.json", report.dump(2) + "\n");
    out << "trained " << result.metrics.size() << " steps\n";
}

void cmd_calibrate(const Common& c, std::ostream& out)
{
    const Stage s = load_stage(c);
    const auto state = load_model(s.dir / kModelFile);
    const std::uint64_t seed = stage_seed(c, s);
    GzslPredictor predictor = assemble_predictor(s.dataset, s.split, s.partition.train, state.params, s.config, seed);
    const auto fit = calibrate_gzsl(s.dataset, s.split, s.partition.train, s.config, seed);
    predictor.gate = fit.gate;
    save_predictor(s.dir / kPredictorFile, predictor);
    const json report{{"command", "calibrate"},
                      {"gate_weights", fit.gate.weights},
                      {"gate_bias", fit.gate.bias},
                      {"temperature", fit.gate.temperature},
                      {"k", fit.gate.k},
                      {"iterations", fit.iterations},
                      {"gradient_norm", fit.gradient_norm},
                      {"converged", fit.converged}};
    write_text(s.dir / "calibrate.json", report.dump(2) + "\n");
    out << "gate fitted in " << fit.iterations << " iterations\n";
}

std::pair<FeatureMatrix, LabelVector> rows_of(const Dataset& d, std::span<const std::size_t> idx)
{
    LabelVector labels;
    for (const auto i : idx) {
        labels.push_back(d.labels[i]);
    }
    return {d.skeleton.gather(idx), labels};
}

void cmd_eval_zsl(const Common& c, std::ostream& out)
{
    const Stage s = load_stage(c);
    const auto predictor = load_predictor(s.dir / kPredictorFile);
    const auto [fx, labels] = rows_of(s.dataset, s.partition.test_unseen);
    const auto predicted = predict_zsl(predictor, fx);
    const double acc = zsl_accuracy(predicted, labels, s.split.unseen);
    json per_class = json::object();
    for (const auto& [id, a] : per_class_accuracy(predicted, labels)) {
        per_class[std::to_string(id)] = a;
    }
    const json report{{"command", "eval-zsl"}, {"zsl_accuracy", acc}, {"samples", labels.size()},
                      {"unseen_per_class", per_class}};
    write_text(s.dir / "eval-zsl.json", report.dump(2) + "\n");
    out << "zsl accuracy " << acc << "\n";
}

void cmd_eval_gzsl(const Common& c, std::ostream& out)
{
    const Stage s = load_stage(c);
    const auto predictor = load_predictor(s.dir / kPredictorFile);
    std::vector<std::size_t> rows = s.partition.test_seen;
    rows.insert(rows.end(), s.partition.test_unseen.begin(), s.partition.test_unseen.end());
    const auto [fx, labels] = rows_of(s.dataset, rows);
    const auto r = gzsl_metrics(predictor, fx, labels, s.split);
    const json report{{"command", "eval-gzsl"},          {"acc_seen", r.acc_seen},
                      {"acc_unseen", r.acc_unseen},      {"harmonic_mean", r.harmonic_mean},
                      {"seen_samples", r.seen_count},    {"unseen_samples", r.unseen_count}};
    write_text(s.dir / "eval-gzsl.json", report.dump(2) + "\n");
    out << "acc_s " << r.acc_seen << " acc_u " << r.acc_unseen << " H " << r.harmonic_mean << "\n";
}

void cmd_protocol(const Common& c, std::size_t repeats, std::ostream& out)
{
    const auto dir = out_dir(c);
    const Dataset dataset = dataset_of(c);
    const RunConfig config = base_config(c);
    const auto report = run_random_split_protocol(dataset, c.unseen, repeats, config, c.split_seed);
    write_text(dir / "protocol.json", report_to_json(report));
    write_text(dir / "protocol.csv", protocol_csv(report));
    out << "mean zsl " << report.zsl << " mean H " << report.gzsl.harmonic_mean << "\n";
}

void cmd_ablate(const Common& c, const std::vector<std::string>& variant_tags, std::size_t repeats, bool zsl_only,
                std::ostream& out)
{
    const auto dir = out_dir(c);
    const Dataset dataset = dataset_of(c);
    const RunConfig config = base_config(c);
    const ClassSplit split = make_random_split(dataset.manifest, c.unseen, c.split_seed);
    std::vector<AblationVariant> variants;
    for (const auto& t : variant_tags) {
        variants.push_back(parse_variant(t));
    }
    if (variants.empty()) {
        variants = {AblationVariant::naive, AblationVariant::fd, AblationVariant::fd_tc};
    }
    std::vector<std::uint64_t> seeds;
    for (std::size_t r = 0; r < repeats; ++r) {
        seeds.push_back(config.seed + r);
    }
    AblationOptions options;
    options.gzsl = !zsl_only;
    const auto rows = run_ablation(dataset, split, config, variants, seeds, options);
    write_text(dir / "ablation.csv", ablation_csv(rows));
    json means = json::object();
    for (const auto v : variants) {
        means[std::string(variant_name(v))] = mean_zsl(rows, v);
        out << variant_name(v) << " mean zsl " << mean_zsl(rows, v) << "\n";
    }
    const json report{{"command", "ablate"}, {"seeds", seeds}, {"mean_zsl", means}};
    write_text(dir / "ablation.json", report.dump(2) + "\n");
}

std::pair<std::size_t, std::size_t> parse_trials(const std::string& text)
{
    const auto comma = text.find(',');
    if (comma == std::string::npos) {
        throw UsageError("--trials expects P1,P2");
    }
    try {
        std::size_t used1 = 0;
        std::size_t used2 = 0;
        const auto a = std::stoull(text.substr(0, comma), &used1);
        const auto b = std::stoull(text.substr(comma + 1), &used2);
        if (used1 != comma || used2 != text.size() - comma - 1) {
            throw UsageError("--trials expects P1,P2");
        }
        return {a, b};
    } catch (const std::logic_error&) {
        throw UsageError("--trials expects P1,P2");
    }
}

void cmd_search(const Common& c, const std::string& trials, std::ostream& out)
{
    const auto dir = out_dir(c);
    const Dataset dataset = dataset_of(c);
    const RunConfig config = base_config(c);
    const ClassSplit split = make_random_split(dataset.manifest, c.unseen, c.split_seed);
    SearchSpace space;
    std::tie(space.phase1_trials, space.phase2_trials) = parse_trials(trials);
    const auto result = hyperparameter_search(config, space, config.seed,
                                              validation_evaluator(dataset, split, config.seed),
                                              thread_count_from_env());
    write_text(dir / "search.csv", trial_log_csv(result));
    write_text(dir / "best_config.json", config_to_json(result.best));
    const json report{{"command", "search"},
                      {"trials", result.trials.size()},
                      {"best", json::parse(config_to_json(result.best))}};
    write_text(dir / "search.json", report.dump(2) + "\n");
    out << "best of " << result.trials.size() << " trials written to best_config.json\n";
}

void cmd_export_latents(const Common& c, std::ostream& out)
{
    const auto dir = out_dir(c);
    const Dataset dataset = dataset_of(c);
    const auto state = load_model(dir / kModelFile);
    const auto post = encode_skeleton(state.params, dataset.skeleton);
    write_feature_matrix(post.r.mean, dir / "latents_r.sadv");
    write_feature_matrix(post.v.mean, dir / "latents_v.sadv");
    write_labels(dataset.labels, dir / "latents_labels.sadl");
    const json report{{"command", "export-latents"},
                      {"samples", dataset.skeleton.rows()},
                      {"dim_r", post.r.mean.cols()},
                      {"dim_v", post.v.mean.cols()}};
    write_text(dir / "export-latents.json", report.dump(2) + "\n");
    out << "exported " << dataset.skeleton.rows() << " latents\n";
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Skeleton/text zero-shot training and evaluation"};
    app.require_subcommand(1);
    Common common;

    auto add_common = [&](CLI::App* sub, bool data, bool split) {
        sub->add_option("--out", common.out, "Output directory")->required();
        sub->add_option("--seed", common.seed, "Random seed");
        if (data) {
            sub->add_option("--manifest", common.manifest, "Dataset manifest")->required();
            sub->add_option("--config", common.config, "JSON run configuration");
            sub->add_option("--preset", common.preset, "Defaults under --config: desk or full");
        }
        if (split) {
            sub->add_option("--split-seed", common.split_seed, "Seed of the random class split");
            sub->add_option("--unseen", common.unseen, "Number of unseen classes");
        }
    };

    SyntheticSpec spec;
    auto* gen = app.add_subcommand("gen-synth", "Write a synthetic dataset");
    add_common(gen, false, false);
    gen->add_option("--classes", spec.num_classes);
    gen->add_option("--samples-per-class", spec.samples_per_class);
    gen->add_option("--d-x", spec.d_x);
    gen->add_option("--d-y", spec.d_y);
    gen->add_option("--signal-dim", spec.signal_dim);
    gen->add_option("--nuisance-dim", spec.nuisance_dim);
    gen->add_option("--noise-scale", spec.noise_scale);

    auto* train_cmd = app.add_subcommand("train", "Train the model on a random class split");
    add_common(train_cmd, true, true);
    train_cmd->add_option("--epochs", common.epochs, "Override the configured epoch count");

    auto* calibrate = app.add_subcommand("calibrate", "Fit C_s, C_u and the domain gate");
    add_common(calibrate, true, true);
    auto* eval_zsl = app.add_subcommand("eval-zsl", "Unseen-class accuracy");
    add_common(eval_zsl, true, true);
    auto* eval_gzsl = app.add_subcommand("eval-gzsl", "Seen/unseen accuracy and harmonic mean");
    add_common(eval_gzsl, true, true);

    std::size_t repeats = 3;
    auto* protocol = app.add_subcommand("protocol", "Repeated random-split protocol");
    add_common(protocol, true, true);
    protocol->add_option("--repeats", repeats);

    std::vector<std::string> variants;
    bool zsl_only = false;
    std::size_t ablate_repeats = 3;
    auto* ablate = app.add_subcommand("ablate", "naive / fd / fd_tc comparison");
    add_common(ablate, true, true);
    ablate->add_option("--variant", variants, "Variant(s) to run")->check(CLI::IsMember({"naive", "fd", "fd_tc"}));
    ablate->add_option("--repeats", ablate_repeats, "Number of seeds, starting at the config seed");
    ablate->add_flag("--zsl-only", zsl_only, "Skip calibration and GZSL metrics");

    std::string trials = "5,100";
    auto* search = app.add_subcommand("search", "Two-phase random hyperparameter search");
    add_common(search, true, true);
    search->add_option("--trials", trials, "Phase trial counts P1,P2");

    auto* export_cmd = app.add_subcommand("export-latents", "Write r/v posterior means of every sample");
    add_common(export_cmd, true, false);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) {
            cmd_gen_synth(common, spec, out);
        } else if (train_cmd->parsed()) {
            cmd_train(common, out);
        } else if (calibrate->parsed()) {
            cmd_calibrate(common, out);
        } else if (eval_zsl->parsed()) {
            cmd_eval_zsl(common, out);
        } else if (eval_gzsl->parsed()) {
            cmd_eval_gzsl(common, out);
        } else if (protocol->parsed()) {
            cmd_protocol(common, repeats, out);
        } else if (ablate->parsed()) {
            cmd_ablate(common, variants, ablate_repeats, zsl_only, out);
        } else if (search->parsed()) {
            cmd_search(common, trials, out);
        } else if (export_cmd->parsed()) {
            cmd_export_latents(common, out);
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

} // namespace sadvae
