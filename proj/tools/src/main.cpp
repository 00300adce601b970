// star: command-line front end for the score prediction engine. Every
// subcommand loads one JSON experiment config; --seed/--out/--workers
// override it after loading.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "star/harness.hpp"

namespace fs = std::filesystem;
namespace harness = star::harness;
namespace corpus = star::corpus;
using nlohmann::json;

namespace {

struct GlobalArgs {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::optional<int> workers;
};

harness::ExperimentConfig load_config(const GlobalArgs& args) {
    if (args.config_path.empty()) {
        throw star::ConfigError("--config is required for this subcommand");
    }
    harness::ExperimentConfig config = harness::ExperimentConfig::load(args.config_path);
    if (args.seed) config.seed = *args.seed;
    if (!args.out.empty()) config.output_dir = args.out;
    if (args.workers) config.workers = *args.workers;
    config.validate();
    return config;
}

std::string require_out(const harness::ExperimentConfig& config) {
    if (config.output_dir.empty()) {
        throw star::ConfigError("no output directory: set --out or output_dir in the config");
    }
    fs::create_directories(config.output_dir);
    return config.output_dir;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream outf(path, std::ios::binary | std::ios::trunc);
    outf << text;
    if (!outf) throw star::ConfigError("cannot write " + path.string());
}

const corpus::Scenario& find_scenario(const harness::ExperimentConfig& config,
                                      const std::string& name) {
    for (const corpus::Scenario& s : config.scenarios) {
        if (s.name == name) return s;
    }
    throw star::ConfigError("scenario not in config: " + name);
}

void print_method_lines(const harness::RunArtifact& artifact) {
    for (const harness::MethodRun& run : artifact.methods) {
        if (!run.error.empty()) {
            std::cout << "  " << to_string(run.method) << ": failed (" << run.error << ")\n";
            continue;
        }
        const star::metrics::MetricReport& r = run.report;
        std::cout << "  " << to_string(run.method) << ": mae=" << star::format_number(r.mae)
                  << " rmse=" << star::format_number(r.rmse)
                  << " score_avg=" << star::format_number(r.score_avg);
        if (r.total) std::cout << " total=" << star::format_number(*r.total);
        std::cout << "\n";
    }
}

void report_written(const std::string& out_dir, std::size_t artifacts) {
    std::cout << artifacts << " artifact" << (artifacts == 1 ? "" : "s")
              << " -> report.json, results.csv, plotdata.csv, timings.csv in " << out_dir << "\n";
}

int cmd_ingest(const GlobalArgs& args) {
    const harness::ExperimentConfig config = load_config(args);
    const harness::Dataset data = harness::load_dataset(config.data);
    const star::ScoreMatrix& matrix = data.memory.matrix;

    json summary;
    summary["models"] = matrix.rows();
    summary["benchmarks"] = matrix.cols();
    summary["observed_cells"] = matrix.observed_count();
    summary["density"] = matrix.rows() > 0 && matrix.cols() > 0
                             ? static_cast<double>(matrix.observed_count()) /
                                   (static_cast<double>(matrix.rows()) * matrix.cols())
                             : 0.0;
    summary["observed_mean"] = matrix.observed_count() > 0 ? matrix.observed_mean() : 0.0;
    summary["feature_dim"] = data.store.empty() ? 0 : data.store.dim();

    const std::string text = summary.dump(2) + "\n";
    std::cout << text;
    if (!config.output_dir.empty()) {
        write_text(fs::path(require_out(config)) / "ingest.json", text);
    }
    return 0;
}

int cmd_split(const GlobalArgs& args, std::optional<double> ratio, const std::string& scenario,
              int run, std::string file) {
    const harness::ExperimentConfig config = load_config(args);
    const harness::Dataset data = harness::load_dataset(config.data);

    corpus::Split split;
    if (!scenario.empty()) {
        const corpus::Scenario& s = find_scenario(config, scenario);
        const std::uint64_t run_seed =
            star::derive_seed(config.seed, s.name, static_cast<std::uint64_t>(run));
        split = corpus::pattern_shift_split(data.memory.matrix, data.memory.model_profiles,
                                            data.memory.benchmark_profiles, s,
                                            star::derive_seed(run_seed, "mask"));
    } else {
        const double p = ratio.value_or(config.mask_ratios.front());
        if (p <= 0.0 || p >= 1.0) throw star::ConfigError("--ratio must lie in (0,1)");
        const std::string label = "P" + std::to_string(std::lround(p * 100));
        const std::uint64_t run_seed =
            star::derive_seed(config.seed, label, static_cast<std::uint64_t>(run));
        split = corpus::temporal_masking_split(data.memory.matrix, data.memory.model_profiles,
                                               config.cutoff, p,
                                               star::derive_seed(run_seed, "mask"));
    }

    if (file.empty()) file = (fs::path(require_out(config)) / "split.json").string();
    corpus::save_split(split, file);
    std::cout << "split: " << split.train.observed_count() << " train cells, "
              << split.test_cells.size() << " test cells";
    if (split.dropped_cells > 0) std::cout << ", " << split.dropped_cells << " dropped";
    std::cout << " -> " << file << "\n";
    for (const std::string& w : split.warnings) std::cout << "warning: " << w << "\n";
    return 0;
}

int cmd_train(const GlobalArgs& args, const std::string& split_file, std::string file) {
    const harness::ExperimentConfig config = load_config(args);
    const harness::Dataset data = harness::load_dataset(config.data);

    star::ScoreMatrix train = data.memory.matrix;
    if (!split_file.empty()) {
        train = corpus::load_split(split_file, data.memory.matrix).train;
    }

    const star::sampler::Checkpoint ckpt =
        harness::train_checkpoint(data, train, config, config.seed);
    if (file.empty()) file = (fs::path(require_out(config)) / "checkpoint.bin").string();
    star::sampler::save_checkpoint(ckpt, file);
    std::cout << "checkpoint: " << ckpt.draws.size() << " draws over "
              << train.observed_count() << " cells -> " << file << "\n";
    if (ckpt.diagnostics.low_acceptance) std::cout << "warning: low acceptance rate\n";
    return 0;
}

int cmd_predict(const std::string& checkpoint, const std::string& model,
                const std::string& benchmark) {
    const star::sampler::Checkpoint ckpt = star::sampler::load_checkpoint(checkpoint);
    const star::sampler::CellEstimate est = star::sampler::estimate_cell(ckpt, model, benchmark);
    json row;
    row["model_id"] = model;
    row["benchmark_id"] = benchmark;
    row["mean"] = est.mean;
    row["std"] = est.std;
    std::cout << row.dump(2) << "\n";
    return 0;
}

int cmd_evaluate(const GlobalArgs& args, std::optional<double> ratio, int run) {
    const harness::ExperimentConfig config = load_config(args);
    const harness::Dataset data = harness::load_dataset(config.data);
    const auto client = harness::make_client(config);

    const double p = ratio.value_or(config.mask_ratios.front());
    if (p <= 0.0 || p >= 1.0) throw star::ConfigError("--ratio must lie in (0,1)");
    const std::string label = "P" + std::to_string(std::lround(p * 100));
    const std::uint64_t run_seed =
        star::derive_seed(config.seed, label, static_cast<std::uint64_t>(run));
    const corpus::Split split = corpus::temporal_masking_split(
        data.memory.matrix, data.memory.model_profiles, config.cutoff, p,
        star::derive_seed(run_seed, "mask"));

    const harness::RunArtifact artifact =
        harness::run_split(data, split, config, *client, "evaluate", label, run, run_seed);
    std::cout << "evaluate " << label << " run " << run << " (" << artifact.test_cells
              << " test cells):\n";
    print_method_lines(artifact);

    const std::string out_dir = require_out(config);
    harness::emit_report({artifact}, data.memory.matrix, out_dir);
    report_written(out_dir, 1);
    return 0;
}

int cmd_sweep(const GlobalArgs& args) {
    const harness::ExperimentConfig config = load_config(args);
    const harness::Dataset data = harness::load_dataset(config.data);
    const auto client = harness::make_client(config);

    const std::vector<harness::RunArtifact> artifacts =
        harness::run_masking_experiment(data, config, *client);
    const std::string out_dir = require_out(config);
    harness::emit_report(artifacts, data.memory.matrix, out_dir);
    report_written(out_dir, artifacts.size());
    return 0;
}

int cmd_shift(const GlobalArgs& args, const std::string& scenario, int run) {
    const harness::ExperimentConfig config = load_config(args);
    if (config.scenarios.empty()) throw star::ConfigError("no scenarios in config");
    const harness::Dataset data = harness::load_dataset(config.data);
    const auto client = harness::make_client(config);

    std::vector<harness::RunArtifact> artifacts;
    if (!scenario.empty()) {
        artifacts.push_back(
            harness::run_pattern_shift(data, find_scenario(config, scenario), config, *client, run));
    } else {
        for (const corpus::Scenario& s : config.scenarios) {
            artifacts.push_back(harness::run_pattern_shift(data, s, config, *client, run));
        }
    }
    for (const harness::RunArtifact& artifact : artifacts) {
        std::cout << "shift " << artifact.label << " (" << artifact.test_cells
                  << " test cells):\n";
        print_method_lines(artifact);
        for (const std::string& w : artifact.warnings) std::cout << "  note: " << w << "\n";
    }
    const std::string out_dir = require_out(config);
    harness::emit_report(artifacts, data.memory.matrix, out_dir);
    report_written(out_dir, artifacts.size());
    return 0;
}

int cmd_ablate(const GlobalArgs& args) {
    const harness::ExperimentConfig config = load_config(args);
    const harness::Dataset data = harness::load_dataset(config.data);
    const auto client = harness::make_client(config);

    const std::vector<harness::RunArtifact> artifacts =
        harness::run_ablation(data, harness::default_ablation_specs(), config, *client);
    for (const harness::RunArtifact& artifact : artifacts) {
        std::cout << "ablation [" << artifact.label << "]:\n";
        print_method_lines(artifact);
    }
    const std::string out_dir = require_out(config);
    harness::emit_report(artifacts, data.memory.matrix, out_dir);
    report_written(out_dir, artifacts.size());
    return 0;
}

harness::SelectionReport run_configured_selection(const harness::ExperimentConfig& config,
                                                  const harness::Dataset& data,
                                                  star::llm::LlmClient& client,
                                                  const std::string& benchmark,
                                                  std::optional<double> budget,
                                                  std::optional<int> k) {
    harness::SelectionOptions options;
    if (config.selection) options = *config.selection;
    if (!benchmark.empty()) options.benchmark_id = benchmark;
    if (budget) options.budget = *budget;
    if (k) options.k = *k;
    if (options.benchmark_id.empty()) {
        throw star::ConfigError("selection needs a target benchmark (--benchmark or config)");
    }
    return harness::run_selection(data, config, options, client);
}

int cmd_select(const GlobalArgs& args, const std::string& benchmark, std::optional<double> budget,
               std::optional<int> k) {
    const harness::ExperimentConfig config = load_config(args);
    const harness::Dataset data = harness::load_dataset(config.data);
    const auto client = harness::make_client(config);

    const harness::SelectionReport report =
        run_configured_selection(config, data, *client, benchmark, budget, k);
    const std::string text = report.to_json() + "\n";
    std::cout << text;
    if (!config.output_dir.empty()) {
        write_text(fs::path(require_out(config)) / "selection.json", text);
    }
    return 0;
}

int cmd_report(const GlobalArgs& args) {
    const harness::ExperimentConfig config = load_config(args);
    const harness::Dataset data = harness::load_dataset(config.data);
    const auto client = harness::make_client(config);
    const std::string out_dir = require_out(config);

    std::vector<harness::RunArtifact> artifacts =
        harness::run_masking_experiment(data, config, *client);
    for (const corpus::Scenario& s : config.scenarios) {
        artifacts.push_back(harness::run_pattern_shift(data, s, config, *client));
    }
    const std::vector<harness::RunArtifact> ablation =
        harness::run_ablation(data, harness::default_ablation_specs(), config, *client);
    artifacts.insert(artifacts.end(), ablation.begin(), ablation.end());

    harness::emit_report(artifacts, data.memory.matrix, out_dir);
    if (config.selection) {
        const harness::SelectionReport selection =
            run_configured_selection(config, data, *client, "", std::nullopt, std::nullopt);
        write_text(fs::path(out_dir) / "selection.json", selection.to_json() + "\n");
        std::cout << "selection: brute=" << star::format_number(selection.brute_force)
                  << " random=" << star::format_number(selection.random_mean)
                  << " guided=" << star::format_number(selection.star_recall) << "\n";
    }
    report_written(out_dir, artifacts.size());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"star: benchmark score prediction and evaluation"};
    app.require_subcommand(1);
    app.fallthrough();

    GlobalArgs args;
    std::uint64_t seed_value = 0;
    int workers_value = 0;
    app.add_option("--config", args.config_path, "experiment config (JSON)");
    auto* seed_opt = app.add_option("--seed", seed_value, "override the master seed");
    app.add_option("--out", args.out, "override the output directory");
    auto* workers_opt = app.add_option("--workers", workers_value, "override the worker cap");

    auto* ingest = app.add_subcommand("ingest", "load and validate the dataset");
    auto* split = app.add_subcommand("split", "build one train/test split and save it");
    auto* train = app.add_subcommand("train", "fit the factor model and save a checkpoint");
    auto* predict = app.add_subcommand("predict", "estimate one cell from a checkpoint");
    auto* evaluate = app.add_subcommand("evaluate", "score every method on one split");
    auto* sweep = app.add_subcommand("sweep", "masking sweep over all ratios and runs");
    auto* shift = app.add_subcommand("shift", "run pattern-shift scenarios");
    auto* ablate = app.add_subcommand("ablate", "run the feature/step/source ablation grid");
    auto* select = app.add_subcommand("select", "compare model-selection strategies");
    auto* report = app.add_subcommand("report", "full pipeline: sweep, shifts, ablations, selection");

    double ratio_value = 0;
    auto* split_ratio = split->add_option("--ratio", ratio_value, "masking ratio in (0,1)");
    std::string split_scenario;
    split->add_option("--scenario", split_scenario, "pattern-shift scenario name");
    int split_run = 0;
    split->add_option("--run", split_run, "run index for seeding");
    std::string split_file;
    split->add_option("--file", split_file, "output path (default <out>/split.json)");

    std::string train_split;
    train->add_option("--split", train_split, "train on a saved split's train cells");
    std::string train_file;
    train->add_option("--checkpoint", train_file, "output path (default <out>/checkpoint.bin)");

    std::string predict_checkpoint;
    predict->add_option("--checkpoint", predict_checkpoint, "checkpoint file")->required();
    std::string predict_model;
    predict->add_option("--model", predict_model, "model id")->required();
    std::string predict_benchmark;
    predict->add_option("--benchmark", predict_benchmark, "benchmark id")->required();

    double eval_ratio_value = 0;
    auto* eval_ratio = evaluate->add_option("--ratio", eval_ratio_value, "masking ratio in (0,1)");
    int eval_run = 0;
    evaluate->add_option("--run", eval_run, "run index for seeding");

    std::string shift_scenario;
    shift->add_option("--scenario", shift_scenario, "run only this scenario");
    int shift_run = 0;
    shift->add_option("--run", shift_run, "run index for seeding");

    std::string select_benchmark;
    select->add_option("--benchmark", select_benchmark, "target benchmark id");
    double select_budget_value = 0;
    auto* select_budget = select->add_option("--budget", select_budget_value,
                                             "observation budget fraction in (0,1]");
    int select_k_value = 0;
    auto* select_k = select->add_option("--k", select_k_value, "recommendation list size");

    CLI11_PARSE(app, argc, argv);
    if (*seed_opt) args.seed = seed_value;
    if (*workers_opt) args.workers = workers_value;

    try {
        if (*ingest) return cmd_ingest(args);
        if (*split) {
            std::optional<double> ratio;
            if (*split_ratio) ratio = ratio_value;
            return cmd_split(args, ratio, split_scenario, split_run, split_file);
        }
        if (*train) return cmd_train(args, train_split, train_file);
        if (*predict) return cmd_predict(predict_checkpoint, predict_model, predict_benchmark);
        if (*evaluate) {
            std::optional<double> ratio;
            if (*eval_ratio) ratio = eval_ratio_value;
            return cmd_evaluate(args, ratio, eval_run);
        }
        if (*sweep) return cmd_sweep(args);
        if (*shift) return cmd_shift(args, shift_scenario, shift_run);
        if (*ablate) return cmd_ablate(args);
        if (*select) {
            std::optional<double> budget;
            if (*select_budget) budget = select_budget_value;
            std::optional<int> k;
            if (*select_k) k = select_k_value;
            return cmd_select(args, select_benchmark, budget, k);
        }
        if (*report) return cmd_report(args);
    } catch (const star::Error& e) {
        std::cerr << "star: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
