#pragma once
// Experiment orchestration: dataset loading, split evaluation across the
// predictor lineup, sparsity sweeps, pattern-shift scenarios, ablation
// grids, the model-selection experiment, and report emission.

#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "star/baselines.hpp"
#include "star/corpus.hpp"
#include "star/evidence.hpp"
#include "star/features.hpp"
#include "star/llm.hpp"
#include "star/metrics.hpp"
#include "star/reasoning.hpp"
#include "star/sampler.hpp"

namespace star::harness {

// The predictor lineup. pmf is the zero-feature reduction of the
// factorization model run through the same ensemble machinery; star is
// the factorization expectation refined per cell by the reasoning pass.
enum class MethodKind : std::uint8_t {
    global_mean,
    mean_of_means,
    pca,
    llm_direct,
    pmf,
    cpmf,
    star,
};

std::string to_string(MethodKind method);
MethodKind method_from_string(const std::string& name);  // throws ConfigError

struct DatasetPaths {
    std::string models;      // model profile JSON
    std::string benchmarks;  // benchmark profile JSON
    std::string scores;      // raw score CSV
    std::string features;    // semantic feature JSON, empty = none
};

// Optional overrides layered over Hyperparams::defaults(feature_dim).
struct HyperOverrides {
    std::optional<int> D;
    std::optional<double> sigma_U;
    std::optional<double> sigma_V;
    std::optional<double> sigma_X;
    std::optional<double> sigma_Y;
    std::optional<double> sigma;
    std::optional<bool> center;

    cpmf::Hyperparams resolve(int feature_dim) const;
};

struct LlmSettings {
    std::string backend = "mock";  // "mock" or "http" (env-configured)
    llm::MockRules rules;
};

struct SelectionOptions {
    std::string benchmark_id;  // designated target column
    double budget = 0.035;     // fraction of the pool observed, in (0, 1]
    int k = 10;                // recommendation size
    int random_seeds = 5;      // random-strategy repetitions
};

struct ExperimentConfig {
    DatasetPaths data;
    std::vector<MethodKind> methods;
    int runs = 5;
    std::uint64_t seed = 0;
    int workers = 0;  // parallelism cap, 0 = hardware default
    std::string output_dir;

    Date cutoff;  // models released after this date get masked
    std::vector<double> mask_ratios{0.40, 0.60, 0.80, 0.95};

    HyperOverrides hyper;
    hmc::ChainConfig chain;
    int n_chains = 2;
    int pca_rank = 5;
    int neighbor_k = 5;
    int llm_retries = 1;

    evidence::RetrieverConfig retriever;
    reasoning::ReasoningConfig reasoner;
    LlmSettings llm;

    std::vector<corpus::Scenario> scenarios;  // pattern-shift definitions
    std::optional<SelectionOptions> selection;

    void validate() const;  // throws ConfigError

    // JSON file; relative dataset/fixture/template paths resolve against
    // the file's directory. Unknown top-level keys are rejected.
    static ExperimentConfig load(const std::string& path);
};

// Client picked by settings: the deterministic mock, or the HTTP chat
// backend configured through the environment.
std::unique_ptr<llm::LlmClient> make_client(const ExperimentConfig& config);

struct Dataset {
    MemoryState memory;
    features::FeatureStore store;
};

Dataset load_dataset(const DatasetPaths& paths);

// Fit the featured factor model on `train` and package the draws so any
// cell can be estimated later without refitting. Shares run_split's
// factor seed stream, so a checkpoint at run_seed reproduces that run's
// expectations.
sampler::Checkpoint train_checkpoint(const Dataset& data, const ScoreMatrix& train,
                                     const ExperimentConfig& config, std::uint64_t run_seed);

// Ablation toggles applied to the factorization features and the
// reasoning pass. An empty source set disables retrieval entirely; the
// reasoning pass then receives no evidence and no score citations, so
// the refined prediction collapses to the expectation.
struct PipelineToggles {
    bool model_features = true;
    bool benchmark_features = true;
    bool family_step = true;
    bool cross_step = true;
    std::optional<std::set<evidence::Source>> sources;  // nullopt = all
};

// Per-cell refinement record kept for star runs.
struct StarTrace {
    double expectation = 0;  // factorization posterior mean, unclamped
    double sigma = 0;        // posterior spread across draws
    double delta = 0;
    double confidence = 0;
    std::string explanation;
    std::vector<std::string> evidence_refs;
    std::vector<std::string> flags;  // step-prefixed analysis flags
    std::string transcript_tag;      // file prefix inside transcript_dir
};

struct MethodRun {
    MethodKind method{};
    std::vector<Cell> cells;  // sorted test cells
    std::vector<double> values;
    std::vector<std::uint8_t> failed;
    long failed_count = 0;
    metrics::MetricReport report;  // over successful cells
    double seconds = 0;            // wall clock, excluded from reports
    std::string error;             // whole-method failure, cells all marked
    std::vector<StarTrace> traces;  // star only, aligned with cells
};

struct RunArtifact {
    std::string experiment;  // sweep | shift | ablate | evaluate
    std::string label;
    int run_index = 0;
    std::uint64_t run_seed = 0;
    SplitKind split_kind = SplitKind::temporal_masking;
    double mask_ratio = 0;
    long train_cells = 0;
    long test_cells = 0;
    long dropped_cells = 0;
    std::string transcript_dir;  // relative to the output dir, star only
    std::vector<std::string> warnings;
    std::vector<MethodRun> methods;
};

// Evaluate one split with every configured method. Per-method failures
// are recorded (all cells marked failed) and the run continues.
RunArtifact run_split(const Dataset& data, const corpus::Split& split,
                      const ExperimentConfig& config, llm::LlmClient& client,
                      const std::string& experiment, const std::string& label, int run_index,
                      std::uint64_t run_seed, const PipelineToggles& toggles = {});

// Temporal masking sweep: every ratio in config.mask_ratios times
// config.runs; each run re-seeds both the mask and the chains.
std::vector<RunArtifact> run_masking_experiment(const Dataset& data,
                                                const ExperimentConfig& config,
                                                llm::LlmClient& client);

RunArtifact run_pattern_shift(const Dataset& data, const corpus::Scenario& scenario,
                              const ExperimentConfig& config, llm::LlmClient& client,
                              int run_index = 0);

struct AblationSpec {
    std::string label;
    std::vector<MethodKind> methods;
    PipelineToggles toggles;
};

// Feature rows (full, w/o model, w/o benchmark, neither = pmf), reasoning
// step rows, and the eight retrieval-source subsets.
std::vector<AblationSpec> default_ablation_specs();

// One artifact per spec, all sharing a single split and seed so rows
// differ only by configuration.
std::vector<RunArtifact> run_ablation(const Dataset& data,
                                      const std::vector<AblationSpec>& specs,
                                      const ExperimentConfig& config, llm::LlmClient& client);

struct SelectionReport {
    std::string benchmark_id;
    double budget = 0;
    int k = 0;
    long pool = 0;      // candidate models with a true score on the target
    long observed = 0;  // cells measured under the budget
    double brute_force = 0;
    double random_mean = 0;
    double random_std = 0;
    double star_recall = 0;

    std::string to_json() const;
};

// Compare recommendation strategies on one held-out benchmark: evaluate
// everything, random subsets at the budget, and uncertainty-guided
// observation followed by prediction of the rest.
SelectionReport run_selection(const Dataset& data, const ExperimentConfig& config,
                              const SelectionOptions& options, llm::LlmClient& client);

// Cross-run statistics per (label, method, metric): mean and sample
// standard deviation over the runs where the metric is present.
struct SummaryRow {
    std::string label;
    MethodKind method{};
    std::string metric;
    int runs = 0;
    double mean = 0;
    double stddev = 0;
};

std::vector<SummaryRow> summarize(const std::vector<RunArtifact>& artifacts);

// report.json (full artifacts + summary), results.csv (one metric row
// per artifact and method), plotdata.csv (mask ratio on x, mean/std
// series per metric and method), and timings.csv. Everything except
// timings.csv is byte-deterministic for a fixed config and seed.
void emit_report(const std::vector<RunArtifact>& artifacts, const ScoreMatrix& matrix,
                 const std::string& out_dir);

}  // namespace star::harness
