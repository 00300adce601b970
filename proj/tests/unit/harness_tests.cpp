#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "star/harness.hpp"
#include "test_util.hpp"

using star::Cell;
using star::ConfigError;
using star::Date;
using star::MemoryState;
using star::ScoreMatrix;
using star::ScoreRecord;
using star::SplitKind;
using namespace star::harness;
namespace corpus = star::corpus;
namespace evidence = star::evidence;
namespace features = star::features;
namespace llm = star::llm;

namespace {

namespace fs = std::filesystem;

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = star::test::tmp_dir() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

star::ModelProfile model_profile(const std::string& id, const std::string& family,
                                 const std::string& date, std::set<std::string> tags = {}) {
    star::ModelProfile p;
    p.model_id = id;
    p.display_name = id;
    p.family = family;
    p.organization = "Example Lab";
    p.parameter_count = 7.0;
    p.release_date = Date::parse(date);
    p.tags = std::move(tags);
    return p;
}

star::BenchmarkProfile benchmark_profile(const std::string& id,
                                         const std::string& category = "general") {
    star::BenchmarkProfile p;
    p.benchmark_id = id;
    p.display_name = id;
    p.category = category;
    p.num_samples = 100;
    p.raw_max = 100.0;
    return p;
}

ScoreMatrix matrix_from(const std::vector<std::string>& models,
                        const std::vector<std::string>& benchmarks,
                        const std::vector<std::vector<double>>& values) {
    std::vector<ScoreRecord> records;
    for (std::size_t m = 0; m < models.size(); ++m) {
        for (std::size_t n = 0; n < benchmarks.size(); ++n) {
            const double v = values[m][n];
            if (std::isnan(v)) continue;
            records.push_back({models[m], benchmarks[n], v, v});
        }
    }
    return corpus::build_matrix(records);
}

// Two four-member families over four benchmarks; the "-4" member of each
// family releases after the cutoff so temporal splits mask it.
Dataset family_dataset() {
    Dataset data;
    const std::vector<std::string> models = {"alpha-1", "alpha-2", "alpha-3", "alpha-4",
                                             "beta-1",  "beta-2",  "beta-3",  "beta-4"};
    const std::vector<std::string> benchmarks = {"bench-a", "bench-b", "bench-c", "bench-d"};
    const std::vector<double> alpha_base = {70, 60, 80, 50};
    const std::vector<double> beta_base = {55, 75, 65, 85};

    std::vector<std::vector<double>> values(8, std::vector<double>(4, 0.0));
    for (int m = 0; m < 8; ++m) {
        const bool alpha = m < 4;
        const int member = m % 4;
        for (int n = 0; n < 4; ++n) {
            values[m][n] = (alpha ? alpha_base[n] : beta_base[n]) + member;
        }
    }
    data.memory.matrix = matrix_from(models, benchmarks, values);

    for (int m = 0; m < 8; ++m) {
        const bool late = m % 4 == 3;
        const std::string family = m < 4 ? "alpha" : "beta";
        data.memory.model_profiles[models[m]] = model_profile(
            models[m], family, late ? "2025-02-01" : "2024-03-01",
            late ? std::set<std::string>{"late"} : std::set<std::string>{});
    }
    for (const std::string& b : benchmarks) {
        data.memory.benchmark_profiles[b] = benchmark_profile(b);
    }
    data.memory.validate();

    std::map<std::string, Eigen::VectorXd> model_feats;
    for (int m = 0; m < 8; ++m) {
        Eigen::VectorXd v(3);
        v << (m < 4 ? 1.0 : 0.0), (m < 4 ? 0.0 : 1.0), 0.25 * (m % 4);
        model_feats[models[m]] = v;
    }
    std::map<std::string, Eigen::VectorXd> bench_feats;
    for (int n = 0; n < 4; ++n) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(3);
        v[std::min(n, 2)] = 1.0;
        if (n == 3) v[0] = 0.5;
        bench_feats[benchmarks[n]] = v;
    }
    data.store = features::FeatureStore(3, std::move(model_feats), std::move(bench_feats));
    return data;
}

ExperimentConfig fast_config() {
    ExperimentConfig config;
    config.methods = {MethodKind::global_mean, MethodKind::mean_of_means, MethodKind::pca,
                      MethodKind::llm_direct,  MethodKind::pmf,           MethodKind::cpmf,
                      MethodKind::star};
    config.runs = 1;
    config.seed = 99;
    config.workers = 2;
    config.cutoff = Date::parse("2024-12-31");
    config.mask_ratios = {0.5};
    config.hyper.D = 3;
    config.hyper.sigma = 2.0;
    config.chain.warmup = 25;
    config.chain.samples = 15;
    config.chain.leapfrog_steps = 8;
    config.n_chains = 1;
    config.pca_rank = 2;
    config.neighbor_k = 3;
    return config;
}

corpus::Split half_split(const Dataset& data, const ExperimentConfig& config) {
    return corpus::temporal_masking_split(data.memory.matrix, data.memory.model_profiles,
                                          config.cutoff, 0.5,
                                          star::derive_seed(config.seed, "mask"));
}

const MethodRun& method_run(const RunArtifact& artifact, MethodKind kind) {
    for (const MethodRun& run : artifact.methods) {
        if (run.method == kind) return run;
    }
    REQUIRE(false);
    return artifact.methods.front();
}

}  // namespace

TEST_CASE("method names round trip") {
    const std::vector<MethodKind> all = {MethodKind::global_mean, MethodKind::mean_of_means,
                                         MethodKind::pca,         MethodKind::llm_direct,
                                         MethodKind::pmf,         MethodKind::cpmf,
                                         MethodKind::star};
    for (const MethodKind m : all) CHECK(method_from_string(to_string(m)) == m);
    CHECK_THROWS_AS(method_from_string("gradient_boost"), ConfigError);
}

TEST_CASE("config file loads with resolved paths") {
    const fs::path dir = fresh_dir("harness_config");
    {
        std::ofstream out(dir / "exp.json");
        out << R"({
          "data": {"models": "m.json", "benchmarks": "b.json", "scores": "s.csv",
                   "features": "f.json"},
          "methods": ["global_mean", "star"],
          "runs": 2,
          "seed": 11,
          "workers": 3,
          "output_dir": "runs",
          "cutoff": "2024-12-31",
          "mask_ratios": [0.4, 0.95],
          "hyper": {"D": 4, "sigma": 3.5},
          "chain": {"warmup": 30, "samples": 20, "leapfrog_steps": 10},
          "n_chains": 2,
          "pca_rank": 3,
          "neighbor_k": 2,
          "evidence": {"fixture_dir": "fixtures", "window_days": 10,
                       "leakage_patterns": ["bench-a"]},
          "reasoning": {"delta_cap": 12.0},
          "llm": {"backend": "mock", "rules": {"direct_score": 61.5}},
          "scenarios": [{"name": "late", "kind": "model_shift", "held_out_tags": ["late"]}],
          "selection": {"benchmark": "bench-a", "budget": 0.25, "k": 3, "random_seeds": 4}
        })";
    }
    const ExperimentConfig config = ExperimentConfig::load((dir / "exp.json").string());
    CHECK(config.data.models == (dir / "m.json").lexically_normal().string());
    CHECK(config.data.features == (dir / "f.json").lexically_normal().string());
    CHECK(config.retriever.fixture_dir == (dir / "fixtures").lexically_normal().string());
    CHECK(config.methods == std::vector<MethodKind>{MethodKind::global_mean, MethodKind::star});
    CHECK(config.runs == 2);
    CHECK(config.seed == 11);
    CHECK(config.output_dir == "runs");
    CHECK(config.cutoff.to_string() == "2024-12-31");
    CHECK(config.mask_ratios == std::vector<double>{0.4, 0.95});
    CHECK(config.hyper.D.value() == 4);
    CHECK(config.hyper.sigma.value() == 3.5);
    CHECK(config.chain.warmup == 30);
    CHECK(config.retriever.window_days == 10);
    CHECK(config.retriever.leakage_patterns == std::vector<std::string>{"bench-a"});
    CHECK(config.reasoner.delta_cap == 12.0);
    CHECK(config.llm.rules.direct_score == 61.5);
    REQUIRE(config.scenarios.size() == 1);
    CHECK(config.scenarios[0].kind == SplitKind::model_shift);
    CHECK(config.scenarios[0].held_out_tags == std::set<std::string>{"late"});
    REQUIRE(config.selection.has_value());
    CHECK(config.selection->benchmark_id == "bench-a");
    CHECK(config.selection->k == 3);
}

TEST_CASE("config file rejects unknown keys and bad values") {
    const fs::path dir = fresh_dir("harness_config_bad");
    const auto write_config = [&](const std::string& name, const std::string& body) {
        std::ofstream out(dir / name);
        out << body;
        return (dir / name).string();
    };
    const std::string base =
        R"("data": {"models": "m.json", "benchmarks": "b.json", "scores": "s.csv"})";

    CHECK_THROWS_AS(
        ExperimentConfig::load(write_config(
            "unknown.json", "{" + base + R"(, "methods": ["pmf"], "turbo": true})")),
        ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::load(write_config(
                        "method.json", "{" + base + R"(, "methods": ["boosting"]})")),
                    ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::load(write_config(
                        "runs.json", "{" + base + R"(, "methods": ["pmf"], "runs": 0})")),
                    ConfigError);
    CHECK_THROWS_AS(
        ExperimentConfig::load(write_config(
            "ratio.json", "{" + base + R"(, "methods": ["pmf"], "mask_ratios": [1.5]})")),
        ConfigError);
    CHECK_THROWS_AS(
        ExperimentConfig::load(write_config(
            "budget.json",
            "{" + base +
                R"(, "methods": ["pmf"], "selection": {"benchmark": "b", "budget": 0.0}})")),
        ConfigError);
    CHECK_THROWS_AS(ExperimentConfig::load(write_config("syntax.json", "not json")),
                    star::ParseError);
}

TEST_CASE("dataset loads from profile, score, and feature files") {
    const fs::path dir = fresh_dir("harness_dataset");
    {
        std::ofstream out(dir / "models.json");
        out << R"({"m1": {"release_date": "2024-01-01", "family": "m"},
                   "m2": {"release_date": "2024-02-01", "family": "m"}})";
    }
    {
        std::ofstream out(dir / "benchmarks.json");
        out << R"({"b1": {"raw_max": 100}, "b2": {"raw_max": 200}})";
    }
    {
        std::ofstream out(dir / "scores.csv");
        out << "model_id,benchmark_id,score\nm1,b1,80\nm1,b2,150\nm2,b1,60\n";
    }
    {
        std::ofstream out(dir / "features.json");
        out << R"({"m1": [1, 0], "m2": [0, 1], "b1": [1, 1], "b2": [1, -1]})";
    }

    DatasetPaths paths;
    paths.models = (dir / "models.json").string();
    paths.benchmarks = (dir / "benchmarks.json").string();
    paths.scores = (dir / "scores.csv").string();
    paths.features = (dir / "features.json").string();

    const Dataset data = load_dataset(paths);
    CHECK(data.memory.matrix.rows() == 2);
    CHECK(data.memory.matrix.cols() == 2);
    CHECK(data.memory.matrix.observed_count() == 3);
    CHECK(data.memory.matrix.values(0, 1) == doctest::Approx(75.0));  // 150 of 200
    CHECK(data.store.dim() == 2);

    paths.features.clear();
    CHECK(load_dataset(paths).store.empty());
}

TEST_CASE("run_split evaluates the whole lineup") {
    const Dataset data = family_dataset();
    const ExperimentConfig config = fast_config();
    llm::DeterministicMockClient client;
    const corpus::Split split = half_split(data, config);
    REQUIRE(split.test_cells.size() >= 4);

    const RunArtifact artifact =
        run_split(data, split, config, client, "sweep", "P50", 0, config.seed);

    CHECK(artifact.methods.size() == config.methods.size());
    CHECK(artifact.test_cells == static_cast<long>(split.test_cells.size()));
    CHECK(artifact.train_cells == split.train.observed_count());

    for (const MethodRun& run : artifact.methods) {
        CAPTURE(to_string(run.method));
        CHECK(run.error.empty());
        CHECK(run.cells == split.test_cells);
        CHECK(run.failed_count == 0);
        CHECK(run.report.n_cells == static_cast<long>(split.test_cells.size()));
        for (const double v : run.values) {
            CHECK(v >= 0.0);
            CHECK(v <= 100.0);
        }
    }

    const MethodRun& star_run = method_run(artifact, MethodKind::star);
    REQUIRE(star_run.traces.size() == star_run.cells.size());
    for (const StarTrace& trace : star_run.traces) {
        CHECK(std::isfinite(trace.expectation));
        CHECK(trace.sigma >= 0.0);
        CHECK(trace.confidence >= 0.0);
        CHECK(trace.confidence <= 1.0);
        CHECK(std::abs(trace.delta) <= config.reasoner.delta_cap);
        CHECK(!trace.transcript_tag.empty());
    }

    // Masked models still have family history in train, so at least one
    // cell should carry validated family references.
    const bool any_family_ref = std::any_of(
        star_run.traces.begin(), star_run.traces.end(), [](const StarTrace& t) {
            return std::any_of(t.evidence_refs.begin(), t.evidence_refs.end(),
                               [](const std::string& r) { return r.starts_with("family:"); });
        });
    CHECK(any_family_ref);
}

TEST_CASE("featureless cpmf is relabeled pmf") {
    Dataset data = family_dataset();
    data.store = features::FeatureStore{};
    ExperimentConfig config = fast_config();
    config.methods = {MethodKind::cpmf};
    llm::DeterministicMockClient client;

    const RunArtifact artifact =
        run_split(data, half_split(data, config), config, client, "evaluate", "bare", 0, 7);
    REQUIRE(artifact.methods.size() == 1);
    CHECK(artifact.methods[0].method == MethodKind::pmf);
}

TEST_CASE("ablation rows share seeds so reductions are exact") {
    const Dataset data = family_dataset();
    ExperimentConfig config = fast_config();
    config.methods = {MethodKind::cpmf};
    llm::DeterministicMockClient client;

    PipelineToggles no_features;
    no_features.model_features = false;
    no_features.benchmark_features = false;
    const std::vector<AblationSpec> specs = {
        {"pmf", {MethodKind::pmf}, {}},
        {"cpmf w/o both features", {MethodKind::cpmf}, no_features},
    };
    const std::vector<RunArtifact> artifacts = run_ablation(data, specs, config, client);
    REQUIRE(artifacts.size() == 2);
    const MethodRun& plain = artifacts[0].methods.at(0);
    const MethodRun& reduced = artifacts[1].methods.at(0);
    CHECK(plain.method == MethodKind::pmf);
    CHECK(reduced.method == MethodKind::pmf);
    REQUIRE(plain.values.size() == reduced.values.size());
    for (std::size_t i = 0; i < plain.values.size(); ++i) {
        CHECK(plain.values[i] == reduced.values[i]);
    }
}

TEST_CASE("disabling every retrieval source collapses star to the expectation") {
    const Dataset data = family_dataset();
    ExperimentConfig config = fast_config();
    llm::DeterministicMockClient client;

    PipelineToggles no_sources;
    no_sources.sources.emplace();
    const std::vector<AblationSpec> specs = {
        {"cpmf", {MethodKind::cpmf}, {}},
        {"star w/o retrieval", {MethodKind::star}, no_sources},
    };
    const std::vector<RunArtifact> artifacts = run_ablation(data, specs, config, client);
    const MethodRun& expectation = artifacts[0].methods.at(0);
    const MethodRun& neutral = artifacts[1].methods.at(0);
    REQUIRE(expectation.values.size() == neutral.values.size());
    for (std::size_t i = 0; i < neutral.values.size(); ++i) {
        CHECK(neutral.values[i] == expectation.values[i]);
        CHECK(neutral.traces[i].delta == 0.0);
        CHECK(neutral.traces[i].confidence == 0.0);
        CHECK(neutral.traces[i].evidence_refs.empty());
    }
    const std::vector<std::string>& flags = neutral.traces.front().flags;
    CHECK(std::count(flags.begin(), flags.end(), "family:no_family") == 1);
    CHECK(std::count(flags.begin(), flags.end(), "cross:no_neighbors") == 1);
}

TEST_CASE("default ablation grid covers features, steps, and source subsets") {
    const std::vector<AblationSpec> specs = default_ablation_specs();
    CHECK(specs.size() == 16);
    std::set<std::string> labels;
    long source_rows = 0;
    for (const AblationSpec& spec : specs) {
        CHECK(labels.insert(spec.label).second);
        REQUIRE(spec.methods.size() == 1);
        if (spec.label.starts_with("sources")) {
            ++source_rows;
            CHECK(spec.methods[0] == MethodKind::star);
            CHECK(spec.toggles.sources.has_value());
        }
    }
    CHECK(source_rows == 8);
}

TEST_CASE("sweep reports are byte deterministic") {
    const Dataset data = family_dataset();
    ExperimentConfig config = fast_config();
    config.methods = {MethodKind::global_mean, MethodKind::cpmf, MethodKind::star};
    config.runs = 2;
    config.mask_ratios = {0.4, 0.6};

    const auto emit_to = [&](const std::string& name) {
        ExperimentConfig run_config = config;
        run_config.output_dir = fresh_dir(name).string();
        llm::DeterministicMockClient client;
        const std::vector<RunArtifact> artifacts =
            run_masking_experiment(data, run_config, client);
        CHECK(artifacts.size() == 4);
        emit_report(artifacts, data.memory.matrix, run_config.output_dir);
        return fs::path(run_config.output_dir);
    };

    const fs::path first = emit_to("harness_det_a");
    const fs::path second = emit_to("harness_det_b");
    for (const std::string file : {"report.json", "results.csv", "plotdata.csv"}) {
        CAPTURE(file);
        CHECK(slurp(first / file) == slurp(second / file));
    }
    CHECK(fs::exists(first / "timings.csv"));
}

TEST_CASE("summarize computes cross-run statistics") {
    const auto artifact_with = [](const std::string& label, double mae, double rmse) {
        RunArtifact artifact;
        artifact.label = label;
        MethodRun run;
        run.method = MethodKind::global_mean;
        run.report.mae = mae;
        run.report.rmse = rmse;
        run.report.score_avg = (mae + rmse) / 2;
        run.report.n_cells = 4;
        artifact.methods.push_back(std::move(run));
        return artifact;
    };
    const std::vector<RunArtifact> artifacts = {artifact_with("L", 2.0, 4.0),
                                                artifact_with("L", 4.0, 6.0)};
    const std::vector<SummaryRow> rows = summarize(artifacts);

    const auto find = [&](const std::string& metric) {
        for (const SummaryRow& row : rows) {
            if (row.metric == metric) return row;
        }
        REQUIRE(false);
        return rows.front();
    };
    const SummaryRow mae = find("mae");
    CHECK(mae.runs == 2);
    CHECK(mae.mean == doctest::Approx(3.0));
    CHECK(mae.stddev == doctest::Approx(std::sqrt(2.0)));

    const std::vector<RunArtifact> single = {artifact_with("L", 2.0, 4.0)};
    CHECK(summarize(single).front().stddev == 0.0);
}

TEST_CASE("model shift gives held-out models cold-start predictions") {
    const Dataset data = family_dataset();
    ExperimentConfig config = fast_config();
    config.methods = {MethodKind::cpmf};
    llm::DeterministicMockClient client;

    corpus::Scenario scenario;
    scenario.name = "late-models";
    scenario.kind = SplitKind::model_shift;
    scenario.held_out_tags = {"late"};
    scenario.in_dist_mask_ratio = 0.0;

    const RunArtifact artifact = run_pattern_shift(data, scenario, config, client);
    CHECK(artifact.split_kind == SplitKind::model_shift);
    CHECK(artifact.test_cells == 8);  // two held-out models, four benchmarks
    const MethodRun& run = artifact.methods.at(0);
    CHECK(run.error.empty());
    CHECK(run.failed_count == 0);
    for (const double v : run.values) {
        CHECK(std::isfinite(v));
        CHECK(v >= 0.0);
        CHECK(v <= 100.0);
    }
}

TEST_CASE("benchmark shift flags pmf and rewards shared semantics") {
    // Ten models, four benchmarks; the held-out column duplicates an
    // observed column in both truth and features.
    Dataset data;
    const std::vector<std::string> models = {"m0", "m1", "m2", "m3", "m4",
                                             "m5", "m6", "m7", "m8", "m9"};
    const std::vector<std::string> benchmarks = {"e0", "e1", "e2", "e3"};
    std::vector<std::vector<double>> values(10, std::vector<double>(4, 0.0));
    const std::vector<double> offsets = {0, 10, 20, 20};
    for (int m = 0; m < 10; ++m) {
        for (int n = 0; n < 4; ++n) values[m][n] = 50.0 + 3.0 * m + offsets[n];
    }
    data.memory.matrix = matrix_from(models, benchmarks, values);
    for (const std::string& id : models) {
        data.memory.model_profiles[id] = model_profile(id, id, "2024-01-01");
    }
    for (const std::string& id : benchmarks) {
        data.memory.benchmark_profiles[id] = benchmark_profile(id);
    }
    std::map<std::string, Eigen::VectorXd> model_feats;
    for (int m = 0; m < 10; ++m) {
        Eigen::VectorXd v(4);
        v << 1.0, m / 10.0, 0.0, 0.0;
        model_feats[models[m]] = v;
    }
    std::map<std::string, Eigen::VectorXd> bench_feats;
    for (int n = 0; n < 4; ++n) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(4);
        v[std::min(n, 2)] = 1.0;  // e3 shares e2's vector
        bench_feats[benchmarks[n]] = v;
    }
    data.store = features::FeatureStore(4, std::move(model_feats), std::move(bench_feats));

    ExperimentConfig config = fast_config();
    config.methods = {MethodKind::pmf, MethodKind::cpmf};
    config.hyper.D = 3;
    config.hyper.sigma = 2.0;
    config.hyper.sigma_U = 2.0;
    config.hyper.sigma_V = 0.3;
    config.hyper.sigma_Y = 2.0;
    config.chain.warmup = 80;
    config.chain.samples = 50;
    config.chain.leapfrog_steps = 12;
    llm::DeterministicMockClient client;

    corpus::Scenario scenario;
    scenario.name = "dup-benchmark";
    scenario.kind = SplitKind::benchmark_shift;
    scenario.held_out_ids = {"e3"};
    scenario.in_dist_mask_ratio = 0.0;

    const RunArtifact artifact = run_pattern_shift(data, scenario, config, client);
    CHECK(artifact.test_cells == 10);
    const bool flagged =
        std::any_of(artifact.warnings.begin(), artifact.warnings.end(),
                    [](const std::string& w) { return w.find("no signal") != std::string::npos; });
    CHECK(flagged);

    const double pmf_rmse = method_run(artifact, MethodKind::pmf).report.rmse;
    const double cpmf_rmse = method_run(artifact, MethodKind::cpmf).report.rmse;
    CAPTURE(pmf_rmse);
    CAPTURE(cpmf_rmse);
    CHECK(cpmf_rmse < 0.6 * pmf_rmse);
}

TEST_CASE("selection compares brute force, random, and guided strategies") {
    // Thirty models; the target column duplicates a memory column, so
    // guided predictions can rank the unobserved pool accurately.
    Dataset data;
    std::vector<std::string> models;
    for (int m = 0; m < 30; ++m) {
        models.push_back("pool-" + std::string(m < 10 ? "0" : "") + std::to_string(m));
    }
    const std::vector<std::string> benchmarks = {"k0", "k1", "k2", "target"};
    std::vector<std::vector<double>> values(30, std::vector<double>(4, 0.0));
    for (int m = 0; m < 30; ++m) {
        const double base = 30.0 + 2.0 * m;
        values[m][0] = base;
        values[m][1] = 0.5 * base + 20.0;
        values[m][2] = base + 5.0;
        values[m][3] = base + 5.0;  // target == k2
    }
    data.memory.matrix = matrix_from(models, benchmarks, values);
    for (const std::string& id : models) {
        data.memory.model_profiles[id] = model_profile(id, id, "2024-01-01");
    }
    for (const std::string& id : benchmarks) {
        data.memory.benchmark_profiles[id] = benchmark_profile(id);
    }
    std::map<std::string, Eigen::VectorXd> model_feats;
    for (int m = 0; m < 30; ++m) {
        Eigen::VectorXd v(4);
        v << 1.0, m / 30.0, 0.0, 0.0;
        model_feats[models[m]] = v;
    }
    std::map<std::string, Eigen::VectorXd> bench_feats;
    for (int n = 0; n < 4; ++n) {
        Eigen::VectorXd v = Eigen::VectorXd::Zero(4);
        v[std::min(n, 2)] = 1.0;  // target shares k2's vector
        bench_feats[benchmarks[n]] = v;
    }
    data.store = features::FeatureStore(4, std::move(model_feats), std::move(bench_feats));

    ExperimentConfig config = fast_config();
    config.hyper.sigma_V = 0.3;
    config.hyper.sigma_Y = 2.0;
    config.chain.warmup = 60;
    config.chain.samples = 40;
    config.chain.leapfrog_steps = 12;
    llm::DeterministicMockClient client;

    SelectionOptions options;
    options.benchmark_id = "target";
    options.budget = 0.3;
    options.k = 5;
    options.random_seeds = 4;

    const SelectionReport report = run_selection(data, config, options, client);
    CHECK(report.pool == 30);
    CHECK(report.observed == 9);
    CHECK(report.brute_force == doctest::Approx(1.0));
    CHECK(report.random_mean >= 0.0);
    CHECK(report.random_mean <= 1.0);
    CAPTURE(report.star_recall);
    CAPTURE(report.random_mean);
    CHECK(report.star_recall >= report.random_mean);

    const nlohmann::json doc = nlohmann::json::parse(report.to_json());
    CHECK(doc.at("pool") == 30);
    CHECK(doc.at("k") == 5);

    SelectionOptions bad = options;
    bad.budget = 0.01;  // rounds to zero cells
    CHECK_THROWS_AS(run_selection(data, config, bad, client), ConfigError);
    bad = options;
    bad.benchmark_id = "missing";
    CHECK_THROWS_AS(run_selection(data, config, bad, client), ConfigError);
    bad = options;
    bad.k = 31;
    CHECK_THROWS_AS(run_selection(data, config, bad, client), ConfigError);
}

TEST_CASE("emit_report writes parseable files with one x point per ratio") {
    const Dataset data = family_dataset();
    ExperimentConfig config = fast_config();
    config.methods = {MethodKind::global_mean, MethodKind::mean_of_means};
    config.mask_ratios = {0.2, 0.4, 0.6, 0.8};
    llm::DeterministicMockClient client;

    const std::vector<RunArtifact> artifacts = run_masking_experiment(data, config, client);
    REQUIRE(artifacts.size() == 4);
    const fs::path out = fresh_dir("harness_emit");
    emit_report(artifacts, data.memory.matrix, out.string());

    const nlohmann::json report = nlohmann::json::parse(slurp(out / "report.json"));
    CHECK(report.at("artifacts").size() == 4);
    CHECK(report.contains("rank_metric_grouping"));

    std::istringstream results(slurp(out / "results.csv"));
    std::string line;
    long result_rows = 0;
    while (std::getline(results, line)) ++result_rows;
    CHECK(result_rows == 1 + 8);  // header + 4 artifacts x 2 methods

    std::istringstream plot(slurp(out / "plotdata.csv"));
    std::getline(plot, line);  // header
    std::set<std::string> xs;
    while (std::getline(plot, line)) {
        std::istringstream row(line);
        std::string metric, method, label, x;
        std::getline(row, metric, ',');
        std::getline(row, method, ',');
        std::getline(row, label, ',');
        std::getline(row, x, ',');
        if (metric == "score_avg" && method == "global_mean") xs.insert(x);
    }
    CHECK(xs.size() == 4);

    CHECK_THROWS_AS(emit_report({}, data.memory.matrix, out.string()), ConfigError);
}

TEST_CASE("a failing method is marked and the run continues") {
    const Dataset data = family_dataset();
    ExperimentConfig config = fast_config();
    config.methods = {MethodKind::pca, MethodKind::global_mean};
    config.pca_rank = 99;
    llm::DeterministicMockClient client;

    const RunArtifact artifact =
        run_split(data, half_split(data, config), config, client, "evaluate", "bad", 0, 5);
    const MethodRun& broken = method_run(artifact, MethodKind::pca);
    CHECK(!broken.error.empty());
    CHECK(broken.failed_count == static_cast<long>(broken.cells.size()));
    CHECK(broken.report.n_cells == 0);
    const MethodRun& fine = method_run(artifact, MethodKind::global_mean);
    CHECK(fine.error.empty());
    CHECK(fine.failed_count == 0);
}

TEST_CASE("star runs leave a transcript per cell") {
    const Dataset data = family_dataset();
    ExperimentConfig config = fast_config();
    config.methods = {MethodKind::star};
    config.output_dir = fresh_dir("harness_transcripts").string();
    llm::DeterministicMockClient client;

    const RunArtifact artifact =
        run_split(data, half_split(data, config), config, client, "sweep", "P50", 0, config.seed);
    CHECK(artifact.transcript_dir == "sweep/P50/run0/transcripts");

    const MethodRun& run = artifact.methods.at(0);
    const fs::path dir = fs::path(config.output_dir) / artifact.transcript_dir;
    for (std::size_t i = 0; i < run.traces.size(); ++i) {
        const StarTrace& trace = run.traces[i];
        for (const std::string step : {"family", "cross_model", "aggregate"}) {
            const fs::path file = dir / (trace.transcript_tag + "-" + step + ".json");
            CAPTURE(file.string());
            REQUIRE(fs::exists(file));
        }
        const nlohmann::json doc =
            nlohmann::json::parse(slurp(dir / (trace.transcript_tag + "-aggregate.json")));
        CHECK(doc.at("step") == "aggregate");
        CHECK(doc.at("backend") == "deterministic_mock");
        const std::string prompt = doc.at("prompt").get<std::string>();
        CHECK(prompt.find(star::format_number(trace.expectation)) != std::string::npos);
    }
}

TEST_CASE("make_client picks the configured backend") {
    ExperimentConfig config = fast_config();
    config.llm.backend = "mock";
    CHECK(make_client(config)->backend_name() == "deterministic_mock");

    config.llm.backend = "http";
    unsetenv("STAR_LLM_ENDPOINT");
    unsetenv("STAR_LLM_API_KEY");
    unsetenv("STAR_LLM_MODEL");
    unsetenv("STAR_LLM_TIMEOUT");
    CHECK_THROWS_AS(make_client(config), star::ConfigError);
}
