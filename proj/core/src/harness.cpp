#include "star/harness.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <future>
#include <iterator>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace star::harness {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

int resolve_workers(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(std::min(8u, hw));
}

// Filesystem-safe path component.
std::string sanitize(const std::string& text) {
    std::string out = text;
    for (char& c : out) {
        const unsigned char u = static_cast<unsigned char>(c);
        if (!std::isalnum(u) && c != '.' && c != '_' && c != '-') c = '_';
    }
    return out;
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + path.string() + "'");
    out << text;
    if (!out) throw ConfigError("write failed for '" + path.string() + "'");
}

double sample_mean(const std::vector<double>& xs) {
    double sum = 0;
    for (double x : xs) sum += x;
    return xs.empty() ? 0.0 : sum / static_cast<double>(xs.size());
}

double sample_stddev(const std::vector<double>& xs) {
    if (xs.size() < 2) return 0.0;
    const double mean = sample_mean(xs);
    double ss = 0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(xs.size() - 1));
}

}  // namespace

std::string to_string(MethodKind method) {
    switch (method) {
        case MethodKind::global_mean: return "global_mean";
        case MethodKind::mean_of_means: return "mean_of_means";
        case MethodKind::pca: return "pca";
        case MethodKind::llm_direct: return "llm_direct";
        case MethodKind::pmf: return "pmf";
        case MethodKind::cpmf: return "cpmf";
        case MethodKind::star: return "star";
    }
    throw ConfigError("unknown method kind");
}

MethodKind method_from_string(const std::string& name) {
    for (const MethodKind m :
         {MethodKind::global_mean, MethodKind::mean_of_means, MethodKind::pca,
          MethodKind::llm_direct, MethodKind::pmf, MethodKind::cpmf, MethodKind::star}) {
        if (to_string(m) == name) return m;
    }
    throw ConfigError("unknown method '" + name + "'");
}

cpmf::Hyperparams HyperOverrides::resolve(int feature_dim) const {
    cpmf::Hyperparams hyper = cpmf::Hyperparams::defaults(feature_dim);
    if (D) hyper.D = *D;
    if (sigma_U) hyper.sigma_U = *sigma_U;
    if (sigma_V) hyper.sigma_V = *sigma_V;
    if (sigma_X) hyper.sigma_X = *sigma_X;
    if (sigma_Y) hyper.sigma_Y = *sigma_Y;
    if (sigma) hyper.sigma = *sigma;
    if (center) hyper.center = *center;
    hyper.validate();
    return hyper;
}

void ExperimentConfig::validate() const {
    if (runs < 1) throw ConfigError("runs must be >= 1");
    if (methods.empty()) throw ConfigError("methods must be non-empty");
    if (mask_ratios.empty()) throw ConfigError("mask_ratios must be non-empty");
    for (const double ratio : mask_ratios) {
        if (!(ratio > 0.0 && ratio < 1.0)) {
            throw ConfigError("mask ratio " + format_number(ratio) + " outside (0, 1)");
        }
    }
    if (workers < 0) throw ConfigError("workers must be >= 0");
    if (n_chains < 1) throw ConfigError("n_chains must be >= 1");
    if (pca_rank < 1) throw ConfigError("pca_rank must be >= 1");
    if (neighbor_k < 0) throw ConfigError("neighbor_k must be >= 0");
    if (llm_retries < 0) throw ConfigError("llm_retries must be >= 0");
    chain.validate();
    retriever.validate();
    reasoner.validate();
    if (llm.backend != "mock" && llm.backend != "http") {
        throw ConfigError("llm backend must be 'mock' or 'http', got '" + llm.backend + "'");
    }
    if (selection) {
        if (selection->benchmark_id.empty()) throw ConfigError("selection benchmark missing");
        if (!(selection->budget > 0.0 && selection->budget <= 1.0)) {
            throw ConfigError("selection budget outside (0, 1]");
        }
        if (selection->k < 1) throw ConfigError("selection k must be >= 1");
        if (selection->random_seeds < 1) throw ConfigError("selection random_seeds must be >= 1");
    }
    for (const corpus::Scenario& scenario : scenarios) {
        if (scenario.name.empty()) throw ConfigError("scenario without a name");
        if (!(scenario.in_dist_mask_ratio >= 0.0 && scenario.in_dist_mask_ratio < 1.0)) {
            throw ConfigError("scenario '" + scenario.name + "' in_dist_mask_ratio outside [0, 1)");
        }
    }
}

namespace {

std::string resolve_path(const fs::path& base, const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    return (base / path).lexically_normal().string();
}

std::set<std::string> string_set(const json& node) {
    std::set<std::string> out;
    for (const json& item : node) out.insert(item.get<std::string>());
    return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw ParseError("config '" + path + "' is not valid JSON: " + e.what());
    }
    if (!doc.is_object()) throw ParseError("config '" + path + "' is not a JSON object");

    static const std::set<std::string> kKnown = {
        "data",      "methods",    "runs",       "seed",       "workers",
        "output_dir", "cutoff",    "mask_ratios", "hyper",     "chain",
        "n_chains",  "pca_rank",   "neighbor_k", "llm_retries", "evidence",
        "reasoning", "llm",        "scenarios",  "selection"};
    for (const auto& [key, value] : doc.items()) {
        if (!kKnown.count(key)) throw ConfigError("config key '" + key + "' is not recognized");
    }

    ExperimentConfig config;
    const fs::path base = fs::path(path).parent_path();
    try {
        const json& data = doc.at("data");
        config.data.models = resolve_path(base, data.at("models").get<std::string>());
        config.data.benchmarks = resolve_path(base, data.at("benchmarks").get<std::string>());
        config.data.scores = resolve_path(base, data.at("scores").get<std::string>());
        config.data.features = resolve_path(base, data.value("features", std::string{}));

        for (const json& name : doc.at("methods")) {
            config.methods.push_back(method_from_string(name.get<std::string>()));
        }
        config.runs = doc.value("runs", config.runs);
        config.seed = doc.value("seed", config.seed);
        config.workers = doc.value("workers", config.workers);
        config.output_dir = doc.value("output_dir", config.output_dir);
        if (doc.contains("cutoff")) config.cutoff = Date::parse(doc.at("cutoff").get<std::string>());
        if (doc.contains("mask_ratios")) {
            config.mask_ratios = doc.at("mask_ratios").get<std::vector<double>>();
        }

        if (doc.contains("hyper")) {
            const json& h = doc.at("hyper");
            if (h.contains("D")) config.hyper.D = h.at("D").get<int>();
            if (h.contains("sigma_U")) config.hyper.sigma_U = h.at("sigma_U").get<double>();
            if (h.contains("sigma_V")) config.hyper.sigma_V = h.at("sigma_V").get<double>();
            if (h.contains("sigma_X")) config.hyper.sigma_X = h.at("sigma_X").get<double>();
            if (h.contains("sigma_Y")) config.hyper.sigma_Y = h.at("sigma_Y").get<double>();
            if (h.contains("sigma")) config.hyper.sigma = h.at("sigma").get<double>();
            if (h.contains("center")) config.hyper.center = h.at("center").get<bool>();
        }
        if (doc.contains("chain")) {
            const json& c = doc.at("chain");
            config.chain.warmup = c.value("warmup", config.chain.warmup);
            config.chain.samples = c.value("samples", config.chain.samples);
            config.chain.leapfrog_steps = c.value("leapfrog_steps", config.chain.leapfrog_steps);
            config.chain.dynamic = c.value("dynamic", config.chain.dynamic);
            config.chain.max_tree_depth = c.value("max_tree_depth", config.chain.max_tree_depth);
            config.chain.target_accept = c.value("target_accept", config.chain.target_accept);
            config.chain.init_step_size = c.value("init_step_size", config.chain.init_step_size);
        }
        config.n_chains = doc.value("n_chains", config.n_chains);
        config.pca_rank = doc.value("pca_rank", config.pca_rank);
        config.neighbor_k = doc.value("neighbor_k", config.neighbor_k);
        config.llm_retries = doc.value("llm_retries", config.llm_retries);

        if (doc.contains("evidence")) {
            const json& e = doc.at("evidence");
            config.retriever.fixture_dir = resolve_path(base, e.value("fixture_dir", std::string{}));
            config.retriever.cache_dir = resolve_path(base, e.value("cache_dir", std::string{}));
            config.retriever.window_days = e.value("window_days", config.retriever.window_days);
            if (e.contains("leakage_patterns")) {
                config.retriever.leakage_patterns =
                    e.at("leakage_patterns").get<std::vector<std::string>>();
            }
        }
        if (doc.contains("reasoning")) {
            const json& r = doc.at("reasoning");
            config.reasoner.delta_cap = r.value("delta_cap", config.reasoner.delta_cap);
            config.reasoner.max_retries = r.value("max_retries", config.reasoner.max_retries);
            config.reasoner.template_dir =
                resolve_path(base, r.value("template_dir", std::string{}));
        }
        if (doc.contains("llm")) {
            const json& l = doc.at("llm");
            config.llm.backend = l.value("backend", config.llm.backend);
            if (l.contains("rules")) {
                const json& r = l.at("rules");
                config.llm.rules.weight = r.value("weight", config.llm.rules.weight);
                config.llm.rules.delta_cap = r.value("delta_cap", config.llm.rules.delta_cap);
                config.llm.rules.sigma_ref = r.value("sigma_ref", config.llm.rules.sigma_ref);
                config.llm.rules.family_boost =
                    r.value("family_boost", config.llm.rules.family_boost);
                config.llm.rules.direct_score =
                    r.value("direct_score", config.llm.rules.direct_score);
                config.llm.rules.disagreement_threshold =
                    r.value("disagreement_threshold", config.llm.rules.disagreement_threshold);
            }
        }
        for (const json& s : doc.value("scenarios", json::array())) {
            corpus::Scenario scenario;
            scenario.name = s.at("name").get<std::string>();
            scenario.kind = split_kind_from_string(s.value("kind", std::string{"model_shift"}));
            if (s.contains("held_out_tags")) scenario.held_out_tags = string_set(s.at("held_out_tags"));
            if (s.contains("held_out_ids")) scenario.held_out_ids = string_set(s.at("held_out_ids"));
            if (s.contains("held_out_categories")) {
                scenario.held_out_categories = string_set(s.at("held_out_categories"));
            }
            scenario.top_k_models = s.value("top_k_models", scenario.top_k_models);
            scenario.in_dist_mask_ratio =
                s.value("in_dist_mask_ratio", scenario.in_dist_mask_ratio);
            config.scenarios.push_back(std::move(scenario));
        }
        if (doc.contains("selection")) {
            const json& s = doc.at("selection");
            SelectionOptions opt;
            opt.benchmark_id = s.at("benchmark").get<std::string>();
            opt.budget = s.value("budget", opt.budget);
            opt.k = s.value("k", opt.k);
            opt.random_seeds = s.value("random_seeds", opt.random_seeds);
            config.selection = opt;
        }
    } catch (const json::exception& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }

    if (config.data.models.empty() || config.data.benchmarks.empty() ||
        config.data.scores.empty()) {
        throw ConfigError("config '" + path + "' must name model, benchmark, and score files");
    }
    config.validate();
    return config;
}

std::unique_ptr<llm::LlmClient> make_client(const ExperimentConfig& config) {
    if (config.llm.backend == "mock") {
        return std::make_unique<llm::DeterministicMockClient>(config.llm.rules);
    }
    if (config.llm.backend == "http") {
        return std::make_unique<llm::HttpChatClient>(llm::ChatConfig::from_env());
    }
    throw ConfigError("llm backend must be 'mock' or 'http', got '" + config.llm.backend + "'");
}

Dataset load_dataset(const DatasetPaths& paths) {
    Dataset data;
    data.memory.model_profiles = corpus::load_model_profiles(paths.models);
    data.memory.benchmark_profiles = corpus::load_benchmark_profiles(paths.benchmarks);
    const std::vector<ScoreRecord> records =
        corpus::load_scores(paths.scores, data.memory.model_profiles,
                            data.memory.benchmark_profiles);
    data.memory.matrix = corpus::build_matrix(records);
    data.memory.validate();
    if (!paths.features.empty()) data.store = features::FeatureStore::load(paths.features);
    return data;
}

namespace {

// Resolved evidence cache location: explicit, or under the output dir.
std::string effective_cache_dir(const ExperimentConfig& config) {
    if (!config.retriever.cache_dir.empty()) return config.retriever.cache_dir;
    if (config.output_dir.empty()) return {};
    return (fs::path(config.output_dir) / "evidence_cache").string();
}

bool source_enabled(const PipelineToggles& toggles, evidence::Source source) {
    return !toggles.sources || toggles.sources->count(source) > 0;
}

void filter_sources(evidence::EvidenceBundle& bundle, const PipelineToggles& toggles) {
    if (!toggles.sources) return;
    const auto drop = [&](std::vector<evidence::EvidenceDoc>& docs) {
        std::erase_if(docs, [&](const evidence::EvidenceDoc& doc) {
            return !source_enabled(toggles, doc.source);
        });
    };
    drop(bundle.technical_summary);
    drop(bundle.base_model_analysis);
    drop(bundle.community_feedback);
    drop(bundle.task_description);
    drop(bundle.protocol);
    drop(bundle.subcategories);
}

evidence::EvidenceBundle merge_bundles(const evidence::EvidenceBundle& model_bundle,
                                       const evidence::EvidenceBundle& benchmark_bundle) {
    evidence::EvidenceBundle merged = model_bundle;
    merged.task_description = benchmark_bundle.task_description;
    merged.protocol = benchmark_bundle.protocol;
    merged.subcategories = benchmark_bundle.subcategories;
    merged.notes.insert(merged.notes.end(), benchmark_bundle.notes.begin(),
                        benchmark_bundle.notes.end());
    merged.leakage_removals += benchmark_bundle.leakage_removals;
    return merged;
}

// Shared state for one factorization fit over a split.
struct FactorFit {
    sampler::PosteriorSummary summary;
    std::vector<std::string> warnings;
    bool zero_features = false;
};

FactorFit fit_factors(const Dataset& data, const ScoreMatrix& train,
                      const std::vector<Cell>& targets, const ExperimentConfig& config,
                      std::uint64_t run_seed, bool use_model_features,
                      bool use_benchmark_features) {
    const int rows = train.rows();
    const int cols = train.cols();
    int d = data.store.empty() ? 0 : data.store.dim();
    if (!use_model_features && !use_benchmark_features) d = 0;

    cpmf::TrainingData training;
    training.matrix = train;
    training.G = (d > 0 && use_model_features) ? data.store.model_matrix(train.models)
                                               : Eigen::MatrixXd::Zero(rows, d);
    training.H = (d > 0 && use_benchmark_features) ? data.store.benchmark_matrix(train.benchmarks)
                                                   : Eigen::MatrixXd::Zero(cols, d);

    const cpmf::Hyperparams hyper = config.hyper.resolve(d);
    cpmf::Model model(std::move(training), hyper);

    hmc::ChainConfig chain = config.chain;
    chain.seed = derive_seed(run_seed, "factor");
    const sampler::EnsembleResult ensemble =
        sampler::run_ensemble(model, chain, config.n_chains, resolve_workers(config.workers));

    FactorFit fit;
    fit.summary = sampler::posterior_summary(model, ensemble.merged, targets);
    fit.zero_features = d == 0;
    for (std::size_t i = 0; i < ensemble.per_chain.size(); ++i) {
        if (ensemble.per_chain[i].low_acceptance) {
            fit.warnings.push_back("low acceptance in chain " + std::to_string(i));
        }
    }
    return fit;
}

}  // namespace

sampler::Checkpoint train_checkpoint(const Dataset& data, const ScoreMatrix& train,
                                     const ExperimentConfig& config, std::uint64_t run_seed) {
    const int d = data.store.empty() ? 0 : data.store.dim();

    cpmf::TrainingData training;
    training.matrix = train;
    training.G = d > 0 ? data.store.model_matrix(train.models)
                       : Eigen::MatrixXd::Zero(train.rows(), 0);
    training.H = d > 0 ? data.store.benchmark_matrix(train.benchmarks)
                       : Eigen::MatrixXd::Zero(train.cols(), 0);

    const cpmf::Hyperparams hyper = config.hyper.resolve(d);
    cpmf::Model model(training, hyper);

    hmc::ChainConfig chain = config.chain;
    chain.seed = derive_seed(run_seed, "factor");
    sampler::EnsembleResult ensemble =
        sampler::run_ensemble(model, chain, config.n_chains, resolve_workers(config.workers));

    sampler::Checkpoint ckpt;
    ckpt.models = train.models;
    ckpt.benchmarks = train.benchmarks;
    ckpt.G = std::move(training.G);
    ckpt.H = std::move(training.H);
    ckpt.hyper = hyper;
    ckpt.mu = model.mu();
    ckpt.seed = chain.seed;
    ckpt.draws = std::move(ensemble.merged.draws);
    ckpt.diagnostics = ensemble.merged.diagnostics;
    return ckpt;
}

namespace {

struct RefineResult {
    std::vector<double> values;
    std::vector<StarTrace> traces;
};

// Per-cell reasoning over the factorization expectation. `targets` must
// be sorted and aligned with the summary.
RefineResult refine_cells(const Dataset& data, const ScoreMatrix& train,
                          const std::vector<Cell>& targets,
                          const sampler::PosteriorSummary& summary,
                          const ExperimentConfig& config, llm::LlmClient& client,
                          const PipelineToggles& toggles, const std::string& transcript_dir) {
    const std::size_t n = targets.size();
    RefineResult out;
    out.values.assign(n, 0.0);
    out.traces.assign(n, StarTrace{});
    if (n == 0) return out;

    const bool sources_off = toggles.sources && toggles.sources->empty();

    evidence::RetrieverConfig retriever = config.retriever;
    retriever.cache_dir = effective_cache_dir(config);

    // One retrieval per distinct entity; cells then combine pure copies.
    std::map<std::string, evidence::EvidenceBundle> model_bundles;
    std::map<std::string, evidence::EvidenceBundle> benchmark_bundles;
    if (!sources_off) {
        for (const Cell& cell : targets) {
            const std::string& model_id = train.models[cell.model];
            const std::string& benchmark_id = train.benchmarks[cell.benchmark];
            if (!model_bundles.count(model_id)) {
                evidence::EvidenceBundle bundle =
                    evidence::retrieve_model_evidence(data.memory.model(model_id), retriever);
                filter_sources(bundle, toggles);
                model_bundles.emplace(model_id, std::move(bundle));
            }
            if (!benchmark_bundles.count(benchmark_id)) {
                evidence::EvidenceBundle bundle = evidence::retrieve_benchmark_evidence(
                    data.memory.benchmark(benchmark_id), retriever);
                filter_sources(bundle, toggles);
                benchmark_bundles.emplace(benchmark_id, std::move(bundle));
            }
        }
    }

    MemoryState train_memory;
    train_memory.matrix = train;
    train_memory.model_profiles = data.memory.model_profiles;
    train_memory.benchmark_profiles = data.memory.benchmark_profiles;

    const auto process = [&](std::size_t i) {
        const Cell& cell = targets[i];
        const std::string& model_id = train.models[cell.model];
        const std::string& benchmark_id = train.benchmarks[cell.benchmark];
        const double r_hat = summary.mean[i];
        const double sigma = summary.std[i];

        std::vector<llm::ScoreCitation> family;
        if (toggles.family_step && !sources_off) {
            for (const ScoreRef& ref :
                 corpus::family_members(train_memory, model_id, benchmark_id)) {
                family.push_back({ref.model_id, ref.score});
            }
        }
        std::vector<llm::ScoreCitation> neighbors;
        if (toggles.cross_step && !sources_off) {
            for (const std::string& peer :
                 corpus::similar_models(train, model_id, config.neighbor_k, &data.store)) {
                const int row = train.model_index(peer);
                if (row >= 0 && train.observed(row, cell.benchmark)) {
                    neighbors.push_back({peer, train.values(row, cell.benchmark)});
                }
            }
        }

        evidence::EvidenceBundle bundle;
        if (!sources_off) {
            bundle = merge_bundles(model_bundles.at(model_id), benchmark_bundles.at(benchmark_id));
        }

        reasoning::ReasoningConfig reasoner = config.reasoner;
        reasoner.transcript_dir = transcript_dir;
        reasoner.transcript_tag = sanitize(model_id) + "__" + sanitize(benchmark_id);

        const reasoning::Refinement refinement =
            reasoning::refine_prediction(r_hat, sigma, bundle, family, neighbors, client, reasoner);

        out.values[i] = refinement.prediction;
        StarTrace& trace = out.traces[i];
        trace.expectation = r_hat;
        trace.sigma = sigma;
        trace.delta = refinement.adjustment.delta;
        trace.confidence = refinement.adjustment.confidence;
        trace.explanation = refinement.adjustment.explanation;
        trace.evidence_refs = refinement.adjustment.evidence_refs;
        for (const std::string& flag : refinement.family_report.flags) {
            trace.flags.push_back("family:" + flag);
        }
        for (const std::string& flag : refinement.cross_report.flags) {
            trace.flags.push_back("cross:" + flag);
        }
        trace.transcript_tag = reasoner.transcript_tag;
    };

    const int workers = resolve_workers(config.workers);
    if (workers > 1 && n >= 2) {
        std::vector<std::future<void>> futures;
        const std::size_t stride = static_cast<std::size_t>(workers);
        for (std::size_t start = 0; start < stride && start < n; ++start) {
            futures.push_back(std::async(std::launch::async, [&, start] {
                for (std::size_t i = start; i < n; i += stride) process(i);
            }));
        }
        for (std::future<void>& f : futures) f.get();
    } else {
        for (std::size_t i = 0; i < n; ++i) process(i);
    }
    return out;
}

void adopt_baseline(MethodRun& run, baselines::BaselinePrediction&& bp) {
    run.cells = std::move(bp.cells);
    run.values = std::move(bp.values);
    run.failed = std::move(bp.failed);
    run.failed_count = bp.failed_count;
    if (run.failed.empty()) run.failed.assign(run.values.size(), 0);
    for (std::size_t i = 0; i < run.values.size(); ++i) {
        if (!run.failed[i]) run.values[i] = clamp_score(run.values[i]);
    }
}

void score_method(MethodRun& run, const ScoreMatrix& full) {
    metrics::GroupedPairs groups;
    for (std::size_t i = 0; i < run.cells.size(); ++i) {
        if (run.failed[i]) continue;
        const Cell& cell = run.cells[i];
        auto& [pred, truth] = groups[full.benchmarks[cell.benchmark]];
        pred.push_back(run.values[i]);
        truth.push_back(full.values(cell.model, cell.benchmark));
    }
    if (!groups.empty()) run.report = metrics::evaluate(groups);
}

}  // namespace

RunArtifact run_split(const Dataset& data, const corpus::Split& split,
                      const ExperimentConfig& config, llm::LlmClient& client,
                      const std::string& experiment, const std::string& label, int run_index,
                      std::uint64_t run_seed, const PipelineToggles& toggles) {
    const ScoreMatrix& full = data.memory.matrix;
    const ScoreMatrix& train = split.train;
    const std::vector<Cell>& targets = split.test_cells;

    RunArtifact artifact;
    artifact.experiment = experiment;
    artifact.label = label;
    artifact.run_index = run_index;
    artifact.run_seed = run_seed;
    artifact.split_kind = split.spec.kind;
    artifact.mask_ratio = split.spec.mask_ratio;
    artifact.train_cells = train.observed_count();
    artifact.test_cells = static_cast<long>(targets.size());
    artifact.dropped_cells = split.dropped_cells;
    artifact.warnings = split.warnings;

    const std::string transcript_rel =
        experiment + "/" + sanitize(label) + "/run" + std::to_string(run_index) + "/transcripts";
    const std::string transcript_abs =
        config.output_dir.empty() ? std::string{}
                                  : (fs::path(config.output_dir) / transcript_rel).string();

    // The factorization fit is shared between the pmf/cpmf/star rows.
    std::optional<FactorFit> featured;
    std::optional<FactorFit> plain;
    const auto ensure_featured = [&]() -> FactorFit& {
        if (!featured) {
            featured = fit_factors(data, train, targets, config, run_seed,
                                   toggles.model_features, toggles.benchmark_features);
            for (const std::string& w : featured->warnings) artifact.warnings.push_back(w);
        }
        return *featured;
    };
    const auto ensure_plain = [&]() -> FactorFit& {
        if (!plain) {
            plain = fit_factors(data, train, targets, config, run_seed, false, false);
            for (const std::string& w : plain->warnings) artifact.warnings.push_back(w);
        }
        return *plain;
    };

    for (const MethodKind method : config.methods) {
        MethodRun run;
        run.method = method;
        const auto started = std::chrono::steady_clock::now();
        try {
            switch (method) {
                case MethodKind::global_mean:
                    adopt_baseline(run, baselines::global_mean(train, targets));
                    break;
                case MethodKind::mean_of_means:
                    adopt_baseline(run, baselines::mean_of_means(train, targets));
                    break;
                case MethodKind::pca:
                    adopt_baseline(run, baselines::pca_impute(train, targets, config.pca_rank));
                    break;
                case MethodKind::llm_direct: {
                    baselines::LlmDirectConfig llm_config;
                    llm_config.workers = resolve_workers(config.workers);
                    llm_config.retries = config.llm_retries;
                    adopt_baseline(run, baselines::llm_direct(train, data.memory.model_profiles,
                                                              data.memory.benchmark_profiles,
                                                              targets, client, llm_config));
                    break;
                }
                case MethodKind::pmf: {
                    const FactorFit& fit = ensure_plain();
                    run.cells = fit.summary.cells;
                    run.values.reserve(run.cells.size());
                    for (const double mean : fit.summary.mean) {
                        run.values.push_back(clamp_score(mean));
                    }
                    run.failed.assign(run.cells.size(), 0);
                    if (split.spec.kind == SplitKind::benchmark_shift) {
                        artifact.warnings.push_back(
                            "no signal: pmf predicts held-out benchmarks from prior draws");
                    }
                    break;
                }
                case MethodKind::cpmf: {
                    const FactorFit& fit = ensure_featured();
                    if (fit.zero_features) run.method = MethodKind::pmf;
                    run.cells = fit.summary.cells;
                    run.values.reserve(run.cells.size());
                    for (const double mean : fit.summary.mean) {
                        run.values.push_back(clamp_score(mean));
                    }
                    run.failed.assign(run.cells.size(), 0);
                    if (fit.zero_features && split.spec.kind == SplitKind::benchmark_shift) {
                        artifact.warnings.push_back(
                            "no signal: pmf predicts held-out benchmarks from prior draws");
                    }
                    break;
                }
                case MethodKind::star: {
                    const FactorFit& fit = ensure_featured();
                    run.cells = fit.summary.cells;
                    RefineResult refined = refine_cells(data, train, run.cells, fit.summary,
                                                        config, client, toggles, transcript_abs);
                    run.values = std::move(refined.values);
                    run.traces = std::move(refined.traces);
                    run.failed.assign(run.cells.size(), 0);
                    if (!transcript_abs.empty()) artifact.transcript_dir = transcript_rel;
                    break;
                }
            }
        } catch (const Error& e) {
            run.error = e.what();
            run.cells = targets;
            run.values.assign(targets.size(), 0.0);
            run.failed.assign(targets.size(), 1);
            run.traces.clear();
        }
        run.failed_count = std::count(run.failed.begin(), run.failed.end(), 1);
        score_method(run, full);
        run.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
        artifact.methods.push_back(std::move(run));
    }
    return artifact;
}

std::vector<RunArtifact> run_masking_experiment(const Dataset& data,
                                                const ExperimentConfig& config,
                                                llm::LlmClient& client) {
    config.validate();
    std::vector<RunArtifact> artifacts;
    for (const double ratio : config.mask_ratios) {
        const std::string label = "P" + std::to_string(std::lround(ratio * 100));
        for (int run = 0; run < config.runs; ++run) {
            const std::uint64_t run_seed =
                derive_seed(config.seed, label, static_cast<std::uint64_t>(run));
            const corpus::Split split = corpus::temporal_masking_split(
                data.memory.matrix, data.memory.model_profiles, config.cutoff, ratio,
                derive_seed(run_seed, "mask"));
            artifacts.push_back(
                run_split(data, split, config, client, "sweep", label, run, run_seed));
        }
    }
    return artifacts;
}

RunArtifact run_pattern_shift(const Dataset& data, const corpus::Scenario& scenario,
                              const ExperimentConfig& config, llm::LlmClient& client,
                              int run_index) {
    config.validate();
    const std::uint64_t run_seed =
        derive_seed(config.seed, scenario.name, static_cast<std::uint64_t>(run_index));
    const corpus::Split split = corpus::pattern_shift_split(
        data.memory.matrix, data.memory.model_profiles, data.memory.benchmark_profiles, scenario,
        derive_seed(run_seed, "mask"));
    return run_split(data, split, config, client, "shift", scenario.name, run_index, run_seed);
}

std::vector<AblationSpec> default_ablation_specs() {
    std::vector<AblationSpec> specs;
    const auto add = [&](std::string label, MethodKind method, PipelineToggles toggles) {
        specs.push_back({std::move(label), {method}, std::move(toggles)});
    };

    add("cpmf", MethodKind::cpmf, {});
    {
        PipelineToggles t;
        t.model_features = false;
        add("cpmf w/o model features", MethodKind::cpmf, t);
    }
    {
        PipelineToggles t;
        t.benchmark_features = false;
        add("cpmf w/o benchmark features", MethodKind::cpmf, t);
    }
    add("pmf", MethodKind::pmf, {});

    add("star", MethodKind::star, {});
    {
        PipelineToggles t;
        t.family_step = false;
        add("star w/o family step", MethodKind::star, t);
    }
    {
        PipelineToggles t;
        t.cross_step = false;
        add("star w/o cross step", MethodKind::star, t);
    }
    {
        PipelineToggles t;
        t.family_step = false;
        t.cross_step = false;
        add("star w/o both steps", MethodKind::star, t);
    }

    // Every subset of the three online sources.
    const std::vector<std::pair<std::string, evidence::Source>> sources = {
        {"search", evidence::Source::search},
        {"arxiv", evidence::Source::arxiv},
        {"model_hub", evidence::Source::model_hub},
    };
    for (int mask = 0; mask < 8; ++mask) {
        PipelineToggles t;
        t.sources.emplace();
        std::string label = "sources";
        for (int bit = 0; bit < 3; ++bit) {
            if (mask & (1 << bit)) {
                t.sources->insert(sources[bit].second);
                label += (label == "sources" ? " " : "+") + sources[bit].first;
            }
        }
        if (mask == 0) label += " none";
        add(std::move(label), MethodKind::star, t);
    }
    return specs;
}

std::vector<RunArtifact> run_ablation(const Dataset& data,
                                      const std::vector<AblationSpec>& specs,
                                      const ExperimentConfig& config, llm::LlmClient& client) {
    if (specs.empty()) throw ConfigError("no ablation specs given");
    config.validate();
    // All rows share one split and seed so only the configuration varies.
    const std::uint64_t run_seed = derive_seed(config.seed, "ablate", 0);
    const corpus::Split split = corpus::temporal_masking_split(
        data.memory.matrix, data.memory.model_profiles, config.cutoff,
        config.mask_ratios.front(), derive_seed(run_seed, "mask"));

    std::vector<RunArtifact> artifacts;
    for (const AblationSpec& spec : specs) {
        if (spec.methods.empty()) throw ConfigError("ablation '" + spec.label + "' has no methods");
        ExperimentConfig row = config;
        row.methods = spec.methods;
        artifacts.push_back(run_split(data, split, row, client, "ablate", spec.label, 0, run_seed,
                                      spec.toggles));
    }
    return artifacts;
}

std::string SelectionReport::to_json() const {
    json doc;
    doc["benchmark_id"] = benchmark_id;
    doc["budget"] = budget;
    doc["k"] = k;
    doc["pool"] = pool;
    doc["observed"] = observed;
    doc["brute_force"] = brute_force;
    doc["random_mean"] = random_mean;
    doc["random_std"] = random_std;
    doc["star_recall"] = star_recall;
    return doc.dump(2) + "\n";
}

SelectionReport run_selection(const Dataset& data, const ExperimentConfig& config,
                              const SelectionOptions& options, llm::LlmClient& client) {
    const ScoreMatrix& full = data.memory.matrix;
    const int target = full.benchmark_index(options.benchmark_id);
    if (target < 0) throw ConfigError("unknown benchmark '" + options.benchmark_id + "'");
    if (!(options.budget > 0.0 && options.budget <= 1.0)) {
        throw ConfigError("selection budget outside (0, 1]");
    }

    std::vector<int> pool;
    for (int m = 0; m < full.rows(); ++m) {
        if (full.observed(m, target)) pool.push_back(m);
    }
    const long pool_size = static_cast<long>(pool.size());
    if (options.k < 1 || options.k > pool_size) {
        throw ConfigError("selection k outside the candidate pool");
    }
    const long n_obs = std::lround(options.budget * static_cast<double>(pool_size));
    if (n_obs < 1) throw ConfigError("budget selects fewer than one cell");

    std::vector<ScoreRef> truth;
    truth.reserve(pool.size());
    for (const int m : pool) truth.push_back({full.models[m], full.values(m, target)});

    SelectionReport report;
    report.benchmark_id = options.benchmark_id;
    report.budget = options.budget;
    report.k = options.k;
    report.pool = pool_size;
    report.observed = n_obs;

    // True top-k order: score descending, smaller id first on ties.
    const auto ranked_ids = [&](const std::map<std::string, double>& scores) {
        std::vector<std::pair<std::string, double>> order(scores.begin(), scores.end());
        std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        std::vector<std::string> ids;
        for (const auto& [id, score] : order) ids.push_back(id);
        return ids;
    };

    {
        std::map<std::string, double> all;
        for (const ScoreRef& ref : truth) all[ref.model_id] = ref.score;
        std::vector<std::string> ids = ranked_ids(all);
        ids.resize(options.k);
        report.brute_force = metrics::top_k_recall(truth, ids, options.k);
    }

    {
        std::vector<double> recalls;
        for (int s = 0; s < options.random_seeds; ++s) {
            std::mt19937_64 rng(
                derive_seed(config.seed, "select-random", static_cast<std::uint64_t>(s)));
            std::vector<int> chosen;
            std::sample(pool.begin(), pool.end(), std::back_inserter(chosen),
                        static_cast<std::size_t>(n_obs), rng);
            std::map<std::string, double> observed_scores;
            for (const int m : chosen) observed_scores[full.models[m]] = full.values(m, target);
            std::vector<std::string> ids = ranked_ids(observed_scores);
            if (static_cast<long>(ids.size()) < options.k) {
                // Budget below k: pad with unobserved candidates by id.
                for (const int m : pool) {
                    if (static_cast<long>(ids.size()) >= options.k) break;
                    if (!observed_scores.count(full.models[m])) ids.push_back(full.models[m]);
                }
            }
            ids.resize(options.k);
            recalls.push_back(metrics::top_k_recall(truth, ids, options.k));
        }
        report.random_mean = sample_mean(recalls);
        report.random_std = sample_stddev(recalls);
    }

    {
        // Stage 1: hide the whole target column, rank pool cells by
        // posterior spread.
        ScoreMatrix masked = full;
        for (int m = 0; m < full.rows(); ++m) {
            masked.mask(m, target) = 0;
            masked.values(m, target) = 0.0;
        }
        std::vector<Cell> pool_cells;
        for (const int m : pool) pool_cells.push_back({m, target});

        const std::uint64_t stage1_seed = derive_seed(config.seed, "select", 0);
        const FactorFit probe =
            fit_factors(data, masked, pool_cells, config, stage1_seed, true, true);

        std::vector<std::size_t> order(pool_cells.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (probe.summary.std[a] != probe.summary.std[b]) {
                return probe.summary.std[a] > probe.summary.std[b];
            }
            return probe.summary.cells[a].model < probe.summary.cells[b].model;
        });

        std::set<int> observed_models;
        ScoreMatrix staged = masked;
        for (long i = 0; i < n_obs; ++i) {
            const Cell& cell = probe.summary.cells[order[static_cast<std::size_t>(i)]];
            staged.mask(cell.model, target) = 1;
            staged.values(cell.model, target) = full.values(cell.model, target);
            observed_models.insert(cell.model);
        }

        // Stage 2: refit with the measured cells and predict the rest.
        std::vector<Cell> predict_cells;
        for (const int m : pool) {
            if (!observed_models.count(m)) predict_cells.push_back({m, target});
        }
        std::map<std::string, double> final_scores;
        for (const int m : observed_models) final_scores[full.models[m]] = full.values(m, target);

        if (!predict_cells.empty()) {
            const std::uint64_t stage2_seed = derive_seed(config.seed, "select", 1);
            const FactorFit fit =
                fit_factors(data, staged, predict_cells, config, stage2_seed, true, true);
            const std::string transcript_abs =
                config.output_dir.empty()
                    ? std::string{}
                    : (fs::path(config.output_dir) / "select" / sanitize(options.benchmark_id) /
                       "transcripts")
                          .string();
            const RefineResult refined =
                refine_cells(data, staged, predict_cells, fit.summary, config, client, {},
                             transcript_abs);
            for (std::size_t i = 0; i < predict_cells.size(); ++i) {
                final_scores[full.models[predict_cells[i].model]] = refined.values[i];
            }
        }

        std::vector<std::string> ids = ranked_ids(final_scores);
        ids.resize(options.k);
        report.star_recall = metrics::top_k_recall(truth, ids, options.k);
    }

    return report;
}

namespace {

const std::vector<std::string>& metric_names() {
    static const std::vector<std::string> names = {"mae",  "rmse",     "score_avg",
                                                   "srcc", "krcc",     "mae_at_3",
                                                   "rank_avg", "total"};
    return names;
}

std::map<std::string, double> present_metrics(const metrics::MetricReport& report) {
    std::map<std::string, double> out;
    out["mae"] = report.mae;
    out["rmse"] = report.rmse;
    out["score_avg"] = report.score_avg;
    if (report.srcc) out["srcc"] = *report.srcc;
    if (report.krcc) out["krcc"] = *report.krcc;
    if (report.mae_at_3) out["mae_at_3"] = *report.mae_at_3;
    if (report.rank_avg) out["rank_avg"] = *report.rank_avg;
    if (report.total) out["total"] = *report.total;
    return out;
}

}  // namespace

std::vector<SummaryRow> summarize(const std::vector<RunArtifact>& artifacts) {
    std::vector<std::string> label_order;
    std::map<std::string, std::map<MethodKind, std::map<std::string, std::vector<double>>>> acc;
    for (const RunArtifact& artifact : artifacts) {
        if (!acc.count(artifact.label)) label_order.push_back(artifact.label);
        auto& by_method = acc[artifact.label];
        for (const MethodRun& run : artifact.methods) {
            if (!run.error.empty() || run.report.n_cells == 0) continue;
            auto& by_metric = by_method[run.method];
            for (const auto& [name, value] : present_metrics(run.report)) {
                by_metric[name].push_back(value);
            }
        }
    }

    std::vector<SummaryRow> rows;
    for (const std::string& label : label_order) {
        for (const auto& [method, by_metric] : acc[label]) {
            for (const std::string& name : metric_names()) {
                const auto it = by_metric.find(name);
                if (it == by_metric.end()) continue;
                SummaryRow row;
                row.label = label;
                row.method = method;
                row.metric = name;
                row.runs = static_cast<int>(it->second.size());
                row.mean = sample_mean(it->second);
                row.stddev = sample_stddev(it->second);
                rows.push_back(std::move(row));
            }
        }
    }
    return rows;
}

namespace {

json method_json(const MethodRun& run, const ScoreMatrix& matrix) {
    json doc;
    doc["method"] = to_string(run.method);
    doc["failed_count"] = run.failed_count;
    if (!run.error.empty()) doc["error"] = run.error;
    doc["metrics"] = run.report.n_cells > 0 ? json::parse(run.report.to_json()) : json();

    json predictions = json::array();
    for (std::size_t i = 0; i < run.cells.size(); ++i) {
        const Cell& cell = run.cells[i];
        json p;
        p["model"] = matrix.models[cell.model];
        p["benchmark"] = matrix.benchmarks[cell.benchmark];
        p["value"] = run.values[i];
        p["failed"] = run.failed[i] != 0;
        if (!run.traces.empty()) {
            const StarTrace& trace = run.traces[i];
            p["expectation"] = trace.expectation;
            p["sigma"] = trace.sigma;
            p["delta"] = trace.delta;
            p["confidence"] = trace.confidence;
            p["explanation"] = trace.explanation;
            p["evidence_refs"] = trace.evidence_refs;
            p["flags"] = trace.flags;
            p["transcript"] = trace.transcript_tag;
        }
        predictions.push_back(std::move(p));
    }
    doc["predictions"] = std::move(predictions);
    return doc;
}

json artifact_json(const RunArtifact& artifact, const ScoreMatrix& matrix) {
    json doc;
    doc["experiment"] = artifact.experiment;
    doc["label"] = artifact.label;
    doc["run_index"] = artifact.run_index;
    doc["run_seed"] = artifact.run_seed;
    doc["split"] = {{"kind", star::to_string(artifact.split_kind)},
                    {"mask_ratio", artifact.mask_ratio},
                    {"train_cells", artifact.train_cells},
                    {"test_cells", artifact.test_cells},
                    {"dropped_cells", artifact.dropped_cells}};
    doc["transcript_dir"] = artifact.transcript_dir;
    doc["warnings"] = artifact.warnings;
    json methods = json::array();
    for (const MethodRun& run : artifact.methods) methods.push_back(method_json(run, matrix));
    doc["methods"] = std::move(methods);
    return doc;
}

}  // namespace

void emit_report(const std::vector<RunArtifact>& artifacts, const ScoreMatrix& matrix,
                 const std::string& out_dir) {
    if (artifacts.empty()) throw ConfigError("no artifacts to report");
    if (out_dir.empty()) throw ConfigError("output directory not set");
    fs::create_directories(out_dir);

    const std::vector<SummaryRow> summary = summarize(artifacts);

    json root;
    root["rank_metric_grouping"] =
        "rank metrics are computed per benchmark over groups with >= 3 test models and averaged "
        "weighted by cell count; error metrics pool all test cells";
    json arts = json::array();
    for (const RunArtifact& artifact : artifacts) arts.push_back(artifact_json(artifact, matrix));
    root["artifacts"] = std::move(arts);
    json rows = json::array();
    for (const SummaryRow& row : summary) {
        rows.push_back(json{{"label", row.label},
                            {"method", to_string(row.method)},
                            {"metric", row.metric},
                            {"runs", row.runs},
                            {"mean", row.mean},
                            {"stddev", row.stddev}});
    }
    root["summary"] = std::move(rows);
    write_file(fs::path(out_dir) / "report.json", root.dump(2) + "\n");

    std::ostringstream csv;
    csv << metrics::MetricReport::csv_header() << '\n';
    for (const RunArtifact& artifact : artifacts) {
        for (const MethodRun& run : artifact.methods) {
            if (!run.error.empty() || run.report.n_cells == 0) continue;
            csv << run.report.csv_row(to_string(run.method), artifact.label,
                                      std::to_string(artifact.run_index))
                << '\n';
        }
    }
    write_file(fs::path(out_dir) / "results.csv", csv.str());

    // Mask percentage per label, taken from the first artifact seen.
    std::map<std::string, double> label_x;
    for (const RunArtifact& artifact : artifacts) {
        if (!label_x.count(artifact.label)) label_x[artifact.label] = artifact.mask_ratio * 100.0;
    }
    std::ostringstream plot;
    plot << "metric,method,label,x,runs,mean,stddev\n";
    for (const std::string& panel : {std::string{"score_avg"}, std::string{"rank_avg"},
                                     std::string{"total"}}) {
        for (const SummaryRow& row : summary) {
            if (row.metric != panel) continue;
            plot << row.metric << ',' << to_string(row.method) << ',' << row.label << ','
                 << label_x.at(row.label) << ',' << row.runs << ',' << row.mean << ','
                 << row.stddev << '\n';
        }
    }
    write_file(fs::path(out_dir) / "plotdata.csv", plot.str());

    std::ostringstream timings;
    timings << "experiment,label,run,method,seconds\n";
    for (const RunArtifact& artifact : artifacts) {
        for (const MethodRun& run : artifact.methods) {
            timings << artifact.experiment << ',' << artifact.label << ',' << artifact.run_index
                    << ',' << to_string(run.method) << ',' << run.seconds << '\n';
        }
    }
    write_file(fs::path(out_dir) / "timings.csv", timings.str());
}

}  // namespace star::harness
