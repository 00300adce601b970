#include "star/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <sstream>

#include "json.hpp"

#include "star/sampler.hpp"

namespace star::baselines {
namespace {

using nlohmann::json;

std::vector<Cell> sorted_targets(const std::vector<Cell>& targets) {
    std::vector<Cell> cells = targets;
    std::sort(cells.begin(), cells.end());
    return cells;
}

void check_targets(const ScoreMatrix& train, const std::vector<Cell>& targets) {
    for (const Cell& cell : targets) {
        if (cell.model < 0 || cell.model >= train.rows() || cell.benchmark < 0 ||
            cell.benchmark >= train.cols()) {
            throw ConfigError("target cell (" + std::to_string(cell.model) + ", " +
                              std::to_string(cell.benchmark) + ") is outside the matrix");
        }
    }
}

std::size_t index_of(const std::vector<Cell>& cells, const Cell& cell) {
    const auto it = std::lower_bound(cells.begin(), cells.end(), cell);
    if (it == cells.end() || !(*it == cell)) throw ConfigError("cell not in prediction");
    return static_cast<std::size_t>(it - cells.begin());
}

std::string profile_block(const ModelProfile& profile) {
    std::ostringstream out;
    out << "model: " << (profile.display_name.empty() ? profile.model_id : profile.display_name)
        << "\nfamily: " << profile.family;
    if (!profile.organization.empty()) out << "\norganization: " << profile.organization;
    if (profile.parameter_count) {
        out << "\nparameters: " << format_number(*profile.parameter_count) << "B";
    }
    out << "\nreleased: " << profile.release_date.to_string();
    if (!profile.tags.empty()) {
        out << "\ntags:";
        for (const std::string& tag : profile.tags) out << ' ' << tag;
    }
    return out.str();
}

std::string profile_block(const BenchmarkProfile& profile) {
    std::ostringstream out;
    out << "benchmark: "
        << (profile.display_name.empty() ? profile.benchmark_id : profile.display_name)
        << "\ncategory: " << profile.category
        << "\nmetric: " << (profile.metric_kind == MetricKind::accuracy ? "accuracy" : "score");
    return out.str();
}

}  // namespace

std::string to_string(Method method) {
    switch (method) {
        case Method::global_mean: return "global_mean";
        case Method::mean_of_means: return "mean_of_means";
        case Method::pmf: return "pmf";
        case Method::pca: return "pca";
        case Method::llm_direct: return "llm_direct";
    }
    return "unknown";
}

double BaselinePrediction::value_at(const Cell& cell) const {
    return values[index_of(cells, cell)];
}

bool BaselinePrediction::failed_at(const Cell& cell) const {
    const std::size_t i = index_of(cells, cell);
    return !failed.empty() && failed[i] != 0;
}

std::string BaselinePrediction::to_json(const ScoreMatrix& matrix) const {
    json arr = json::array();
    for (std::size_t i = 0; i < cells.size(); ++i) {
        json row;
        row["model_id"] = matrix.models[static_cast<std::size_t>(cells[i].model)];
        row["benchmark_id"] = matrix.benchmarks[static_cast<std::size_t>(cells[i].benchmark)];
        row["method"] = to_string(method);
        row["value"] = values[i];
        row["failed"] = !failed.empty() && failed[i] != 0;
        arr.push_back(std::move(row));
    }
    return arr.dump();
}

BaselinePrediction global_mean(const ScoreMatrix& train, const std::vector<Cell>& targets) {
    check_targets(train, targets);
    const double mean = train.observed_mean();  // throws when nothing is observed

    BaselinePrediction out;
    out.method = Method::global_mean;
    out.cells = sorted_targets(targets);
    out.values.assign(out.cells.size(), mean);
    return out;
}

BaselinePrediction mean_of_means(const ScoreMatrix& train, const std::vector<Cell>& targets) {
    check_targets(train, targets);
    const double global = train.observed_mean();

    std::vector<double> row_mean(static_cast<std::size_t>(train.rows()), global);
    for (int m = 0; m < train.rows(); ++m) {
        double sum = 0;
        long count = 0;
        for (int n = 0; n < train.cols(); ++n) {
            if (!train.observed(m, n)) continue;
            sum += train.values(m, n);
            ++count;
        }
        if (count > 0) row_mean[static_cast<std::size_t>(m)] = sum / static_cast<double>(count);
    }
    std::vector<double> col_mean(static_cast<std::size_t>(train.cols()), global);
    for (int n = 0; n < train.cols(); ++n) {
        double sum = 0;
        long count = 0;
        for (int m = 0; m < train.rows(); ++m) {
            if (!train.observed(m, n)) continue;
            sum += train.values(m, n);
            ++count;
        }
        if (count > 0) col_mean[static_cast<std::size_t>(n)] = sum / static_cast<double>(count);
    }

    BaselinePrediction out;
    out.method = Method::mean_of_means;
    out.cells = sorted_targets(targets);
    out.values.reserve(out.cells.size());
    for (const Cell& cell : out.cells) {
        out.values.push_back(0.5 * (row_mean[static_cast<std::size_t>(cell.model)] +
                                    col_mean[static_cast<std::size_t>(cell.benchmark)]));
    }
    return out;
}

BaselinePrediction pmf(const ScoreMatrix& train, const std::vector<Cell>& targets,
                       const cpmf::Hyperparams& hyper, const hmc::ChainConfig& chain) {
    check_targets(train, targets);

    cpmf::TrainingData data;
    data.matrix = train;
    data.G = Eigen::MatrixXd::Zero(train.rows(), 0);
    data.H = Eigen::MatrixXd::Zero(train.cols(), 0);
    const cpmf::Model model(std::move(data), hyper);

    const sampler::PosteriorSamples samples = sampler::run_cpmf_chain(model, chain);
    const sampler::PosteriorSummary summary = sampler::posterior_summary(model, samples, targets);

    BaselinePrediction out;
    out.method = Method::pmf;
    out.cells = summary.cells;
    out.values = summary.mean;
    return out;
}

Eigen::MatrixXd pca_complete(const ScoreMatrix& train, int rank, int max_iters, double tol) {
    if (rank < 1) throw ConfigError("rank must be >= 1");
    if (rank > std::min(train.rows(), train.cols())) {
        throw ConfigError("rank " + std::to_string(rank) + " exceeds min(" +
                          std::to_string(train.rows()) + ", " + std::to_string(train.cols()) +
                          ")");
    }
    const double global = train.observed_mean();

    Eigen::MatrixXd completed(train.rows(), train.cols());
    for (int n = 0; n < train.cols(); ++n) {
        double sum = 0;
        long count = 0;
        for (int m = 0; m < train.rows(); ++m) {
            if (!train.observed(m, n)) continue;
            sum += train.values(m, n);
            ++count;
        }
        const double fill = count > 0 ? sum / static_cast<double>(count) : global;
        for (int m = 0; m < train.rows(); ++m) {
            completed(m, n) = train.observed(m, n) ? train.values(m, n) : fill;
        }
    }

    for (int iter = 0; iter < max_iters; ++iter) {
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(completed,
                                              Eigen::ComputeThinU | Eigen::ComputeThinV);
        const Eigen::MatrixXd reconstructed =
            svd.matrixU().leftCols(rank) * svd.singularValues().head(rank).asDiagonal() *
            svd.matrixV().leftCols(rank).transpose();

        double change_sq = 0;
        for (int m = 0; m < train.rows(); ++m) {
            for (int n = 0; n < train.cols(); ++n) {
                if (train.observed(m, n)) continue;
                const double delta = reconstructed(m, n) - completed(m, n);
                change_sq += delta * delta;
                completed(m, n) = reconstructed(m, n);
            }
        }
        if (std::sqrt(change_sq) < tol) break;
    }
    return completed;
}

BaselinePrediction pca_impute(const ScoreMatrix& train, const std::vector<Cell>& targets,
                              int rank, int max_iters) {
    check_targets(train, targets);
    const Eigen::MatrixXd completed = pca_complete(train, rank, max_iters);

    BaselinePrediction out;
    out.method = Method::pca;
    out.cells = sorted_targets(targets);
    out.values.reserve(out.cells.size());
    for (const Cell& cell : out.cells) out.values.push_back(completed(cell.model, cell.benchmark));
    return out;
}

BaselinePrediction llm_direct(const ScoreMatrix& matrix, const ModelProfileMap& models,
                              const BenchmarkProfileMap& benchmarks,
                              const std::vector<Cell>& targets, llm::LlmClient& client,
                              const LlmDirectConfig& config) {
    check_targets(matrix, targets);
    if (config.workers < 1) throw ConfigError("workers must be >= 1");

    BaselinePrediction out;
    out.method = Method::llm_direct;
    out.cells = sorted_targets(targets);
    out.values.assign(out.cells.size(), 0.0);
    out.failed.assign(out.cells.size(), 0);

    auto predict_one = [&](std::size_t i) {
        const Cell& cell = out.cells[i];
        const std::string& model_id = matrix.models[static_cast<std::size_t>(cell.model)];
        const std::string& benchmark_id =
            matrix.benchmarks[static_cast<std::size_t>(cell.benchmark)];
        const auto mit = models.find(model_id);
        const auto bit = benchmarks.find(benchmark_id);
        if (mit == models.end() || bit == benchmarks.end()) {
            throw ConfigError("no profile for cell (" + model_id + ", " + benchmark_id + ")");
        }

        llm::LlmRequest request;
        request.kind = llm::RequestKind::direct_score;
        request.system =
            "You estimate benchmark scores for language models. Reply with a single "
            "number between 0 and 100, prefixed by 'score:'.";
        request.prompt = profile_block(mit->second) + "\n\n" + profile_block(bit->second) +
                         "\n\nEstimate the score this model would reach on this benchmark.";

        for (int attempt = 0; attempt <= config.retries; ++attempt) {
            std::string reply;
            try {
                reply = client.complete(request);
            } catch (const TransportError&) {
                continue;
            }
            double value = 0;
            if (llm::parse_score_reply(reply, value)) {
                out.values[i] = clamp_score(value);
                return;
            }
        }
        out.failed[i] = 1;
    };

    if (config.workers == 1 || out.cells.size() < 2) {
        for (std::size_t i = 0; i < out.cells.size(); ++i) predict_one(i);
    } else {
        const std::size_t stride = static_cast<std::size_t>(config.workers);
        std::vector<std::future<void>> tasks;
        for (std::size_t w = 0; w < stride; ++w) {
            tasks.push_back(std::async(std::launch::async, [&, w] {
                for (std::size_t i = w; i < out.cells.size(); i += stride) predict_one(i);
            }));
        }
        for (auto& t : tasks) t.get();
    }

    for (const std::uint8_t f : out.failed) out.failed_count += f;
    return out;
}

}  // namespace star::baselines
