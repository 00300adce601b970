#pragma once
// Reference predictors: observed-mean constants, row/column mean
// blending, plain matrix factorization (the feature-free reduction),
// iterative low-rank imputation, and direct LLM scoring from profiles.

#include <string>
#include <vector>

#include "star/cpmf.hpp"
#include "star/hmc.hpp"
#include "star/llm.hpp"
#include "star/types.hpp"

namespace star::baselines {

enum class Method : std::uint8_t { global_mean, mean_of_means, pmf, pca, llm_direct };

std::string to_string(Method method);

struct BaselinePrediction {
    Method method{};
    std::vector<Cell> cells;            // sorted
    std::vector<double> values;         // aligned with cells, finite
    std::vector<std::uint8_t> failed;   // aligned; per-cell failure marker
    long failed_count = 0;

    double value_at(const Cell& cell) const;
    bool failed_at(const Cell& cell) const;

    // [{"model_id", "benchmark_id", "method", "value", "failed"}, ...]
    std::string to_json(const ScoreMatrix& matrix) const;
};

// Constant prediction: mean of observed train entries.
BaselinePrediction global_mean(const ScoreMatrix& train, const std::vector<Cell>& targets);

// (row mean + column mean) / 2; an unobserved row or column falls back
// to the global mean before averaging.
BaselinePrediction mean_of_means(const ScoreMatrix& train, const std::vector<Cell>& targets);

// Factorization with a zero-width feature block: posterior mean over
// one chain's draws, seeds and machinery shared with the full model.
BaselinePrediction pmf(const ScoreMatrix& train, const std::vector<Cell>& targets,
                       const cpmf::Hyperparams& hyper, const hmc::ChainConfig& chain);

// Iterative low-rank completion: missing cells start at column means,
// then alternate truncated rank-r SVD reconstruction with re-imposing
// the observed entries until the Frobenius change drops below tol.
Eigen::MatrixXd pca_complete(const ScoreMatrix& train, int rank, int max_iters = 200,
                             double tol = 1e-6);
BaselinePrediction pca_impute(const ScoreMatrix& train, const std::vector<Cell>& targets,
                              int rank, int max_iters = 200);

struct LlmDirectConfig {
    int workers = 1;   // concurrent client calls
    int retries = 1;   // re-asks per cell after an unparseable reply
};

// One prompt per cell built from the two profiles only (no scores);
// the numeric reply is parsed and clamped to [0,100]. Cells whose
// replies stay unparseable after the retry are marked failed.
BaselinePrediction llm_direct(const ScoreMatrix& matrix, const ModelProfileMap& models,
                              const BenchmarkProfileMap& benchmarks,
                              const std::vector<Cell>& targets, llm::LlmClient& client,
                              const LlmDirectConfig& config = {});

}  // namespace star::baselines
