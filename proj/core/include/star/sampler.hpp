#pragma once
// Posterior inference for the factorization model: run HMC chains over
// the packed parameters, summarize per-cell predictive mean/spread, and
// persist draws as checkpoints.

#include <string>
#include <vector>

#include "star/cpmf.hpp"
#include "star/hmc.hpp"

namespace star::sampler {

struct PosteriorSamples {
    std::vector<cpmf::CpmfParams> draws;  // T parameter draws
    hmc::ChainDiagnostics diagnostics;
};

// One chain from a seeded N(0, 0.01) start. Model divergences inside
// the trajectory are treated as rejections; a chain that cannot move
// raises DivergenceError.
PosteriorSamples run_cpmf_chain(const cpmf::Model& model, const hmc::ChainConfig& config);

struct PosteriorSummary {
    std::vector<Cell> cells;
    std::vector<double> mean;  // predictive mean per cell, unclamped
    std::vector<double> std;   // population std over draws
    bool single_draw = false;  // std is identically 0 by definition

    double mean_at(const Cell& cell) const;
    double std_at(const Cell& cell) const;
};

// Mean and population spread of predict_point over the draws,
// restricted to the target cells.
PosteriorSummary posterior_summary(const cpmf::Model& model, const PosteriorSamples& samples,
                                   const std::vector<Cell>& targets);

struct EnsembleResult {
    PosteriorSamples merged;  // all chains' draws concatenated
    std::vector<hmc::ChainDiagnostics> per_chain;
    double between_chain_rms = 0;  // RMS gap of per-chain mean predictions
};

// Independent chains with seeds derived from config.seed; chains run in
// parallel up to `workers` threads (0 = hardware default).
EnsembleResult run_ensemble(const cpmf::Model& model, const hmc::ChainConfig& config,
                            int n_chains, int workers = 0);

// Checkpoint: binary file with shape header (M, N, d, D, mu, seed), id
// lists, feature matrices, and all draws. Enough to predict any cell
// without retraining.
struct Checkpoint {
    std::vector<std::string> models;
    std::vector<std::string> benchmarks;
    Eigen::MatrixXd G;  // M x d
    Eigen::MatrixXd H;  // N x d
    cpmf::Hyperparams hyper;
    double mu = 0.0;
    std::uint64_t seed = 0;
    std::vector<cpmf::CpmfParams> draws;
    hmc::ChainDiagnostics diagnostics;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Predictive mean/std for one (model, benchmark) pair straight from a
// checkpoint's draws.
struct CellEstimate {
    double mean = 0;
    double std = 0;
};
CellEstimate estimate_cell(const Checkpoint& ckpt, const std::string& model_id,
                           const std::string& benchmark_id);

}  // namespace star::sampler
