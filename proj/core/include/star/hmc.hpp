#pragma once
// Hamiltonian Monte Carlo over a differentiable log density: static
// leapfrog trajectories with dual-averaging step-size adaptation, plus
// an optional dynamic (tree-doubling) trajectory mode. Identity mass
// matrix throughout.

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "star/common.hpp"

namespace star::hmc {

using LogProbFn = std::function<double(const Eigen::VectorXd&)>;
using GradFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct ChainConfig {
    int warmup = 100;
    int samples = 100;          // post-warmup draws kept
    int leapfrog_steps = 32;    // static mode trajectory length
    bool dynamic = false;       // tree-doubling trajectories instead
    int max_tree_depth = 10;    // dynamic mode only
    double target_accept = 0.8;
    double init_step_size = 0;  // 0 = search for one automatically
    std::uint64_t seed = 0;

    void validate() const;
};

struct ChainDiagnostics {
    double accept_rate = 0;  // mean accept statistic after warmup
    double step_size = 0;    // final adapted step size
    long divergences = 0;    // |energy error| > threshold
    bool low_acceptance = false;  // accept_rate < 0.1
    std::uint64_t seed = 0;

    std::string to_json() const;
};

struct ChainResult {
    std::vector<Eigen::VectorXd> draws;
    ChainDiagnostics diagnostics;
};

// Deterministic source for momenta and accept coins.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return uniform_(engine_); }
    double normal() { return normal_(engine_); }
    Eigen::VectorXd normal_vector(Eigen::Index n) {
        Eigen::VectorXd v(n);
        for (Eigen::Index i = 0; i < n; ++i) v[i] = normal();
        return v;
    }

private:
    std::mt19937_64 engine_;
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
    std::normal_distribution<double> normal_{0.0, 1.0};
};

// Energy error beyond this marks the transition divergent.
inline constexpr double kDivergenceThreshold = 1000.0;

// Velocity Verlet; integrates in place. Exposed for the reversibility
// and energy-scaling checks.
void leapfrog(const GradFn& grad, Eigen::VectorXd& position, Eigen::VectorXd& momentum,
              double step_size, int steps);

// Doubling/halving search for a step size whose single-step accept
// ratio crosses 1/2, following the usual heuristic.
double find_reasonable_step_size(const LogProbFn& logp, const GradFn& grad,
                                 const Eigen::VectorXd& position, Rng& rng);

// Run one chain: warmup iterations adapt the step size by dual
// averaging toward target_accept, post-warmup draws are recorded.
// Bit-identical for a fixed (seed, config, target). Throws
// DivergenceError when the chain cannot produce finite Hamiltonians.
ChainResult run_chain(const LogProbFn& logp, const GradFn& grad, const Eigen::VectorXd& init,
                      const ChainConfig& config);

}  // namespace star::hmc
