#pragma once
// Feature-augmented probabilistic matrix factorization: Gaussian-prior
// latent factors with semantic projections, Gaussian likelihood on
// observed cells, analytic log-posterior gradient, point prediction.

#include <Eigen/Dense>
#include <cstdint>

#include "star/types.hpp"

namespace star::cpmf {

struct Hyperparams {
    int D = 10;            // latent dimension
    double sigma_U = 1.0;  // prior std of model factors
    double sigma_V = 1.0;  // prior std of benchmark factors
    double sigma_X = 1.0;  // prior std of model-projection entries
    double sigma_Y = 1.0;  // prior std of benchmark-projection entries
    double sigma = 5.0;    // observation noise std on the 0-100 scale
    bool center = true;    // subtract the observed train mean

    // Projection priors default to 1/sqrt(d): unit-norm features times
    // that scale keep projection contributions on the U prior's scale.
    static Hyperparams defaults(int feature_dim);
    void validate() const;
};

struct CpmfParams {
    Eigen::MatrixXd U;  // M x D
    Eigen::MatrixXd V;  // N x D
    Eigen::MatrixXd X;  // d x D
    Eigen::MatrixXd Y;  // d x D
    double mu = 0.0;    // global offset, held fixed during sampling

    long packed_size() const { return U.size() + V.size() + X.size() + Y.size(); }
    Eigen::VectorXd pack() const;  // U,V,X,Y flattened in order
};

struct TrainingData {
    ScoreMatrix matrix;  // normalized scores with train mask
    Eigen::MatrixXd G;   // M x d normalized model features
    Eigen::MatrixXd H;   // N x d normalized benchmark features

    void validate() const;  // shape alignment, >=1 observed cell
    int feature_dim() const { return static_cast<int>(G.cols()); }
};

class Model {
public:
    Model(TrainingData data, Hyperparams hyper);

    const TrainingData& data() const { return data_; }
    const Hyperparams& hyper() const { return hyper_; }
    double mu() const { return mu_; }
    long dim() const;  // packed parameter count

    // Entries drawn N(0, 0.01), reproducible for a fixed seed.
    CpmfParams init_params(std::uint64_t seed) const;

    CpmfParams unpack(const Eigen::VectorXd& theta) const;

    // Joint log density of data and parameters, additive constants
    // included. Non-finite values raise DivergenceError.
    double log_posterior(const CpmfParams& params) const;
    double log_posterior_flat(const Eigen::VectorXd& theta) const;

    // Exact analytic gradient w.r.t. U, V, X, Y; mu is not a sampled
    // coordinate so the flat gradient has no entry for it.
    CpmfParams grad_log_posterior(const CpmfParams& params) const;
    Eigen::VectorXd grad_flat(const Eigen::VectorXd& theta) const;

    // U_m + g_m X and V_n + h_n Y.
    Eigen::VectorXd effective_model_latent(const CpmfParams& params, int m) const;
    Eigen::VectorXd effective_benchmark_latent(const CpmfParams& params, int n) const;

    // mu + <U'_m, V'_n>, unclamped; clamping happens at reporting time.
    double predict_point(const CpmfParams& params, int m, int n) const;
    Eigen::MatrixXd predict_all(const CpmfParams& params) const;  // M x N

private:
    TrainingData data_;
    Hyperparams hyper_;
    double mu_ = 0.0;
    Eigen::MatrixXd centered_;  // observed entries minus mu, zero elsewhere
    Eigen::MatrixXd mask_;      // observation mask as doubles
};

}  // namespace star::cpmf
