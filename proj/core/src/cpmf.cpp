#include "star/cpmf.hpp"

#include <cmath>
#include <random>

namespace star::cpmf {
namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2*pi)

// sum of log N(x | 0, s^2) over all entries, constants included
double gaussian_log_prior(const Eigen::MatrixXd& x, double s) {
    const double n = static_cast<double>(x.size());
    return -0.5 * x.squaredNorm() / (s * s) - n * (std::log(s) + 0.5 * kLog2Pi);
}

}  // namespace

Hyperparams Hyperparams::defaults(int feature_dim) {
    Hyperparams h;
    const double scale = 1.0 / std::sqrt(static_cast<double>(std::max(feature_dim, 1)));
    h.sigma_X = scale;
    h.sigma_Y = scale;
    return h;
}

void Hyperparams::validate() const {
    if (D < 1) throw ConfigError("latent dimension D must be >= 1");
    for (const double s : {sigma_U, sigma_V, sigma_X, sigma_Y, sigma}) {
        if (!(s > 0)) throw ConfigError("all prior/noise stds must be > 0");
    }
}

Eigen::VectorXd CpmfParams::pack() const {
    Eigen::VectorXd theta(packed_size());
    long offset = 0;
    for (const Eigen::MatrixXd* m : {&U, &V, &X, &Y}) {
        theta.segment(offset, m->size()) =
            Eigen::Map<const Eigen::VectorXd>(m->data(), m->size());
        offset += m->size();
    }
    return theta;
}

void TrainingData::validate() const {
    if (matrix.rows() < 1 || matrix.cols() < 1) throw ConfigError("empty score matrix");
    if (matrix.observed_count() < 1) throw ConfigError("no observed training cells");
    if (G.rows() != matrix.rows()) {
        throw ConfigError("model feature rows do not match matrix rows");
    }
    if (H.rows() != matrix.cols()) {
        throw ConfigError("benchmark feature rows do not match matrix columns");
    }
    if (G.cols() != H.cols()) {
        throw ConfigError("model and benchmark features differ in dimension");
    }
}

Model::Model(TrainingData data, Hyperparams hyper)
    : data_(std::move(data)), hyper_(hyper) {
    data_.validate();
    hyper_.validate();

    mu_ = hyper_.center ? data_.matrix.observed_mean() : 0.0;
    mask_ = data_.matrix.mask.cast<double>();
    centered_ = mask_.cwiseProduct((data_.matrix.values.array() - mu_).matrix());
}

long Model::dim() const {
    const long M = data_.matrix.rows();
    const long N = data_.matrix.cols();
    const long d = data_.feature_dim();
    return (M + N) * hyper_.D + 2 * d * hyper_.D;
}

CpmfParams Model::init_params(std::uint64_t seed) const {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, 0.1);  // variance 0.01

    CpmfParams p;
    p.mu = mu_;
    p.U.resize(data_.matrix.rows(), hyper_.D);
    p.V.resize(data_.matrix.cols(), hyper_.D);
    p.X.resize(data_.feature_dim(), hyper_.D);
    p.Y.resize(data_.feature_dim(), hyper_.D);
    for (Eigen::MatrixXd* m : {&p.U, &p.V, &p.X, &p.Y}) {
        for (long i = 0; i < m->size(); ++i) m->data()[i] = noise(rng);
    }
    return p;
}

CpmfParams Model::unpack(const Eigen::VectorXd& theta) const {
    if (theta.size() != dim()) {
        throw ConfigError("parameter vector has wrong length");
    }
    const long M = data_.matrix.rows();
    const long N = data_.matrix.cols();
    const long d = data_.feature_dim();
    const long D = hyper_.D;

    CpmfParams p;
    p.mu = mu_;
    long offset = 0;
    auto take = [&](long rows, long cols) {
        Eigen::MatrixXd m =
            Eigen::Map<const Eigen::MatrixXd>(theta.data() + offset, rows, cols);
        offset += rows * cols;
        return m;
    };
    p.U = take(M, D);
    p.V = take(N, D);
    p.X = take(d, D);
    p.Y = take(d, D);
    return p;
}

double Model::log_posterior(const CpmfParams& p) const {
    const Eigen::MatrixXd u_eff = p.U + data_.G * p.X;
    const Eigen::MatrixXd v_eff = p.V + data_.H * p.Y;
    const Eigen::MatrixXd residual = mask_.cwiseProduct(centered_ - u_eff * v_eff.transpose());

    const double s2 = hyper_.sigma * hyper_.sigma;
    const double n_obs = static_cast<double>(data_.matrix.observed_count());
    double lp = -0.5 * residual.squaredNorm() / s2 -
                n_obs * (std::log(hyper_.sigma) + 0.5 * kLog2Pi);
    lp += gaussian_log_prior(p.U, hyper_.sigma_U);
    lp += gaussian_log_prior(p.V, hyper_.sigma_V);
    lp += gaussian_log_prior(p.X, hyper_.sigma_X);
    lp += gaussian_log_prior(p.Y, hyper_.sigma_Y);

    if (!std::isfinite(lp)) throw DivergenceError("log posterior is non-finite");
    return lp;
}

double Model::log_posterior_flat(const Eigen::VectorXd& theta) const {
    return log_posterior(unpack(theta));
}

CpmfParams Model::grad_log_posterior(const CpmfParams& p) const {
    const Eigen::MatrixXd u_eff = p.U + data_.G * p.X;
    const Eigen::MatrixXd v_eff = p.V + data_.H * p.Y;
    // masked residual scaled by the noise precision
    const Eigen::MatrixXd e =
        mask_.cwiseProduct(centered_ - u_eff * v_eff.transpose()) /
        (hyper_.sigma * hyper_.sigma);

    const Eigen::MatrixXd dl_du_eff = e * v_eff;              // M x D
    const Eigen::MatrixXd dl_dv_eff = e.transpose() * u_eff;  // N x D

    CpmfParams g;
    g.mu = 0.0;  // not a sampled coordinate
    g.U = dl_du_eff - p.U / (hyper_.sigma_U * hyper_.sigma_U);
    g.V = dl_dv_eff - p.V / (hyper_.sigma_V * hyper_.sigma_V);
    g.X = data_.G.transpose() * dl_du_eff - p.X / (hyper_.sigma_X * hyper_.sigma_X);
    g.Y = data_.H.transpose() * dl_dv_eff - p.Y / (hyper_.sigma_Y * hyper_.sigma_Y);

    if (!g.U.allFinite() || !g.V.allFinite() || !g.X.allFinite() || !g.Y.allFinite()) {
        throw DivergenceError("log posterior gradient is non-finite");
    }
    return g;
}

Eigen::VectorXd Model::grad_flat(const Eigen::VectorXd& theta) const {
    return grad_log_posterior(unpack(theta)).pack();
}

Eigen::VectorXd Model::effective_model_latent(const CpmfParams& p, int m) const {
    return p.U.row(m).transpose() + p.X.transpose() * data_.G.row(m).transpose();
}

Eigen::VectorXd Model::effective_benchmark_latent(const CpmfParams& p, int n) const {
    return p.V.row(n).transpose() + p.Y.transpose() * data_.H.row(n).transpose();
}

double Model::predict_point(const CpmfParams& p, int m, int n) const {
    return p.mu + effective_model_latent(p, m).dot(effective_benchmark_latent(p, n));
}

Eigen::MatrixXd Model::predict_all(const CpmfParams& p) const {
    const Eigen::MatrixXd u_eff = p.U + data_.G * p.X;
    const Eigen::MatrixXd v_eff = p.V + data_.H * p.Y;
    return (u_eff * v_eff.transpose()).array() + p.mu;
}

}  // namespace star::cpmf
