#include "star/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <future>
#include <thread>

namespace star::sampler {
namespace {

constexpr char kMagic[8] = {'S', 'T', 'A', 'R', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& value) {
    out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
    T value;
    in.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!in) throw ParseError(path + ": truncated checkpoint");
    return value;
}

void write_string(std::ostream& out, const std::string& s) {
    write_pod(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_string(std::istream& in, const std::string& path) {
    const auto len = read_pod<std::uint32_t>(in, path);
    std::string s(len, '\0');
    in.read(s.data(), len);
    if (!in) throw ParseError(path + ": truncated checkpoint");
    return s;
}

void write_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
    out.write(reinterpret_cast<const char*>(m.data()),
              static_cast<std::streamsize>(sizeof(double)) * m.size());
}

Eigen::MatrixXd read_matrix(std::istream& in, long rows, long cols, const std::string& path) {
    Eigen::MatrixXd m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(sizeof(double)) * m.size());
    if (!in) throw ParseError(path + ": truncated checkpoint");
    return m;
}

}  // namespace

PosteriorSamples run_cpmf_chain(const cpmf::Model& model, const hmc::ChainConfig& config) {
    const cpmf::CpmfParams init = model.init_params(derive_seed(config.seed, "init"));

    const hmc::LogProbFn logp = [&model](const Eigen::VectorXd& theta) {
        return model.log_posterior_flat(theta);
    };
    const hmc::GradFn grad = [&model](const Eigen::VectorXd& theta) {
        return model.grad_flat(theta);
    };

    const hmc::ChainResult result = hmc::run_chain(logp, grad, init.pack(), config);

    PosteriorSamples out;
    out.diagnostics = result.diagnostics;
    out.draws.reserve(result.draws.size());
    for (const Eigen::VectorXd& theta : result.draws) out.draws.push_back(model.unpack(theta));
    return out;
}

double PosteriorSummary::mean_at(const Cell& cell) const {
    const auto it = std::lower_bound(cells.begin(), cells.end(), cell);
    if (it == cells.end() || !(*it == cell)) throw ConfigError("cell not in summary");
    return mean[static_cast<std::size_t>(it - cells.begin())];
}

double PosteriorSummary::std_at(const Cell& cell) const {
    const auto it = std::lower_bound(cells.begin(), cells.end(), cell);
    if (it == cells.end() || !(*it == cell)) throw ConfigError("cell not in summary");
    return std[static_cast<std::size_t>(it - cells.begin())];
}

PosteriorSummary posterior_summary(const cpmf::Model& model, const PosteriorSamples& samples,
                                   const std::vector<Cell>& targets) {
    if (samples.draws.empty()) throw ConfigError("no posterior draws to summarize");

    PosteriorSummary out;
    out.cells = targets;
    std::sort(out.cells.begin(), out.cells.end());
    out.single_draw = samples.draws.size() == 1;
    out.mean.resize(out.cells.size());
    out.std.resize(out.cells.size());

    const double t = static_cast<double>(samples.draws.size());
    for (std::size_t i = 0; i < out.cells.size(); ++i) {
        const Cell& cell = out.cells[i];
        double sum = 0, sumsq = 0;
        for (const cpmf::CpmfParams& p : samples.draws) {
            const double value = model.predict_point(p, cell.model, cell.benchmark);
            sum += value;
            sumsq += value * value;
        }
        const double mean = sum / t;
        const double var = std::max(0.0, sumsq / t - mean * mean);
        out.mean[i] = mean;
        out.std[i] = out.single_draw ? 0.0 : std::sqrt(var);
    }
    return out;
}

EnsembleResult run_ensemble(const cpmf::Model& model, const hmc::ChainConfig& config,
                            int n_chains, int workers) {
    if (n_chains < 1) throw ConfigError("n_chains must be >= 1");
    if (workers <= 0) {
        workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
    }

    std::vector<PosteriorSamples> chains(static_cast<std::size_t>(n_chains));
    std::vector<std::string> failures(static_cast<std::size_t>(n_chains));

    for (int start = 0; start < n_chains; start += workers) {
        const int stop = std::min(n_chains, start + workers);
        std::vector<std::future<void>> batch;
        for (int i = start; i < stop; ++i) {
            batch.push_back(std::async(std::launch::async, [&, i] {
                hmc::ChainConfig chain_config = config;
                chain_config.seed = derive_seed(config.seed, "chain", static_cast<std::uint64_t>(i));
                try {
                    chains[static_cast<std::size_t>(i)] = run_cpmf_chain(model, chain_config);
                } catch (const Error& e) {
                    failures[static_cast<std::size_t>(i)] = e.what();
                }
            }));
        }
        for (auto& f : batch) f.get();
    }
    for (int i = 0; i < n_chains; ++i) {
        if (!failures[static_cast<std::size_t>(i)].empty()) {
            throw DivergenceError("chain " + std::to_string(i) + ": " +
                                  failures[static_cast<std::size_t>(i)]);
        }
    }

    EnsembleResult out;
    out.per_chain.reserve(chains.size());

    // per-cell mean prediction for each chain, for the spread diagnostic
    const long rows = model.data().matrix.rows();
    const long cols = model.data().matrix.cols();
    Eigen::MatrixXd mean_sum = Eigen::MatrixXd::Zero(rows, cols);
    Eigen::MatrixXd mean_sumsq = Eigen::MatrixXd::Zero(rows, cols);

    for (PosteriorSamples& chain : chains) {
        Eigen::MatrixXd chain_mean = Eigen::MatrixXd::Zero(rows, cols);
        for (const cpmf::CpmfParams& p : chain.draws) chain_mean += model.predict_all(p);
        chain_mean /= static_cast<double>(chain.draws.size());
        mean_sum += chain_mean;
        mean_sumsq += chain_mean.cwiseProduct(chain_mean);

        out.per_chain.push_back(chain.diagnostics);
        std::move(chain.draws.begin(), chain.draws.end(), std::back_inserter(out.merged.draws));
    }

    const double k = static_cast<double>(n_chains);
    const Eigen::MatrixXd variance =
        (mean_sumsq / k - (mean_sum / k).cwiseProduct(mean_sum / k)).cwiseMax(0.0);
    out.between_chain_rms = std::sqrt(variance.mean());

    out.merged.diagnostics.seed = config.seed;
    double accept = 0, step = 0;
    for (const hmc::ChainDiagnostics& d : out.per_chain) {
        accept += d.accept_rate;
        step += d.step_size;
        out.merged.diagnostics.divergences += d.divergences;
        out.merged.diagnostics.low_acceptance |= d.low_acceptance;
    }
    out.merged.diagnostics.accept_rate = accept / k;
    out.merged.diagnostics.step_size = step / k;
    return out;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path);

    const long m = static_cast<long>(ckpt.models.size());
    const long n = static_cast<long>(ckpt.benchmarks.size());
    const long d = ckpt.G.cols();
    const long latent = ckpt.hyper.D;

    out.write(kMagic, sizeof(kMagic));
    write_pod(out, kVersion);
    write_pod(out, m);
    write_pod(out, n);
    write_pod(out, d);
    write_pod(out, latent);
    write_pod(out, ckpt.mu);
    write_pod(out, ckpt.hyper.sigma_U);
    write_pod(out, ckpt.hyper.sigma_V);
    write_pod(out, ckpt.hyper.sigma_X);
    write_pod(out, ckpt.hyper.sigma_Y);
    write_pod(out, ckpt.hyper.sigma);
    write_pod(out, static_cast<std::uint8_t>(ckpt.hyper.center ? 1 : 0));
    write_pod(out, ckpt.seed);
    write_pod(out, static_cast<long>(ckpt.draws.size()));
    write_pod(out, ckpt.diagnostics.accept_rate);
    write_pod(out, ckpt.diagnostics.step_size);
    write_pod(out, ckpt.diagnostics.divergences);
    write_pod(out, static_cast<std::uint8_t>(ckpt.diagnostics.low_acceptance ? 1 : 0));
    write_pod(out, ckpt.diagnostics.seed);

    for (const std::string& id : ckpt.models) write_string(out, id);
    for (const std::string& id : ckpt.benchmarks) write_string(out, id);
    write_matrix(out, ckpt.G);
    write_matrix(out, ckpt.H);
    for (const cpmf::CpmfParams& p : ckpt.draws) {
        write_matrix(out, p.U);
        write_matrix(out, p.V);
        write_matrix(out, p.X);
        write_matrix(out, p.Y);
    }
    if (!out) throw ConfigError("failed while writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open " + path);

    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw ParseError(path + ": not a checkpoint file");
    }
    const auto version = read_pod<std::uint32_t>(in, path);
    if (version != kVersion) {
        throw ParseError(path + ": unsupported checkpoint version " + std::to_string(version));
    }

    Checkpoint ckpt;
    const auto m = read_pod<long>(in, path);
    const auto n = read_pod<long>(in, path);
    const auto d = read_pod<long>(in, path);
    const auto latent = read_pod<long>(in, path);
    if (m < 1 || n < 1 || d < 0 || latent < 1) throw ParseError(path + ": bad shape header");

    ckpt.mu = read_pod<double>(in, path);
    ckpt.hyper.D = static_cast<int>(latent);
    ckpt.hyper.sigma_U = read_pod<double>(in, path);
    ckpt.hyper.sigma_V = read_pod<double>(in, path);
    ckpt.hyper.sigma_X = read_pod<double>(in, path);
    ckpt.hyper.sigma_Y = read_pod<double>(in, path);
    ckpt.hyper.sigma = read_pod<double>(in, path);
    ckpt.hyper.center = read_pod<std::uint8_t>(in, path) != 0;
    ckpt.seed = read_pod<std::uint64_t>(in, path);
    const auto draw_count = read_pod<long>(in, path);
    if (draw_count < 0) throw ParseError(path + ": bad draw count");
    ckpt.diagnostics.accept_rate = read_pod<double>(in, path);
    ckpt.diagnostics.step_size = read_pod<double>(in, path);
    ckpt.diagnostics.divergences = read_pod<long>(in, path);
    ckpt.diagnostics.low_acceptance = read_pod<std::uint8_t>(in, path) != 0;
    ckpt.diagnostics.seed = read_pod<std::uint64_t>(in, path);

    ckpt.models.reserve(static_cast<std::size_t>(m));
    for (long i = 0; i < m; ++i) ckpt.models.push_back(read_string(in, path));
    ckpt.benchmarks.reserve(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) ckpt.benchmarks.push_back(read_string(in, path));
    ckpt.G = read_matrix(in, m, d, path);
    ckpt.H = read_matrix(in, n, d, path);
    ckpt.draws.reserve(static_cast<std::size_t>(draw_count));
    for (long t = 0; t < draw_count; ++t) {
        cpmf::CpmfParams p;
        p.mu = ckpt.mu;
        p.U = read_matrix(in, m, latent, path);
        p.V = read_matrix(in, n, latent, path);
        p.X = read_matrix(in, d, latent, path);
        p.Y = read_matrix(in, d, latent, path);
        ckpt.draws.push_back(std::move(p));
    }
    return ckpt;
}

CellEstimate estimate_cell(const Checkpoint& ckpt, const std::string& model_id,
                           const std::string& benchmark_id) {
    const auto mit = std::find(ckpt.models.begin(), ckpt.models.end(), model_id);
    if (mit == ckpt.models.end()) throw ConfigError("unknown model id: '" + model_id + "'");
    const auto bit = std::find(ckpt.benchmarks.begin(), ckpt.benchmarks.end(), benchmark_id);
    if (bit == ckpt.benchmarks.end()) {
        throw ConfigError("unknown benchmark id: '" + benchmark_id + "'");
    }
    if (ckpt.draws.empty()) throw ConfigError("checkpoint holds no draws");

    const long m = mit - ckpt.models.begin();
    const long n = bit - ckpt.benchmarks.begin();
    double sum = 0, sumsq = 0;
    for (const cpmf::CpmfParams& p : ckpt.draws) {
        const Eigen::VectorXd u_eff =
            p.U.row(m).transpose() + p.X.transpose() * ckpt.G.row(m).transpose();
        const Eigen::VectorXd v_eff =
            p.V.row(n).transpose() + p.Y.transpose() * ckpt.H.row(n).transpose();
        const double value = ckpt.mu + u_eff.dot(v_eff);
        sum += value;
        sumsq += value * value;
    }
    const double t = static_cast<double>(ckpt.draws.size());
    CellEstimate est;
    est.mean = sum / t;
    est.std = ckpt.draws.size() == 1
                  ? 0.0
                  : std::sqrt(std::max(0.0, sumsq / t - est.mean * est.mean));
    return est;
}

}  // namespace star::sampler
