#include "star/hmc.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "json.hpp"

namespace star::hmc {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Non-finite targets and sampler blow-ups surface as -inf so the
// transition machinery can reject them uniformly.
double safe_logp(const LogProbFn& logp, const Eigen::VectorXd& q) {
    double value;
    try {
        value = logp(q);
    } catch (const DivergenceError&) {
        return kNegInf;
    }
    return std::isfinite(value) ? value : kNegInf;
}

bool safe_grad(const GradFn& grad, const Eigen::VectorXd& q, Eigen::VectorXd& out) {
    try {
        out = grad(q);
    } catch (const DivergenceError&) {
        return false;
    }
    return out.allFinite();
}

// joint log density of (position, momentum) with identity mass
double joint(const LogProbFn& logp, const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
    const double lp = safe_logp(logp, q);
    if (lp == kNegInf) return kNegInf;
    return lp - 0.5 * p.squaredNorm();
}

// Hoffman & Gelman dual averaging with their published constants.
class DualAveraging {
public:
    DualAveraging(double initial_step, double target)
        : mu_(std::log(10.0 * initial_step)),
          log_eps_(std::log(initial_step)),
          target_(target) {}

    void update(double accept_stat) {
        ++t_;
        const double eta = 1.0 / (static_cast<double>(t_) + kT0);
        h_bar_ = (1.0 - eta) * h_bar_ + eta * (target_ - accept_stat);
        log_eps_ = mu_ - std::sqrt(static_cast<double>(t_)) / kGamma * h_bar_;
        const double w = std::pow(static_cast<double>(t_), -kKappa);
        log_eps_bar_ = w * log_eps_ + (1.0 - w) * log_eps_bar_;
    }

    double current() const { return std::exp(log_eps_); }
    double averaged() const { return t_ == 0 ? std::exp(log_eps_) : std::exp(log_eps_bar_); }

private:
    static constexpr double kGamma = 0.05;
    static constexpr double kT0 = 10.0;
    static constexpr double kKappa = 0.75;

    double mu_;
    double log_eps_;
    double log_eps_bar_ = 0.0;
    double h_bar_ = 0.0;
    double target_;
    long t_ = 0;
};

struct Transition {
    Eigen::VectorXd position;
    double accept_stat = 0;  // dual-averaging statistic in [0,1]
    bool divergent = false;
};

Transition static_transition(const LogProbFn& logp, const GradFn& grad,
                             const Eigen::VectorXd& q0, double step_size, int steps, Rng& rng) {
    Transition out;
    out.position = q0;

    Eigen::VectorXd p = rng.normal_vector(q0.size());
    const double h0 = joint(logp, q0, p);
    if (!std::isfinite(h0)) {
        out.divergent = true;
        return out;
    }

    Eigen::VectorXd q = q0;
    Eigen::VectorXd g;
    if (!safe_grad(grad, q, g)) {
        out.divergent = true;
        return out;
    }
    // velocity Verlet with a single gradient evaluation per step
    p += 0.5 * step_size * g;
    for (int i = 0; i < steps; ++i) {
        q += step_size * p;
        if (!safe_grad(grad, q, g)) {
            out.divergent = true;
            return out;
        }
        p += (i + 1 == steps ? 0.5 : 1.0) * step_size * g;
    }

    const double h1 = joint(logp, q, p);
    const double energy_error = h0 - h1;  // positive when energy grew
    if (!std::isfinite(h1) || std::abs(energy_error) > kDivergenceThreshold) {
        out.divergent = true;
        return out;
    }

    out.accept_stat = std::min(1.0, std::exp(h1 - h0));
    if (rng.uniform() < out.accept_stat) out.position = std::move(q);
    return out;
}

// Dynamic trajectories: tree doubling with slice sampling and the
// no-U-turn termination criterion.
struct Tree {
    Eigen::VectorXd q_minus, p_minus, q_plus, p_plus;
    Eigen::VectorXd proposal;
    long n_accept = 0;  // slice-eligible states in the subtree
    bool keep_going = true;
    bool divergent = false;
    double alpha_sum = 0;
    long n_alpha = 0;
};

bool no_u_turn(const Eigen::VectorXd& q_minus, const Eigen::VectorXd& q_plus,
               const Eigen::VectorXd& p_minus, const Eigen::VectorXd& p_plus) {
    const Eigen::VectorXd span = q_plus - q_minus;
    return span.dot(p_minus) >= 0 && span.dot(p_plus) >= 0;
}

Tree build_tree(const LogProbFn& logp, const GradFn& grad, const Eigen::VectorXd& q,
                const Eigen::VectorXd& p, double log_slice, int direction, int depth,
                double step_size, double h0, Rng& rng) {
    if (depth == 0) {
        Tree leaf;
        Eigen::VectorXd q1 = q;
        Eigen::VectorXd p1 = p;
        Eigen::VectorXd g;
        bool ok = safe_grad(grad, q1, g);
        if (ok) {
            const double eps = step_size * direction;
            p1 += 0.5 * eps * g;
            q1 += eps * p1;
            ok = safe_grad(grad, q1, g);
            if (ok) p1 += 0.5 * eps * g;
        }
        const double h1 = ok ? joint(logp, q1, p1) : kNegInf;

        leaf.q_minus = q1;
        leaf.p_minus = p1;
        leaf.q_plus = q1;
        leaf.p_plus = p1;
        leaf.proposal = q1;
        leaf.n_accept = log_slice <= h1 ? 1 : 0;
        leaf.divergent = !(log_slice < h1 + kDivergenceThreshold);
        leaf.keep_going = !leaf.divergent;
        leaf.alpha_sum = std::min(1.0, std::exp(h1 - h0));
        if (!std::isfinite(leaf.alpha_sum)) leaf.alpha_sum = 0;
        leaf.n_alpha = 1;
        return leaf;
    }

    Tree first = build_tree(logp, grad, q, p, log_slice, direction, depth - 1, step_size, h0, rng);
    if (!first.keep_going) return first;

    const Eigen::VectorXd& edge_q = direction == -1 ? first.q_minus : first.q_plus;
    const Eigen::VectorXd& edge_p = direction == -1 ? first.p_minus : first.p_plus;
    Tree second = build_tree(logp, grad, edge_q, edge_p, log_slice, direction, depth - 1,
                             step_size, h0, rng);

    Tree merged;
    merged.q_minus = direction == -1 ? second.q_minus : first.q_minus;
    merged.p_minus = direction == -1 ? second.p_minus : first.p_minus;
    merged.q_plus = direction == -1 ? first.q_plus : second.q_plus;
    merged.p_plus = direction == -1 ? first.p_plus : second.p_plus;
    merged.n_accept = first.n_accept + second.n_accept;
    merged.proposal = first.proposal;
    if (second.n_accept > 0 &&
        rng.uniform() < static_cast<double>(second.n_accept) /
                            static_cast<double>(merged.n_accept)) {
        merged.proposal = second.proposal;
    }
    merged.divergent = first.divergent || second.divergent;
    merged.keep_going = second.keep_going && !merged.divergent &&
                        no_u_turn(merged.q_minus, merged.q_plus, merged.p_minus, merged.p_plus);
    merged.alpha_sum = first.alpha_sum + second.alpha_sum;
    merged.n_alpha = first.n_alpha + second.n_alpha;
    return merged;
}

Transition dynamic_transition(const LogProbFn& logp, const GradFn& grad,
                              const Eigen::VectorXd& q0, double step_size, int max_depth,
                              Rng& rng) {
    Transition out;
    out.position = q0;

    const Eigen::VectorXd p0 = rng.normal_vector(q0.size());
    const double h0 = joint(logp, q0, p0);
    if (!std::isfinite(h0)) {
        out.divergent = true;
        return out;
    }
    // log of the slice variable: u ~ U(0, exp(h0))
    const double log_slice = h0 + std::log(rng.uniform());

    Eigen::VectorXd q_minus = q0, q_plus = q0, p_minus = p0, p_plus = p0;
    long n_kept = 1;
    double alpha_sum = 0;
    long n_alpha = 0;

    for (int depth = 0; depth < max_depth; ++depth) {
        const int direction = rng.uniform() < 0.5 ? -1 : 1;
        Tree tree = direction == -1
                        ? build_tree(logp, grad, q_minus, p_minus, log_slice, direction, depth,
                                     step_size, h0, rng)
                        : build_tree(logp, grad, q_plus, p_plus, log_slice, direction, depth,
                                     step_size, h0, rng);
        if (direction == -1) {
            q_minus = tree.q_minus;
            p_minus = tree.p_minus;
        } else {
            q_plus = tree.q_plus;
            p_plus = tree.p_plus;
        }

        alpha_sum += tree.alpha_sum;
        n_alpha += tree.n_alpha;
        if (tree.divergent) out.divergent = true;

        if (tree.keep_going && tree.n_accept > 0 &&
            rng.uniform() < static_cast<double>(tree.n_accept) / static_cast<double>(n_kept)) {
            out.position = tree.proposal;
        }
        n_kept += tree.n_accept;
        if (!tree.keep_going || !no_u_turn(q_minus, q_plus, p_minus, p_plus)) break;
    }

    out.accept_stat = n_alpha > 0 ? alpha_sum / static_cast<double>(n_alpha) : 0.0;
    return out;
}

}  // namespace

void ChainConfig::validate() const {
    if (warmup < 0) throw ConfigError("warmup must be >= 0");
    if (samples < 1) throw ConfigError("samples must be >= 1");
    if (!dynamic && leapfrog_steps < 1) throw ConfigError("leapfrog_steps must be >= 1");
    if (dynamic && max_tree_depth < 1) throw ConfigError("max_tree_depth must be >= 1");
    if (!(target_accept > 0 && target_accept < 1)) {
        throw ConfigError("target_accept must lie in (0,1)");
    }
    if (init_step_size < 0) throw ConfigError("init_step_size must be >= 0");
}

std::string ChainDiagnostics::to_json() const {
    nlohmann::json doc;
    doc["accept_rate"] = accept_rate;
    doc["step_size"] = step_size;
    doc["divergences"] = divergences;
    doc["low_acceptance"] = low_acceptance;
    doc["seed"] = seed;
    return doc.dump();
}

void leapfrog(const GradFn& grad, Eigen::VectorXd& position, Eigen::VectorXd& momentum,
              double step_size, int steps) {
    momentum += 0.5 * step_size * grad(position);
    for (int i = 0; i < steps; ++i) {
        position += step_size * momentum;
        momentum += (i + 1 == steps ? 0.5 : 1.0) * step_size * grad(position);
    }
}

double find_reasonable_step_size(const LogProbFn& logp, const GradFn& grad,
                                 const Eigen::VectorXd& position, Rng& rng) {
    double eps = 1.0;
    const Eigen::VectorXd p0 = rng.normal_vector(position.size());
    const double h0 = joint(logp, position, p0);
    if (!std::isfinite(h0)) {
        throw DivergenceError("initial point has non-finite energy");
    }

    auto one_step_error = [&](double step) {
        Eigen::VectorXd q = position;
        Eigen::VectorXd p = p0;
        Eigen::VectorXd g;
        if (!safe_grad(grad, q, g)) return kNegInf;
        p += 0.5 * step * g;
        q += step * p;
        if (!safe_grad(grad, q, g)) return kNegInf;
        p += 0.5 * step * g;
        return joint(logp, q, p) - h0;
    };

    double log_ratio = one_step_error(eps);
    const double direction = log_ratio > std::log(0.5) ? 1.0 : -1.0;
    for (int iter = 0; iter < 100; ++iter) {
        if (direction * log_ratio <= -direction * std::log(2.0)) break;
        eps *= direction > 0 ? 2.0 : 0.5;
        if (eps > 1e7 || eps < 1e-10) {
            throw DivergenceError("step size search failed to bracket an acceptable value");
        }
        log_ratio = one_step_error(eps);
    }
    return eps;
}

ChainResult run_chain(const LogProbFn& logp, const GradFn& grad, const Eigen::VectorXd& init,
                      const ChainConfig& config) {
    config.validate();
    if (safe_logp(logp, init) == kNegInf) {
        throw DivergenceError("initial point has non-finite log density");
    }

    Rng rng(config.seed);
    double step_size = config.init_step_size > 0
                           ? config.init_step_size
                           : find_reasonable_step_size(logp, grad, init, rng);
    DualAveraging adapt(step_size, config.target_accept);

    ChainResult result;
    result.draws.reserve(static_cast<std::size_t>(config.samples));
    result.diagnostics.seed = config.seed;

    Eigen::VectorXd q = init;
    long consecutive_divergences = 0;
    double accept_sum = 0;
    const int total = config.warmup + config.samples;

    for (int iter = 0; iter < total; ++iter) {
        const bool warming_up = iter < config.warmup;
        const double eps = warming_up ? adapt.current() : step_size;

        Transition t = config.dynamic
                           ? dynamic_transition(logp, grad, q, eps, config.max_tree_depth, rng)
                           : static_transition(logp, grad, q, eps, config.leapfrog_steps, rng);
        q = t.position;

        if (t.divergent) {
            ++result.diagnostics.divergences;
            if (++consecutive_divergences >= 50) {
                std::ostringstream msg;
                msg << "chain diverged " << consecutive_divergences
                    << " transitions in a row (step_size=" << eps << ", iteration=" << iter
                    << ", seed=" << config.seed << ")";
                throw DivergenceError(msg.str());
            }
        } else {
            consecutive_divergences = 0;
        }

        if (warming_up) {
            adapt.update(t.divergent ? 0.0 : t.accept_stat);
            if (iter + 1 == config.warmup) step_size = adapt.averaged();
        } else {
            accept_sum += t.divergent ? 0.0 : t.accept_stat;
            result.draws.push_back(q);
        }
    }

    result.diagnostics.step_size = step_size;
    result.diagnostics.accept_rate = accept_sum / static_cast<double>(config.samples);
    result.diagnostics.low_acceptance = result.diagnostics.accept_rate < 0.1;
    return result;
}

}  // namespace star::hmc
