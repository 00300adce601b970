#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "doctest.h"
#include "star/hmc.hpp"

using star::ConfigError;
using star::DivergenceError;
using namespace star::hmc;

namespace {

const LogProbFn std_normal_lp = [](const Eigen::VectorXd& q) { return -0.5 * q.squaredNorm(); };
const GradFn std_normal_grad = [](const Eigen::VectorXd& q) { return (-q).eval(); };

Eigen::VectorXd scalar(double x) {
    Eigen::VectorXd v(1);
    v[0] = x;
    return v;
}

double draw_mean(const std::vector<Eigen::VectorXd>& draws, int coord = 0) {
    double sum = 0;
    for (const Eigen::VectorXd& q : draws) sum += q[coord];
    return sum / static_cast<double>(draws.size());
}

double draw_cov(const std::vector<Eigen::VectorXd>& draws, int a, int b) {
    const double ma = draw_mean(draws, a);
    const double mb = draw_mean(draws, b);
    double sum = 0;
    for (const Eigen::VectorXd& q : draws) sum += (q[a] - ma) * (q[b] - mb);
    return sum / static_cast<double>(draws.size());
}

}  // namespace

TEST_CASE("chain config validation") {
    ChainConfig config;
    CHECK_NOTHROW(config.validate());

    config = ChainConfig{};
    config.warmup = -1;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = ChainConfig{};
    config.samples = 0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = ChainConfig{};
    config.leapfrog_steps = 0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = ChainConfig{};
    config.dynamic = true;
    config.leapfrog_steps = 0;  // ignored in dynamic mode
    CHECK_NOTHROW(config.validate());
    config.max_tree_depth = 0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = ChainConfig{};
    config.target_accept = 1.0;
    CHECK_THROWS_AS(config.validate(), ConfigError);
    config = ChainConfig{};
    config.init_step_size = -0.1;
    CHECK_THROWS_AS(config.validate(), ConfigError);
}

TEST_CASE("leapfrog is time reversible") {
    const GradFn grad = [](const Eigen::VectorXd& q) {
        Eigen::VectorXd g(2);
        g[0] = -(q[0] + 0.5 * q[1]);
        g[1] = -(q[1] + 0.5 * q[0]);
        return g;
    };
    Eigen::VectorXd q(2), p(2);
    q << 0.3, -0.4;
    p << 0.7, 0.2;
    const Eigen::VectorXd q0 = q;
    const Eigen::VectorXd p0 = p;

    leapfrog(grad, q, p, 0.1, 20);
    CHECK((q - q0).norm() > 0.01);  // actually moved
    p = -p;
    leapfrog(grad, q, p, 0.1, 20);
    p = -p;
    CHECK((q - q0).norm() < 1e-8);
    CHECK((p - p0).norm() < 1e-8);
}

TEST_CASE("single step energy error shrinks at third order") {
    // quartic well keeps the leading error term alive
    const GradFn grad = [](const Eigen::VectorXd& q) {
        return scalar(-(q[0] + q[0] * q[0] * q[0]));
    };
    const auto hamiltonian = [](const Eigen::VectorXd& q, const Eigen::VectorXd& p) {
        const double x = q[0];
        return 0.5 * x * x + 0.25 * x * x * x * x + 0.5 * p.squaredNorm();
    };

    const auto energy_error = [&](double step) {
        Eigen::VectorXd q = scalar(0.3);
        Eigen::VectorXd p = scalar(0.7);
        const double h0 = hamiltonian(q, p);
        leapfrog(grad, q, p, step, 1);
        return std::abs(hamiltonian(q, p) - h0);
    };

    const double coarse = energy_error(0.1);
    const double fine = energy_error(0.05);
    const double finer = energy_error(0.025);
    CHECK(coarse / fine > 6.0);
    CHECK(coarse / fine < 10.0);
    CHECK(fine / finer > 6.0);
    CHECK(fine / finer < 10.0);
}

TEST_CASE("step size search brackets a workable value") {
    Rng rng(5);
    const double eps = find_reasonable_step_size(std_normal_lp, std_normal_grad, scalar(0.0), rng);
    CHECK(eps > 1e-3);
    CHECK(eps < 16.0);

    const LogProbFn bad = [](const Eigen::VectorXd&) {
        return std::numeric_limits<double>::quiet_NaN();
    };
    Rng rng2(5);
    CHECK_THROWS_AS(find_reasonable_step_size(bad, std_normal_grad, scalar(0.0), rng2),
                    DivergenceError);
}

TEST_CASE("standard normal moments are recovered") {
    ChainConfig config;
    config.warmup = 500;
    config.samples = 2000;
    config.seed = 42;

    const ChainResult result = run_chain(std_normal_lp, std_normal_grad, scalar(0.5), config);
    REQUIRE(result.draws.size() == 2000);
    CHECK(std::abs(draw_mean(result.draws)) < 0.1);
    CHECK(draw_cov(result.draws, 0, 0) > 0.8);
    CHECK(draw_cov(result.draws, 0, 0) < 1.2);
    CHECK(result.diagnostics.accept_rate > 0.5);
    CHECK(result.diagnostics.accept_rate <= 1.0);
    CHECK(result.diagnostics.step_size > 0);
    CHECK_FALSE(result.diagnostics.low_acceptance);
    CHECK(result.diagnostics.seed == 42);
}

TEST_CASE("a shifted quadratic centers on its mode") {
    const LogProbFn lp = [](const Eigen::VectorXd& q) {
        return -0.5 * (q[0] - 3.0) * (q[0] - 3.0);
    };
    const GradFn grad = [](const Eigen::VectorXd& q) { return scalar(-(q[0] - 3.0)); };

    ChainConfig config;
    config.warmup = 500;
    config.samples = 2000;
    config.seed = 17;
    const ChainResult result = run_chain(lp, grad, scalar(0.0), config);
    CHECK(std::abs(draw_mean(result.draws) - 3.0) < 0.1);
}

TEST_CASE("correlated gaussian covariance is recovered") {
    // covariance [[1, .5], [.5, 1]], precision (1/.75) [[1, -.5], [-.5, 1]]
    const LogProbFn lp = [](const Eigen::VectorXd& q) {
        return -0.5 / 0.75 * (q[0] * q[0] - q[0] * q[1] + q[1] * q[1]);
    };
    const GradFn grad = [](const Eigen::VectorXd& q) {
        Eigen::VectorXd g(2);
        g[0] = -(q[0] - 0.5 * q[1]) / 0.75;
        g[1] = -(q[1] - 0.5 * q[0]) / 0.75;
        return g;
    };

    ChainConfig config;
    config.warmup = 500;
    config.samples = 5000;
    config.seed = 7;
    Eigen::VectorXd init(2);
    init << 0.2, -0.2;
    const ChainResult result = run_chain(lp, grad, init, config);

    CHECK(std::abs(draw_cov(result.draws, 0, 0) - 1.0) < 0.15);
    CHECK(std::abs(draw_cov(result.draws, 1, 1) - 1.0) < 0.15);
    CHECK(std::abs(draw_cov(result.draws, 0, 1) - 0.5) < 0.1);
    CHECK(std::abs(draw_mean(result.draws, 0)) < 0.1);
    CHECK(std::abs(draw_mean(result.draws, 1)) < 0.1);
}

TEST_CASE("chains are bit identical for a fixed seed") {
    ChainConfig config;
    config.warmup = 50;
    config.samples = 40;
    config.seed = 123;

    const ChainResult a = run_chain(std_normal_lp, std_normal_grad, scalar(0.1), config);
    const ChainResult b = run_chain(std_normal_lp, std_normal_grad, scalar(0.1), config);
    REQUIRE(a.draws.size() == b.draws.size());
    for (std::size_t i = 0; i < a.draws.size(); ++i) CHECK(a.draws[i] == b.draws[i]);
    CHECK(a.diagnostics.accept_rate == b.diagnostics.accept_rate);
    CHECK(a.diagnostics.step_size == b.diagnostics.step_size);

    config.seed = 124;
    const ChainResult c = run_chain(std_normal_lp, std_normal_grad, scalar(0.1), config);
    bool any_differ = false;
    for (std::size_t i = 0; i < a.draws.size(); ++i) {
        if (a.draws[i] != c.draws[i]) any_differ = true;
    }
    CHECK(any_differ);
}

TEST_CASE("minimal configurations still produce draws") {
    ChainConfig config;
    config.warmup = 0;
    config.samples = 1;
    config.init_step_size = 0.5;
    config.seed = 3;
    const ChainResult result = run_chain(std_normal_lp, std_normal_grad, scalar(0.2), config);
    CHECK(result.draws.size() == 1);
    CHECK(result.diagnostics.step_size == 0.5);

    config.init_step_size = 0;  // force the automatic search
    const ChainResult searched = run_chain(std_normal_lp, std_normal_grad, scalar(0.2), config);
    CHECK(searched.draws.size() == 1);
    CHECK(searched.diagnostics.step_size > 0);
}

TEST_CASE("dynamic trajectories recover the same moments") {
    ChainConfig config;
    config.warmup = 500;
    config.samples = 2000;
    config.dynamic = true;
    config.seed = 99;

    const ChainResult result = run_chain(std_normal_lp, std_normal_grad, scalar(0.5), config);
    REQUIRE(result.draws.size() == 2000);
    CHECK(std::abs(draw_mean(result.draws)) < 0.1);
    CHECK(draw_cov(result.draws, 0, 0) > 0.8);
    CHECK(draw_cov(result.draws, 0, 0) < 1.2);

    const ChainResult again = run_chain(std_normal_lp, std_normal_grad, scalar(0.5), config);
    REQUIRE(again.draws.size() == result.draws.size());
    for (std::size_t i = 0; i < result.draws.size(); ++i) CHECK(result.draws[i] == again.draws[i]);
}

TEST_CASE("a non-finite starting point is rejected up front") {
    const LogProbFn lp = [](const Eigen::VectorXd& q) {
        return q[0] > 0 ? -0.5 * q.squaredNorm() : std::numeric_limits<double>::quiet_NaN();
    };
    ChainConfig config;
    config.seed = 1;
    CHECK_THROWS_AS(run_chain(lp, std_normal_grad, scalar(-1.0), config), DivergenceError);
}

TEST_CASE("a chain stuck on divergences escalates to an error") {
    // finite only in a vanishing neighborhood of the origin
    const LogProbFn lp = [](const Eigen::VectorXd& q) {
        return q.norm() < 1e-6 ? 0.0 : -std::numeric_limits<double>::infinity();
    };
    const GradFn grad = [](const Eigen::VectorXd& q) { return (0.0 * q).eval(); };

    ChainConfig config;
    config.warmup = 0;
    config.samples = 100;
    config.init_step_size = 1.0;
    config.seed = 5;
    try {
        run_chain(lp, grad, scalar(0.0), config);
        FAIL("expected a divergence error");
    } catch (const DivergenceError& e) {
        CHECK(std::string(e.what()).find("in a row") != std::string::npos);
    }
}

TEST_CASE("bounded energy cliffs count as divergences without escalating") {
    const LogProbFn lp = [](const Eigen::VectorXd& q) {
        return std::abs(q[0]) <= 1.0 ? 0.0 : -2000.0;
    };
    const GradFn grad = [](const Eigen::VectorXd& q) { return (0.0 * q).eval(); };

    ChainConfig config;
    config.warmup = 0;
    config.samples = 30;
    config.init_step_size = 3.0;
    config.seed = 11;
    const ChainResult result = run_chain(lp, grad, scalar(0.0), config);
    CHECK(result.draws.size() == 30);
    CHECK(result.diagnostics.divergences >= 25);
    CHECK(result.diagnostics.accept_rate < 0.1);
    CHECK(result.diagnostics.low_acceptance);
}

TEST_CASE("low acceptance without divergences sets only the flag") {
    // cliff of 500 is rejected outright but stays under the divergence bar
    const LogProbFn lp = [](const Eigen::VectorXd& q) {
        return std::abs(q[0]) <= 1.0 ? 0.0 : -500.0;
    };
    const GradFn grad = [](const Eigen::VectorXd& q) { return (0.0 * q).eval(); };

    ChainConfig config;
    config.warmup = 0;
    config.samples = 50;
    config.init_step_size = 3.0;
    config.seed = 11;
    const ChainResult result = run_chain(lp, grad, scalar(0.0), config);
    CHECK(result.diagnostics.divergences == 0);
    CHECK(result.diagnostics.accept_rate < 0.1);
    CHECK(result.diagnostics.low_acceptance);
}

TEST_CASE("diagnostics serialize to json") {
    ChainDiagnostics diag;
    diag.accept_rate = 0.875;
    diag.step_size = 0.25;
    diag.divergences = 2;
    diag.low_acceptance = false;
    diag.seed = 7;
    const std::string text = diag.to_json();
    CHECK(text.find("\"accept_rate\":0.875") != std::string::npos);
    CHECK(text.find("\"divergences\":2") != std::string::npos);
    CHECK(text.find("\"seed\":7") != std::string::npos);
}
