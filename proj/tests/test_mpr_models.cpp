#include "doctest.h"

#include "clarkhedge/mpr_models.hpp"

#include <cmath>
#include <random>
#include <vector>

using namespace clarkhedge;

namespace {

OrnsteinUhlenbeckMarketPriceOfRisk make_ou(double alpha, double beta, double v, double u0, DriftConstantMode mode)
{
    OrnsteinUhlenbeckParams p;
    p.alpha = alpha;
    p.mean_reversion = beta;
    p.vol = v;
    p.u0 = u0;
    p.mode = mode;
    return OrnsteinUhlenbeckMarketPriceOfRisk(p);
}

std::vector<double> random_path(std::size_t nodes, unsigned seed, double scale)
{
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd(0.0, scale);
    std::vector<double> w(nodes, 0.0);
    for (std::size_t i = 1; i < nodes; ++i) w[i] = w[i - 1] + nd(gen);
    return w;
}

} // namespace

TEST_CASE("constant model returns its theta on any path")
{
    const ConstantMarketPriceOfRisk m({0.3});
    const TimeGrid grid(1.0, 16);
    const auto w = random_path(grid.nodes(), 1, 0.25);
    for (std::size_t i = 0; i < grid.nodes(); ++i) {
        const auto th = m.evaluate_theta(grid, i, w);
        REQUIRE(th.size() == 1);
        CHECK(th[0] == 0.3);
    }
    CHECK(m.evaluate_theta(grid, 0.5, w)[0] == 0.3);
}

TEST_CASE("OU default drift constant on the zero path is the deterministic mean curve")
{
    const double alpha = 0.05, beta = 1.5, v = 0.2, u0 = 0.1;
    const auto m = make_ou(alpha, beta, v, u0, DriftConstantMode::paper);
    const TimeGrid grid(2.0, 64);
    const std::vector<double> w(grid.nodes(), 0.0);
    const double c = alpha / beta + v * v / (2.0 * beta);
    for (std::size_t i = 0; i < grid.nodes(); ++i) {
        const double t = grid.time(i);
        const double expected = std::exp(-beta * t) * u0 + c * (1.0 - std::exp(-beta * t));
        CHECK(m.evaluate_theta(grid, i, w)[0] == doctest::Approx(expected).epsilon(1e-14));
    }
}

TEST_CASE("OU standard mode on a linear path converges to the closed form")
{
    // U(t) = v (1 - e^{-beta t}) / beta for alpha = 0, U(0) = 0, w(u) = u
    const double beta = 1.0, v = 0.2, horizon = 1.0;
    const auto m = make_ou(0.0, beta, v, 0.0, DriftConstantMode::standard);
    const double exact = v * (1.0 - std::exp(-beta * horizon)) / beta;
    double prev_err = 0.0;
    for (std::size_t steps : {256u, 512u, 1024u, 2048u, 4096u}) {
        const TimeGrid grid(horizon, steps);
        std::vector<double> w(grid.nodes());
        for (std::size_t i = 0; i < grid.nodes(); ++i) w[i] = grid.time(i);
        const double u = m.evaluate_theta(grid, steps, w)[0];
        const double err = std::abs(u - exact);
        // left-rectangle bound: v beta dt/2 int |d/du e^{beta(u-t)} u| du
        CHECK(err <= v * beta * 0.5 * grid.dt() * horizon * (1.0 + beta * horizon));
        if (prev_err > 0.0) CHECK(err < 0.6 * prev_err);
        prev_err = err;
    }
}

TEST_CASE("theta at a node ignores later samples")
{
    const auto m = make_ou(0.0, 1.0, 0.2, 0.1, DriftConstantMode::paper);
    const TimeGrid grid(1.0, 32);
    auto w = random_path(grid.nodes(), 5, 0.2);
    const auto before = m.evaluate_theta(grid, std::size_t{10}, w);
    for (std::size_t i = 11; i < grid.nodes(); ++i) w[i] += 3.0;
    CHECK(m.evaluate_theta(grid, std::size_t{10}, w) == before);
}

TEST_CASE("derivative kernels")
{
    const TimeGrid grid(1.0, 20);

    SUBCASE("constant model has an empty kernel")
    {
        const ConstantMarketPriceOfRisk m({0.3, -0.1});
        const auto k = m.derivative_kernel(grid, 7);
        CHECK(k.empty());
        const std::vector<double> gamma(8 * 2, 1.7);
        const auto out = apply_kernel(k, gamma);
        CHECK(out == std::vector<double>{0.0, 0.0});
    }

    SUBCASE("OU kernel: atom (t, v) and density -v beta e^{beta(s-t)}")
    {
        const double beta = 1.3, v = 0.2;
        const auto m = make_ou(0.0, beta, v, 0.0, DriftConstantMode::paper);
        const std::size_t node = 12;
        const auto k = m.derivative_kernel(grid, node);
        REQUIRE(k.atoms().size() == 1);
        CHECK(k.atoms()[0].node == node);
        CHECK(k.atoms()[0].time == grid.time(node));
        CHECK(k.atoms()[0].weight[0] == doctest::Approx(v));
        REQUIRE(k.density().size() == node);
        for (std::size_t j = 0; j < node; ++j) {
            const double expected = -v * beta * std::exp(beta * (grid.time(j) - grid.time(node)));
            CHECK(k.density()[j] == doctest::Approx(expected).epsilon(1e-14));
        }
    }

    SUBCASE("OU kernel at t = 0 is a single atom with no density")
    {
        const auto m = make_ou(0.0, 1.0, 0.2, 0.0, DriftConstantMode::paper);
        const auto k = m.derivative_kernel(grid, 0);
        REQUIRE(k.atoms().size() == 1);
        CHECK(k.atoms()[0].weight[0] == doctest::Approx(0.2));
        double mass = 0.0;
        for (double d : k.density()) mass += d;
        CHECK(mass == 0.0);
    }
}

TEST_CASE("apply_kernel")
{
    const double beta = 1.0, v = 0.2;
    const auto m = make_ou(0.0, beta, v, 0.0, DriftConstantMode::paper);

    SUBCASE("zero gamma gives zero")
    {
        const TimeGrid grid(1.0, 16);
        const auto k = m.derivative_kernel(grid, 16);
        const std::vector<double> gamma(17, 0.0);
        CHECK(apply_kernel(k, gamma)[0] == 0.0);
    }

    SUBCASE("constant gamma approaches v c e^{-beta t}")
    {
        const double c = 0.7;
        double prev_err = 0.0;
        for (std::size_t steps : {64u, 128u, 256u, 512u}) {
            const TimeGrid grid(1.0, steps);
            const auto k = m.derivative_kernel(grid, steps);
            const std::vector<double> gamma(steps + 1, c);
            const double exact = v * c * std::exp(-beta * 1.0);
            const double err = std::abs(apply_kernel(k, gamma)[0] - exact);
            CHECK(err <= v * beta * c * grid.dt());
            if (prev_err > 0.0) CHECK(err < 0.6 * prev_err);
            prev_err = err;
        }
    }

    SUBCASE("gamma must cover the kernel interval")
    {
        const TimeGrid grid(1.0, 16);
        const auto k = m.derivative_kernel(grid, 8);
        const std::vector<double> short_gamma(5, 1.0);
        CHECK_THROWS_AS(apply_kernel(k, short_gamma), std::domain_error);
    }
}

TEST_CASE("variation bound")
{
    CHECK(ConstantMarketPriceOfRisk({0.3}).variation_bound(1.0) == 0.0);

    const auto m = make_ou(0.0, 1.0, 0.2, 0.0, DriftConstantMode::paper);
    const double expected = 0.2 + 0.2 * (1.0 - std::exp(-1.0));
    CHECK(m.variation_bound(1.0) == doctest::Approx(expected).epsilon(1e-14));
    CHECK(expected == doctest::Approx(0.3264).epsilon(1e-4));

    // atom plus grid-summed |density| approaches the analytic value
    const TimeGrid grid(1.0, 4096);
    const auto k = m.derivative_kernel(grid, 4096);
    CHECK(k.total_variation() == doctest::Approx(expected).epsilon(1e-3));
    CHECK(k.total_variation() <= expected + 1e-12);

    CHECK(m.variation_bound(1e-12) == doctest::Approx(0.2).epsilon(1e-9));
}

TEST_CASE("Frechet consistency: theta(w+h) - theta(w) equals the kernel applied to h")
{
    const auto m = make_ou(0.1, 0.8, 0.3, -0.2, DriftConstantMode::paper);
    const ConstantMarketPriceOfRisk c({0.4});
    const TimeGrid grid(1.5, 128);
    for (unsigned seed = 1; seed <= 10; ++seed) {
        const auto w = random_path(grid.nodes(), seed, 0.1);
        const auto h = random_path(grid.nodes(), 100 + seed, 0.3);
        std::vector<double> wh(w.size());
        for (std::size_t i = 0; i < w.size(); ++i) wh[i] = w[i] + h[i];
        for (std::size_t node : {0u, 1u, 17u, 64u, 128u}) {
            const std::span<const double> hs(h.data(), node + 1);
            const double lin = apply_kernel(m.derivative_kernel(grid, node), hs)[0];
            const double diff = m.evaluate_theta(grid, node, wh)[0] - m.evaluate_theta(grid, node, w)[0];
            CHECK(std::abs(diff - lin) <= 1e-12);
            const double lin_c = apply_kernel(c.derivative_kernel(grid, node), hs)[0];
            CHECK(c.evaluate_theta(grid, node, wh)[0] - c.evaluate_theta(grid, node, w)[0] == lin_c);
        }
    }
}

TEST_CASE("model parameter validation")
{
    CHECK_THROWS_AS(ConstantMarketPriceOfRisk({}), std::invalid_argument);
    CHECK_THROWS_AS(ConstantMarketPriceOfRisk({std::nan("")}), std::invalid_argument);
    CHECK_THROWS_AS(make_ou(0.0, 0.0, 0.2, 0.0, DriftConstantMode::paper), std::invalid_argument);
    CHECK_THROWS_AS(make_ou(0.0, 1.0, -0.2, 0.0, DriftConstantMode::paper), std::invalid_argument);
    CHECK_THROWS_AS(drift_constant_mode_from_string("other"), std::invalid_argument);
    CHECK(drift_constant_mode_from_string("standard") == DriftConstantMode::standard);
    CHECK(make_ou(0.3, 2.0, 0.2, 0.0, DriftConstantMode::standard).drift_constant() == doctest::Approx(0.15));
    CHECK(make_ou(0.3, 2.0, 0.2, 0.0, DriftConstantMode::paper).drift_constant() == doctest::Approx(0.16));
}

TEST_CASE("time grid")
{
    const TimeGrid grid(2.0, 8);
    CHECK(grid.time(8) == 2.0);
    CHECK(grid.node_at(0.5) == 2);
    CHECK_THROWS_AS(grid.node_at(0.3), std::domain_error);
    CHECK_THROWS_AS(TimeGrid(0.0, 4), std::invalid_argument);
    CHECK_THROWS_AS(TimeGrid(1.0, 0), std::invalid_argument);
}
