#include "doctest.h"

#include "clarkhedge/payoffs.hpp"

#include <cmath>
#include <random>

using namespace clarkhedge;

namespace {

struct Sample {
    std::vector<double> z;
    std::vector<double> w;
};

Sample random_sample(const TimeGrid& grid, std::size_t n, unsigned seed)
{
    std::mt19937_64 gen(seed);
    std::normal_distribution<double> nd(0.0, 0.3);
    Sample s;
    s.z.resize(grid.nodes());
    s.w.resize(grid.nodes() * n);
    for (auto& x : s.z) x = std::exp(nd(gen));
    for (auto& x : s.w) x = nd(gen);
    return s;
}

double remainder(const Payoff& L, const Sample& y, const Sample& d, double eps, const TimeGrid& grid)
{
    Sample shifted = y;
    for (std::size_t i = 0; i < y.z.size(); ++i) shifted.z[i] += eps * d.z[i];
    for (std::size_t i = 0; i < y.w.size(); ++i) shifted.w[i] += eps * d.w[i];
    const auto mu = L.derivative_measure(y.z, y.w, grid);
    return std::abs(L.evaluate(shifted.z, shifted.w, grid) - L.evaluate(y.z, y.w, grid) -
                    eps * pair_measure(mu, d.z, d.w, grid));
}

Polynomial poly1(std::vector<Monomial> terms)
{
    return Polynomial(1, std::move(terms));
}

} // namespace

TEST_CASE("payoff values")
{
    const TimeGrid grid(1.0, 4);

    SUBCASE("affine terminal")
    {
        const auto L = Payoff::affine_terminal(1, 2.0, 3.0);
        const std::vector<double> z{1.0, 1.1, 0.9, 1.3, 1.0};
        const std::vector<double> w(5, 0.0);
        CHECK(L.evaluate(z, w, grid) == 5.0);
    }

    SUBCASE("terminal square")
    {
        const auto L = Payoff::terminal(Polynomial(2, {{1.0, {2, 0}}}));
        const std::vector<double> z(5, 1.0);
        std::vector<double> w(10, 0.0);
        w[8] = 0.5;
        w[9] = -7.0;
        CHECK(L.evaluate(z, w, grid) == 0.25);
    }

    SUBCASE("integral of w(t) = t")
    {
        for (std::size_t steps : {10u, 100u, 1000u}) {
            const TimeGrid g(1.0, steps);
            const auto L = Payoff::integral(poly1({{1.0, {1}}}));
            std::vector<double> w(g.nodes());
            for (std::size_t i = 0; i < g.nodes(); ++i) w[i] = g.time(i);
            const std::vector<double> z(g.nodes(), 1.0);
            const double v = L.evaluate(z, w, g);
            // left rectangle: (1 - dt) / 2
            CHECK(v == doctest::Approx(0.5 * (1.0 - g.dt())).epsilon(1e-12));
            CHECK(std::abs(v - 0.5) <= 0.5 * g.dt() + 1e-15);
        }
    }
}

TEST_CASE("derivative measures")
{
    const TimeGrid grid(1.0, 8);
    const std::vector<double> z(9, 1.2);
    std::vector<double> w(9, 0.3);

    SUBCASE("affine terminal: atom (T, (lambda2, 0))")
    {
        const auto mu = Payoff::affine_terminal(1, 4.0, -1.5).derivative_measure(z, w, grid);
        REQUIRE(mu.atoms.size() == 1);
        CHECK(mu.atoms[0].node == grid.steps());
        CHECK(mu.atoms[0].row == std::vector<double>{-1.5, 0.0});
        CHECK(mu.density.empty());
    }

    SUBCASE("linear terminal: atom (T, (0, e1))")
    {
        std::vector<double> w2(18, 0.7);
        const auto mu = Payoff::terminal(Polynomial(2, {{1.0, {1, 0}}})).derivative_measure(z, w2, grid);
        REQUIRE(mu.atoms.size() == 1);
        CHECK(mu.atoms[0].row == std::vector<double>{0.0, 1.0, 0.0});
    }

    SUBCASE("lambda2 = 0 gives the zero measure")
    {
        const auto mu = Payoff::affine_terminal(1, 4.0, 0.0).derivative_measure(z, w, grid);
        CHECK(mu.atoms.empty());
        CHECK(mu.density.empty());
    }

    SUBCASE("integral payoff has a density and no atoms")
    {
        const auto mu = Payoff::integral(poly1({{2.0, {2}}})).derivative_measure(z, w, grid);
        CHECK(mu.atoms.empty());
        REQUIRE(mu.density.size() == grid.steps() * 2);
        for (std::size_t i = 0; i < grid.steps(); ++i) {
            CHECK(mu.density[i * 2] == 0.0);
            CHECK(mu.density[i * 2 + 1] == doctest::Approx(4.0 * 0.3));
        }
    }
}

TEST_CASE("Frechet consistency of the derivative measure")
{
    const TimeGrid grid(1.0, 16);
    const auto y = random_sample(grid, 1, 1);
    const auto d = random_sample(grid, 1, 2);

    SUBCASE("affine and linear payoffs: remainder is rounding only")
    {
        for (const auto& L : {Payoff::affine_terminal(1, 0.5, 2.0), Payoff::terminal(poly1({{3.0, {1}}})),
                              Payoff::integral(poly1({{-1.0, {1}}}))}) {
            for (double eps : {1e-3, 1e-4, 1e-5}) CHECK(remainder(L, y, d, eps, grid) <= 1e-13);
        }
    }

    SUBCASE("smooth quadratic and quartic payoffs: second order remainder")
    {
        for (const auto& L : {Payoff::terminal(poly1({{1.0, {2}}, {0.5, {1}}})),
                              Payoff::integral(poly1({{1.0, {4}}, {-2.0, {2}}}))}) {
            const double r3 = remainder(L, y, d, 1e-3, grid);
            const double r4 = remainder(L, y, d, 1e-4, grid);
            const double r5 = remainder(L, y, d, 1e-5, grid);
            CHECK(std::log10(r3 / r4) >= 1.9);
            CHECK(std::log10(r4 / r5) >= 1.9);
        }
    }
}

TEST_CASE("polynomial validation and growth constants")
{
    CHECK_THROWS_AS(Polynomial(1, {{1.0, {5}}}), std::invalid_argument);
    CHECK_THROWS_AS(Polynomial(2, {{1.0, {1}}}), std::invalid_argument);
    CHECK_THROWS_AS(Polynomial(1, {{1.0, {-1}}}), std::invalid_argument);
    CHECK_THROWS_AS(Payoff(2, TerminalSmooth{poly1({{1.0, {1}}})}), std::invalid_argument);

    const TimeGrid grid(2.0, 4);
    const auto aff = Payoff::affine_terminal(1, 0.0, 1.0).growth(grid);
    CHECK(aff.k == 0.0);
    const auto quartic = Payoff::integral(poly1({{1.0, {4}}, {3.0, {2}}})).growth(grid);
    CHECK(quartic.k == doctest::Approx((12.0 + 6.0) * 2.0));
    CHECK(quartic.beta == 2.0);
    CHECK(quartic.rho == 1.0);
}

TEST_CASE("measure distance")
{
    const TimeGrid grid(1.0, 4);
    const std::vector<double> z(5, 1.0);
    const std::vector<double> w(5, 0.2);
    const auto a = Payoff::affine_terminal(1, 0.0, 2.0).derivative_measure(z, w, grid);
    const auto b = Payoff::affine_terminal(1, 0.0, 0.5).derivative_measure(z, w, grid);
    CHECK(measure_distance(a, a, grid) == 0.0);
    CHECK(measure_distance(a, b, grid) == doctest::Approx(1.5));
}
