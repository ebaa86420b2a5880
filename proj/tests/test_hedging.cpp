#include "doctest.h"

#include "clarkhedge/hedging.hpp"
#include "clarkhedge/stats.hpp"

#include <cmath>
#include <cstring>

using namespace clarkhedge;

namespace {

ModelPtr constant_model(double theta)
{
    return std::make_shared<ConstantMarketPriceOfRisk>(std::vector<double>{theta});
}

ModelPtr ou_model(double v = 0.2, double beta = 1.0, double u0 = 0.1)
{
    OrnsteinUhlenbeckParams p;
    p.mean_reversion = beta;
    p.vol = v;
    p.u0 = u0;
    return std::make_shared<OrnsteinUhlenbeckMarketPriceOfRisk>(p);
}

Payoff linear_terminal()
{
    return Payoff::terminal(Polynomial(1, {{1.0, {1}}}));
}

/// E~[Z(T) | F_t] for constant theta, from the lognormal law of Z.
double conditional_density(double theta, double w_tilde, double t, double horizon)
{
    return std::exp(-theta * w_tilde + 0.5 * theta * theta * horizon + 0.5 * theta * theta * (horizon - t));
}

double w_tilde_at(const StatePath& p, std::size_t node)
{
    double w = 0.0;
    for (std::size_t i = 0; i < node; ++i) w += p.dw[i];
    return w;
}

} // namespace

TEST_CASE("integrand for W(T) under zero theta is identically one")
{
    const auto m = constant_model(0.0);
    const TimeGrid grid(1.0, 32);
    const FlowSolver solver(m, grid);
    SimConfig cfg;
    cfg.path_count = 10;
    for (const auto& p : simulate_paths(*m, grid, cfg)) {
        const auto lam = compute_integrand(solver, linear_terminal(), p);
        REQUIRE(lam.valid);
        for (double x : lam.values) CHECK(x == 1.0);
    }
}

TEST_CASE("constant theta affine payoff: lambda(t) = -lambda2 theta Z(T)")
{
    const double theta = 0.3, l2 = 1.7;
    const auto m = constant_model(theta);
    const TimeGrid grid(1.0, 64);
    const FlowSolver solver(m, grid);
    SimConfig cfg;
    cfg.path_count = 20;
    const auto L = Payoff::affine_terminal(1, 0.4, l2);
    for (const auto& p : simulate_paths(*m, grid, cfg)) {
        const auto lam = compute_integrand(solver, L, p);
        const double expected = -l2 * theta * p.z(grid.steps());
        for (std::size_t i = 0; i < grid.steps(); ++i) {
            CHECK(lam.at(i)[0] == doctest::Approx(expected).epsilon(1e-13));
            CHECK(integrand_at(solver, L, p, i)[0] == lam.at(i)[0]);
        }
    }
}

TEST_CASE("lambda2 = 0 gives a zero integrand")
{
    const auto m = ou_model();
    const TimeGrid grid(1.0, 16);
    const FlowSolver solver(m, grid);
    SimConfig cfg;
    const auto p = simulate_path(*m, grid, cfg, Stream::simulate, 0);
    const auto lam = compute_integrand(solver, Payoff::affine_terminal(1, 3.0, 0.0), p);
    for (double x : lam.values) CHECK(x == 0.0);
}

TEST_CASE("truncated integrand")
{
    const TimeGrid grid(1.0, 48);
    SimConfig cfg;
    cfg.path_count = 40;

    SUBCASE("level above the running sup reproduces lambda bit for bit")
    {
        const auto m = ou_model(0.6, 1.0, 0.4);
        const FlowSolver solver(m, grid);
        const auto L = Payoff::affine_terminal(1, 0.0, 1.0);
        for (const auto& p : simulate_paths(*m, grid, cfg)) {
            const auto base = compute_integrand(solver, L, p);
            const auto lk = compute_truncated_integrand(solver, L, p, truncate_path(p, 1.5 * p.running_sup(), grid));
            CHECK(std::memcmp(base.values.data(), lk.values.data(), base.values.size() * sizeof(double)) == 0);
        }
    }

    SUBCASE("zero theta: every level reproduces lambda")
    {
        const auto m = constant_model(0.0);
        const FlowSolver solver(m, grid);
        const auto p = simulate_path(*m, grid, cfg, Stream::simulate, 0);
        const auto base = compute_integrand(solver, linear_terminal(), p);
        for (double k : {0.1, 0.5, 2.0}) {
            const auto lk = compute_truncated_integrand(solver, linear_terminal(), p, truncate_path(p, k, grid));
            CHECK(lk.values == base.values);
        }
    }

    SUBCASE("small levels keep lambda_k bounded")
    {
        const double theta = 0.3;
        const auto m = constant_model(theta);
        const FlowSolver solver(m, grid);
        const auto L = Payoff::affine_terminal(1, 0.0, 1.0);
        for (const auto& p : simulate_paths(*m, grid, cfg)) {
            for (double k : {0.01, 0.1, 0.2}) {
                const auto tr = truncate_path(p, k, grid);
                const auto co = truncated_flow_coefficients(p, tr, grid);
                const auto lk = compute_truncated_integrand(solver, L, p, tr);
                REQUIRE(lk.valid);
                double max_ratio = 0.0;
                for (std::size_t i = 0; i <= grid.steps(); ++i) {
                    for (std::size_t j = i; j <= grid.steps(); ++j) {
                        max_ratio = std::max(max_ratio, std::exp(co.log_multiplier[j] - co.log_multiplier[i]));
                    }
                }
                for (double x : lk.values) CHECK(std::abs(x) <= 4.0 * k * k * max_ratio);
            }
        }
    }
}

TEST_CASE("regression projection")
{
    SUBCASE("constant integrand is recovered exactly by the intercept")
    {
        const auto m = constant_model(0.0);
        const TimeGrid grid(1.0, 16);
        const FlowSolver solver(m, grid);
        SimConfig cfg;
        cfg.path_count = 200;
        const auto paths = simulate_paths(*m, grid, cfg);
        std::vector<IntegrandPath> lams;
        for (const auto& p : paths) lams.push_back(compute_integrand(solver, linear_terminal(), p));
        const auto est = project_integrand(paths, lams, ProjectionOptions{}, solver, linear_terminal());
        for (double b : est.per_path) CHECK(b == 1.0);
        for (double b : est.beta) CHECK(b == 1.0);
        REQUIRE(est.regression);
        CHECK(est.regression->reduced_nodes() == grid.steps());
        CHECK_FALSE(est.regression->warnings().empty());
    }

    SUBCASE("constant theta: within 5% relative L2 of the lognormal oracle")
    {
        const double theta = 0.3;
        const auto m = constant_model(theta);
        const TimeGrid grid(1.0, 32);
        const FlowSolver solver(m, grid);
        SimConfig cfg;
        cfg.path_count = 20000;
        const auto L = Payoff::affine_terminal(1, 0.0, 1.0);
        const auto fit = fit_regression(solver, L, cfg, 3, Stream::fit);
        double err2 = 0.0, ref2 = 0.0;
        for (std::size_t p = 0; p < 2000; ++p) {
            const auto path = simulate_path(*m, grid, cfg, Stream::evaluate, p);
            for (std::size_t i = 0; i < grid.steps(); ++i) {
                const double oracle = -theta * conditional_density(theta, w_tilde_at(path, i), grid.time(i), 1.0);
                const double b = fit.predict(path, i)[0];
                err2 += (b - oracle) * (b - oracle);
                ref2 += oracle * oracle;
            }
        }
        CHECK(std::sqrt(err2 / ref2) <= 0.05);
    }

    SUBCASE("in-memory and streaming fits agree")
    {
        const auto m = ou_model();
        const TimeGrid grid(1.0, 16);
        const FlowSolver solver(m, grid);
        SimConfig cfg;
        cfg.path_count = 500;
        const auto L = Payoff::affine_terminal(1, 0.0, 1.0);
        const auto paths = simulate_paths(*m, grid, cfg, Stream::fit);
        std::vector<IntegrandPath> lams;
        for (const auto& p : paths) lams.push_back(compute_integrand(solver, L, p));
        const auto a = fit_regression(paths, lams, grid, 2);
        const auto b = fit_regression(solver, L, cfg, 2, Stream::fit);
        for (std::size_t i = 0; i < grid.steps(); ++i) {
            CHECK(a.predict(paths[7], i)[0] == doctest::Approx(b.predict(paths[7], i)[0]).epsilon(1e-10));
        }
    }

    SUBCASE("predictions use only information at the node")
    {
        const auto m = ou_model();
        const TimeGrid grid(1.0, 16);
        const FlowSolver solver(m, grid);
        SimConfig cfg;
        cfg.path_count = 300;
        const auto fit = fit_regression(solver, Payoff::affine_terminal(1, 0.0, 1.0), cfg, 3);
        auto p = simulate_path(*m, grid, cfg, Stream::evaluate, 0);
        const auto before = fit.predict(p, 6);
        auto dw = p.dw;
        for (std::size_t i = 6; i < dw.size(); ++i) dw[i] = -2.0 * dw[i] + 0.1;
        const auto q = simulate_from_increments(*m, grid, dw);
        CHECK(fit.predict(q, 6) == before);
    }
}

TEST_CASE("nested Monte Carlo agrees with the lognormal oracle at probe points")
{
    const double theta = 0.3;
    const auto m = constant_model(theta);
    const TimeGrid grid(1.0, 32);
    const FlowSolver solver(m, grid);
    const auto L = Payoff::affine_terminal(1, 0.0, 1.0);
    SimConfig cfg;
    cfg.path_count = 10;
    const auto paths = simulate_paths(*m, grid, cfg, Stream::evaluate);
    for (std::size_t k = 0; k < 10; ++k) {
        const std::size_t node = (k * 7) % grid.steps();
        const auto est = nested_conditional_integrand(solver, L, paths[k], node, 10000, 77);
        const double oracle = -theta * conditional_density(theta, w_tilde_at(paths[k], node), grid.time(node), 1.0);
        CHECK(std::abs(est.mean[0] - oracle) <= 3.0 * est.standard_error[0]);
    }
    CHECK_THROWS_AS(nested_conditional_integrand(solver, L, paths[0], 0, 1, 1), std::domain_error);
}

TEST_CASE("verify_representation")
{
    SUBCASE("W(T) under zero theta: residual is rounding only")
    {
        const auto m = constant_model(0.0);
        for (std::size_t steps : {2u, 64u}) {
            const TimeGrid grid(1.0, steps);
            const FlowSolver solver(m, grid);
            SimConfig cfg;
            cfg.path_count = 1000;
            cfg.antithetic = true;
            VerifyOptions opt;
            opt.rms_rel_threshold = 0.0;
            const auto rep = verify_representation(solver, linear_terminal(), cfg, opt);
            CHECK(rep.pass);
            CHECK(rep.residual_max_abs <= 1e-12);
            CHECK(rep.valid_paths == 1000);
        }
    }

    SUBCASE("lambda2 = 0: r = 0 and E~L = lambda1 exactly")
    {
        const auto m = ou_model();
        const TimeGrid grid(1.0, 16);
        const FlowSolver solver(m, grid);
        SimConfig cfg;
        cfg.path_count = 100;
        const auto rep = verify_representation(solver, Payoff::affine_terminal(1, 2.5, 0.0), cfg, VerifyOptions{});
        CHECK(rep.expected_payoff == 2.5);
        for (const auto& r : rep.residuals) CHECK(r.residual == 0.0);
        CHECK(rep.pass);
    }

    SUBCASE("constant theta affine: RMS decreases with N at 1e5 paths")
    {
        const auto m = constant_model(0.3);
        SimConfig cfg;
        cfg.path_count = 100000;
        double prev = 1e300;
        for (std::size_t steps : {64u, 128u, 256u}) {
            const TimeGrid grid(1.0, steps);
            const FlowSolver solver(m, grid);
            const auto rep = verify_representation(solver, Payoff::affine_terminal(1, 0.0, 1.0), cfg, VerifyOptions{});
            CHECK(rep.mean_within_3se);
            CHECK(rep.residual_rms < prev);
            prev = rep.residual_rms;
        }
    }

    SUBCASE("nested Monte Carlo projection passes on a small problem")
    {
        const auto m = constant_model(0.3);
        const TimeGrid grid(1.0, 32);
        const FlowSolver solver(m, grid);
        SimConfig cfg;
        cfg.path_count = 200;
        VerifyOptions opt;
        opt.projection.method = ProjectionMethod::nested_mc;
        opt.projection.branches = 200;
        const auto rep = verify_representation(solver, Payoff::affine_terminal(1, 0.0, 1.0), cfg, opt);
        CHECK(rep.pass);
        CHECK(rep.estimate.branches == 200);
    }
}

TEST_CASE("truncation convergence")
{
    const std::vector<double> levels{0.5, 1.0, 2.0, 4.0, 8.0, 16.0};

    SUBCASE("zero theta: every entry is zero")
    {
        const auto m = constant_model(0.0);
        const TimeGrid grid(1.0, 16);
        const FlowSolver solver(m, grid);
        SimConfig cfg;
        cfg.path_count = 50;
        const auto st = truncation_convergence(solver, linear_terminal(), cfg, levels);
        for (const auto& r : st.rows) CHECK(r.l2_distance == 0.0);
    }

    SUBCASE("OU: exact zero and full horizon fraction past the ensemble sup")
    {
        const auto m = ou_model(0.4, 1.0, 0.3);
        const TimeGrid grid(1.0, 32);
        const FlowSolver solver(m, grid);
        SimConfig cfg;
        cfg.path_count = 200;
        const auto st = truncation_convergence(solver, Payoff::affine_terminal(1, 0.0, 1.0), cfg, levels);
        CHECK(st.nonincreasing);
        bool seen = false;
        for (const auto& r : st.rows) {
            CHECK(r.coincidence_violations == 0);
            if (r.level > st.ensemble_running_sup) {
                CHECK(r.l2_distance == 0.0);
                CHECK(r.horizon_fraction == 1.0);
                seen = true;
            }
        }
        CHECK(seen);
    }

    SUBCASE("levels must increase")
    {
        const auto m = constant_model(0.1);
        const TimeGrid grid(1.0, 4);
        const FlowSolver solver(m, grid);
        SimConfig cfg;
        const std::vector<double> bad{2.0, 1.0};
        CHECK_THROWS_AS(truncation_convergence(solver, linear_terminal(), cfg, bad), std::invalid_argument);
        CHECK(truncation_convergence(solver, linear_terminal(), cfg, {}).rows.empty());
    }
}

TEST_CASE("mean-variance multipliers")
{
    const TimeGrid grid(1.0, 64);
    SimConfig cfg;
    cfg.path_count = 50000;

    SUBCASE("constant theta matches (x0 - m) / (e^{theta^2 T} - 1)")
    {
        const double theta = 0.3;
        const auto s = mean_variance_multipliers(ConstantMarketPriceOfRisk({theta}), grid, cfg, 1.0, 1.1);
        const double oracle = (1.0 - 1.1) / (std::exp(theta * theta) - 1.0);
        CHECK(oracle == doctest::Approx(-1.06186).epsilon(1e-4));
        CHECK(std::abs(s.lambda2 - oracle) <= 3.0 * s.lambda2_standard_error);
        CHECK(s.lambda1 + s.lambda2 * s.mean_moment == doctest::Approx(1.1));
        CHECK(s.martingale_gap <= 3.0 * s.martingale_gap_standard_error);
    }

    SUBCASE("zero theta is singular")
    {
        CHECK_THROWS_AS(mean_variance_multipliers(ConstantMarketPriceOfRisk({0.0}), grid, cfg, 1.0, 1.1),
                        SingularSystemError);
    }

    SUBCASE("sign of lambda2 follows sign(x0 - m)")
    {
        const ConstantMarketPriceOfRisk m({0.3});
        CHECK(mean_variance_multipliers(m, grid, cfg, 1.0, 1.2).lambda2 < 0.0);
        CHECK(mean_variance_multipliers(m, grid, cfg, 1.0, 0.8).lambda2 > 0.0);
    }
}
