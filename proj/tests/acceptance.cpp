#include "clarkhedge/cli.hpp"
#include "clarkhedge/flow_solver.hpp"
#include "clarkhedge/hedging.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <unistd.h>

using namespace clarkhedge;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass;
    std::string detail;
};

int failures = 0;

void criterion(int id, const std::function<Outcome()>& body)
{
    const auto start = std::chrono::steady_clock::now();
    Outcome o{false, ""};
    try {
        o = body();
    } catch (const std::exception& e) {
        o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::printf("[%s] criterion %d: %s (%.2fs)\n", o.pass ? "PASS" : "FAIL", id, o.detail.c_str(), secs);
    std::fflush(stdout);
}

double seconds_since(std::chrono::steady_clock::time_point t)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0, double d = 0.0)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c, d);
    return buf;
}

ModelPtr constant_model(double theta)
{
    return std::make_shared<ConstantMarketPriceOfRisk>(std::vector<double>{theta});
}

ModelPtr ou_model()
{
    OrnsteinUhlenbeckParams p;
    p.alpha = 0.0;
    p.mean_reversion = 1.0;
    p.vol = 0.2;
    p.u0 = 0.1;
    return std::make_shared<OrnsteinUhlenbeckMarketPriceOfRisk>(p);
}

std::string slurp(const fs::path& p)
{
    std::ifstream f(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

bool residual_test(const HedgeReport& r)
{
    return r.mean_within_3se && r.rms_below_threshold && r.valid_paths > 0;
}

Outcome zero_theta_identity()
{
    const auto m = constant_model(0.0);
    const auto L = Payoff::terminal(Polynomial(1, {{1.0, {1}}}));
    SimConfig cfg;
    cfg.path_count = 1000;
    cfg.master_seed = 7;
    cfg.antithetic = true;
    VerifyOptions opt;
    opt.rms_rel_threshold = 0.0;
    double worst = 0.0, slowest = 0.0;
    bool ok = true;
    for (std::size_t steps : {2u, 16u, 64u, 256u}) {
        const auto start = std::chrono::steady_clock::now();
        const FlowSolver solver(m, TimeGrid(1.0, steps));
        const auto rep = verify_representation(solver, L, cfg, opt);
        slowest = std::max(slowest, seconds_since(start));
        worst = std::max(worst, rep.residual_max_abs);
        ok = ok && rep.valid_paths == cfg.path_count;
    }
    return {ok && worst <= 1e-12 && slowest < 1.0,
            fmt("max |r| = %.3g over N in {2,16,64,256}, slowest run %.3fs", worst, slowest)};
}

Outcome constant_theta_hedge()
{
    const double theta = 0.3;
    const auto m = constant_model(theta);
    const TimeGrid grid(1.0, 256);
    const FlowSolver solver(m, grid);
    const auto L = Payoff::affine_terminal(1, 0.0, 1.0);
    SimConfig cfg;
    cfg.path_count = 100000;
    cfg.master_seed = 11;
    const auto start = std::chrono::steady_clock::now();
    const auto rep = verify_representation(solver, L, cfg, VerifyOptions{});
    const double runtime = seconds_since(start);

    const auto& fit = *rep.estimate.regression;
    double err2 = 0.0, ref2 = 0.0;
    for (std::size_t p = 0; p < cfg.path_count; ++p) {
        const auto path = simulate_path(*m, grid, cfg, Stream::evaluate, p);
        double w = 0.0;
        for (std::size_t i = 0; i < grid.steps(); ++i) {
            const double t = grid.time(i);
            const double oracle = -theta * std::exp(-theta * w + 0.5 * theta * theta * (2.0 - t));
            const double b = fit.predict(path, i)[0];
            err2 += (b - oracle) * (b - oracle);
            ref2 += oracle * oracle;
            w += path.dw[i];
        }
    }
    const double rel = std::sqrt(err2 / ref2);
    return {rel <= 0.05 && residual_test(rep) && runtime < 60.0,
            fmt("relative L2 %.4f, residual mean %.3g (3 SE %.3g), runtime %.1fs", rel, rep.residual_mean,
                3.0 * rep.residual_standard_error, runtime)};
}

Outcome novikov_constant()
{
    SimConfig cfg;
    cfg.path_count = 100000;
    cfg.master_seed = 5;
    const auto d = novikov_diagnostic(ConstantMarketPriceOfRisk({0.3}), TimeGrid(1.0, 256), cfg);
    const double dev = std::abs(d.novikov_estimate - std::exp(0.045));
    const bool ok = dev <= 3.0 * d.novikov_standard_error + 1e-12 &&
                    d.martingale_gap <= 3.0 * d.terminal_density_standard_error;
    return {ok, fmt("estimate %.6f vs %.6f, martingale gap %.3g (3 SE %.3g)", d.novikov_estimate, std::exp(0.045),
                    d.martingale_gap, 3.0 * d.terminal_density_standard_error)};
}

struct FlowChecks {
    std::size_t valid = 0;
    std::size_t gronwall_pass = 0;
    bool identity = true;
    bool lower_left_zero = true;
};

FlowChecks ou_flow_checks()
{
    static const FlowChecks result = [] {
        const auto m = ou_model();
        const TimeGrid grid(1.0, 256);
        const FlowSolver solver(m, grid);
        const double bound = m->variation_bound(grid.horizon());
        SimConfig cfg;
        cfg.path_count = 1000;
        cfg.master_seed = 3;
        FlowChecks c;
        for (std::size_t p = 0; p < cfg.path_count; ++p) {
            const auto path = simulate_path(*m, grid, cfg, Stream::simulate, p);
            if (!path.valid) continue;
            ++c.valid;
            bool all = true;
            for (std::size_t s = 0; s <= grid.steps(); ++s) {
                const auto f = solver.solve(path, s);
                all = all && f.valid && gronwall_check(f, grid, bound, 1e-4).pass;
                c.identity = c.identity && f(s, 0, 0) == 1.0 && f(s, 1, 1) == 1.0 && f(s, 0, 1) == 0.0 &&
                             f(s, 1, 0) == 0.0;
                for (std::size_t i = s; i <= grid.steps(); ++i) c.lower_left_zero = c.lower_left_zero && f(i, 1, 0) == 0.0;
            }
            if (all) ++c.gronwall_pass;
        }
        return c;
    }();
    return result;
}

Outcome gronwall_bound()
{
    const auto c = ou_flow_checks();
    return {c.valid > 0 && c.gronwall_pass == c.valid,
            fmt("%.0f of %.0f valid paths pass at every anchor", double(c.gronwall_pass), double(c.valid))};
}

Outcome flow_structure()
{
    const auto c = ou_flow_checks();
    return {c.valid > 0 && c.identity && c.lower_left_zero,
            std::string("Phi(s,s) = I: ") + (c.identity ? "yes" : "no") +
                ", Phi21 = 0: " + (c.lower_left_zero ? "yes" : "no")};
}

Outcome lower_block_refinement()
{
    const auto m = ou_model();
    const TimeGrid ref_grid(1.0, 1024);
    double worst_ratio = 0.0;
    std::string detail;
    for (double s : {0.0, 0.25, 0.5, 0.75}) {
        const auto ref = solve_lower_block(*m, ref_grid, ref_grid.node_at(s));
        double dev[2] = {0.0, 0.0};
        int k = 0;
        for (std::size_t steps : {64u, 128u}) {
            const TimeGrid g(1.0, steps);
            const std::size_t ratio = 1024 / steps;
            const auto lb = solve_lower_block(*m, g, g.node_at(s));
            for (std::size_t i = lb.anchor; i <= steps; ++i) {
                dev[k] = std::max(dev[k], std::abs(lb.value(0, i)[0] - ref.value(0, i * ratio)[0]));
            }
            ++k;
        }
        worst_ratio = std::max(worst_ratio, dev[1] / dev[0]);
        if (s == 0.0) detail = fmt("anchor 0: deviation %.3g at N=64, %.3g at N=128", dev[0], dev[1]);
    }
    return {worst_ratio <= 0.5, detail + fmt("; worst ratio %.3f over 4 anchors", worst_ratio)};
}

Outcome truncation_study()
{
    const auto m = ou_model();
    const TimeGrid grid(1.0, 256);
    const FlowSolver solver(m, grid);
    SimConfig cfg;
    cfg.path_count = 1000;
    cfg.master_seed = 3;
    std::vector<double> levels;
    for (double k = 1.0; k <= 1024.0; k *= 2.0) levels.push_back(k);
    const auto st = truncation_convergence(solver, Payoff::affine_terminal(1, 0.0, 1.0), cfg, levels);
    bool exact = false;
    std::size_t violations = 0;
    double first_above = 0.0;
    for (const auto& r : st.rows) {
        violations += r.coincidence_violations;
        if (first_above == 0.0 && r.level > st.ensemble_running_sup) {
            first_above = r.level;
            exact = r.l2_distance == 0.0 && r.horizon_fraction == 1.0;
        }
    }
    return {st.nonincreasing && exact && violations == 0 && st.valid_paths > 0,
            fmt("non-increasing table, ensemble sup %.4f, first k above %.0f gives zero distance, %.0f "
                "coincidence violations",
                st.ensemble_running_sup, first_above, double(violations))};
}

Outcome mean_variance()
{
    const double theta = 0.3, x0 = 1.0, target = 1.1;
    const auto m = constant_model(theta);
    const TimeGrid grid(1.0, 256);
    SimConfig cfg;
    cfg.path_count = 100000;
    cfg.master_seed = 11;
    const auto mv = mean_variance_multipliers(*m, grid, cfg, x0, target);
    const double oracle = (x0 - target) / (std::exp(theta * theta) - 1.0);
    const bool lambda_ok = std::abs(mv.lambda2 - oracle) <= 3.0 * mv.lambda2_standard_error;
    const FlowSolver solver(m, grid);
    const auto rep = verify_representation(solver, Payoff::affine_terminal(1, mv.lambda1, mv.lambda2), cfg,
                                           VerifyOptions{});
    return {lambda_ok && residual_test(rep),
            fmt("lambda2 %.5f +/- %.5f vs %.5f, hedged residual rms %.3g", mv.lambda2, mv.lambda2_standard_error,
                oracle, rep.residual_rms)};
}

Outcome worker_determinism()
{
    const auto base = fs::temp_directory_path() / ("clarkhedge_acceptance_" + std::to_string(::getpid()));
    fs::remove_all(base);
    const std::string config = std::string(CLARKHEDGE_SOURCE_DIR) + "/configs/ou.json";
    bool same = true;
    std::size_t compared = 0;
    for (const std::string cmd : {"verify", "converge"}) {
        for (const std::string w : {"1", "8"}) {
            std::ostringstream out, err;
            run_command({cmd, "--config", config, "--workers", w, "--out", (base / (cmd + w)).string()}, out, err);
        }
        for (const auto& e : fs::directory_iterator(base / (cmd + "1"))) {
            const auto other = base / (cmd + "8") / e.path().filename();
            same = same && fs::exists(other) && slurp(e.path()) == slurp(other);
            ++compared;
        }
    }
    fs::remove_all(base);
    return {same && compared >= 5, fmt("%.0f report files identical at 1 and 8 workers", double(compared))};
}

} // namespace

int main()
{
    criterion(1, zero_theta_identity);
    criterion(2, constant_theta_hedge);
    criterion(3, novikov_constant);
    criterion(4, gronwall_bound);
    criterion(5, flow_structure);
    criterion(6, lower_block_refinement);
    criterion(7, truncation_study);
    criterion(8, mean_variance);
    criterion(9, worker_determinism);
    std::printf("%d of 9 criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
