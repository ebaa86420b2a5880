#include "clarkhedge/cli.hpp"

#include "clarkhedge/config.hpp"
#include "clarkhedge/flow_solver.hpp"
#include "clarkhedge/hedging.hpp"
#include "clarkhedge/report.hpp"
#include "clarkhedge/stats.hpp"

#include "CLI11.hpp"

#include <cstdlib>
#include <iostream>
#include <optional>

namespace clarkhedge {

using nlohmann::json;

namespace {

struct Overrides {
    std::string config;
    std::optional<std::size_t> paths;
    std::optional<std::size_t> steps;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::optional<double> target_mean;
    std::string out;
};

std::string dump(const json& j)
{
    return j.dump(2) + "\n";
}

std::filesystem::path output_directory(const Overrides& o, const RunConfig& cfg)
{
    if (!o.out.empty()) return o.out;
    if (!cfg.output_directory.empty()) return cfg.output_directory;
    if (const char* env = std::getenv(output_dir_env); env && *env) return env;
    return "clarkhedge_out";
}

RunConfig load_with_overrides(const Overrides& o)
{
    json doc = read_config_document(o.config);
    if (!doc.is_object()) throw ConfigError("configuration must be a JSON object");
    if (o.paths) doc["sim"]["paths"] = *o.paths;
    if (o.steps) doc["grid"]["steps"] = *o.steps;
    if (o.seed) doc["sim"]["seed"] = *o.seed;
    if (o.workers) doc["sim"]["workers"] = *o.workers;
    if (o.target_mean) doc["mean_variance"]["target_mean"] = *o.target_mean;
    return parse_config(doc);
}

int cmd_simulate(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& out)
{
    const auto& model = *cfg.model;
    const auto& grid = cfg.grid;
    const std::size_t n = model.dimension();
    const std::size_t steps = grid.steps();
    const BlockPartition part(cfg.sim.path_count);

    struct Partial {
        SampleStats density, inverse;
        std::vector<SampleStats> terminal_w;
        double sup = 0.0;
        std::size_t invalid = 0;
    };
    std::vector<Partial> partials(part.blocks);
    std::vector<StatePath> kept(cfg.export_paths ? cfg.sim.path_count : 0);
    parallel_for(part.blocks, cfg.sim.workers, [&](std::size_t b) {
        auto& acc = partials[b];
        acc.terminal_w.assign(n, SampleStats{});
        for (std::size_t p = part.begin(b); p < part.end(b); ++p) {
            auto path = simulate_path(model, grid, cfg.sim, Stream::simulate, p);
            if (path.valid) {
                acc.density.add(path.z(steps));
                acc.inverse.add(std::exp(-path.log_z[steps]));
                for (std::size_t j = 0; j < n; ++j) acc.terminal_w[j].add(path.w_at(steps)[j]);
                acc.sup = std::max(acc.sup, path.running_sup());
            } else {
                ++acc.invalid;
            }
            if (cfg.export_paths) kept[p] = std::move(path);
        }
    });

    Partial total;
    total.terminal_w.assign(n, SampleStats{});
    for (const auto& acc : partials) {
        total.density.merge(acc.density);
        total.inverse.merge(acc.inverse);
        for (std::size_t j = 0; j < n; ++j) total.terminal_w[j].merge(acc.terminal_w[j]);
        total.sup = std::max(total.sup, acc.sup);
        total.invalid += acc.invalid;
    }

    json s = summary_header("simulate", cfg);
    json w_mean = json::array();
    for (const auto& st : total.terminal_w) w_mean.push_back(st.mean());
    s["result"] = {{"model", model.name()},
                   {"paths", cfg.sim.path_count},
                   {"valid_paths", total.density.count},
                   {"invalid_paths", total.invalid},
                   {"mean_terminal_density", total.density.mean()},
                   {"terminal_density_standard_error", total.density.standard_error()},
                   {"mean_inverse_terminal_density", total.inverse.mean()},
                   {"mean_terminal_w", w_mean},
                   {"ensemble_running_sup", total.sup}};

    std::vector<OutputFile> files{{"summary.json", dump(s)}};
    if (cfg.export_paths) files.push_back({"paths.csv", paths_csv(kept, grid)});
    if (cfg.export_flow) {
        const auto path = simulate_path(model, grid, cfg.sim, Stream::simulate, 0);
        files.push_back({"flow.csv", flow_csv(solve_flow(model, path, 0, grid), grid)});
    }
    write_outputs(dir, files);
    out << "simulate: " << total.density.count << " valid paths, E~[Z(T)] = "
        << format_number(total.density.mean()) << "\n";
    return total.density.count == 0 ? exit_all_invalid : exit_ok;
}

int hedge_exit(const HedgeReport& r)
{
    if (r.valid_paths == 0) return exit_all_invalid;
    return r.pass ? exit_ok : exit_failed_criteria;
}

int cmd_verify(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& out)
{
    const FlowSolver solver(cfg.model, cfg.grid);
    const auto rep = verify_representation(solver, *cfg.payoff, cfg.sim, cfg.verify);
    json s = summary_header("verify", cfg);
    s["result"] = to_json(rep);
    write_outputs(dir, {{"summary.json", dump(s)},
                        {"beta_estimates.csv", beta_estimates_csv(rep.estimate, cfg.grid)},
                        {"residuals.csv", residuals_csv(rep)}});
    out << "verify: residual rms " << format_number(rep.residual_rms) << " (threshold "
        << format_number(rep.rms_threshold) << "), " << (rep.pass ? "pass" : "FAIL") << "\n";
    return hedge_exit(rep);
}

int cmd_hedge(const RunConfig& cfg, bool mean_variance, const std::filesystem::path& dir, std::ostream& out)
{
    json s = summary_header("hedge", cfg);
    std::optional<Payoff> payoff = cfg.payoff;
    if (mean_variance) {
        const auto mv = mean_variance_multipliers(*cfg.model, cfg.grid, cfg.sim, cfg.initial_wealth, cfg.target_mean);
        s["multipliers"] = to_json(mv);
        payoff = Payoff::affine_terminal(cfg.model->dimension(), mv.lambda1, mv.lambda2);
        out << "hedge: lambda1 = " << format_number(mv.lambda1) << ", lambda2 = " << format_number(mv.lambda2)
            << "\n";
    }
    const FlowSolver solver(cfg.model, cfg.grid);
    const auto rep = verify_representation(solver, *payoff, cfg.sim, cfg.verify);
    s["result"] = to_json(rep);
    write_outputs(dir, {{"summary.json", dump(s)}, {"beta_estimates.csv", beta_estimates_csv(rep.estimate, cfg.grid)}});
    out << "hedge: residual rms " << format_number(rep.residual_rms) << ", " << (rep.pass ? "pass" : "FAIL") << "\n";
    return hedge_exit(rep);
}

int cmd_converge(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& out)
{
    const FlowSolver solver(cfg.model, cfg.grid);
    const auto study = truncation_convergence(solver, *cfg.payoff, cfg.sim, cfg.truncation_levels);
    std::size_t violations = 0;
    for (const auto& r : study.rows) violations += r.coincidence_violations;
    const bool pass = study.nonincreasing && violations == 0;

    json s = summary_header("converge", cfg);
    s["result"] = to_json(study);
    s["result"]["pass"] = pass;
    write_outputs(dir, {{"summary.json", dump(s)}, {"truncation.csv", truncation_csv(study)}});
    out << "converge: " << study.rows.size() << " levels, ensemble sup "
        << format_number(study.ensemble_running_sup) << ", " << (pass ? "pass" : "FAIL") << "\n";
    if (study.valid_paths == 0) return exit_all_invalid;
    return pass ? exit_ok : exit_failed_criteria;
}

int cmd_novikov(const RunConfig& cfg, const std::filesystem::path& dir, std::ostream& out)
{
    const auto d = novikov_diagnostic(*cfg.model, cfg.grid, cfg.sim, cfg.overflow_log_cap);
    json s = summary_header("novikov", cfg);
    s["result"] = to_json(d);
    write_outputs(dir, {{"summary.json", dump(s)}});
    out << "novikov: estimate " << format_number(d.novikov_estimate) << " +/- "
        << format_number(d.novikov_standard_error) << ", martingale gap " << format_number(d.martingale_gap)
        << "\n";
    return d.blowup_fraction >= 1.0 ? exit_all_invalid : exit_ok;
}

} // namespace

int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Monte Carlo hedging under an unbounded market price of risk", "clarkhedge"};
    app.require_subcommand(1, 1);

    Overrides o;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", o.config, "run configuration (JSON)")->required();
        sub->add_option("--paths", o.paths, "number of paths");
        sub->add_option("--steps", o.steps, "number of grid steps");
        sub->add_option("--seed", o.seed, "master seed");
        sub->add_option("--workers", o.workers, "worker threads (0 = all cores)");
        sub->add_option("--out", o.out, "output directory");
    };
    auto* simulate = app.add_subcommand("simulate", "simulate an ensemble and summarize it");
    auto* verify = app.add_subcommand("verify", "verify the martingale representation of the payoff");
    auto* hedge = app.add_subcommand("hedge", "estimate the hedge, optionally for the mean-variance payoff");
    auto* converge = app.add_subcommand("converge", "truncation convergence study");
    auto* novikov = app.add_subcommand("novikov", "Novikov and martingale diagnostics");
    for (auto* sub : {simulate, verify, hedge, converge, novikov}) add_common(sub);
    hedge->add_option("--target-mean", o.target_mean, "target mean of terminal wealth");

    std::vector<std::string> argv_store{"clarkhedge"};
    argv_store.insert(argv_store.end(), args.begin(), args.end());
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());

    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        if (code == 0) return exit_ok;
        err << app.help();
        return exit_config_error;
    }

    RunConfig cfg;
    std::filesystem::path dir;
    try {
        cfg = load_with_overrides(o);
        dir = output_directory(o, cfg);
        prepare_output_directory(dir);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_config_error;
    }

    try {
        if (simulate->parsed()) return cmd_simulate(cfg, dir, out);
        if (verify->parsed()) return cmd_verify(cfg, dir, out);
        if (hedge->parsed()) return cmd_hedge(cfg, o.target_mean.has_value(), dir, out);
        if (converge->parsed()) return cmd_converge(cfg, dir, out);
        return cmd_novikov(cfg, dir, out);
    } catch (const SingularSystemError& e) {
        err << "error: " << e.what() << "\n";
        return exit_failed_criteria;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return exit_config_error;
    }
}

int run_command(int argc, char** argv)
{
    std::vector<std::string> args(argv + 1, argv + argc);
    return run_command(args, std::cout, std::cerr);
}

} // namespace clarkhedge
