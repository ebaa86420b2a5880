#include "clarkhedge/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace clarkhedge {

using nlohmann::json;

namespace {

/// JSON numbers must be finite; non-finite values become null.
json number(double x)
{
    return std::isfinite(x) ? json(x) : json(nullptr);
}

void append_row(std::string& out, const std::vector<std::string>& cells)
{
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i > 0) out += ',';
        out += cells[i];
    }
    out += '\n';
}

} // namespace

std::string format_number(double x)
{
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

json summary_header(const std::string& command, const RunConfig& cfg)
{
    json j;
    j["tool"] = "clarkhedge";
    j["version"] = tool_version;
    j["command"] = command;
    j["seed"] = cfg.sim.master_seed;
    j["config"] = cfg.echo;
    return j;
}

json to_json(const HedgeReport& r)
{
    json j;
    j["model"] = r.model;
    j["payoff"] = r.payoff;
    j["method"] = to_string(r.estimate.method);
    if (r.estimate.regression) {
        j["regression_degree"] = r.estimate.regression->degree();
        j["reduced_basis_nodes"] = r.estimate.regression->reduced_nodes();
        j["warnings"] = r.estimate.regression->warnings();
    } else {
        j["branches"] = r.estimate.branches;
        j["warnings"] = json::array();
    }
    j["expected_payoff"] = number(r.expected_payoff);
    j["expected_payoff_standard_error"] = number(r.expected_payoff_standard_error);
    j["payoff_stddev"] = number(r.payoff_stddev);
    j["residual_mean"] = number(r.residual_mean);
    j["residual_standard_error"] = number(r.residual_standard_error);
    j["residual_rms"] = number(r.residual_rms);
    j["residual_max_abs"] = number(r.residual_max_abs);
    j["rms_threshold"] = number(r.rms_threshold);
    j["mean_within_3se"] = r.mean_within_3se;
    j["rms_below_threshold"] = r.rms_below_threshold;
    j["pass"] = r.pass;
    j["valid_paths"] = r.valid_paths;
    j["invalid_paths"] = r.invalid_paths;
    return j;
}

json to_json(const TruncationStudy& s)
{
    json j;
    j["ensemble_running_sup"] = number(s.ensemble_running_sup);
    j["sup_z_pow_m2"] = number(s.sup_z_pow_m2);
    j["sup_z_pow_2"] = number(s.sup_z_pow_2);
    j["nonincreasing"] = s.nonincreasing;
    j["valid_paths"] = s.valid_paths;
    j["invalid_paths"] = s.invalid_paths;
    json rows = json::array();
    for (const auto& r : s.rows) {
        rows.push_back({{"level", number(r.level)},
                        {"l2_distance", number(r.l2_distance)},
                        {"l2_standard_error", number(r.l2_standard_error)},
                        {"tau_at_horizon_fraction", number(r.horizon_fraction)},
                        {"sup_z_pow_m2", number(r.sup_z_pow_m2)},
                        {"sup_z_pow_2", number(r.sup_z_pow_2)},
                        {"paths_below_level", r.paths_below_level},
                        {"coincidence_violations", r.coincidence_violations}});
    }
    j["rows"] = rows;
    return j;
}

json to_json(const NovikovDiagnostic& d)
{
    return {{"novikov_estimate", number(d.novikov_estimate)},
            {"novikov_standard_error", number(d.novikov_standard_error)},
            {"martingale_gap", number(d.martingale_gap)},
            {"mean_terminal_density", number(d.mean_terminal_density)},
            {"terminal_density_standard_error", number(d.terminal_density_standard_error)},
            {"blowup_fraction", number(d.blowup_fraction)},
            {"paths", d.paths}};
}

json to_json(const MeanVarianceSolution& s)
{
    return {{"lambda1", number(s.lambda1)},
            {"lambda2", number(s.lambda2)},
            {"lambda2_standard_error", number(s.lambda2_standard_error)},
            {"budget_moment", number(s.budget_moment)},
            {"budget_moment_standard_error", number(s.budget_moment_standard_error)},
            {"mean_moment", number(s.mean_moment)},
            {"martingale_gap", number(s.martingale_gap)},
            {"martingale_gap_standard_error", number(s.martingale_gap_standard_error)},
            {"condition_number", number(s.condition_number)},
            {"paths", s.paths}};
}

std::string beta_estimates_csv(const HedgeEstimate& e, const TimeGrid& grid)
{
    std::string out;
    std::vector<std::string> header{"node", "t"};
    for (std::size_t j = 0; j < e.dim; ++j) header.push_back("beta_" + std::to_string(j + 1));
    for (std::size_t j = 0; j < e.dim; ++j) header.push_back("se_" + std::to_string(j + 1));
    append_row(out, header);
    for (std::size_t i = 0; i < e.steps; ++i) {
        std::vector<std::string> row{std::to_string(i), format_number(grid.time(i))};
        for (std::size_t j = 0; j < e.dim; ++j) row.push_back(format_number(e.beta[i * e.dim + j]));
        for (std::size_t j = 0; j < e.dim; ++j) row.push_back(format_number(e.standard_error[i * e.dim + j]));
        append_row(out, row);
    }
    return out;
}

std::string residuals_csv(const HedgeReport& r)
{
    std::string out = "path_id,residual\n";
    for (const auto& s : r.residuals) append_row(out, {std::to_string(s.path_id), format_number(s.residual)});
    return out;
}

std::string truncation_csv(const TruncationStudy& s)
{
    std::string out =
        "k,l2_distance,tau_at_horizon_fraction,l2_standard_error,sup_z_pow_m2,sup_z_pow_2,paths_below_level,"
        "coincidence_violations\n";
    for (const auto& r : s.rows) {
        append_row(out, {format_number(r.level), format_number(r.l2_distance), format_number(r.horizon_fraction),
                         format_number(r.l2_standard_error), format_number(r.sup_z_pow_m2),
                         format_number(r.sup_z_pow_2), std::to_string(r.paths_below_level),
                         std::to_string(r.coincidence_violations)});
    }
    return out;
}

std::string paths_csv(const std::vector<StatePath>& paths, const TimeGrid& grid)
{
    std::string out;
    const std::size_t n = paths.empty() ? 1 : paths.front().dim;
    std::vector<std::string> header{"path_id", "node", "t"};
    for (std::size_t j = 0; j < n; ++j) header.push_back("w_" + std::to_string(j + 1));
    header.push_back("log_z");
    for (std::size_t j = 0; j < n; ++j) header.push_back("theta_" + std::to_string(j + 1));
    append_row(out, header);
    for (const auto& p : paths) {
        for (std::size_t i = 0; i < grid.nodes(); ++i) {
            std::vector<std::string> row{std::to_string(p.path_id), std::to_string(i), format_number(grid.time(i))};
            for (double x : p.w_at(i)) row.push_back(format_number(x));
            row.push_back(format_number(p.log_z[i]));
            for (double x : p.theta_at(i)) row.push_back(format_number(x));
            append_row(out, row);
        }
    }
    return out;
}

std::string flow_csv(const FlowMatrix& flow, const TimeGrid& grid)
{
    std::string out;
    const std::size_t w = flow.dim() + 1;
    std::vector<std::string> header{"path_id", "anchor", "node", "t"};
    for (std::size_t r = 0; r < w; ++r) {
        for (std::size_t c = 0; c < w; ++c) header.push_back("phi_" + std::to_string(r) + "_" + std::to_string(c));
    }
    append_row(out, header);
    for (std::size_t i = flow.anchor(); i < flow.nodes(); ++i) {
        std::vector<std::string> row{std::to_string(flow.path_id), std::to_string(flow.anchor()), std::to_string(i),
                                     format_number(grid.time(i))};
        for (std::size_t r = 0; r < w; ++r) {
            for (std::size_t c = 0; c < w; ++c) row.push_back(format_number(flow(i, r, c)));
        }
        append_row(out, row);
    }
    return out;
}

void prepare_output_directory(const std::filesystem::path& directory)
{
    std::error_code ec;
    std::filesystem::create_directories(directory, ec);
    if (ec || !std::filesystem::is_directory(directory)) {
        throw std::runtime_error("cannot create output directory '" + directory.string() + "'");
    }
    const auto probe = directory / ".clarkhedge_write_probe";
    {
        std::ofstream f(probe);
        if (!f) throw std::runtime_error("output directory '" + directory.string() + "' is not writable");
    }
    std::filesystem::remove(probe, ec);
}

void write_outputs(const std::filesystem::path& directory, const std::vector<OutputFile>& files)
{
    prepare_output_directory(directory);
    for (const auto& f : files) {
        const auto path = directory / f.name;
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << f.contents;
        if (!out) throw std::runtime_error("failed to write '" + path.string() + "'");
    }
}

} // namespace clarkhedge
