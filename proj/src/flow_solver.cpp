#include "clarkhedge/flow_solver.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace clarkhedge {

FlowMatrix::FlowMatrix(std::size_t anchor, std::size_t dim, std::size_t nodes)
    : anchor_(anchor), dim_(dim), nodes_(nodes), data_(nodes * (dim + 1) * (dim + 1), 0.0)
{
}

double FlowMatrix::operator()(std::size_t node, std::size_t row, std::size_t col) const
{
    const std::size_t w = dim_ + 1;
    return data_[(node * w + row) * w + col];
}

double& FlowMatrix::at(std::size_t node, std::size_t row, std::size_t col)
{
    const std::size_t w = dim_ + 1;
    return data_[(node * w + row) * w + col];
}

namespace {

FlowCoefficients build_coefficients(const StatePath& path, std::span<const double> log_z,
                                    const Clamp& clamp, const TimeGrid& grid)
{
    const std::size_t n = path.dim;
    const std::size_t steps = grid.steps();
    if (path.steps() != steps || log_z.size() != steps + 1) {
        throw std::domain_error("path does not match grid");
    }

    FlowCoefficients co;
    co.dim = n;
    co.dw = path.dw;
    co.log_multiplier.assign(steps + 1, 0.0);
    co.amplitude.resize(steps + 1);
    co.rate.resize(steps + 1);
    co.theta.resize((steps + 1) * n);
    co.slope.resize((steps + 1) * n);

    for (std::size_t i = 0; i <= steps; ++i) {
        const double z = std::exp(log_z[i]);
        co.amplitude[i] = clamp.value(z);
        co.rate[i] = clamp.derivative(z);
        for (std::size_t k = 0; k < n; ++k) {
            const double th = path.theta[i * n + k];
            co.theta[i * n + k] = clamp.value(th);
            co.slope[i * n + k] = clamp.derivative(th);
        }
        if (i < steps) {
            co.log_multiplier[i + 1] =
                co.log_multiplier[i] +
                log_density_increment(co.rate[i], {co.theta.data() + i * n, n}, path.dw_at(i), grid.dt());
        }
    }
    co.finite = path.valid;
    for (double x : co.log_multiplier) co.finite = co.finite && std::isfinite(x);
    for (double x : co.amplitude) co.finite = co.finite && std::isfinite(x);
    return co;
}

/// Steps chi for lower column `col` from the anchor and writes the top entry at nodes anchor..N.
void top_row(const FlowCoefficients& co, const LowerBlock& lb, std::size_t col, double dt,
             std::span<double> top)
{
    const std::size_t n = co.dim;
    const std::size_t m = lb.anchor;
    const std::size_t steps = co.log_multiplier.size() - 1;
    const double log_m0 = co.log_multiplier[m];
    const auto& column = lb.columns[col];

    if (column.inert) {
        std::fill(top.begin(), top.end(), 0.0);
        return;
    }

    double chi = 0.0;
    top[0] = 0.0;
    for (std::size_t i = m; i < steps; ++i) {
        const double* th = co.theta.data() + i * n;
        const double* sl = co.slope.data() + i * n;
        const double* k = column.drive.data() + (i - m) * n;
        const double* dw = co.dw.data() + i * n;
        const double a = co.amplitude[i];
        const double r = co.rate[i];

        double b = 0.0;
        double c_gamma = 0.0;
        double c_dw = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double dk = sl[j] * k[j];
            b += th[j] * dk;
            c_gamma += a * dk * r * th[j];
            c_dw += a * dk * dw[j];
        }
        b *= 2.0 * a;
        const double inv_multiplier = std::exp(log_m0 - co.log_multiplier[i]);
        chi += inv_multiplier * ((b - c_gamma) * dt - c_dw);
        top[i + 1 - m] = std::exp(co.log_multiplier[i + 1] - log_m0) * chi;
    }
}

FlowMatrix assemble_flow(const FlowCoefficients& co, const LowerBlock& lb, const TimeGrid& grid,
                         std::size_t path_id)
{
    const std::size_t n = co.dim;
    const std::size_t steps = grid.steps();
    const std::size_t anchor = lb.anchor;

    FlowMatrix flow(anchor, n, steps + 1);
    flow.path_id = path_id;
    flow.valid = co.finite;

    const double log_m0 = co.log_multiplier[anchor];
    for (std::size_t i = anchor; i <= steps; ++i) {
        flow.at(i, 0, 0) = std::exp(co.log_multiplier[i] - log_m0);
    }

    std::vector<double> top(steps + 1 - anchor);
    for (std::size_t c = 0; c < n; ++c) {
        top_row(co, lb, c, grid.dt(), top);
        for (std::size_t i = anchor; i <= steps; ++i) {
            flow.at(i, 0, c + 1) = top[i - anchor];
            const auto v = lb.value(c, i);
            for (std::size_t r = 0; r < n; ++r) flow.at(i, r + 1, c + 1) = v[r];
        }
    }

    for (std::size_t i = anchor; i <= steps && flow.valid; ++i) {
        for (std::size_t r = 0; r <= n; ++r) {
            for (std::size_t c = 0; c <= n; ++c) {
                if (!std::isfinite(flow(i, r, c))) flow.valid = false;
            }
        }
    }
    return flow;
}

} // namespace

FlowCoefficients flow_coefficients(const StatePath& path, const TimeGrid& grid)
{
    return build_coefficients(path, path.log_z, Clamp(), grid);
}

FlowCoefficients truncated_flow_coefficients(const StatePath& path, const TruncatedPath& truncated,
                                             const TimeGrid& grid)
{
    return build_coefficients(path, truncated.log_z, Clamp(truncated.level), grid);
}

std::vector<DerivativeKernel> grid_kernels(const MarketPriceOfRisk& model, const TimeGrid& grid)
{
    std::vector<DerivativeKernel> kernels;
    kernels.reserve(grid.steps());
    for (std::size_t i = 0; i < grid.steps(); ++i) kernels.push_back(model.derivative_kernel(grid, i));
    return kernels;
}

LowerBlock solve_lower_block(std::span<const DerivativeKernel> kernels, const TimeGrid& grid,
                             std::size_t dim, std::size_t anchor)
{
    const std::size_t steps = grid.steps();
    if (anchor > steps) throw std::domain_error("flow anchor outside grid");
    if (kernels.size() < steps) throw std::invalid_argument("need one kernel per step");

    const std::size_t n = dim;
    const double dt = grid.dt();
    LowerBlock lb;
    lb.anchor = anchor;
    lb.dim = n;
    lb.columns.resize(n);

    std::vector<double> gamma((steps + 1) * n, 0.0);
    std::vector<double> drive(n);
    for (std::size_t c = 0; c < n; ++c) {
        auto& column = lb.columns[c];
        column.values.assign((steps + 1 - anchor) * n, 0.0);
        column.drive.assign((steps - anchor) * n, 0.0);
        column.inert = true;

        std::fill(gamma.begin(), gamma.end(), 0.0);
        gamma[anchor * n + c] = 1.0;
        for (std::size_t i = anchor; i < steps; ++i) {
            kernels[i].apply(gamma, drive, anchor);
            for (std::size_t r = 0; r < n; ++r) {
                gamma[(i + 1) * n + r] = gamma[i * n + r] - dt * drive[r];
                column.drive[(i - anchor) * n + r] = drive[r];
                if (drive[r] != 0.0) column.inert = false;
            }
        }
        std::copy(gamma.begin() + static_cast<std::ptrdiff_t>(anchor * n), gamma.end(),
                  column.values.begin());
    }
    return lb;
}

LowerBlock solve_lower_block(const MarketPriceOfRisk& model, const TimeGrid& grid, std::size_t anchor)
{
    const auto kernels = grid_kernels(model, grid);
    return solve_lower_block(kernels, grid, model.dimension(), anchor);
}

FlowSolver::FlowSolver(ModelPtr model, TimeGrid grid)
    : model_(std::move(model)), grid_(grid)
{
    if (!model_) throw std::invalid_argument("flow solver needs a model");
    const auto kernels = grid_kernels(*model_, grid_);
    lower_.reserve(grid_.steps() + 1);
    for (std::size_t s = 0; s <= grid_.steps(); ++s) {
        lower_.push_back(solve_lower_block(kernels, grid_, model_->dimension(), s));
    }
}

const LowerBlock& FlowSolver::lower(std::size_t anchor) const
{
    if (anchor > grid_.steps()) throw std::domain_error("flow anchor outside grid");
    return lower_[anchor];
}

FlowMatrix FlowSolver::solve(const FlowCoefficients& co, std::size_t anchor, std::size_t path_id) const
{
    return assemble_flow(co, lower(anchor), grid_, path_id);
}

FlowMatrix FlowSolver::solve(const StatePath& path, std::size_t anchor) const
{
    return solve(flow_coefficients(path, grid_), anchor, path.path_id);
}

FlowMatrix FlowSolver::solve_truncated(const StatePath& path, const TruncatedPath& truncated,
                                       std::size_t anchor) const
{
    return solve(truncated_flow_coefficients(path, truncated, grid_), anchor, path.path_id);
}

std::vector<double> FlowSolver::contract(const FlowCoefficients& co, std::size_t anchor,
                                         const RowMeasure& measure) const
{
    const std::size_t n = dim();
    const std::size_t width = n + 1;
    const std::size_t steps = grid_.steps();
    const double dt = grid_.dt();
    if (measure.width != width) throw std::invalid_argument("measure width must be n+1");
    if (!measure.density.empty() && measure.density.size() != steps * width) {
        throw std::invalid_argument("measure density must have one row per step");
    }
    const LowerBlock& lb = lower(anchor);
    const double log_m0 = co.log_multiplier[anchor];
    const bool dense = !measure.density.empty();

    std::vector<double> acc(width, 0.0);

    // column 0: top entry is the multiplier ratio, lower block vanishes
    for (const auto& atom : measure.atoms) {
        if (atom.node <= anchor || atom.row[0] == 0.0) continue;
        acc[0] += atom.row[0] * std::exp(co.log_multiplier[atom.node] - log_m0);
    }
    if (dense) {
        double s = 0.0;
        for (std::size_t i = anchor; i < steps; ++i) {
            const double d = measure.density[i * width];
            if (d != 0.0) s += d * std::exp(co.log_multiplier[i] - log_m0);
        }
        acc[0] += s * dt;
    }

    std::vector<double> top(steps + 1 - anchor);
    for (std::size_t c = 0; c < n; ++c) {
        top_row(co, lb, c, dt, top);
        double s = 0.0;
        for (const auto& atom : measure.atoms) {
            if (atom.node <= anchor) continue;
            const auto v = lb.value(c, atom.node);
            double term = atom.row[0] * top[atom.node - anchor];
            for (std::size_t r = 0; r < n; ++r) term += atom.row[r + 1] * v[r];
            s += term;
        }
        if (dense) {
            double d_sum = 0.0;
            for (std::size_t i = anchor; i < steps; ++i) {
                const double* row = measure.density.data() + i * width;
                const auto v = lb.value(c, i);
                double term = row[0] * top[i - anchor];
                for (std::size_t r = 0; r < n; ++r) term += row[r + 1] * v[r];
                d_sum += term;
            }
            s += d_sum * dt;
        }
        acc[c + 1] = s;
    }
    return acc;
}

FlowMatrix solve_flow(const MarketPriceOfRisk& model, const StatePath& path, std::size_t anchor,
                      const TimeGrid& grid)
{
    if (anchor > grid.steps()) throw std::domain_error("flow anchor is not a grid node");
    const LowerBlock lb = solve_lower_block(model, grid, anchor);
    return assemble_flow(flow_coefficients(path, grid), lb, grid, path.path_id);
}

FlowMatrix solve_truncated_flow(const MarketPriceOfRisk& model, const StatePath& path,
                                const TruncatedPath& truncated, std::size_t anchor,
                                const TimeGrid& grid)
{
    if (anchor > grid.steps()) throw std::domain_error("flow anchor is not a grid node");
    const LowerBlock lb = solve_lower_block(model, grid, anchor);
    return assemble_flow(truncated_flow_coefficients(path, truncated, grid), lb, grid, path.path_id);
}

GronwallResult gronwall_check(const FlowMatrix& flow, const TimeGrid& grid, double bound,
                              double tolerance)
{
    GronwallResult result;
    const std::size_t n = flow.dim();
    const std::size_t s = flow.anchor();
    const double ts = grid.time(s);
    for (std::size_t v = s; v < flow.nodes(); ++v) {
        const double envelope = std::exp(bound * (grid.time(v) - ts));
        for (std::size_t c = 1; c <= n; ++c) {
            double norm2 = 0.0;
            for (std::size_t r = 1; r <= n; ++r) norm2 += flow(v, r, c) * flow(v, r, c);
            result.max_ratio = std::max(result.max_ratio, std::sqrt(norm2) / envelope);
        }
    }
    result.pass = result.max_ratio <= 1.0 + tolerance;
    return result;
}

} // namespace clarkhedge
