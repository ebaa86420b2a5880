#include "clarkhedge/sde_engine.hpp"

#include "clarkhedge/stats.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace clarkhedge {

namespace {

// exp() overflows past this
constexpr double max_log_density = 709.0;

} // namespace

void SimConfig::validate() const
{
    if (path_count < 1) throw std::invalid_argument("path_count must be >= 1");
    if (antithetic && path_count % 2 != 0) {
        throw std::invalid_argument("antithetic sampling needs an even path_count");
    }
}

PathNoise path_noise(const SimConfig& config, Stream stream, std::size_t path_index)
{
    const std::uint64_t ensemble = rng::derive(config.master_seed, static_cast<std::uint64_t>(stream));
    if (!config.antithetic) return {rng::derive(ensemble, path_index), 1.0};
    return {rng::derive(ensemble, path_index / 2), path_index % 2 == 0 ? 1.0 : -1.0};
}

double StatePath::z(std::size_t i) const
{
    return std::exp(log_z[i]);
}

double StatePath::running_sup() const
{
    double sup = 0.0;
    for (std::size_t i = 0; i < log_z.size(); ++i) {
        sup = std::max(sup, z(i));
        for (double th : theta_at(i)) sup = std::max(sup, std::abs(th));
    }
    return sup;
}

double log_density_increment(double rate, std::span<const double> theta,
                             std::span<const double> dw, double dt)
{
    double norm2 = 0.0;
    double dot = 0.0;
    for (std::size_t k = 0; k < theta.size(); ++k) {
        norm2 += theta[k] * theta[k];
        dot += theta[k] * dw[k];
    }
    return rate * (1.0 - 0.5 * rate) * norm2 * dt - rate * dot;
}

StatePath simulate_from_increments(const MarketPriceOfRisk& model, const TimeGrid& grid,
                                   std::vector<double> dw, std::size_t path_id,
                                   std::uint64_t path_seed)
{
    const std::size_t n = model.dimension();
    const std::size_t steps = grid.steps();
    if (dw.size() != steps * n) throw std::invalid_argument("increment count does not match grid");

    StatePath path;
    path.path_id = path_id;
    path.path_seed = path_seed;
    path.dim = n;
    path.dw = std::move(dw);
    path.w.assign((steps + 1) * n, 0.0);
    path.log_z.assign(steps + 1, 0.0);
    path.theta.assign((steps + 1) * n, 0.0);

    auto stream = model.stream(grid);
    const double dt = grid.dt();
    for (std::size_t i = 0;; ++i) {
        std::span<double> th(path.theta.data() + i * n, n);
        stream->next(path.w_at(i), th);
        if (path.valid) {
            for (double x : th) {
                if (!std::isfinite(x)) {
                    path.valid = false;
                    path.diagnostic = "non-finite theta at node " + std::to_string(i);
                    break;
                }
            }
        }
        if (i == steps) break;

        const auto inc = path.dw_at(i);
        for (std::size_t k = 0; k < n; ++k) {
            path.w[(i + 1) * n + k] = path.w[i * n + k] + inc[k] - th[k] * dt;
        }
        path.log_z[i + 1] = path.log_z[i] + log_density_increment(1.0, th, inc, dt);
        if (path.valid && !(std::abs(path.log_z[i + 1]) <= max_log_density)) {
            path.valid = false;
            path.diagnostic = "log Z overflow at node " + std::to_string(i + 1);
        }
    }
    return path;
}

void draw_increments(std::uint64_t key, double sign, std::size_t dim, double dt,
                     std::size_t first, std::size_t steps, std::span<double> dw)
{
    const double scale = sign * std::sqrt(dt);
    for (std::size_t i = first; i < steps; ++i) {
        for (std::size_t k = 0; k < dim; ++k) dw[i * dim + k] = scale * rng::normal(key, i, k);
    }
}

StatePath simulate_path(const MarketPriceOfRisk& model, const TimeGrid& grid,
                        const SimConfig& config, Stream stream, std::size_t path_index)
{
    const std::size_t n = model.dimension();
    const auto noise = path_noise(config, stream, path_index);
    std::vector<double> dw(grid.steps() * n);
    draw_increments(noise.key, noise.sign, n, grid.dt(), 0, grid.steps(), dw);
    return simulate_from_increments(model, grid, std::move(dw), path_index, noise.key);
}

std::vector<StatePath> simulate_paths(const MarketPriceOfRisk& model, const TimeGrid& grid,
                                      const SimConfig& config, Stream stream)
{
    config.validate();
    std::vector<StatePath> paths(config.path_count);
    parallel_for(config.path_count, config.workers, [&](std::size_t i) {
        paths[i] = simulate_path(model, grid, config, stream, i);
    });
    return paths;
}

// -- truncation ---------------------------------------------------------------

Clamp::Clamp(double level) : level_(level)
{
    if (!(level > 0.0)) throw std::invalid_argument("truncation level must be positive");
}

double Clamp::value(double x) const
{
    const double a = std::abs(x);
    if (a <= level_) return x;
    const double excess = a - level_;
    const double y = level_ + excess / (1.0 + excess / level_);
    return x < 0.0 ? -y : y;
}

double Clamp::derivative(double x) const
{
    const double a = std::abs(x);
    if (a <= level_) return 1.0;
    const double q = 1.0 + (a - level_) / level_;
    return 1.0 / (q * q);
}

double TruncatedPath::z(std::size_t i) const
{
    return std::exp(log_z[i]);
}

TruncatedPath truncate_path(const StatePath& path, double level, const TimeGrid& grid)
{
    const Clamp clamp(level);
    const std::size_t n = path.dim;
    const std::size_t steps = grid.steps();
    if (path.steps() != steps) throw std::domain_error("path does not match grid");

    TruncatedPath out;
    out.level = level;
    out.log_z.assign(steps + 1, 0.0);
    out.stop_node = steps;

    std::vector<double> clamped(n);
    bool stopped = false;
    for (std::size_t i = 0; i <= steps; ++i) {
        const double zk = out.z(i);
        const auto th = path.theta_at(i);
        if (!stopped) {
            double level_seen = zk;
            for (double x : th) level_seen = std::max(level_seen, std::abs(x));
            if (level_seen >= level) {
                out.stop_node = i;
                stopped = true;
            }
        }
        if (i == steps) break;

        for (std::size_t k = 0; k < n; ++k) clamped[k] = clamp.value(th[k]);
        const double rate = clamp.value(zk) / zk;
        out.log_z[i + 1] = out.log_z[i] + log_density_increment(rate, clamped, path.dw_at(i), grid.dt());
    }
    out.stop_time = grid.time(out.stop_node);
    return out;
}

// -- Novikov ------------------------------------------------------------------

NovikovDiagnostic novikov_diagnostic(const MarketPriceOfRisk& model, const TimeGrid& grid,
                                     const SimConfig& config, double log_cap)
{
    config.validate();
    const std::size_t n = model.dimension();
    const std::size_t steps = grid.steps();
    const double dt = grid.dt();

    const BlockPartition part(config.path_count);
    struct Partial {
        SampleStats novikov;
        SampleStats density;
        std::size_t blowups = 0;
    };
    std::vector<Partial> partials(part.blocks);

    parallel_for(part.blocks, config.workers, [&](std::size_t b) {
        Partial& acc = partials[b];
        std::vector<double> dw(steps * n);
        std::vector<double> w((steps + 1) * n);
        std::vector<double> th(n);
        for (std::size_t p = part.begin(b); p < part.end(b); ++p) {
            const auto noise = path_noise(config, Stream::novikov, p);
            draw_increments(noise.key, noise.sign, n, dt, 0, steps, dw);
            auto stream = model.stream(grid);
            double exponent = 0.0;
            double log_z = 0.0;
            std::fill(w.begin(), w.end(), 0.0);
            for (std::size_t i = 0; i < steps; ++i) {
                stream->next({w.data() + i * n, n}, th);
                double norm2 = 0.0;
                double dot = 0.0;
                for (std::size_t k = 0; k < n; ++k) {
                    norm2 += th[k] * th[k];
                    dot += th[k] * dw[i * n + k];
                    // under P, W is the driving Brownian motion
                    w[(i + 1) * n + k] = w[i * n + k] + dw[i * n + k];
                }
                exponent += 0.5 * norm2 * dt;
                log_z += -dot - 0.5 * norm2 * dt;
            }
            const bool blowup = !(exponent <= log_cap) || !(log_z <= log_cap);
            if (blowup) ++acc.blowups;
            acc.novikov.add(std::exp(std::isfinite(exponent) ? std::min(exponent, log_cap) : log_cap));
            acc.density.add(std::exp(std::isfinite(log_z) ? std::min(log_z, log_cap) : log_cap));
        }
    });

    Partial total;
    for (const auto& p : partials) {
        total.novikov.merge(p.novikov);
        total.density.merge(p.density);
        total.blowups += p.blowups;
    }

    NovikovDiagnostic d;
    d.paths = config.path_count;
    d.novikov_estimate = total.novikov.mean();
    d.novikov_standard_error = total.novikov.standard_error();
    d.mean_terminal_density = total.density.mean();
    d.terminal_density_standard_error = total.density.standard_error();
    d.martingale_gap = std::abs(d.mean_terminal_density - 1.0);
    d.blowup_fraction = static_cast<double>(total.blowups) / static_cast<double>(config.path_count);
    return d;
}

} // namespace clarkhedge
