/**
 * @file sde_engine.hpp
 * @brief Simulation of the state (Z, W) under the risk-neutral measure.
 *
 * Under Q the driving noise is W~. The physical Brownian motion follows
 *   W(t_{i+1}) = W(t_i) + dW~_i - theta(t_i) dt
 * and the density process is stepped in log space,
 *   log Z(t_{i+1}) = log Z(t_i) + 1/2 |theta(t_i)|^2 dt - theta(t_i)' dW~_i,
 * which keeps Z strictly positive.
 */

#pragma once

#include "clarkhedge/grid.hpp"
#include "clarkhedge/mpr_models.hpp"

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace clarkhedge {

enum class Scheme { log_euler };

struct SimConfig {
    std::size_t path_count = 1000;
    std::uint64_t master_seed = 1;
    Scheme scheme = Scheme::log_euler;
    bool antithetic = false;
    std::size_t workers = 1; ///< 0 = hardware concurrency; never affects results

    void validate() const;
};

/// Independent ensembles drawn from one master seed.
enum class Stream : std::uint64_t {
    simulate = 0,
    fit = 1,
    evaluate = 2,
    novikov = 3,
    multipliers = 4,
    truncation = 5,
};

/// Per-path key and sign: antithetic partners share a key and flip the sign.
struct PathNoise {
    std::uint64_t key;
    double sign;
};
PathNoise path_noise(const SimConfig& config, Stream stream, std::size_t path_index);

struct StatePath {
    std::size_t path_id = 0;
    std::uint64_t path_seed = 0;
    std::size_t dim = 1;
    std::vector<double> dw;    ///< N x n risk-neutral increments
    std::vector<double> w;     ///< (N+1) x n
    std::vector<double> log_z; ///< N+1
    std::vector<double> theta; ///< (N+1) x n
    bool valid = true;
    std::string diagnostic;

    std::size_t steps() const { return log_z.empty() ? 0 : log_z.size() - 1; }
    std::span<const double> dw_at(std::size_t i) const { return {dw.data() + i * dim, dim}; }
    std::span<const double> w_at(std::size_t i) const { return {w.data() + i * dim, dim}; }
    std::span<const double> theta_at(std::size_t i) const { return {theta.data() + i * dim, dim}; }
    double z(std::size_t i) const;
    /// max(Z(t_i), max_j |theta_j(t_i)|) over all nodes
    double running_sup() const;
};

/**
 * Increment of log Z over one step for dZ = rate * Z (|theta|^2 dt - theta' dW~).
 * rate = 1 gives the untruncated density; the truncated dynamics and the flow
 * multiplier reuse the same expression so inactive clamps reproduce it bit for bit.
 */
double log_density_increment(double rate, std::span<const double> theta,
                             std::span<const double> dw, double dt);

/// Builds a path from given risk-neutral increments (N x n).
StatePath simulate_from_increments(const MarketPriceOfRisk& model, const TimeGrid& grid,
                                   std::vector<double> dw, std::size_t path_id = 0,
                                   std::uint64_t path_seed = 0);

/// Fills dW~ for nodes [first, N) from the counter-based generator.
void draw_increments(std::uint64_t key, double sign, std::size_t dim, double dt,
                     std::size_t first, std::size_t steps, std::span<double> dw);

StatePath simulate_path(const MarketPriceOfRisk& model, const TimeGrid& grid,
                        const SimConfig& config, Stream stream, std::size_t path_index);

std::vector<StatePath> simulate_paths(const MarketPriceOfRisk& model, const TimeGrid& grid,
                                      const SimConfig& config, Stream stream = Stream::simulate);

/**
 * Smooth clamp phi_k: identity on [-k, k], beyond it
 *   sign(x) (k + (|x|-k) / (1 + (|x|-k)/k)),
 * which is C^1, odd, monotone, |phi_k(x)| <= |x|, |phi_k'| <= 1 and |phi_k| < 2k.
 * An infinite level is the identity.
 */
class Clamp {
public:
    explicit Clamp(double level = std::numeric_limits<double>::infinity());

    double level() const { return level_; }
    double value(double x) const;
    double derivative(double x) const;

private:
    double level_;
};

struct TruncatedPath {
    double level = 0.0;
    std::vector<double> log_z; ///< log Z_k on the grid
    std::size_t stop_node = 0; ///< tau_k as a node index
    double stop_time = 0.0;

    double z(std::size_t i) const;
};

/// Recomputes Z_k under the clamped dynamics and locates tau_k on the grid.
TruncatedPath truncate_path(const StatePath& path, double level, const TimeGrid& grid);

struct NovikovDiagnostic {
    double novikov_estimate = 0.0;
    double novikov_standard_error = 0.0;
    double martingale_gap = 0.0; ///< |E_P[Z(T)] - 1|
    double mean_terminal_density = 0.0;
    double terminal_density_standard_error = 0.0;
    double blowup_fraction = 0.0;
    std::size_t paths = 0;
};

/**
 * Simulates W under P and averages exp(1/2 int |theta|^2) and Z(T).
 * Exponents beyond `log_cap` are capped and counted as blow-ups.
 */
NovikovDiagnostic novikov_diagnostic(const MarketPriceOfRisk& model, const TimeGrid& grid,
                                     const SimConfig& config, double log_cap = 50.0);

} // namespace clarkhedge
