/**
 * @file mpr_models.hpp
 * @brief Nonanticipative market-price-of-risk functionals and their Frechet derivatives.
 *
 * A model maps a sampled Brownian path w(t_0..t_i) to theta(t_i). The derivative
 * at time t is a finite signed measure on [0, t], stored as point atoms plus a
 * density sampled on the simulation grid. Every time integral over the grid uses
 * the left-endpoint rectangle rule.
 */

#pragma once

#include "clarkhedge/grid.hpp"

#include <memory>
#include <span>
#include <string>
#include <vector>

namespace clarkhedge {

struct KernelAtom {
    std::size_t node;
    double time;
    std::vector<double> weight; ///< n x n, row-major
};

/// Frechet derivative of theta at a fixed evaluation node, as a matrix-valued measure.
class DerivativeKernel {
public:
    DerivativeKernel(std::size_t node, double time, std::size_t dimension, double dt);

    std::size_t node() const { return node_; }
    double time() const { return time_; }
    std::size_t dimension() const { return dim_; }

    const std::vector<KernelAtom>& atoms() const { return atoms_; }
    /// Density samples at nodes 0..node-1, each an n x n row-major block. Empty means zero.
    const std::vector<double>& density() const { return density_; }
    bool empty() const { return atoms_.empty() && density_.empty(); }

    void add_atom(KernelAtom atom);
    void set_density(std::vector<double> samples);

    /**
     * Applies the measure to gamma sampled on nodes 0..node (n values per node).
     * Samples before `first_node` are treated as zero and never read.
     */
    void apply(std::span<const double> gamma, std::span<double> out,
               std::size_t first_node = 0) const;

    /// Sum of atom weight norms plus the quadrature of the density norm (Frobenius).
    double total_variation() const;

private:
    std::size_t node_;
    double time_;
    std::size_t dim_;
    double dt_;
    std::vector<KernelAtom> atoms_;
    std::vector<double> density_;
};

/// Applies the kernel to gamma; gamma must cover exactly nodes 0..kernel.node().
std::vector<double> apply_kernel(const DerivativeKernel& kernel, std::span<const double> gamma);

/// Incremental evaluator: feed w(t_0), w(t_1), ... in order, receive theta(t_i).
class ThetaStream {
public:
    virtual ~ThetaStream() = default;
    virtual void next(std::span<const double> w_node, std::span<double> theta_out) = 0;
};

class MarketPriceOfRisk {
public:
    virtual ~MarketPriceOfRisk() = default;

    virtual std::size_t dimension() const = 0;
    virtual std::string name() const = 0;
    virtual std::unique_ptr<ThetaStream> stream(const TimeGrid& grid) const = 0;
    virtual DerivativeKernel derivative_kernel(const TimeGrid& grid, std::size_t node) const = 0;
    virtual double variation_bound(double horizon) const = 0;

    /// theta(t_node) from the samples of w on nodes 0..node; later samples are ignored.
    std::vector<double> evaluate_theta(const TimeGrid& grid, std::size_t node,
                                       std::span<const double> w) const;
    std::vector<double> evaluate_theta(const TimeGrid& grid, double t,
                                       std::span<const double> w) const;
};

class ConstantMarketPriceOfRisk final : public MarketPriceOfRisk {
public:
    explicit ConstantMarketPriceOfRisk(std::vector<double> theta);

    std::size_t dimension() const override { return theta_.size(); }
    std::string name() const override { return "constant"; }
    std::unique_ptr<ThetaStream> stream(const TimeGrid& grid) const override;
    DerivativeKernel derivative_kernel(const TimeGrid& grid, std::size_t node) const override;
    double variation_bound(double) const override { return 0.0; }

    const std::vector<double>& theta() const { return theta_; }

private:
    std::vector<double> theta_;
};

enum class DriftConstantMode {
    paper,   ///< c = alpha/beta + v^2/(2 beta)
    standard ///< c = alpha/beta
};

std::string to_string(DriftConstantMode mode);
DriftConstantMode drift_constant_mode_from_string(const std::string& s);

struct OrnsteinUhlenbeckParams {
    double alpha = 0.0;
    double mean_reversion = 1.0;
    double vol = 0.2;
    double u0 = 0.0;
    DriftConstantMode mode = DriftConstantMode::paper;
};

/**
 * One-dimensional Ornstein-Uhlenbeck market price of risk written as a pathwise
 * functional of W (stochastic integral removed by integration by parts):
 *
 *   U(t) = e^{-bt} U(0) + c (1 - e^{-bt}) + v [ w(t) - b int_0^t e^{b(u-t)} w(u) du ]
 */
class OrnsteinUhlenbeckMarketPriceOfRisk final : public MarketPriceOfRisk {
public:
    explicit OrnsteinUhlenbeckMarketPriceOfRisk(OrnsteinUhlenbeckParams params);

    std::size_t dimension() const override { return 1; }
    std::string name() const override { return "ornstein_uhlenbeck"; }
    std::unique_ptr<ThetaStream> stream(const TimeGrid& grid) const override;
    DerivativeKernel derivative_kernel(const TimeGrid& grid, std::size_t node) const override;
    double variation_bound(double horizon) const override;

    const OrnsteinUhlenbeckParams& params() const { return p_; }
    double drift_constant() const;
    /// theta along the zero path, i.e. the deterministic part of U(t).
    double deterministic_part(double t) const;

private:
    OrnsteinUhlenbeckParams p_;
};

using ModelPtr = std::shared_ptr<const MarketPriceOfRisk>;

} // namespace clarkhedge
