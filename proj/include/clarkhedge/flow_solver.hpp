/**
 * @file flow_solver.hpp
 * @brief Linearized flow Phi(t, s) of the state Y = (Z, W) along a simulated path.
 *
 * Column c of Phi(., s) is split into a scalar top entry (the Z perturbation) and
 * an n-vector lower block (the W perturbation).
 *
 * Lower block: d/dt Phi2_c(t, s) = -[Theta'(W) Phi2_c(., s)](t), stepped with
 * explicit Euler and the kernel's rectangle-rule memory integral. For the
 * built-in models the kernel does not depend on the path, so the lower block is
 * shared by every path and cached per anchor.
 *
 * Top row: with K = Theta' Phi2_c, A the Z amplitude, rate the Z-derivative of
 * the amplitude, theta~ the (possibly clamped) theta and D its slope,
 *   dX = rate X (|theta~|^2 dt - theta~' dW~) + 2 A theta~' D K dt - (A D K)' dW~.
 * Writing X = M chi with M the homogeneous multiplier (stepped in log space with
 * the same increment as log Z) leaves
 *   dchi = M^{-1} [ (b - c' gamma) dt - c' dW~ ],  b = 2 A theta~' D K, c = A D K,
 *   gamma = rate theta~,
 * which is stepped with Euler. Untruncated, M = Z / Z(s), so the first column is
 * Z(t)/Z(s) exactly as the discrete density recursion gives it.
 */

#pragma once

#include "clarkhedge/grid.hpp"
#include "clarkhedge/mpr_models.hpp"
#include "clarkhedge/sde_engine.hpp"

#include <span>
#include <vector>

namespace clarkhedge {

/// Row-vector valued measure on the grid: atoms at nodes plus a per-node density.
struct RowAtom {
    std::size_t node;
    std::vector<double> row; ///< length n+1: (z entry, w entries)
};

struct RowMeasure {
    std::size_t width = 0;         ///< n+1
    std::vector<RowAtom> atoms;
    std::vector<double> density;   ///< N x (n+1) samples at nodes 0..N-1, empty = zero
};

class FlowMatrix {
public:
    FlowMatrix(std::size_t anchor, std::size_t dim, std::size_t nodes);

    std::size_t anchor() const { return anchor_; }
    std::size_t dim() const { return dim_; }
    std::size_t nodes() const { return nodes_; }

    /// Entry (row, col) of Phi(t_node, t_anchor); rows/cols 0 = Z, 1..n = W.
    double operator()(std::size_t node, std::size_t row, std::size_t col) const;
    double& at(std::size_t node, std::size_t row, std::size_t col);

    bool valid = true;
    std::size_t path_id = 0;

private:
    std::size_t anchor_;
    std::size_t dim_;
    std::size_t nodes_;
    std::vector<double> data_;
};

/// Per-path coefficients entering the top-row equation.
struct FlowCoefficients {
    std::size_t dim = 1;
    std::vector<double> log_multiplier; ///< N+1, log M from node 0
    std::vector<double> amplitude;      ///< N+1, Z or phi_k(Z_k)
    std::vector<double> rate;           ///< N+1, 1 or phi_k'(Z_k)
    std::vector<double> theta;          ///< (N+1) x n, theta or phi_k(theta)
    std::vector<double> slope;          ///< (N+1) x n, 1 or phi_k'(theta)
    std::span<const double> dw;         ///< borrowed from the path
    bool finite = true;
};

FlowCoefficients flow_coefficients(const StatePath& path, const TimeGrid& grid);
FlowCoefficients truncated_flow_coefficients(const StatePath& path, const TruncatedPath& truncated,
                                             const TimeGrid& grid);

/// Lower block Phi2(., s) for columns 1..n and the kernel terms driving it.
struct LowerBlock {
    struct Column {
        std::vector<double> values; ///< (N+1-s) x n, nodes s..N
        std::vector<double> drive;  ///< (N-s) x n, [Theta' Phi2](t_i), nodes s..N-1
        bool inert = true;          ///< drive identically zero
    };

    std::size_t anchor = 0;
    std::size_t dim = 1;
    std::vector<Column> columns; ///< n entries, column c+1 of Phi

    std::span<const double> value(std::size_t col, std::size_t node) const
    {
        return {columns[col].values.data() + (node - anchor) * dim, dim};
    }
    std::span<const double> drive(std::size_t col, std::size_t node) const
    {
        return {columns[col].drive.data() + (node - anchor) * dim, dim};
    }
};

std::vector<DerivativeKernel> grid_kernels(const MarketPriceOfRisk& model, const TimeGrid& grid);

LowerBlock solve_lower_block(const MarketPriceOfRisk& model, const TimeGrid& grid, std::size_t anchor);
LowerBlock solve_lower_block(std::span<const DerivativeKernel> kernels, const TimeGrid& grid,
                             std::size_t dim, std::size_t anchor);

/// Holds the shared lower blocks for every anchor of a grid.
class FlowSolver {
public:
    FlowSolver(ModelPtr model, TimeGrid grid);

    const MarketPriceOfRisk& model() const { return *model_; }
    const TimeGrid& grid() const { return grid_; }
    std::size_t dim() const { return model_->dimension(); }
    const LowerBlock& lower(std::size_t anchor) const;

    FlowMatrix solve(const StatePath& path, std::size_t anchor) const;
    FlowMatrix solve_truncated(const StatePath& path, const TruncatedPath& truncated,
                               std::size_t anchor) const;
    FlowMatrix solve(const FlowCoefficients& coeffs, std::size_t anchor, std::size_t path_id = 0) const;

    /**
     * Row vector int_{[t_anchor, T]} measure(du) Phi(u, t_anchor): atoms strictly
     * after the anchor, density by the rectangle rule on nodes anchor..N-1.
     */
    std::vector<double> contract(const FlowCoefficients& coeffs, std::size_t anchor,
                                 const RowMeasure& measure) const;

private:
    ModelPtr model_;
    TimeGrid grid_;
    std::vector<LowerBlock> lower_;
};

/// Single-anchor convenience wrappers.
FlowMatrix solve_flow(const MarketPriceOfRisk& model, const StatePath& path, std::size_t anchor,
                      const TimeGrid& grid);
FlowMatrix solve_truncated_flow(const MarketPriceOfRisk& model, const StatePath& path,
                                const TruncatedPath& truncated, std::size_t anchor,
                                const TimeGrid& grid);

struct GronwallResult {
    bool pass = true;
    double max_ratio = 0.0;
};

/// max over lower columns 1..n and nodes v >= s of |Phi2(v,s)| / e^{K (v - s)}.
GronwallResult gronwall_check(const FlowMatrix& flow, const TimeGrid& grid, double bound,
                              double tolerance = 1e-6);

} // namespace clarkhedge
