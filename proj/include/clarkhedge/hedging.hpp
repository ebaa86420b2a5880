/**
 * @file hedging.hpp
 * @brief Clark-Haussmann integrand, its projection onto the filtration and
 *        numerical verification of the martingale representation.
 *
 * For a payoff L(Z, W) with derivative measure mu the integrand is
 *
 *   lambda(t) = [ int_{[t,T]} mu(du) Phi(u, t) ] g(t),   g = ( -Z theta' ; I_n ),
 *
 * and the hedge is beta(t) = E~[ lambda(t) | F_t ]. The truncated integrand
 * lambda_k uses Z_k, Phi_k and g_k = ( -phi_k(Z_k) phi_k(theta)' ; I_n ).
 */

#pragma once

#include "clarkhedge/flow_solver.hpp"
#include "clarkhedge/payoffs.hpp"
#include "clarkhedge/sde_engine.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace clarkhedge {

struct IntegrandPath {
    std::size_t path_id = 0;
    std::size_t dim = 1;
    double level = std::numeric_limits<double>::infinity(); ///< truncation level, inf if none
    std::vector<double> values;                             ///< N x n, nodes 0..N-1
    bool valid = true;

    std::span<const double> at(std::size_t node) const { return {values.data() + node * dim, dim}; }
};

IntegrandPath compute_integrand(const FlowSolver& solver, const Payoff& payoff, const StatePath& path);
IntegrandPath compute_truncated_integrand(const FlowSolver& solver, const Payoff& payoff,
                                          const StatePath& path, const TruncatedPath& truncated);
/// lambda at a single node.
std::vector<double> integrand_at(const FlowSolver& solver, const Payoff& payoff, const StatePath& path,
                                 std::size_t node);

/// Markov features at a node: (Z(t_i), theta_1(t_i), ..., theta_n(t_i)).
std::vector<double> hedge_features(const StatePath& path, std::size_t node);

/**
 * Per-node least-squares regression of lambda(t_i) on polynomials of the
 * standardized features up to a fixed total degree. Constant features and
 * collinear monomials are dropped node by node.
 */
class RegressionHedge {
public:
    struct NodeFit {
        std::vector<std::size_t> raw_kept;        ///< indices into the feature vector
        std::vector<double> raw_mean;
        std::vector<double> raw_scale;
        std::vector<std::vector<int>> monomials;  ///< exponents over raw_kept, kept terms only
        std::vector<double> monomial_mean;
        Eigen::MatrixXd coefficients;             ///< monomials x n
        std::vector<double> intercept;            ///< n
        std::vector<double> standard_error;       ///< n
        std::size_t dropped_collinear = 0;
    };

    RegressionHedge(std::size_t dim, int degree, std::vector<NodeFit> nodes);

    std::size_t dim() const { return dim_; }
    int degree() const { return degree_; }
    std::size_t steps() const { return nodes_.size(); }
    const NodeFit& node(std::size_t i) const { return nodes_.at(i); }

    void predict(std::size_t node, std::span<const double> features, std::span<double> out) const;
    std::vector<double> predict(std::size_t node, std::span<const double> features) const;
    std::vector<double> predict(const StatePath& path, std::size_t node) const;

    /// Nodes where at least one candidate term had to be dropped.
    std::size_t reduced_nodes() const;
    std::vector<std::string> warnings() const;

private:
    std::size_t dim_;
    int degree_;
    std::vector<NodeFit> nodes_;
};

RegressionHedge fit_regression(std::span<const StatePath> paths, std::span<const IntegrandPath> integrands,
                               const TimeGrid& grid, int degree);
/// Streams the ensemble twice (feature moments, then normal equations); memory is O(N).
RegressionHedge fit_regression(const FlowSolver& solver, const Payoff& payoff, const SimConfig& config,
                               int degree, Stream stream = Stream::fit);

struct ConditionalEstimate {
    std::vector<double> mean;
    std::vector<double> standard_error;
    std::vector<double> samples; ///< branches x n
    std::size_t branches = 0;
};

/// Unbiased E~[lambda(t_node) | F_node]: continue the path's history along `branches` sub-paths.
ConditionalEstimate nested_conditional_integrand(const FlowSolver& solver, const Payoff& payoff,
                                                 const StatePath& path, std::size_t node,
                                                 std::size_t branches, std::uint64_t seed);

enum class ProjectionMethod { regression, nested_mc };
std::string to_string(ProjectionMethod m);

struct ProjectionOptions {
    ProjectionMethod method = ProjectionMethod::regression;
    int degree = 3;
    std::size_t branches = 100;
    std::uint64_t seed = 1; ///< nested branches only
};

struct HedgeEstimate {
    ProjectionMethod method = ProjectionMethod::regression;
    std::size_t dim = 1;
    std::size_t steps = 0;
    std::vector<double> beta;           ///< N x n, ensemble mean of beta(t_i)
    std::vector<double> standard_error; ///< N x n
    std::vector<double> per_path;       ///< paths x N x n when produced in memory
    std::optional<RegressionHedge> regression;
    std::size_t branches = 0;
};

HedgeEstimate project_integrand(std::span<const StatePath> paths, std::span<const IntegrandPath> integrands,
                                const ProjectionOptions& options, const FlowSolver& solver,
                                const Payoff& payoff);

struct VerifyOptions {
    ProjectionOptions projection;
    double rms_abs_threshold = 1e-12;
    double rms_rel_threshold = 0.1; ///< relative to the payoff's standard deviation
};

struct ResidualSample {
    std::size_t path_id;
    double residual;
};

struct TruncationRow {
    double level = 0.0;
    double l2_distance = 0.0;      ///< mean over paths of sum_i |lambda_k - lambda|^2 dt
    double l2_standard_error = 0.0;
    double horizon_fraction = 0.0; ///< fraction of paths with tau_k = T
    double sup_z_pow_m2 = 0.0;     ///< mean of sup_t Z_k(t)^-2
    double sup_z_pow_2 = 0.0;      ///< mean of sup_t Z_k(t)^2
    std::size_t paths_below_level = 0;      ///< running sup < k
    std::size_t coincidence_violations = 0; ///< of those, lambda_k != lambda bitwise
};

struct TruncationStudy {
    std::vector<TruncationRow> rows;
    double ensemble_running_sup = 0.0;
    double sup_z_pow_m2 = 0.0;
    double sup_z_pow_2 = 0.0;
    bool nonincreasing = true;
    std::size_t valid_paths = 0;
    std::size_t invalid_paths = 0;
};

struct HedgeReport {
    std::string model;
    std::string payoff;
    double expected_payoff = 0.0;
    double expected_payoff_standard_error = 0.0;
    double payoff_stddev = 0.0;
    std::vector<ResidualSample> residuals;
    double residual_mean = 0.0;
    double residual_standard_error = 0.0;
    double residual_rms = 0.0;
    double residual_max_abs = 0.0;
    double rms_threshold = 0.0;
    bool mean_within_3se = false;
    bool rms_below_threshold = false;
    bool pass = false;
    std::size_t valid_paths = 0;
    std::size_t invalid_paths = 0;
    HedgeEstimate estimate;
    TruncationStudy truncation;
    double runtime_seconds = 0.0; ///< wall clock, never serialized
};

/// Fits beta on one ensemble and measures L - E~L - sum beta' dW~ on an independent one.
HedgeReport verify_representation(const FlowSolver& solver, const Payoff& payoff, const SimConfig& config,
                                  const VerifyOptions& options);

/// Pathwise L2 distance between lambda_k and lambda for each level, on one shared ensemble.
TruncationStudy truncation_convergence(const FlowSolver& solver, const Payoff& payoff,
                                       const SimConfig& config, std::span<const double> levels);

struct MeanVarianceSolution {
    double lambda1 = 0.0;
    double lambda2 = 0.0;
    double lambda2_standard_error = 0.0;
    double budget_moment = 0.0; ///< E~[Z(T)]
    double budget_moment_standard_error = 0.0;
    double mean_moment = 0.0;   ///< E_P[Z(T)] = E~[Z(T) / Z(T)]
    double martingale_gap = 0.0; ///< |E~[1/Z(T)] - 1|
    double martingale_gap_standard_error = 0.0;
    double condition_number = 0.0;
    std::size_t paths = 0;
};

class SingularSystemError : public std::domain_error {
public:
    SingularSystemError(const std::string& what, double condition_number)
        : std::domain_error(what), condition_number_(condition_number)
    {
    }
    double condition_number() const { return condition_number_; }

private:
    double condition_number_;
};

/**
 * Multipliers of the mean-variance optimal wealth V(T) = lambda1 + lambda2 Z(T)
 * from the budget E~[V] = x0 and the target E_P[V] = m.
 */
MeanVarianceSolution mean_variance_multipliers(const MarketPriceOfRisk& model, const TimeGrid& grid,
                                               const SimConfig& config, double initial_wealth,
                                               double target_mean);

} // namespace clarkhedge
