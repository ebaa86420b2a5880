/**
 * @file payoffs.hpp
 * @brief Payoff functionals L(z, w) and their derivative measures mu(du, z, w).
 *
 * A derivative measure is a row-vector measure of width n+1 whose first entry
 * pairs with the z perturbation and the remaining n with the w perturbation.
 */

#pragma once

#include "clarkhedge/flow_solver.hpp"
#include "clarkhedge/grid.hpp"
#include "clarkhedge/sde_engine.hpp"

#include <span>
#include <string>
#include <variant>
#include <vector>

namespace clarkhedge {

struct Monomial {
    double coefficient = 0.0;
    std::vector<int> exponents; ///< one per coordinate
};

/// Polynomial map R^n -> R of total degree <= 4.
class Polynomial {
public:
    static constexpr int max_degree = 4;

    Polynomial(std::size_t dim, std::vector<Monomial> terms);

    std::size_t dim() const { return dim_; }
    int degree() const { return degree_; }
    const std::vector<Monomial>& terms() const { return terms_; }

    double value(std::span<const double> x) const;
    void gradient(std::span<const double> x, std::span<double> out) const;

    /// Sum over terms of |c| d(d-1): bounds the Frobenius norm of the Hessian by
    /// this constant times (1 + |x|^{max(D-2, 1)}) for total degree D.
    double hessian_bound() const;

private:
    std::size_t dim_;
    std::vector<Monomial> terms_;
    int degree_ = 0;
};

/// Declared constants of |L'(y1) - L'(y2)| <= K (1+|y1|^b)(1+|y2|^b) |y1-y2|^rho.
struct GrowthConstants {
    double k = 0.0;
    double beta = 1.0;
    double rho = 1.0;
};

struct AffineTerminal {
    double lambda1 = 0.0;
    double lambda2 = 1.0;
};

struct TerminalSmooth {
    Polynomial h;
};

struct IntegralFunctional {
    Polynomial phi;
};

class Payoff {
public:
    using Variant = std::variant<AffineTerminal, TerminalSmooth, IntegralFunctional>;

    Payoff(std::size_t dim, Variant v);

    static Payoff affine_terminal(std::size_t dim, double lambda1, double lambda2);
    static Payoff terminal(Polynomial h);
    static Payoff integral(Polynomial phi);

    std::size_t dim() const { return dim_; }
    const Variant& variant() const { return v_; }
    std::string name() const;

    /// z holds Z(t_0..t_N); w holds (N+1) x n samples.
    double evaluate(std::span<const double> z, std::span<const double> w, const TimeGrid& grid) const;
    double evaluate(const StatePath& path, const TimeGrid& grid) const;

    RowMeasure derivative_measure(std::span<const double> z, std::span<const double> w,
                                  const TimeGrid& grid) const;
    RowMeasure derivative_measure(const StatePath& path, const TimeGrid& grid) const;

    GrowthConstants growth(const TimeGrid& grid) const;

private:
    std::size_t dim_;
    Variant v_;
};

std::vector<double> density_path(const StatePath& path);

/// <mu, (dz, dw)>: atoms plus rectangle-rule density.
double pair_measure(const RowMeasure& mu, std::span<const double> dz, std::span<const double> dw,
                    const TimeGrid& grid);

/// Total variation of mu1 - mu2 (Euclidean row norms).
double measure_distance(const RowMeasure& a, const RowMeasure& b, const TimeGrid& grid);

} // namespace clarkhedge
