#include "clarkhedge/payoffs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace clarkhedge {

namespace {

double ipow(double x, int e)
{
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= x;
    return r;
}

void check_path_sizes(std::span<const double> z, std::span<const double> w, std::size_t n,
                      const TimeGrid& grid)
{
    if (z.size() != grid.nodes() || w.size() != grid.nodes() * n) {
        throw std::domain_error("payoff paths do not match the grid");
    }
}

} // namespace

Polynomial::Polynomial(std::size_t dim, std::vector<Monomial> terms)
    : dim_(dim), terms_(std::move(terms))
{
    if (dim_ == 0) throw std::invalid_argument("polynomial dimension must be >= 1");
    for (const auto& t : terms_) {
        if (t.exponents.size() != dim_) {
            throw std::invalid_argument("monomial needs one exponent per coordinate");
        }
        int d = 0;
        for (int e : t.exponents) {
            if (e < 0) throw std::invalid_argument("negative exponent in polynomial");
            d += e;
        }
        if (d > max_degree) {
            throw std::invalid_argument("polynomial degree above " + std::to_string(max_degree));
        }
        if (!std::isfinite(t.coefficient)) throw std::invalid_argument("non-finite coefficient");
        degree_ = std::max(degree_, d);
    }
}

double Polynomial::value(std::span<const double> x) const
{
    double v = 0.0;
    for (const auto& t : terms_) {
        double m = t.coefficient;
        for (std::size_t k = 0; k < dim_; ++k) m *= ipow(x[k], t.exponents[k]);
        v += m;
    }
    return v;
}

void Polynomial::gradient(std::span<const double> x, std::span<double> out) const
{
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& t : terms_) {
        for (std::size_t j = 0; j < dim_; ++j) {
            const int ej = t.exponents[j];
            if (ej == 0) continue;
            double m = t.coefficient * ej;
            for (std::size_t k = 0; k < dim_; ++k) {
                m *= ipow(x[k], k == j ? ej - 1 : t.exponents[k]);
            }
            out[j] += m;
        }
    }
}

double Polynomial::hessian_bound() const
{
    double k = 0.0;
    for (const auto& t : terms_) {
        int d = 0;
        for (int e : t.exponents) d += e;
        k += std::abs(t.coefficient) * static_cast<double>(d * d - d);
    }
    return k;
}

Payoff::Payoff(std::size_t dim, Variant v) : dim_(dim), v_(std::move(v))
{
    if (dim_ == 0) throw std::invalid_argument("payoff dimension must be >= 1");
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, AffineTerminal>) {
                if (!std::isfinite(p.lambda1) || !std::isfinite(p.lambda2)) {
                    throw std::invalid_argument("affine payoff multipliers must be finite");
                }
            } else if constexpr (std::is_same_v<T, TerminalSmooth>) {
                if (p.h.dim() != dim_) throw std::invalid_argument("polynomial dimension mismatch");
            } else {
                if (p.phi.dim() != dim_) throw std::invalid_argument("polynomial dimension mismatch");
            }
        },
        v_);
}

Payoff Payoff::affine_terminal(std::size_t dim, double lambda1, double lambda2)
{
    return Payoff(dim, AffineTerminal{lambda1, lambda2});
}

Payoff Payoff::terminal(Polynomial h)
{
    const std::size_t n = h.dim();
    return Payoff(n, TerminalSmooth{std::move(h)});
}

Payoff Payoff::integral(Polynomial phi)
{
    const std::size_t n = phi.dim();
    return Payoff(n, IntegralFunctional{std::move(phi)});
}

std::string Payoff::name() const
{
    switch (v_.index()) {
    case 0: return "affine_terminal";
    case 1: return "terminal_polynomial";
    default: return "integral_polynomial";
    }
}

double Payoff::evaluate(std::span<const double> z, std::span<const double> w,
                        const TimeGrid& grid) const
{
    check_path_sizes(z, w, dim_, grid);
    const std::size_t last = grid.steps();
    if (const auto* a = std::get_if<AffineTerminal>(&v_)) {
        return a->lambda1 + a->lambda2 * z[last];
    }
    if (const auto* t = std::get_if<TerminalSmooth>(&v_)) {
        return t->h.value(w.subspan(last * dim_, dim_));
    }
    const auto& f = std::get<IntegralFunctional>(v_);
    double s = 0.0;
    for (std::size_t i = 0; i < last; ++i) s += f.phi.value(w.subspan(i * dim_, dim_));
    return s * grid.dt();
}

double Payoff::evaluate(const StatePath& path, const TimeGrid& grid) const
{
    return evaluate(density_path(path), path.w, grid);
}

RowMeasure Payoff::derivative_measure(std::span<const double> z, std::span<const double> w,
                                      const TimeGrid& grid) const
{
    check_path_sizes(z, w, dim_, grid);
    const std::size_t width = dim_ + 1;
    const std::size_t last = grid.steps();
    RowMeasure mu;
    mu.width = width;

    if (const auto* a = std::get_if<AffineTerminal>(&v_)) {
        if (a->lambda2 != 0.0) {
            RowAtom atom{last, std::vector<double>(width, 0.0)};
            atom.row[0] = a->lambda2;
            mu.atoms.push_back(std::move(atom));
        }
        return mu;
    }
    if (const auto* t = std::get_if<TerminalSmooth>(&v_)) {
        RowAtom atom{last, std::vector<double>(width, 0.0)};
        t->h.gradient(w.subspan(last * dim_, dim_), std::span<double>(atom.row).subspan(1));
        mu.atoms.push_back(std::move(atom));
        return mu;
    }
    const auto& f = std::get<IntegralFunctional>(v_);
    mu.density.assign(last * width, 0.0);
    for (std::size_t i = 0; i < last; ++i) {
        f.phi.gradient(w.subspan(i * dim_, dim_),
                       std::span<double>(mu.density.data() + i * width + 1, dim_));
    }
    return mu;
}

RowMeasure Payoff::derivative_measure(const StatePath& path, const TimeGrid& grid) const
{
    return derivative_measure(density_path(path), path.w, grid);
}

GrowthConstants Payoff::growth(const TimeGrid& grid) const
{
    if (std::holds_alternative<AffineTerminal>(v_)) return {0.0, 1.0, 1.0};
    const Polynomial& p = std::holds_alternative<TerminalSmooth>(v_)
                              ? std::get<TerminalSmooth>(v_).h
                              : std::get<IntegralFunctional>(v_).phi;
    GrowthConstants g;
    g.k = p.hessian_bound();
    if (std::holds_alternative<IntegralFunctional>(v_)) g.k *= grid.horizon();
    g.beta = std::max(p.degree() - 2, 1);
    g.rho = 1.0;
    return g;
}

std::vector<double> density_path(const StatePath& path)
{
    std::vector<double> z(path.log_z.size());
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = path.z(i);
    return z;
}

double pair_measure(const RowMeasure& mu, std::span<const double> dz, std::span<const double> dw,
                    const TimeGrid& grid)
{
    const std::size_t n = mu.width - 1;
    auto row_dot = [&](const double* row, std::size_t node) {
        double s = row[0] * dz[node];
        for (std::size_t k = 0; k < n; ++k) s += row[k + 1] * dw[node * n + k];
        return s;
    };
    double total = 0.0;
    for (const auto& atom : mu.atoms) total += row_dot(atom.row.data(), atom.node);
    if (!mu.density.empty()) {
        double s = 0.0;
        for (std::size_t i = 0; i < grid.steps(); ++i) s += row_dot(mu.density.data() + i * mu.width, i);
        total += s * grid.dt();
    }
    return total;
}

double measure_distance(const RowMeasure& a, const RowMeasure& b, const TimeGrid& grid)
{
    if (a.width != b.width) throw std::invalid_argument("measures of different width");
    const std::size_t w = a.width;
    const std::size_t nodes = grid.nodes();
    std::vector<double> atoms(nodes * w, 0.0);
    std::vector<double> dens(grid.steps() * w, 0.0);
    auto add = [&](const RowMeasure& m, double sign) {
        for (const auto& atom : m.atoms) {
            for (std::size_t k = 0; k < w; ++k) atoms[atom.node * w + k] += sign * atom.row[k];
        }
        for (std::size_t i = 0; i < m.density.size(); ++i) dens[i] += sign * m.density[i];
    };
    add(a, 1.0);
    add(b, -1.0);

    auto norm = [w](const double* r) {
        double s = 0.0;
        for (std::size_t k = 0; k < w; ++k) s += r[k] * r[k];
        return std::sqrt(s);
    };
    double tv = 0.0;
    for (std::size_t i = 0; i < nodes; ++i) tv += norm(atoms.data() + i * w);
    double d = 0.0;
    for (std::size_t i = 0; i < grid.steps(); ++i) d += norm(dens.data() + i * w);
    return tv + d * grid.dt();
}

} // namespace clarkhedge
