#include "clarkhedge/mpr_models.hpp"

#include <cmath>
#include <stdexcept>

namespace clarkhedge {

DerivativeKernel::DerivativeKernel(std::size_t node, double time, std::size_t dimension, double dt)
    : node_(node), time_(time), dim_(dimension), dt_(dt)
{
}

void DerivativeKernel::add_atom(KernelAtom atom)
{
    if (atom.node > node_) {
        throw std::domain_error("kernel atom beyond evaluation node (anticipative)");
    }
    if (atom.weight.size() != dim_ * dim_) {
        throw std::invalid_argument("kernel atom weight must be n x n");
    }
    atoms_.push_back(std::move(atom));
}

void DerivativeKernel::set_density(std::vector<double> samples)
{
    if (!samples.empty() && samples.size() != node_ * dim_ * dim_) {
        throw std::invalid_argument("kernel density must hold one n x n block per node before t");
    }
    density_ = std::move(samples);
}

void DerivativeKernel::apply(std::span<const double> gamma, std::span<double> out,
                             std::size_t first_node) const
{
    const std::size_t n = dim_;
    if (gamma.size() < (node_ + 1) * n) {
        throw std::domain_error("gamma does not cover the kernel interval");
    }
    if (out.size() != n) {
        throw std::invalid_argument("kernel output must have the model dimension");
    }
    for (auto& x : out) x = 0.0;

    for (const auto& atom : atoms_) {
        if (atom.node < first_node) continue;
        const double* g = gamma.data() + atom.node * n;
        for (std::size_t r = 0; r < n; ++r) {
            double acc = 0.0;
            for (std::size_t c = 0; c < n; ++c) acc += atom.weight[r * n + c] * g[c];
            out[r] += acc;
        }
    }

    if (density_.empty()) return;
    for (std::size_t r = 0; r < n; ++r) {
        double acc = 0.0;
        for (std::size_t j = first_node; j < node_; ++j) {
            const double* d = density_.data() + (j * n + r) * n;
            const double* g = gamma.data() + j * n;
            for (std::size_t c = 0; c < n; ++c) acc += d[c] * g[c];
        }
        out[r] += acc * dt_;
    }
}

double DerivativeKernel::total_variation() const
{
    auto frobenius = [](const double* m, std::size_t count) {
        double s = 0.0;
        for (std::size_t i = 0; i < count; ++i) s += m[i] * m[i];
        return std::sqrt(s);
    };
    const std::size_t block = dim_ * dim_;
    double tv = 0.0;
    for (const auto& atom : atoms_) tv += frobenius(atom.weight.data(), block);
    for (std::size_t j = 0; j < node_ && !density_.empty(); ++j) {
        tv += frobenius(density_.data() + j * block, block) * dt_;
    }
    return tv;
}

std::vector<double> apply_kernel(const DerivativeKernel& kernel, std::span<const double> gamma)
{
    if (gamma.size() != (kernel.node() + 1) * kernel.dimension()) {
        throw std::domain_error("grid mismatch between kernel and gamma");
    }
    std::vector<double> out(kernel.dimension());
    kernel.apply(gamma, out);
    return out;
}

std::vector<double> MarketPriceOfRisk::evaluate_theta(const TimeGrid& grid, std::size_t node,
                                                      std::span<const double> w) const
{
    const std::size_t n = dimension();
    if (node > grid.steps()) throw std::domain_error("evaluation node outside grid span");
    if (w.size() < (node + 1) * n) throw std::domain_error("path does not reach evaluation time");

    auto s = stream(grid);
    std::vector<double> theta(n);
    for (std::size_t i = 0; i <= node; ++i) s->next(w.subspan(i * n, n), theta);
    return theta;
}

std::vector<double> MarketPriceOfRisk::evaluate_theta(const TimeGrid& grid, double t,
                                                      std::span<const double> w) const
{
    return evaluate_theta(grid, grid.node_at(t), w);
}

// -- constant -----------------------------------------------------------------

namespace {

class ConstantStream final : public ThetaStream {
public:
    explicit ConstantStream(const std::vector<double>& theta) : theta_(theta) {}
    void next(std::span<const double>, std::span<double> out) override
    {
        for (std::size_t k = 0; k < theta_.size(); ++k) out[k] = theta_[k];
    }

private:
    const std::vector<double>& theta_;
};

class OrnsteinUhlenbeckStream final : public ThetaStream {
public:
    OrnsteinUhlenbeckStream(const OrnsteinUhlenbeckMarketPriceOfRisk& model, const TimeGrid& grid)
        : model_(model), grid_(grid), decay_(std::exp(-model.params().mean_reversion * grid.dt()))
    {
    }

    void next(std::span<const double> w_node, std::span<double> out) override
    {
        const auto& p = model_.params();
        const double t = grid_.time(node_);
        const double w = w_node[0];
        // memory_ = sum_{j<i} e^{b(t_j - t_i)} w_j dt
        out[0] = model_.deterministic_part(t) + p.vol * (w - p.mean_reversion * memory_);
        memory_ = decay_ * (memory_ + w * grid_.dt());
        ++node_;
    }

private:
    const OrnsteinUhlenbeckMarketPriceOfRisk& model_;
    TimeGrid grid_;
    double decay_;
    double memory_ = 0.0;
    std::size_t node_ = 0;
};

} // namespace

ConstantMarketPriceOfRisk::ConstantMarketPriceOfRisk(std::vector<double> theta)
    : theta_(std::move(theta))
{
    if (theta_.empty()) throw std::invalid_argument("constant model needs dimension >= 1");
    for (double x : theta_) {
        if (!std::isfinite(x)) throw std::invalid_argument("constant theta must be finite");
    }
}

std::unique_ptr<ThetaStream> ConstantMarketPriceOfRisk::stream(const TimeGrid&) const
{
    return std::make_unique<ConstantStream>(theta_);
}

DerivativeKernel ConstantMarketPriceOfRisk::derivative_kernel(const TimeGrid& grid,
                                                              std::size_t node) const
{
    return DerivativeKernel(node, grid.time(node), dimension(), grid.dt());
}

// -- Ornstein-Uhlenbeck -------------------------------------------------------

std::string to_string(DriftConstantMode mode)
{
    return mode == DriftConstantMode::paper ? "paper" : "standard";
}

DriftConstantMode drift_constant_mode_from_string(const std::string& s)
{
    if (s == "paper") return DriftConstantMode::paper;
    if (s == "standard") return DriftConstantMode::standard;
    throw std::invalid_argument("drift_constant_mode must be 'paper' or 'standard', got '" + s + "'");
}

OrnsteinUhlenbeckMarketPriceOfRisk::OrnsteinUhlenbeckMarketPriceOfRisk(OrnsteinUhlenbeckParams params)
    : p_(params)
{
    if (!(p_.mean_reversion > 0.0) || !std::isfinite(p_.mean_reversion)) {
        throw std::invalid_argument("mean_reversion must be positive");
    }
    if (!(p_.vol > 0.0) || !std::isfinite(p_.vol)) {
        throw std::invalid_argument("vol must be positive");
    }
    if (!std::isfinite(p_.alpha) || !std::isfinite(p_.u0)) {
        throw std::invalid_argument("alpha and u0 must be finite");
    }
}

double OrnsteinUhlenbeckMarketPriceOfRisk::drift_constant() const
{
    const double c = p_.alpha / p_.mean_reversion;
    if (p_.mode == DriftConstantMode::standard) return c;
    return c + p_.vol * p_.vol / (2.0 * p_.mean_reversion);
}

double OrnsteinUhlenbeckMarketPriceOfRisk::deterministic_part(double t) const
{
    const double e = std::exp(-p_.mean_reversion * t);
    return e * p_.u0 + drift_constant() * (1.0 - e);
}

std::unique_ptr<ThetaStream> OrnsteinUhlenbeckMarketPriceOfRisk::stream(const TimeGrid& grid) const
{
    return std::make_unique<OrnsteinUhlenbeckStream>(*this, grid);
}

DerivativeKernel OrnsteinUhlenbeckMarketPriceOfRisk::derivative_kernel(const TimeGrid& grid,
                                                                       std::size_t node) const
{
    const double t = grid.time(node);
    DerivativeKernel kernel(node, t, 1, grid.dt());
    kernel.add_atom({node, t, {p_.vol}});
    if (node > 0) {
        std::vector<double> density(node);
        for (std::size_t j = 0; j < node; ++j) {
            density[j] = -p_.vol * p_.mean_reversion *
                         std::exp(p_.mean_reversion * (grid.time(j) - t));
        }
        kernel.set_density(std::move(density));
    }
    return kernel;
}

double OrnsteinUhlenbeckMarketPriceOfRisk::variation_bound(double horizon) const
{
    if (!(horizon > 0.0)) throw std::invalid_argument("horizon must be positive");
    return p_.vol + p_.vol * (1.0 - std::exp(-p_.mean_reversion * horizon));
}

} // namespace clarkhedge
