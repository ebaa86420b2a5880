#include "clarkhedge/hedging.hpp"

#include "clarkhedge/stats.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>

namespace clarkhedge {

// -- integrand ----------------------------------------------------------------

namespace {

void lambda_row(const FlowSolver& solver, const FlowCoefficients& co, const RowMeasure& mu,
                std::size_t node, double* out)
{
    const std::size_t n = co.dim;
    const auto acc = solver.contract(co, node, mu);
    const double a = co.amplitude[node];
    for (std::size_t j = 0; j < n; ++j) out[j] = acc[0] * (-a * co.theta[node * n + j]) + acc[j + 1];
}

IntegrandPath assemble_integrand(const FlowSolver& solver, const FlowCoefficients& co,
                                 const RowMeasure& mu, std::size_t path_id, double level)
{
    const std::size_t n = co.dim;
    const std::size_t steps = solver.grid().steps();
    IntegrandPath out;
    out.path_id = path_id;
    out.dim = n;
    out.level = level;
    out.values.assign(steps * n, 0.0);
    out.valid = co.finite;
    if (!out.valid) return out;
    for (std::size_t m = 0; m < steps; ++m) lambda_row(solver, co, mu, m, out.values.data() + m * n);
    for (double x : out.values) {
        if (!std::isfinite(x)) {
            out.valid = false;
            break;
        }
    }
    return out;
}

void check_path(const FlowSolver& solver, const StatePath& path)
{
    if (path.dim != solver.dim() || path.steps() != solver.grid().steps()) {
        throw std::domain_error("path does not match the solver's model or grid");
    }
}

} // namespace

IntegrandPath compute_integrand(const FlowSolver& solver, const Payoff& payoff, const StatePath& path)
{
    check_path(solver, path);
    const auto co = flow_coefficients(path, solver.grid());
    const auto mu = payoff.derivative_measure(path, solver.grid());
    return assemble_integrand(solver, co, mu, path.path_id, std::numeric_limits<double>::infinity());
}

IntegrandPath compute_truncated_integrand(const FlowSolver& solver, const Payoff& payoff,
                                          const StatePath& path, const TruncatedPath& truncated)
{
    check_path(solver, path);
    const auto co = truncated_flow_coefficients(path, truncated, solver.grid());
    std::vector<double> zk(truncated.log_z.size());
    for (std::size_t i = 0; i < zk.size(); ++i) zk[i] = truncated.z(i);
    const auto mu = payoff.derivative_measure(zk, path.w, solver.grid());
    return assemble_integrand(solver, co, mu, path.path_id, truncated.level);
}

std::vector<double> integrand_at(const FlowSolver& solver, const Payoff& payoff, const StatePath& path,
                                 std::size_t node)
{
    check_path(solver, path);
    if (node >= solver.grid().steps()) throw std::out_of_range("integrand node must be < N");
    const auto co = flow_coefficients(path, solver.grid());
    const auto mu = payoff.derivative_measure(path, solver.grid());
    std::vector<double> out(path.dim);
    lambda_row(solver, co, mu, node, out.data());
    return out;
}

namespace {

void fill_features(const StatePath& path, std::size_t node, std::span<double> out)
{
    out[0] = path.z(node);
    const auto th = path.theta_at(node);
    std::copy(th.begin(), th.end(), out.begin() + 1);
}

} // namespace

std::vector<double> hedge_features(const StatePath& path, std::size_t node)
{
    std::vector<double> f(path.dim + 1);
    fill_features(path, node, f);
    return f;
}

// -- regression ---------------------------------------------------------------

namespace {

constexpr double constant_feature_tol = 1e-12;
constexpr double collinear_tol = 1e-10;

double ipow(double x, int e)
{
    double r = 1.0;
    for (int i = 0; i < e; ++i) r *= x;
    return r;
}

/// Running mean, centered second moment and range (Chan et al. merge).
struct Moments {
    double count = 0.0;
    double mean = 0.0;
    double m2 = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();

    void add(double x)
    {
        count += 1.0;
        const double d = x - mean;
        mean += d / count;
        m2 += d * (x - mean);
        lo = std::min(lo, x);
        hi = std::max(hi, x);
    }

    void merge(const Moments& o)
    {
        if (o.count == 0.0) return;
        if (count == 0.0) {
            *this = o;
            return;
        }
        const double total = count + o.count;
        const double d = o.mean - mean;
        mean += d * o.count / total;
        m2 += o.m2 + d * d * count * o.count / total;
        count = total;
        lo = std::min(lo, o.lo);
        hi = std::max(hi, o.hi);
    }
};

/// Exponent vectors over q variables with total degree 1..d, by degree then lexicographic.
std::vector<std::vector<int>> monomial_basis(std::size_t q, int degree)
{
    std::vector<std::vector<int>> out;
    std::vector<int> e(q, 0);
    std::function<void(std::size_t, int)> rec = [&](std::size_t v, int left) {
        if (v + 1 == q) {
            e[v] = left;
            out.push_back(e);
            return;
        }
        for (int k = left; k >= 0; --k) {
            e[v] = k;
            rec(v + 1, left - k);
        }
    };
    if (q == 0) return out;
    for (int d = 1; d <= degree; ++d) rec(0, d);
    return out;
}

struct NodeDesign {
    std::vector<std::size_t> raw_kept;
    std::vector<double> raw_mean;
    std::vector<double> raw_scale;
    std::vector<std::vector<int>> monomials;
    bool raw_dropped = false;
};

void evaluate_monomials(const NodeDesign& d, std::span<const double> raw, int degree,
                        std::vector<double>& powers, std::span<double> out)
{
    const std::size_t q = d.raw_kept.size();
    const std::size_t stride = static_cast<std::size_t>(degree) + 1;
    powers.resize(q * stride);
    for (std::size_t v = 0; v < q; ++v) {
        const double x = (raw[d.raw_kept[v]] - d.raw_mean[v]) / d.raw_scale[v];
        double p = 1.0;
        for (std::size_t e = 0; e < stride; ++e) {
            powers[v * stride + e] = p;
            p *= x;
        }
    }
    for (std::size_t k = 0; k < d.monomials.size(); ++k) {
        double m = 1.0;
        for (std::size_t v = 0; v < q; ++v) m *= powers[v * stride + static_cast<std::size_t>(d.monomials[k][v])];
        out[k] = m;
    }
}

/// Raw sums of the normal equations at one node.
struct NormalSums {
    std::size_t p = 0;
    std::size_t n = 0;
    double count = 0.0;
    std::vector<double> sm, smm, sy, smy, syy;

    void init(std::size_t terms, std::size_t outputs)
    {
        p = terms;
        n = outputs;
        sm.assign(p, 0.0);
        smm.assign(p * p, 0.0);
        sy.assign(n, 0.0);
        smy.assign(p * n, 0.0);
        syy.assign(n, 0.0);
    }

    void add(std::span<const double> m, std::span<const double> y)
    {
        count += 1.0;
        for (std::size_t j = 0; j < p; ++j) {
            sm[j] += m[j];
            for (std::size_t k = j; k < p; ++k) smm[j * p + k] += m[j] * m[k];
            for (std::size_t r = 0; r < n; ++r) smy[j * n + r] += m[j] * y[r];
        }
        for (std::size_t r = 0; r < n; ++r) {
            sy[r] += y[r];
            syy[r] += y[r] * y[r];
        }
    }

    void merge(const NormalSums& o)
    {
        count += o.count;
        for (std::size_t i = 0; i < sm.size(); ++i) sm[i] += o.sm[i];
        for (std::size_t i = 0; i < smm.size(); ++i) smm[i] += o.smm[i];
        for (std::size_t i = 0; i < sy.size(); ++i) sy[i] += o.sy[i];
        for (std::size_t i = 0; i < smy.size(); ++i) smy[i] += o.smy[i];
        for (std::size_t i = 0; i < syy.size(); ++i) syy[i] += o.syy[i];
    }
};

NodeDesign design_from_moments(std::span<const Moments> raw, int degree)
{
    NodeDesign d;
    for (std::size_t v = 0; v < raw.size(); ++v) {
        const auto& mo = raw[v];
        const double span = mo.hi - mo.lo;
        const double sd = mo.count > 1.0 ? std::sqrt(mo.m2 / (mo.count - 1.0)) : 0.0;
        if (mo.count < 2.0 || !(span > constant_feature_tol * std::max(1.0, std::abs(mo.mean))) || !(sd > 0.0)) {
            d.raw_dropped = true;
            continue;
        }
        d.raw_kept.push_back(v);
        d.raw_mean.push_back(mo.mean);
        d.raw_scale.push_back(sd);
    }
    d.monomials = monomial_basis(d.raw_kept.size(), degree);
    return d;
}

RegressionHedge::NodeFit solve_node(const NodeDesign& d, const NormalSums& s)
{
    RegressionHedge::NodeFit fit;
    fit.raw_kept = d.raw_kept;
    fit.raw_mean = d.raw_mean;
    fit.raw_scale = d.raw_scale;
    const std::size_t p = s.p;
    const std::size_t n = s.n;
    const double c = s.count;

    fit.intercept.assign(n, 0.0);
    fit.standard_error.assign(n, 0.0);
    if (c == 0.0) {
        fit.coefficients = Eigen::MatrixXd::Zero(0, static_cast<Eigen::Index>(n));
        return fit;
    }

    Eigen::VectorXd mbar(p);
    for (std::size_t j = 0; j < p; ++j) mbar(j) = s.sm[j] / c;
    Eigen::VectorXd ybar(n);
    for (std::size_t r = 0; r < n; ++r) ybar(r) = s.sy[r] / c;

    Eigen::MatrixXd cov(p, p);
    for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t k = j; k < p; ++k) {
            cov(j, k) = s.smm[j * p + k] / c - mbar(j) * mbar(k);
            cov(k, j) = cov(j, k);
        }
    }
    Eigen::MatrixXd cross(p, n);
    for (std::size_t j = 0; j < p; ++j) {
        for (std::size_t r = 0; r < n; ++r) cross(j, r) = s.smy[j * n + r] / c - mbar(j) * ybar(r);
    }

    // greedy pivot-free Cholesky: terms that add no new direction are dropped
    std::vector<std::size_t> kept;
    Eigen::MatrixXd chol = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t j = 0; j < p; ++j) {
        const double cjj = cov(j, j);
        if (!(cjj > collinear_tol)) {
            ++fit.dropped_collinear;
            continue;
        }
        const auto q = static_cast<Eigen::Index>(kept.size());
        Eigen::VectorXd col(q);
        for (Eigen::Index a = 0; a < q; ++a) col(a) = cov(static_cast<Eigen::Index>(kept[a]), j);
        Eigen::VectorXd l = chol.topLeftCorner(q, q).triangularView<Eigen::Lower>().solve(col);
        const double rem = cjj - l.squaredNorm();
        if (!(rem > collinear_tol * cjj)) {
            ++fit.dropped_collinear;
            continue;
        }
        chol.block(q, 0, 1, q) = l.transpose();
        chol(q, q) = std::sqrt(rem);
        kept.push_back(j);
    }

    const auto q = static_cast<Eigen::Index>(kept.size());
    Eigen::MatrixXd rhs(q, n);
    for (Eigen::Index a = 0; a < q; ++a) rhs.row(a) = cross.row(static_cast<Eigen::Index>(kept[a]));
    const auto low = chol.topLeftCorner(q, q).triangularView<Eigen::Lower>();
    Eigen::MatrixXd coef = low.transpose().solve(low.solve(rhs));

    fit.coefficients = coef;
    for (Eigen::Index a = 0; a < q; ++a) {
        fit.monomials.push_back(d.monomials[kept[a]]);
        fit.monomial_mean.push_back(mbar(static_cast<Eigen::Index>(kept[a])));
    }
    const double dof = c - 1.0 - static_cast<double>(q);
    for (std::size_t r = 0; r < n; ++r) {
        fit.intercept[r] = ybar(r);
        double resid = s.syy[r] / c - ybar(r) * ybar(r);
        for (Eigen::Index a = 0; a < q; ++a) resid -= coef(a, r) * rhs(a, r);
        resid = std::max(resid, 0.0);
        fit.standard_error[r] = dof > 0.0 ? std::sqrt(resid * c / dof / c) : 0.0;
    }
    return fit;
}

/// Source callback: fills `path` (and `lambda` when asked) for ensemble index p.
using PathSource = std::function<bool(std::size_t p, bool need_integrand, const StatePath*& path,
                                      const IntegrandPath*& lambda, StatePath& path_buf,
                                      IntegrandPath& lambda_buf)>;

RegressionHedge fit_from_source(std::size_t count, std::size_t dim, std::size_t steps, int degree,
                                std::size_t workers, const PathSource& source)
{
    if (degree < 0) throw std::invalid_argument("regression degree must be >= 0");
    if (count == 0) throw std::invalid_argument("regression needs at least one path");
    const std::size_t raw_n = dim + 1;
    const BlockPartition part(count);

    // pass 1: feature moments
    std::vector<std::vector<Moments>> moments(part.blocks);
    parallel_for(part.blocks, workers, [&](std::size_t b) {
        auto& mo = moments[b];
        mo.assign(steps * raw_n, Moments{});
        StatePath pbuf;
        IntegrandPath lbuf;
        std::vector<double> f(raw_n);
        for (std::size_t p = part.begin(b); p < part.end(b); ++p) {
            const StatePath* path = nullptr;
            const IntegrandPath* lambda = nullptr;
            if (!source(p, false, path, lambda, pbuf, lbuf)) continue;
            for (std::size_t i = 0; i < steps; ++i) {
                fill_features(*path, i, f);
                for (std::size_t v = 0; v < raw_n; ++v) mo[i * raw_n + v].add(f[v]);
            }
        }
    });
    std::vector<Moments> total(steps * raw_n);
    for (const auto& mo : moments) {
        for (std::size_t k = 0; k < total.size(); ++k) total[k].merge(mo[k]);
    }
    moments.clear();

    std::vector<NodeDesign> designs(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        designs[i] = design_from_moments({total.data() + i * raw_n, raw_n}, degree);
    }

    // pass 2: normal equations
    std::vector<std::vector<NormalSums>> sums(part.blocks);
    parallel_for(part.blocks, workers, [&](std::size_t b) {
        auto& acc = sums[b];
        acc.resize(steps);
        for (std::size_t i = 0; i < steps; ++i) acc[i].init(designs[i].monomials.size(), dim);
        StatePath pbuf;
        IntegrandPath lbuf;
        std::vector<double> f(raw_n);
        std::vector<double> m;
        std::vector<double> powers;
        for (std::size_t p = part.begin(b); p < part.end(b); ++p) {
            const StatePath* path = nullptr;
            const IntegrandPath* lambda = nullptr;
            if (!source(p, true, path, lambda, pbuf, lbuf)) continue;
            for (std::size_t i = 0; i < steps; ++i) {
                fill_features(*path, i, f);
                m.resize(designs[i].monomials.size());
                evaluate_monomials(designs[i], f, degree, powers, m);
                acc[i].add(m, lambda->at(i));
            }
        }
    });

    std::vector<RegressionHedge::NodeFit> fits(steps);
    for (std::size_t i = 0; i < steps; ++i) {
        NormalSums s;
        s.init(designs[i].monomials.size(), dim);
        for (const auto& acc : sums) s.merge(acc[i]);
        fits[i] = solve_node(designs[i], s);
    }
    return RegressionHedge(dim, degree, std::move(fits));
}

} // namespace

RegressionHedge::RegressionHedge(std::size_t dim, int degree, std::vector<NodeFit> nodes)
    : dim_(dim), degree_(degree), nodes_(std::move(nodes))
{
}

void RegressionHedge::predict(std::size_t node, std::span<const double> features,
                              std::span<double> out) const
{
    const NodeFit& fit = nodes_.at(node);
    if (features.size() != dim_ + 1) throw std::invalid_argument("feature vector must have n+1 entries");
    const std::size_t q = fit.raw_kept.size();
    double x_local[16];
    std::vector<double> x_heap;
    double* x = x_local;
    if (q > 16) {
        x_heap.resize(q);
        x = x_heap.data();
    }
    for (std::size_t v = 0; v < q; ++v) x[v] = (features[fit.raw_kept[v]] - fit.raw_mean[v]) / fit.raw_scale[v];
    for (std::size_t r = 0; r < dim_; ++r) out[r] = fit.intercept[r];
    for (std::size_t k = 0; k < fit.monomials.size(); ++k) {
        double m = 1.0;
        for (std::size_t v = 0; v < q; ++v) m *= ipow(x[v], fit.monomials[k][v]);
        m -= fit.monomial_mean[k];
        for (std::size_t r = 0; r < dim_; ++r) {
            out[r] += fit.coefficients(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(r)) * m;
        }
    }
}

std::vector<double> RegressionHedge::predict(std::size_t node, std::span<const double> features) const
{
    std::vector<double> out(dim_);
    predict(node, features, out);
    return out;
}

std::vector<double> RegressionHedge::predict(const StatePath& path, std::size_t node) const
{
    return predict(node, hedge_features(path, node));
}

std::size_t RegressionHedge::reduced_nodes() const
{
    const std::size_t full = monomial_basis(dim_ + 1, degree_).size();
    std::size_t count = 0;
    for (const auto& f : nodes_) {
        if (f.monomials.size() < full) ++count;
    }
    return count;
}

std::vector<std::string> RegressionHedge::warnings() const
{
    std::vector<std::string> out;
    std::size_t raw = 0;
    std::size_t collinear = 0;
    for (const auto& f : nodes_) {
        if (f.raw_kept.size() < dim_ + 1) ++raw;
        if (f.dropped_collinear > 0) ++collinear;
    }
    if (raw > 0) {
        std::ostringstream os;
        os << "regression basis reduced: constant features dropped at " << raw << " of " << nodes_.size()
           << " nodes";
        out.push_back(os.str());
    }
    if (collinear > 0) {
        std::ostringstream os;
        os << "regression basis reduced: collinear terms dropped at " << collinear << " of "
           << nodes_.size() << " nodes";
        out.push_back(os.str());
    }
    return out;
}

RegressionHedge fit_regression(std::span<const StatePath> paths, std::span<const IntegrandPath> integrands,
                               const TimeGrid& grid, int degree)
{
    if (paths.size() != integrands.size()) throw std::invalid_argument("one integrand per path required");
    if (paths.empty()) throw std::invalid_argument("regression needs at least one path");
    const std::size_t dim = paths[0].dim;
    for (std::size_t p = 0; p < paths.size(); ++p) {
        if (paths[p].dim != dim || paths[p].steps() != grid.steps() || integrands[p].dim != dim ||
            integrands[p].values.size() != grid.steps() * dim) {
            throw std::invalid_argument("paths and integrands must share dimension and grid");
        }
    }
    const PathSource source = [&](std::size_t p, bool, const StatePath*& path, const IntegrandPath*& lambda,
                                  StatePath&, IntegrandPath&) {
        if (!paths[p].valid || !integrands[p].valid) return false;
        path = &paths[p];
        lambda = &integrands[p];
        return true;
    };
    return fit_from_source(paths.size(), dim, grid.steps(), degree, 1, source);
}

RegressionHedge fit_regression(const FlowSolver& solver, const Payoff& payoff, const SimConfig& config,
                               int degree, Stream stream)
{
    config.validate();
    const PathSource source = [&](std::size_t p, bool need_integrand, const StatePath*& path,
                                  const IntegrandPath*& lambda, StatePath& pbuf, IntegrandPath& lbuf) {
        pbuf = simulate_path(solver.model(), solver.grid(), config, stream, p);
        if (!pbuf.valid) return false;
        path = &pbuf;
        if (need_integrand) {
            lbuf = compute_integrand(solver, payoff, pbuf);
            if (!lbuf.valid) return false;
            lambda = &lbuf;
        }
        return true;
    };
    return fit_from_source(config.path_count, solver.dim(), solver.grid().steps(), degree, config.workers,
                           source);
}

// -- nested Monte Carlo -------------------------------------------------------

ConditionalEstimate nested_conditional_integrand(const FlowSolver& solver, const Payoff& payoff,
                                                 const StatePath& path, std::size_t node,
                                                 std::size_t branches, std::uint64_t seed)
{
    check_path(solver, path);
    const TimeGrid& grid = solver.grid();
    const std::size_t n = path.dim;
    const std::size_t steps = grid.steps();
    if (branches < 2) throw std::domain_error("nested Monte Carlo needs at least 2 branches");
    if (node >= steps) throw std::out_of_range("integrand node must be < N");

    ConditionalEstimate est;
    est.branches = branches;
    est.samples.assign(branches * n, 0.0);
    std::vector<SampleStats> stats(n);
    const std::uint64_t base = rng::derive(seed, path.path_seed);
    std::vector<double> dw(path.dw);
    for (std::size_t b = 0; b < branches; ++b) {
        draw_increments(rng::derive(base, node, b), 1.0, n, grid.dt(), node, steps, dw);
        const auto sub = simulate_from_increments(solver.model(), grid, dw, path.path_id, path.path_seed);
        const auto co = flow_coefficients(sub, grid);
        const auto mu = payoff.derivative_measure(sub, grid);
        double* out = est.samples.data() + b * n;
        lambda_row(solver, co, mu, node, out);
        for (std::size_t j = 0; j < n; ++j) stats[j].add(out[j]);
    }
    est.mean.resize(n);
    est.standard_error.resize(n);
    for (std::size_t j = 0; j < n; ++j) {
        est.mean[j] = stats[j].mean();
        est.standard_error[j] = stats[j].standard_error();
    }
    return est;
}

std::string to_string(ProjectionMethod m)
{
    return m == ProjectionMethod::regression ? "regression" : "nested_mc";
}

// -- projection ---------------------------------------------------------------

HedgeEstimate project_integrand(std::span<const StatePath> paths, std::span<const IntegrandPath> integrands,
                                const ProjectionOptions& options, const FlowSolver& solver,
                                const Payoff& payoff)
{
    const TimeGrid& grid = solver.grid();
    const std::size_t n = solver.dim();
    const std::size_t steps = grid.steps();

    HedgeEstimate est;
    est.method = options.method;
    est.dim = n;
    est.steps = steps;
    est.per_path.assign(paths.size() * steps * n, 0.0);
    est.beta.assign(steps * n, 0.0);
    est.standard_error.assign(steps * n, 0.0);

    std::vector<SampleStats> beta_stats(steps * n);
    std::vector<double> f(n + 1);
    if (options.method == ProjectionMethod::regression) {
        est.regression = fit_regression(paths, integrands, grid, options.degree);
        for (std::size_t p = 0; p < paths.size(); ++p) {
            if (!paths[p].valid) continue;
            for (std::size_t i = 0; i < steps; ++i) {
                fill_features(paths[p], i, f);
                std::span<double> out(est.per_path.data() + (p * steps + i) * n, n);
                est.regression->predict(i, f, out);
                for (std::size_t j = 0; j < n; ++j) beta_stats[i * n + j].add(out[j]);
            }
        }
        for (std::size_t i = 0; i < steps; ++i) {
            for (std::size_t j = 0; j < n; ++j) est.standard_error[i * n + j] = est.regression->node(i).standard_error[j];
        }
    } else {
        est.branches = options.branches;
        std::vector<double> se_sum(steps * n, 0.0);
        std::size_t used = 0;
        for (std::size_t p = 0; p < paths.size(); ++p) {
            if (!paths[p].valid) continue;
            ++used;
            for (std::size_t i = 0; i < steps; ++i) {
                const auto c = nested_conditional_integrand(solver, payoff, paths[p], i, options.branches,
                                                            options.seed);
                for (std::size_t j = 0; j < n; ++j) {
                    est.per_path[(p * steps + i) * n + j] = c.mean[j];
                    beta_stats[i * n + j].add(c.mean[j]);
                    se_sum[i * n + j] += c.standard_error[j];
                }
            }
        }
        for (std::size_t k = 0; k < se_sum.size(); ++k) {
            est.standard_error[k] = used > 0 ? se_sum[k] / static_cast<double>(used) : 0.0;
        }
    }
    for (std::size_t k = 0; k < beta_stats.size(); ++k) est.beta[k] = beta_stats[k].mean();
    return est;
}

// -- verification -------------------------------------------------------------

namespace {

/// Mean and standard error; antithetic partners are averaged before the error estimate.
struct PairedMean {
    double mean = 0.0;
    double standard_error = 0.0;
    double stddev = 0.0;
};

PairedMean paired_mean(std::span<const double> x, std::span<const char> valid, bool antithetic)
{
    SampleStats per_path;
    SampleStats per_pair;
    for (std::size_t p = 0; p < x.size(); ++p) {
        if (valid[p]) per_path.add(x[p]);
        if (antithetic && p % 2 == 1 && valid[p - 1] && valid[p]) per_pair.add(0.5 * (x[p - 1] + x[p]));
    }
    PairedMean m;
    m.mean = per_path.mean();
    m.stddev = per_path.stddev();
    m.standard_error = antithetic ? per_pair.standard_error() : per_path.standard_error();
    return m;
}

} // namespace

HedgeReport verify_representation(const FlowSolver& solver, const Payoff& payoff, const SimConfig& config,
                                  const VerifyOptions& options)
{
    const auto start = std::chrono::steady_clock::now();
    config.validate();
    if (payoff.dim() != solver.dim()) throw std::invalid_argument("payoff dimension does not match model");
    if (!(options.rms_abs_threshold >= 0.0) || !(options.rms_rel_threshold >= 0.0)) {
        throw std::invalid_argument("residual thresholds must be >= 0");
    }
    const auto& proj = options.projection;
    if (proj.method == ProjectionMethod::nested_mc && proj.branches < 2) {
        throw std::domain_error("nested Monte Carlo needs at least 2 branches");
    }

    const TimeGrid& grid = solver.grid();
    const std::size_t n = solver.dim();
    const std::size_t steps = grid.steps();

    HedgeReport rep;
    rep.model = solver.model().name();
    rep.payoff = payoff.name();

    rep.estimate.method = proj.method;
    rep.estimate.dim = n;
    rep.estimate.steps = steps;
    if (proj.method == ProjectionMethod::regression) {
        rep.estimate.regression = fit_regression(solver, payoff, config, proj.degree, Stream::fit);
    } else {
        rep.estimate.branches = proj.branches;
    }
    const RegressionHedge* reg = rep.estimate.regression ? &*rep.estimate.regression : nullptr;

    const std::size_t count = config.path_count;
    const BlockPartition part(count);
    struct Partial {
        std::vector<SampleStats> beta;
        std::vector<double> se_sum;
    };
    std::vector<Partial> partials(part.blocks);
    std::vector<double> payoff_value(count, 0.0);
    std::vector<double> gain(count, 0.0);
    std::vector<char> valid(count, 0);

    parallel_for(part.blocks, config.workers, [&](std::size_t b) {
        auto& acc = partials[b];
        acc.beta.assign(steps * n, SampleStats{});
        acc.se_sum.assign(steps * n, 0.0);
        std::vector<double> f(n + 1);
        std::vector<double> beta(n);
        std::vector<double> betas(steps * n);
        std::vector<double> local_se(steps * n, 0.0);
        for (std::size_t p = part.begin(b); p < part.end(b); ++p) {
            const auto path = simulate_path(solver.model(), grid, config, Stream::evaluate, p);
            if (!path.valid) continue;
            const double l = payoff.evaluate(path, grid);
            double h = 0.0;
            for (std::size_t i = 0; i < steps; ++i) {
                if (reg) {
                    fill_features(path, i, f);
                    reg->predict(i, f, beta);
                } else {
                    const auto c = nested_conditional_integrand(solver, payoff, path, i, proj.branches, proj.seed);
                    beta = c.mean;
                    for (std::size_t j = 0; j < n; ++j) local_se[i * n + j] = c.standard_error[j];
                }
                const auto dw = path.dw_at(i);
                for (std::size_t j = 0; j < n; ++j) {
                    h += beta[j] * dw[j];
                    betas[i * n + j] = beta[j];
                }
            }
            if (!std::isfinite(l) || !std::isfinite(h)) continue;
            for (std::size_t k = 0; k < steps * n; ++k) {
                acc.beta[k].add(betas[k]);
                acc.se_sum[k] += local_se[k];
            }
            payoff_value[p] = l;
            gain[p] = h;
            valid[p] = 1;
        }
    });

    std::vector<SampleStats> beta(steps * n);
    std::vector<double> se_sum(steps * n, 0.0);
    for (const auto& acc : partials) {
        for (std::size_t k = 0; k < beta.size(); ++k) {
            beta[k].merge(acc.beta[k]);
            se_sum[k] += acc.se_sum[k];
        }
    }
    rep.estimate.beta.assign(steps * n, 0.0);
    rep.estimate.standard_error.assign(steps * n, 0.0);
    for (std::size_t i = 0; i < steps; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            const std::size_t k = i * n + j;
            rep.estimate.beta[k] = beta[k].mean();
            if (reg) {
                rep.estimate.standard_error[k] = reg->node(i).standard_error[j];
            } else if (beta[k].count > 0) {
                rep.estimate.standard_error[k] = se_sum[k] / static_cast<double>(beta[k].count);
            }
        }
    }

    const auto lm = paired_mean(payoff_value, valid, config.antithetic);
    rep.expected_payoff = lm.mean;
    rep.expected_payoff_standard_error = lm.standard_error;
    rep.payoff_stddev = lm.stddev;
    // the residual mean equals minus the mean hedging gain
    const auto hm = paired_mean(gain, valid, config.antithetic);

    SampleStats res;
    for (std::size_t p = 0; p < count; ++p) {
        if (!valid[p]) {
            ++rep.invalid_paths;
            continue;
        }
        const double r = payoff_value[p] - rep.expected_payoff - gain[p];
        rep.residuals.push_back({p, r});
        res.add(r);
        rep.residual_max_abs = std::max(rep.residual_max_abs, std::abs(r));
    }
    rep.valid_paths = res.count;
    rep.residual_mean = res.mean();
    rep.residual_standard_error = hm.standard_error;
    rep.residual_rms = res.count > 0 ? std::sqrt(res.sum_sq / static_cast<double>(res.count)) : 0.0;
    rep.rms_threshold = std::max(options.rms_abs_threshold, options.rms_rel_threshold * rep.payoff_stddev);
    rep.mean_within_3se =
        res.count > 0 &&
        std::abs(rep.residual_mean) <= 3.0 * rep.residual_standard_error + options.rms_abs_threshold;
    rep.rms_below_threshold = res.count > 0 && rep.residual_rms <= rep.rms_threshold;
    rep.pass = rep.mean_within_3se && rep.rms_below_threshold;

    rep.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return rep;
}

// -- truncation study ---------------------------------------------------------

TruncationStudy truncation_convergence(const FlowSolver& solver, const Payoff& payoff,
                                       const SimConfig& config, std::span<const double> levels)
{
    config.validate();
    if (payoff.dim() != solver.dim()) throw std::invalid_argument("payoff dimension does not match model");
    for (std::size_t l = 0; l < levels.size(); ++l) {
        if (!(levels[l] > 0.0)) throw std::invalid_argument("truncation levels must be > 0");
        if (l > 0 && !(levels[l] > levels[l - 1])) {
            throw std::invalid_argument("truncation levels must be strictly increasing");
        }
    }

    const TimeGrid& grid = solver.grid();
    const std::size_t steps = grid.steps();
    const std::size_t nl = levels.size();
    const double dt = grid.dt();

    const BlockPartition part(config.path_count);
    struct Partial {
        std::vector<SampleStats> dist, inv_sq, sq;
        std::vector<std::size_t> at_horizon, below, violations;
        SampleStats base_inv_sq, base_sq;
        double sup = 0.0;
        std::size_t invalid = 0;
    };
    std::vector<Partial> partials(part.blocks);

    parallel_for(part.blocks, config.workers, [&](std::size_t b) {
        auto& acc = partials[b];
        acc.dist.assign(nl, SampleStats{});
        acc.inv_sq.assign(nl, SampleStats{});
        acc.sq.assign(nl, SampleStats{});
        acc.at_horizon.assign(nl, 0);
        acc.below.assign(nl, 0);
        acc.violations.assign(nl, 0);
        for (std::size_t p = part.begin(b); p < part.end(b); ++p) {
            const auto path = simulate_path(solver.model(), grid, config, Stream::truncation, p);
            if (!path.valid) {
                ++acc.invalid;
                continue;
            }
            const auto base = compute_integrand(solver, payoff, path);
            if (!base.valid) {
                ++acc.invalid;
                continue;
            }
            const double sup = path.running_sup();
            acc.sup = std::max(acc.sup, sup);
            const auto [lo, hi] = std::minmax_element(path.log_z.begin(), path.log_z.end());
            acc.base_inv_sq.add(std::exp(-2.0 * *lo));
            acc.base_sq.add(std::exp(2.0 * *hi));

            for (std::size_t l = 0; l < nl; ++l) {
                const auto tr = truncate_path(path, levels[l], grid);
                const auto lk = compute_truncated_integrand(solver, payoff, path, tr);
                double d = 0.0;
                for (std::size_t k = 0; k < lk.values.size(); ++k) {
                    const double e = lk.values[k] - base.values[k];
                    d += e * e;
                }
                acc.dist[l].add(d * dt);
                const auto [zlo, zhi] = std::minmax_element(tr.log_z.begin(), tr.log_z.end());
                acc.inv_sq[l].add(std::exp(-2.0 * *zlo));
                acc.sq[l].add(std::exp(2.0 * *zhi));
                if (tr.stop_node == steps) ++acc.at_horizon[l];
                if (sup < levels[l]) {
                    ++acc.below[l];
                    if (std::memcmp(lk.values.data(), base.values.data(), base.values.size() * sizeof(double)) != 0) {
                        ++acc.violations[l];
                    }
                }
            }
        }
    });

    TruncationStudy study;
    std::vector<SampleStats> dist(nl), inv_sq(nl), sq(nl);
    std::vector<std::size_t> at_horizon(nl, 0), below(nl, 0), violations(nl, 0);
    SampleStats base_inv_sq, base_sq;
    for (const auto& acc : partials) {
        for (std::size_t l = 0; l < nl; ++l) {
            dist[l].merge(acc.dist[l]);
            inv_sq[l].merge(acc.inv_sq[l]);
            sq[l].merge(acc.sq[l]);
            at_horizon[l] += acc.at_horizon[l];
            below[l] += acc.below[l];
            violations[l] += acc.violations[l];
        }
        base_inv_sq.merge(acc.base_inv_sq);
        base_sq.merge(acc.base_sq);
        study.ensemble_running_sup = std::max(study.ensemble_running_sup, acc.sup);
        study.invalid_paths += acc.invalid;
    }
    study.valid_paths = base_sq.count;
    study.sup_z_pow_m2 = base_inv_sq.mean();
    study.sup_z_pow_2 = base_sq.mean();

    for (std::size_t l = 0; l < nl; ++l) {
        TruncationRow row;
        row.level = levels[l];
        row.l2_distance = dist[l].mean();
        row.l2_standard_error = dist[l].standard_error();
        row.horizon_fraction =
            study.valid_paths > 0 ? static_cast<double>(at_horizon[l]) / static_cast<double>(study.valid_paths) : 0.0;
        row.sup_z_pow_m2 = inv_sq[l].mean();
        row.sup_z_pow_2 = sq[l].mean();
        row.paths_below_level = below[l];
        row.coincidence_violations = violations[l];
        if (l > 0 && row.l2_distance > study.rows.back().l2_distance) study.nonincreasing = false;
        study.rows.push_back(row);
    }
    return study;
}

// -- mean-variance ------------------------------------------------------------

MeanVarianceSolution mean_variance_multipliers(const MarketPriceOfRisk& model, const TimeGrid& grid,
                                               const SimConfig& config, double initial_wealth,
                                               double target_mean)
{
    config.validate();
    if (!std::isfinite(initial_wealth) || !std::isfinite(target_mean)) {
        throw std::invalid_argument("initial wealth and target mean must be finite");
    }
    const std::size_t steps = grid.steps();
    const BlockPartition part(config.path_count);
    struct Partial {
        SampleStats budget, mean, inverse;
    };
    std::vector<Partial> partials(part.blocks);
    parallel_for(part.blocks, config.workers, [&](std::size_t b) {
        auto& acc = partials[b];
        for (std::size_t p = part.begin(b); p < part.end(b); ++p) {
            const auto path = simulate_path(model, grid, config, Stream::multipliers, p);
            if (!path.valid) continue;
            const double z = path.z(steps);
            const double inv = std::exp(-path.log_z[steps]);
            acc.budget.add(z);
            acc.mean.add(z * inv);
            acc.inverse.add(inv);
        }
    });
    Partial total;
    for (const auto& p : partials) {
        total.budget.merge(p.budget);
        total.mean.merge(p.mean);
        total.inverse.merge(p.inverse);
    }

    MeanVarianceSolution s;
    s.paths = total.budget.count;
    if (s.paths == 0) throw std::domain_error("no valid paths for the multiplier moments");
    s.budget_moment = total.budget.mean();
    s.budget_moment_standard_error = total.budget.standard_error();
    s.mean_moment = total.mean.mean();
    s.martingale_gap = std::abs(total.inverse.mean() - 1.0);
    s.martingale_gap_standard_error = total.inverse.standard_error();

    Eigen::Matrix2d system;
    system << 1.0, s.budget_moment, 1.0, s.mean_moment;
    const Eigen::JacobiSVD<Eigen::Matrix2d> svd(system);
    const auto sv = svd.singularValues();
    s.condition_number = sv(1) > 0.0 ? sv(0) / sv(1) : std::numeric_limits<double>::infinity();

    const double gap = s.budget_moment - s.mean_moment;
    if (!(std::abs(gap) > 3.0 * s.budget_moment_standard_error) || !(std::abs(gap) >= 1e-12)) {
        std::ostringstream os;
        os << "mean-variance system is singular: E~[Z(T)] - E[Z(T)] = " << gap
           << " is not distinguishable from zero (condition number " << s.condition_number << ")";
        throw SingularSystemError(os.str(), s.condition_number);
    }
    s.lambda2 = (initial_wealth - target_mean) / gap;
    s.lambda1 = initial_wealth - s.lambda2 * s.budget_moment;
    s.lambda2_standard_error = std::abs(initial_wealth - target_mean) / (gap * gap) * s.budget_moment_standard_error;
    return s;
}

} // namespace clarkhedge
