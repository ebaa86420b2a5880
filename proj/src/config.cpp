#include "clarkhedge/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace clarkhedge {

using nlohmann::json;

namespace {

void check_keys(const json& block, const std::string& where, const std::set<std::string>& allowed)
{
    if (!block.is_object()) throw ConfigError(where + " must be an object");
    for (const auto& [key, value] : block.items()) {
        (void)value;
        if (!allowed.count(key)) throw ConfigError("unknown field '" + where + "." + key + "'");
    }
}

double number(const json& block, const std::string& where, const std::string& key, double fallback)
{
    if (!block.contains(key)) return fallback;
    const auto& v = block.at(key);
    if (!v.is_number()) throw ConfigError(where + "." + key + " must be a number");
    const double x = v.get<double>();
    if (!std::isfinite(x)) throw ConfigError(where + "." + key + " must be finite");
    return x;
}

double required_number(const json& block, const std::string& where, const std::string& key)
{
    if (!block.contains(key)) throw ConfigError("missing field '" + where + "." + key + "'");
    return number(block, where, key, 0.0);
}

std::uint64_t unsigned_integer(const json& block, const std::string& where, const std::string& key,
                               std::uint64_t fallback)
{
    if (!block.contains(key)) return fallback;
    const auto& v = block.at(key);
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        throw ConfigError(where + "." + key + " must be a non-negative integer");
    }
    return v.get<std::uint64_t>();
}

bool boolean(const json& block, const std::string& where, const std::string& key, bool fallback)
{
    if (!block.contains(key)) return fallback;
    const auto& v = block.at(key);
    if (!v.is_boolean()) throw ConfigError(where + "." + key + " must be true or false");
    return v.get<bool>();
}

std::string text(const json& block, const std::string& where, const std::string& key, const std::string& fallback)
{
    if (!block.contains(key)) return fallback;
    const auto& v = block.at(key);
    if (!v.is_string()) throw ConfigError(where + "." + key + " must be a string");
    return v.get<std::string>();
}

const json& sub_block(const json& doc, const std::string& key)
{
    static const json empty = json::object();
    return doc.contains(key) ? doc.at(key) : empty;
}

ModelPtr parse_model(const json& b, json& echo)
{
    if (!b.is_object() || !b.contains("type")) throw ConfigError("missing field 'model.type'");
    const std::string type = text(b, "model", "type", "");
    if (type == "constant") {
        check_keys(b, "model", {"type", "theta"});
        if (!b.contains("theta")) throw ConfigError("missing field 'model.theta'");
        const auto& t = b.at("theta");
        std::vector<double> theta;
        if (t.is_number()) {
            theta.push_back(t.get<double>());
        } else if (t.is_array() && !t.empty()) {
            for (const auto& x : t) {
                if (!x.is_number()) throw ConfigError("model.theta entries must be numbers");
                theta.push_back(x.get<double>());
            }
        } else {
            throw ConfigError("model.theta must be a number or a non-empty array");
        }
        echo = {{"type", type}, {"theta", theta}};
        return std::make_shared<ConstantMarketPriceOfRisk>(theta);
    }
    if (type == "ornstein_uhlenbeck") {
        check_keys(b, "model", {"type", "alpha", "mean_reversion", "vol", "u0", "drift_constant_mode"});
        OrnsteinUhlenbeckParams p;
        p.alpha = number(b, "model", "alpha", p.alpha);
        p.mean_reversion = number(b, "model", "mean_reversion", p.mean_reversion);
        p.vol = number(b, "model", "vol", p.vol);
        p.u0 = number(b, "model", "u0", p.u0);
        p.mode = drift_constant_mode_from_string(text(b, "model", "drift_constant_mode", "paper"));
        echo = {{"type", type},
                {"alpha", p.alpha},
                {"mean_reversion", p.mean_reversion},
                {"vol", p.vol},
                {"u0", p.u0},
                {"drift_constant_mode", to_string(p.mode)}};
        return std::make_shared<OrnsteinUhlenbeckMarketPriceOfRisk>(p);
    }
    throw ConfigError("model.type must be 'constant' or 'ornstein_uhlenbeck', got '" + type + "'");
}

Polynomial parse_polynomial(const json& b, std::size_t dim, json& terms_echo)
{
    if (!b.contains("terms") || !b.at("terms").is_array()) throw ConfigError("payoff.terms must be an array");
    std::vector<Monomial> terms;
    terms_echo = json::array();
    for (const auto& t : b.at("terms")) {
        check_keys(t, "payoff.terms[]", {"coefficient", "exponents"});
        Monomial m;
        m.coefficient = required_number(t, "payoff.terms[]", "coefficient");
        if (!t.contains("exponents") || !t.at("exponents").is_array()) {
            throw ConfigError("payoff.terms[].exponents must be an array");
        }
        for (const auto& e : t.at("exponents")) {
            if (!e.is_number_integer()) throw ConfigError("payoff exponents must be integers");
            m.exponents.push_back(e.get<int>());
        }
        terms_echo.push_back({{"coefficient", m.coefficient}, {"exponents", m.exponents}});
        terms.push_back(std::move(m));
    }
    return Polynomial(dim, std::move(terms));
}

Payoff parse_payoff(const json& b, std::size_t dim, json& echo)
{
    if (!b.is_object() || !b.contains("type")) throw ConfigError("missing field 'payoff.type'");
    const std::string type = text(b, "payoff", "type", "");
    if (type == "affine_terminal") {
        check_keys(b, "payoff", {"type", "lambda1", "lambda2"});
        const double l1 = number(b, "payoff", "lambda1", 0.0);
        const double l2 = number(b, "payoff", "lambda2", 1.0);
        echo = {{"type", type}, {"lambda1", l1}, {"lambda2", l2}};
        return Payoff::affine_terminal(dim, l1, l2);
    }
    if (type == "terminal_polynomial" || type == "integral_polynomial") {
        check_keys(b, "payoff", {"type", "terms"});
        json terms;
        Polynomial p = parse_polynomial(b, dim, terms);
        echo = {{"type", type}, {"terms", terms}};
        return type == "terminal_polynomial" ? Payoff::terminal(std::move(p)) : Payoff::integral(std::move(p));
    }
    throw ConfigError("payoff.type must be 'affine_terminal', 'terminal_polynomial' or "
                      "'integral_polynomial', got '" + type + "'");
}

} // namespace

std::vector<double> default_truncation_levels()
{
    std::vector<double> levels;
    for (double k = 1.0; k <= 1024.0; k *= 2.0) levels.push_back(k);
    return levels;
}

RunConfig parse_config(const json& doc)
{
    if (!doc.is_object()) throw ConfigError("configuration must be a JSON object");
    check_keys(doc, "config",
               {"model", "payoff", "grid", "sim", "method", "truncation", "verify", "mean_variance", "novikov",
                "output"});
    if (!doc.contains("model")) throw ConfigError("missing block 'model'");

    RunConfig cfg;
    json& echo = cfg.echo;
    echo = json::object();

    try {
        cfg.model = parse_model(doc.at("model"), echo["model"]);
        const std::size_t dim = cfg.model->dimension();

        const json& pb = doc.contains("payoff") ? doc.at("payoff") : json{{"type", "affine_terminal"}};
        cfg.payoff = parse_payoff(pb, dim, echo["payoff"]);

        const json& g = sub_block(doc, "grid");
        check_keys(g, "grid", {"horizon", "steps"});
        const double horizon = number(g, "grid", "horizon", 1.0);
        const auto steps = unsigned_integer(g, "grid", "steps", 256);
        cfg.grid = TimeGrid(horizon, steps);
        echo["grid"] = {{"horizon", horizon}, {"steps", steps}};

        const json& s = sub_block(doc, "sim");
        check_keys(s, "sim", {"paths", "seed", "antithetic", "workers"});
        cfg.sim.path_count = unsigned_integer(s, "sim", "paths", 1000);
        cfg.sim.master_seed = unsigned_integer(s, "sim", "seed", 1);
        cfg.sim.antithetic = boolean(s, "sim", "antithetic", false);
        cfg.sim.workers = unsigned_integer(s, "sim", "workers", 1);
        cfg.sim.validate();
        echo["sim"] = {{"paths", cfg.sim.path_count}, {"seed", cfg.sim.master_seed}, {"antithetic", cfg.sim.antithetic}};

        const json& m = sub_block(doc, "method");
        check_keys(m, "method", {"type", "degree", "branches"});
        const std::string method = text(m, "method", "type", "regression");
        if (method == "regression") {
            if (m.contains("branches")) throw ConfigError("method.branches only applies to nested_mc");
            cfg.projection.method = ProjectionMethod::regression;
            const auto degree = unsigned_integer(m, "method", "degree", 3);
            if (degree > 6) throw ConfigError("method.degree must be <= 6");
            cfg.projection.degree = static_cast<int>(degree);
            echo["method"] = {{"type", method}, {"degree", degree}};
        } else if (method == "nested_mc") {
            if (m.contains("degree")) throw ConfigError("method.degree only applies to regression");
            cfg.projection.method = ProjectionMethod::nested_mc;
            cfg.projection.branches = unsigned_integer(m, "method", "branches", 100);
            if (cfg.projection.branches < 2) throw ConfigError("method.branches must be >= 2");
            echo["method"] = {{"type", method}, {"branches", cfg.projection.branches}};
        } else {
            throw ConfigError("method.type must be 'regression' or 'nested_mc', got '" + method + "'");
        }
        cfg.projection.seed = cfg.sim.master_seed;

        const json& t = sub_block(doc, "truncation");
        check_keys(t, "truncation", {"levels"});
        if (t.contains("levels")) {
            if (!t.at("levels").is_array()) throw ConfigError("truncation.levels must be an array");
            for (const auto& k : t.at("levels")) {
                if (!k.is_number()) throw ConfigError("truncation.levels entries must be numbers");
                const double level = k.get<double>();
                if (!(level > 0.0) || !std::isfinite(level)) throw ConfigError("truncation levels must be positive");
                if (!cfg.truncation_levels.empty() && !(level > cfg.truncation_levels.back())) {
                    throw ConfigError("truncation.levels must be strictly increasing");
                }
                cfg.truncation_levels.push_back(level);
            }
        } else {
            cfg.truncation_levels = default_truncation_levels();
        }
        echo["truncation"] = {{"levels", cfg.truncation_levels}};

        const json& v = sub_block(doc, "verify");
        check_keys(v, "verify", {"rms_abs_threshold", "rms_rel_threshold"});
        cfg.verify.rms_abs_threshold = number(v, "verify", "rms_abs_threshold", 1e-12);
        cfg.verify.rms_rel_threshold = number(v, "verify", "rms_rel_threshold", 0.1);
        if (cfg.verify.rms_abs_threshold < 0.0 || cfg.verify.rms_rel_threshold < 0.0) {
            throw ConfigError("verify thresholds must be >= 0");
        }
        cfg.verify.projection = cfg.projection;
        echo["verify"] = {{"rms_abs_threshold", cfg.verify.rms_abs_threshold},
                          {"rms_rel_threshold", cfg.verify.rms_rel_threshold}};

        const json& mv = sub_block(doc, "mean_variance");
        check_keys(mv, "mean_variance", {"initial_wealth", "target_mean"});
        cfg.initial_wealth = number(mv, "mean_variance", "initial_wealth", 1.0);
        cfg.target_mean = number(mv, "mean_variance", "target_mean", 1.1);
        echo["mean_variance"] = {{"initial_wealth", cfg.initial_wealth}, {"target_mean", cfg.target_mean}};

        const json& nv = sub_block(doc, "novikov");
        check_keys(nv, "novikov", {"overflow_log_cap"});
        cfg.overflow_log_cap = number(nv, "novikov", "overflow_log_cap", 50.0);
        if (!(cfg.overflow_log_cap > 0.0) || cfg.overflow_log_cap > 709.0) {
            throw ConfigError("novikov.overflow_log_cap must be in (0, 709]");
        }
        echo["novikov"] = {{"overflow_log_cap", cfg.overflow_log_cap}};

        const json& o = sub_block(doc, "output");
        check_keys(o, "output", {"directory", "export_paths", "export_flow"});
        cfg.output_directory = text(o, "output", "directory", "");
        cfg.export_paths = boolean(o, "output", "export_paths", false);
        cfg.export_flow = boolean(o, "output", "export_flow", false);
        echo["output"] = {{"export_paths", cfg.export_paths}, {"export_flow", cfg.export_flow}};
    } catch (const ConfigError&) {
        throw;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed configuration: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    } catch (const std::domain_error& e) {
        throw ConfigError(e.what());
    }
    return cfg;
}

json read_config_document(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open configuration file '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("configuration '" + path + "' is not valid JSON: " + e.what());
    }
}

RunConfig load_config(const std::string& path)
{
    return parse_config(read_config_document(path));
}

} // namespace clarkhedge
