/**
 * @file config.hpp
 * @brief Run specification: a single JSON document with one block per module.
 *
 * {
 *   "model":  {"type": "constant", "theta": [0.3]}
 *           | {"type": "ornstein_uhlenbeck", "alpha": 0, "mean_reversion": 1, "vol": 0.2,
 *              "u0": 0.1, "drift_constant_mode": "paper"},
 *   "payoff": {"type": "affine_terminal", "lambda1": 0, "lambda2": 1}
 *           | {"type": "terminal_polynomial" | "integral_polynomial",
 *              "terms": [{"coefficient": 1, "exponents": [1]}]},
 *   "grid":   {"horizon": 1, "steps": 256},
 *   "sim":    {"paths": 1000, "seed": 1, "antithetic": false, "workers": 1},
 *   "method": {"type": "regression", "degree": 3} | {"type": "nested_mc", "branches": 100},
 *   "truncation": {"levels": [1, 2, 4]},
 *   "verify": {"rms_abs_threshold": 1e-12, "rms_rel_threshold": 0.1},
 *   "mean_variance": {"initial_wealth": 1, "target_mean": 1.1},
 *   "novikov": {"overflow_log_cap": 50},
 *   "output": {"directory": "out", "export_paths": false, "export_flow": false}
 * }
 */

#pragma once

#include "clarkhedge/grid.hpp"
#include "clarkhedge/hedging.hpp"
#include "clarkhedge/mpr_models.hpp"
#include "clarkhedge/payoffs.hpp"
#include "clarkhedge/sde_engine.hpp"

#include "json.hpp"

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace clarkhedge {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    ModelPtr model;
    std::optional<Payoff> payoff;
    TimeGrid grid{1.0, 256};
    SimConfig sim;
    ProjectionOptions projection;
    std::vector<double> truncation_levels;
    VerifyOptions verify;
    double initial_wealth = 1.0;
    double target_mean = 1.1;
    double overflow_log_cap = 50.0;
    std::string output_directory;
    bool export_paths = false;
    bool export_flow = false;

    /// Normalized document with defaults filled in; the worker count is left out
    /// because it never changes results.
    nlohmann::json echo;
};

/// Default levels when the document has none: 1, 2, 4, ..., 1024.
std::vector<double> default_truncation_levels();

/// Validates every block; throws ConfigError naming the offending field.
RunConfig parse_config(const nlohmann::json& doc);
RunConfig load_config(const std::string& path);
nlohmann::json read_config_document(const std::string& path);

} // namespace clarkhedge
