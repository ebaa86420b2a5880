/**
 * @file report.hpp
 * @brief JSON summaries and CSV tables written by the command-line front end.
 *
 * CSV files use a header row, comma separators, '.' decimals, LF line endings
 * and round-trip (%.17g) number formatting. Nothing time- or host-dependent is
 * written, so identical runs produce identical bytes.
 */

#pragma once

#include "clarkhedge/config.hpp"
#include "clarkhedge/flow_solver.hpp"
#include "clarkhedge/hedging.hpp"
#include "clarkhedge/sde_engine.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace clarkhedge {

inline constexpr const char* tool_version = "1.0.0";

/// Round-trip decimal representation of a double.
std::string format_number(double x);

/// Common header: tool, version, command, seed and the config echo.
nlohmann::json summary_header(const std::string& command, const RunConfig& cfg);

nlohmann::json to_json(const HedgeReport& report);
nlohmann::json to_json(const TruncationStudy& study);
nlohmann::json to_json(const NovikovDiagnostic& diag);
nlohmann::json to_json(const MeanVarianceSolution& s);

std::string beta_estimates_csv(const HedgeEstimate& estimate, const TimeGrid& grid);
std::string residuals_csv(const HedgeReport& report);
std::string truncation_csv(const TruncationStudy& study);
std::string paths_csv(const std::vector<StatePath>& paths, const TimeGrid& grid);
std::string flow_csv(const FlowMatrix& flow, const TimeGrid& grid);

/// A file to be written: relative name and full contents.
struct OutputFile {
    std::string name;
    std::string contents;
};

/// Creates the directory if needed and writes every file; throws std::runtime_error on failure.
void write_outputs(const std::filesystem::path& directory, const std::vector<OutputFile>& files);

/// Creates the directory and checks it accepts files, before any computation.
void prepare_output_directory(const std::filesystem::path& directory);

} // namespace clarkhedge
