#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "config.hpp"
#include "dataset.hpp"

namespace sveb::cli {

/// Loads cfg.input for cfg.family, applying the intercept, weight-column and
/// standardization settings.
Dataset load_for(const RunConfig& cfg);

/// fit / mse / benchmark / predict / run / cv-curve. Writes the command's
/// files plus manifest.json into cfg.output; progress lines go to `log`.
void run_data_command(const RunConfig& cfg, std::ostream& log);

/// simulate presets table1 / rd / nonsampled.
void run_simulate(const RunConfig& cfg, std::ostream& log);

/// Dispatch on cfg.command (validates first).
void execute(const RunConfig& cfg, std::ostream& log);

/// Reads a manifest written by any command and returns its config.
RunConfig read_manifest(const std::string& path);

// Output plumbing shared by the commands.
void write_text_file(const std::string& dir, const std::string& name, const std::string& content);
void write_manifest(const RunConfig& cfg, const nlohmann::ordered_json& results,
                    const std::vector<std::string>& outputs);

}  // namespace sveb::cli
