#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "radood/bench.hpp"

namespace radood::cli {

/// Default output root when neither the config nor --output-dir names one.
inline constexpr const char* kOutputRootEnv = "RADOOD_OUTPUT_ROOT";

enum ExitCode : int { kOk = 0, kUnexpected = 1, kConfigError = 2, kNumericError = 3, kIoError = 4 };

/// Every command section with its built-in defaults.
nlohmann::json default_config();

/// Defaults, then the config file, then --set overrides, then named flags.
/// Fills in output_dir and preset-dependent training fields.
nlohmann::json resolve_config(const nlohmann::json& file_config, const std::vector<std::string>& set_overrides,
                              const nlohmann::json& flag_overrides);

/// One invocation; args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Inverse of bench::to_csv.
std::vector<bench::DetectorReport> parse_report_csv(const std::string& text);

}  // namespace radood::cli
