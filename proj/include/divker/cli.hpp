#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace divker {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

/// Entry point of the `divker` tool. Subcommands: simulate, score, linresp,
/// ergodic, oracle, fit, repro. Writes results.csv, manifest.json and plots
/// into --out. Returns the process exit code.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

std::vector<std::string> repro_presets();

/// Config text of a repro preset; throws ConfigError for unknown names.
std::string repro_preset_text(const std::string& name);

}  // namespace divker
