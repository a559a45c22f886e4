#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "relate/config.hpp"

namespace relate::cli {

/// Entry point of the `relate` tool; returns the process exit code.
int run(int argc, const char* const* argv);
int run(const std::vector<std::string>& args);

/// Reads a run configuration file. Besides `model.*` and `train.*` keys it
/// accepts `preset` (a named configuration to start from), `scale`
/// (full, desk or toy) and `clip_length` (turns the preset dynamic).
Preset read_run_config(const std::filesystem::path& path);
Preset run_config_from_text(const std::string& text);

}  // namespace relate::cli
