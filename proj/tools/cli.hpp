#pragma once

#include "json.hpp"

#include <string>
#include <vector>

namespace funreg::cli {

/// Default configuration tree. Every CLI flag maps to one leaf key.
nlohmann::json default_config();

/// Overlays `patch` on `base`, rejecting keys that `base` does not define.
void merge_config(nlohmann::json& base, const nlohmann::json& patch, const std::string& where = "");

/// Converts a flag value to the JSON type of the existing leaf at `pointer`.
nlohmann::json parse_leaf(const nlohmann::json& current, const std::string& text);

/// Runs the command line; returns the process exit code (0, 2 or 3).
int run(int argc, char** argv);

}  // namespace funreg::cli
