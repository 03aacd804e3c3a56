#pragma once

#include <exception>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epf/dataset.hpp"

namespace epf::cli {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

/// Exit code for an exception escaping a command.
int exit_code_for(const std::exception& e);

struct ConfigKey {
    const char* name;
    const char* default_value;
    const char* help;
};

/// Keys understood by `backtest` and `hyperopt`, with their defaults.
const std::vector<ConfigKey>& config_keys();

/// Defaults, then the config file, then explicit overrides. Unknown keys
/// are rejected.
std::map<std::string, std::string> resolve_config(
    const std::optional<std::filesystem::path>& config_file,
    const std::map<std::string, std::string>& overrides);

struct LoadedDataset {
    data::MarketDataset dataset;
    std::filesystem::path path;
};

/// `dataset` is a CSV path, `synthetic[:days[:seed]]`, or empty to use the
/// cached download of `market`. Synthetic data is materialized under
/// `run_dir` when one is given.
LoadedDataset load_dataset(const std::map<std::string, std::string>& config,
                           const std::optional<std::filesystem::path>& run_dir = std::nullopt);

/// Runs the command line; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace epf::cli
