#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "saldist/dataset.hpp"
#include "saldist/pipeline.hpp"

namespace saldist::cli {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfigError = 2, kIoError = 3, kNumericalError = 4 };

struct KeySpec {
  std::string name;
  std::string fallback;  // default, as text
  std::string help;
};

// Effective key/value settings of one subcommand invocation.
using Settings = std::map<std::string, std::string, std::less<>>;

const std::vector<std::string>& commands();
const std::vector<KeySpec>& keys_for(std::string_view command);

// Flat `key=value` text; blank lines and lines starting with '#' are skipped.
// Unknown or repeated keys throw ConfigError naming the key and line.
Settings parse_config_text(std::string_view text, std::string_view command, const std::string& source);

// Defaults, then the config file, then explicit flags.
Settings merge_settings(std::string_view command, const Settings& file, const Settings& flags);

// Echo of the effective settings in key order, loadable as a config file.
std::string render_config(std::string_view command, const Settings& settings);

TrainConfig train_config_from(const Settings& s);
SyntheticSpec synthetic_spec_from(const Settings& s);

int exit_code_for(const std::exception& e);

// Whole command line; returns the process exit code.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace saldist::cli
