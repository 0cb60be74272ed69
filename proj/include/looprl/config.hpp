#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "looprl/trainer.hpp"

namespace looprl {

enum class Command { pretrain, finetune, variance_study, gradcheck, compare };

std::string_view to_string(Command command);
Command parse_command(std::string_view name);

// Thrown by parse_config for --help; carries the usage text.
struct HelpRequested {
  std::string text;
};

struct CliConfig {
  TrainConfig train;
  std::optional<Command> command;
  std::filesystem::path out_dir = "out";
  std::optional<std::filesystem::path> config_file;
  // Fine-tune from this checkpoint instead of pretraining.
  std::optional<std::filesystem::path> base_checkpoint;
  bool timing = true;
  // Test-only mutation hook for the gradcheck command.
  bool inject_sign_flip = false;
};

// Keys accepted in config files; flags are the same names in --kebab-case.
std::vector<std::string> config_keys();

// Applies one `key = value` setting. Keys may use '_' or '-'. Throws ConfigError
// naming the key and the expected type on malformed values, or listing the
// valid keys when the key is unknown.
void apply_setting(CliConfig& config, std::string_view key, std::string_view value);

// Flat `key = value` text; '#' starts a comment, blank lines are ignored.
void apply_config_text(CliConfig& config, std::string_view text, std::string_view origin);
void apply_config_file(CliConfig& config, const std::filesystem::path& path);

using EnvLookup = std::function<std::optional<std::string>(const char*)>;
std::optional<std::string> process_env(const char* name);

// argv[0] is the program name; argv[1] may name the subcommand. Precedence:
// flags > config file > LOOP_RL_SEED > built-in defaults. Throws ConfigError on bad input; the parsed
// TrainConfig is validated before returning.
CliConfig parse_config(std::span<const std::string> argv, const EnvLookup& env = process_env);
CliConfig parse_config(int argc, const char* const* argv, const EnvLookup& env = process_env);

// Every key with its current value, in config-file syntax.
std::string dump_config(const CliConfig& config);

}  // namespace looprl
