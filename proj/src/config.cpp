#include "looprl/config.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "looprl/error.hpp"
#include "looprl/rewards.hpp"

namespace looprl {
namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string normalize_key(std::string_view key) {
  std::string out(key);
  std::replace(out.begin(), out.end(), '-', '_');
  return out;
}

std::string kebab(std::string_view key) {
  std::string out(key);
  std::replace(out.begin(), out.end(), '_', '-');
  return out;
}

[[noreturn]] void bad_value(std::string_view key, std::string_view value, std::string_view type) {
  throw ConfigError("invalid value '" + std::string(value) + "' for key '" + std::string(key) +
                    "': expected " + std::string(type));
}

template <typename T>
T parse_number(std::string_view key, std::string_view value, std::string_view type) {
  T out{};
  const std::string v = trim(value);
  const char* end = v.data() + v.size();
  const auto [ptr, ec] = std::from_chars(v.data(), end, out);
  if (v.empty() || ec != std::errc() || ptr != end) bad_value(key, value, type);
  return out;
}

std::size_t parse_count(std::string_view key, std::string_view value) {
  if (trim(value).starts_with('-')) bad_value(key, value, "non-negative integer");
  return parse_number<std::size_t>(key, value, "non-negative integer");
}

double parse_real(std::string_view key, std::string_view value) {
  return parse_number<double>(key, value, "real number");
}

bool parse_bool(std::string_view key, std::string_view value) {
  const std::string v = trim(value);
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  bad_value(key, value, "boolean (true/false)");
}

std::vector<std::size_t> parse_count_list(std::string_view key, std::string_view value) {
  std::vector<std::size_t> out;
  std::string_view rest = value;
  while (true) {
    const auto comma = rest.find(',');
    const std::string item = trim(rest.substr(0, comma));
    if (item.empty()) bad_value(key, value, "comma-separated list of non-negative integers");
    out.push_back(parse_count(key, item));
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

std::string join(const std::vector<std::size_t>& values) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (i > 0) out += ',';
    out += std::to_string(values[i]);
  }
  return out;
}

std::string format_real(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string_view form_name(SurrogateForm form) {
  return form == SurrogateForm::clip_only ? "clip_only" : "pessimistic_min";
}

struct KeyDef {
  const char* name;
  const char* help;
  bool is_flag;  // boolean switch on the command line
  std::function<void(CliConfig&, std::string_view key, std::string_view value)> set;
  std::function<std::string(const CliConfig&)> get;
};

#define LOOPRL_COUNT(field)                                                                   \
  [](CliConfig& c, std::string_view k, std::string_view v) { c.train.field = parse_count(k, v); }, \
      [](const CliConfig& c) { return std::to_string(c.train.field); }
#define LOOPRL_REAL(field)                                                                   \
  [](CliConfig& c, std::string_view k, std::string_view v) { c.train.field = parse_real(k, v); }, \
      [](const CliConfig& c) { return format_real(c.train.field); }
#define LOOPRL_LIST(field)                                                                         \
  [](CliConfig& c, std::string_view k, std::string_view v) { c.train.field = parse_count_list(k, v); }, \
      [](const CliConfig& c) { return join(c.train.field); }

const std::vector<KeyDef>& key_table() {
  static const std::vector<KeyDef> table = {
      {"estimator", "reinforce | reinforce_bc | rloo | ppo_clip | loop", false,
       [](CliConfig& c, std::string_view k, std::string_view v) {
         try {
           c.train.estimator = parse_estimator(trim(v));
         } catch (const LookupError&) {
           bad_value(k, v, "one of reinforce, reinforce_bc, rloo, ppo_clip, loop");
         }
       },
       [](const CliConfig& c) { return std::string(to_string(c.train.estimator)); }},
      {"k", "trajectories per prompt", false, LOOPRL_COUNT(k)},
      {"epsilon", "clip half-width", false, LOOPRL_REAL(epsilon)},
      {"unclipped", "plain importance weighting (ablation)", true,
       [](CliConfig& c, std::string_view k, std::string_view v) { c.train.unclipped = parse_bool(k, v); },
       [](const CliConfig& c) { return std::string(c.train.unclipped ? "true" : "false"); }},
      {"surrogate_form", "clip_only | pessimistic_min", false,
       [](CliConfig& c, std::string_view k, std::string_view v) {
         const std::string s = trim(v);
         if (s == "clip_only") {
           c.train.surrogate_form = SurrogateForm::clip_only;
         } else if (s == "pessimistic_min") {
           c.train.surrogate_form = SurrogateForm::pessimistic_min;
         } else {
           bad_value(k, v, "one of clip_only, pessimistic_min");
         }
       },
       [](const CliConfig& c) { return std::string(form_name(c.train.surrogate_form)); }},
      {"baseline_decay", "PPO running-mean decay", false, LOOPRL_REAL(baseline_decay)},
      {"epochs", "training epochs", false, LOOPRL_COUNT(epochs)},
      {"groups_per_epoch", "prompt groups collected per epoch", false, LOOPRL_COUNT(groups_per_epoch)},
      {"inner_epochs", "passes over each buffer (clipped kinds)", false, LOOPRL_COUNT(inner_epochs)},
      {"minibatch_groups", "groups per minibatch", false, LOOPRL_COUNT(minibatch_groups)},
      {"seed", "run seed", false,
       [](CliConfig& c, std::string_view k, std::string_view v) {
         c.train.seed = parse_number<std::uint64_t>(k, v, "unsigned 64-bit integer");
       },
       [](const CliConfig& c) { return std::to_string(c.train.seed); }},
      {"lr", "fine-tuning learning rate", false, LOOPRL_REAL(lr)},
      {"weight_decay", "decoupled weight decay", false, LOOPRL_REAL(weight_decay)},
      {"max_grad_norm", "gradient-norm clip", false, LOOPRL_REAL(max_grad_norm)},
      {"reward_name", "quadrant_binding | mode_distance | composite", false,
       [](CliConfig& c, std::string_view k, std::string_view v) {
         const std::string s = trim(v);
         const auto names = registered_rewards();
         if (std::find(names.begin(), names.end(), s) == names.end()) {
           bad_value(k, v, "one of quadrant_binding, mode_distance, composite");
         }
         c.train.reward_name = s;
       },
       [](const CliConfig& c) { return c.train.reward_name; }},
      {"steps", "denoising steps T", false, LOOPRL_COUNT(steps)},
      {"hidden", "hidden layer widths, comma-separated", false, LOOPRL_LIST(hidden)},
      {"beta_start", "first noise-schedule beta", false, LOOPRL_REAL(beta_start)},
      {"beta_end", "last noise-schedule beta", false, LOOPRL_REAL(beta_end)},
      {"num_contexts", "number of prompts", false, LOOPRL_COUNT(num_contexts)},
      {"validation_samples", "validation rollouts per prompt", false, LOOPRL_COUNT(validation_samples)},
      {"pretrain_seed", "seed of the base model", false,
       [](CliConfig& c, std::string_view k, std::string_view v) {
         c.train.pretrain_seed = parse_number<std::uint64_t>(k, v, "unsigned 64-bit integer");
       },
       [](const CliConfig& c) { return std::to_string(c.train.pretrain_seed); }},
      {"pretrain_steps", "denoising optimizer steps", false, LOOPRL_COUNT(pretrain_steps)},
      {"pretrain_batch", "denoising minibatch size", false, LOOPRL_COUNT(pretrain_batch)},
      {"pretrain_lr", "denoising learning rate", false, LOOPRL_REAL(pretrain_lr)},
      {"dataset_size", "mixture samples", false, LOOPRL_COUNT(dataset_size)},
      {"label_fidelity", "probability a sample keeps its own label", false, LOOPRL_REAL(label_fidelity)},
      {"probe_groups", "groups per variance-probe resample", false, LOOPRL_COUNT(probe_groups)},
      {"probe_resamples", "variance-probe resamples", false, LOOPRL_COUNT(probe_resamples)},
      {"probe_ks", "group sizes for the variance sweep", false, LOOPRL_LIST(probe_ks)},
      {"seeds", "seeds per compare entry", false, LOOPRL_COUNT(seeds)},
      {"compare_ks", "LOOP group sizes in compare", false, LOOPRL_LIST(compare_ks)},
      {"bc_k", "group size of reinforce_bc in compare", false, LOOPRL_COUNT(bc_k)},
      {"out_dir", "output directory", false,
       [](CliConfig& c, std::string_view, std::string_view v) { c.out_dir = trim(v); },
       [](const CliConfig& c) { return c.out_dir.string(); }},
      {"base_checkpoint", "fine-tune from this checkpoint", false,
       [](CliConfig& c, std::string_view, std::string_view v) { c.base_checkpoint = trim(v); },
       [](const CliConfig& c) { return c.base_checkpoint ? c.base_checkpoint->string() : ""; }},
      {"timing", "record wallclock_s (false writes 0)", false,
       [](CliConfig& c, std::string_view k, std::string_view v) { c.timing = parse_bool(k, v); },
       [](const CliConfig& c) { return std::string(c.timing ? "true" : "false"); }},
  };
  return table;
}

#undef LOOPRL_COUNT
#undef LOOPRL_REAL
#undef LOOPRL_LIST

const KeyDef* find_key(std::string_view key) {
  const std::string norm = normalize_key(key);
  for (const auto& def : key_table()) {
    if (norm == def.name) return &def;
  }
  return nullptr;
}

std::string valid_key_list() {
  std::string out;
  for (const auto& def : key_table()) {
    if (!out.empty()) out += ", ";
    out += def.name;
  }
  return out;
}

}  // namespace

std::string_view to_string(Command command) {
  switch (command) {
    case Command::pretrain: return "pretrain";
    case Command::finetune: return "finetune";
    case Command::variance_study: return "variance-study";
    case Command::gradcheck: return "gradcheck";
    case Command::compare: return "compare";
  }
  return "?";
}

Command parse_command(std::string_view name) {
  for (Command c : {Command::pretrain, Command::finetune, Command::variance_study,
                    Command::gradcheck, Command::compare}) {
    if (name == to_string(c)) return c;
  }
  throw ConfigError("unknown command '" + std::string(name) +
                    "'; expected pretrain, finetune, variance-study, gradcheck or compare");
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& def : key_table()) out.emplace_back(def.name);
  return out;
}

void apply_setting(CliConfig& config, std::string_view key, std::string_view value) {
  const KeyDef* def = find_key(key);
  if (def == nullptr) {
    throw ConfigError("unknown key '" + std::string(key) + "'; valid keys: " + valid_key_list());
  }
  def->set(config, def->name, value);
}

void apply_config_text(CliConfig& config, std::string_view text, std::string_view origin) {
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) +
                        ": expected 'key = value'");
    }
    try {
      apply_setting(config, trim(std::string_view(body).substr(0, eq)),
                    trim(std::string_view(body).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(std::string(origin) + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_config_file(CliConfig& config, const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  apply_config_text(config, text.str(), path.string());
}

std::optional<std::string> process_env(const char* name) {
  const char* v = std::getenv(name);
  if (v == nullptr) return std::nullopt;
  return std::string(v);
}

CliConfig parse_config(std::span<const std::string> argv, const EnvLookup& env) {
  CLI::App app{"Policy-gradient estimators for diffusion fine-tuning on a toy 2-D DDPM",
               argv.empty() ? "looprl" : argv.front()};
  app.allow_extras(false);

  std::string command;
  std::string config_file;
  bool no_timing = false;
  bool sign_flip = false;
  app.add_option("command", command, "pretrain | finetune | variance-study | gradcheck | compare");
  app.add_option("--config", config_file, "flat key = value config file");
  app.add_flag("--no-timing", no_timing, "write 0 in the wallclock_s column");
  app.add_flag("--inject-sign-flip", sign_flip, "gradcheck: negate the analytic gradient (test hook)");

  const auto& table = key_table();
  std::vector<std::string> raw(table.size());
  std::vector<bool> switch_values(table.size(), false);
  std::vector<CLI::Option*> options(table.size(), nullptr);
  const CliConfig defaults;
  for (std::size_t i = 0; i < table.size(); ++i) {
    const std::string flag = "--" + kebab(table[i].name);
    if (table[i].is_flag) {
      // A default_str here would be taken as the value of a bare switch.
      options[i] = app.add_option(flag, raw[i],
                                  std::string(table[i].help) + " (default " +
                                      table[i].get(defaults) + ")")
                       ->expected(0, 1);
    } else {
      options[i] = app.add_option(flag, raw[i], table[i].help)->default_str(table[i].get(defaults));
    }
  }

  std::vector<std::string> args(argv.begin() + (argv.empty() ? 0 : 1), argv.end());
  std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    throw HelpRequested{app.help()};
  } catch (const CLI::ExtrasError& e) {
    throw ConfigError(std::string(e.what()) + "; valid keys: " + valid_key_list());
  } catch (const CLI::ParseError& e) {
    throw ConfigError(e.what());
  }

  CliConfig config;
  if (auto seed = env("LOOP_RL_SEED")) {
    try {
      apply_setting(config, "seed", *seed);
    } catch (const ConfigError& e) {
      throw ConfigError(std::string("LOOP_RL_SEED: ") + e.what());
    }
  }
  if (!config_file.empty()) {
    config.config_file = config_file;
    apply_config_file(config, config_file);
  }
  for (std::size_t i = 0; i < table.size(); ++i) {
    if (options[i]->count() == 0) continue;
    const std::string value = table[i].is_flag && raw[i].empty() ? "true" : raw[i];
    table[i].set(config, table[i].name, value);
  }
  if (no_timing) config.timing = false;
  config.inject_sign_flip = sign_flip;
  if (!command.empty()) config.command = parse_command(command);
  config.train.validate();
  return config;
}

CliConfig parse_config(int argc, const char* const* argv, const EnvLookup& env) {
  std::vector<std::string> args(argv, argv + argc);
  return parse_config(std::span<const std::string>(args), env);
}

std::string dump_config(const CliConfig& config) {
  std::string out;
  for (const auto& def : key_table()) {
    out += def.name;
    out += " = ";
    out += def.get(config);
    out += '\n';
  }
  return out;
}

}  // namespace looprl
