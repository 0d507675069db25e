#pragma once

// The gnmap command line, as a library so that tests can drive it in-process.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "gnmap/model.hpp"
#include "gnmap/synth.hpp"
#include "gnmap/train.hpp"

namespace gnmap::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

enum class LogLevel { error, info, debug };

/// Reads GNMAP_LOG (error, info, debug; unset means info). Throws ConfigError
/// on any other value.
LogLevel log_level_from_env();

/// Everything a command can be configured with. A JSON config file may hold
/// any subset of {"synth", "model", "pretrain", "finetune", "eval"}; flags
/// override it.
struct RunConfig {
  SynthConfig synth;
  ModelConfig model;
  bool model_geometry_set = false;  // false: take the geometry of the dataset
  TrainConfig pretrain = default_train_config(Phase::pretrain);
  TrainConfig finetune = default_train_config(Phase::finetune);
  double threshold = 0.5;

  TrainConfig& train(Phase p) { return p == Phase::pretrain ? pretrain : finetune; }
};

RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// Splits a total tile count the way the default benchmark does (40/5/5 for
/// 50): one tenth each for valid and test, at least one tile each.
void set_tile_total(SynthConfig& c, int total);

/// Runs one invocation (argv[0] is the program name). Normal output goes to
/// `out`, log lines to `err`. Returns the process exit code.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace gnmap::cli
