#pragma once

// Flat key=value run configuration covering every pipeline stage. Lines are
// "section.key = value"; '#' starts a comment. Doubles are written in their
// shortest exact form so the text round-trips.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "famarl/env/continuous_world.hpp"
#include "famarl/favae/favae.hpp"
#include "famarl/policy/policy.hpp"
#include "famarl/scripts/expert.hpp"
#include "famarl/segmentation/segmentation.hpp"

namespace famarl::cli {

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "runs";

  // Policy stages use env.task; demos always run on Base.
  env::WorldConfig env{.task = env::Task::Maze};

  scripts::ScriptKind script = scripts::ScriptKind::PushedDownOnly;
  int demos = 100;
  scripts::ScriptParams script_params;

  segmentation::WindowConfig segmentation;

  favae::LadderConfig favae;
  bool calibrated = false;  // false: favae.c_last is "auto"
  double length_quantile = 0.95;

  int traverse_ladder = 2;
  int traverse_index = 0;
  int traverse_base = 0;
  std::vector<double> traverse_values{-3.0, -1.0, 1.0, 3.0};

  policy::AgentKind agent = policy::AgentKind::Famarl;
  policy::PpoHyper ppo;
  int eval_episodes = 100;

  /// Sets one key from its text form. Throws ConfigError for unknown keys
  /// or malformed values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static std::vector<std::string> keys();

  std::string to_text() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  /// Validates every section.
  void validate() const;

  bool operator==(const RunConfig& o) const { return to_text() == o.to_text(); }
};

}  // namespace famarl::cli
