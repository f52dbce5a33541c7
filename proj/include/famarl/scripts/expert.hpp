#pragma once

// Scripted demonstrators for the Base task. All four variants share a PD
// approach toward the goal corner; they differ in the goal distribution and
// in how the vertical axis is driven.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "famarl/env/continuous_world.hpp"

namespace famarl::scripts {

enum class ScriptKind { DownOnly, DownAndUp, PushedDownOnly, PushedDownAndUp };

std::string to_string(ScriptKind k);
/// Accepts "down-only", "down-and-up", "pushed-down-only", "pushed-down-and-up"
/// (and the CamelCase names). Throws UsageError listing the variants otherwise.
ScriptKind script_from_string(const std::string& s);
bool restricts_goal_to_bottom(ScriptKind k);
bool is_pushed(ScriptKind k);

struct ScriptParams {
  double kp = 0.135;        // per-step position gain
  double kd = 0.6;          // per-step velocity damping
  double push = 0.5;        // constant vertical bias of the pushed variants
  double jitter = 0.05;     // uniform action noise amplitude
  double phase_tol = 0.02;  // horizontal phase ends within this fraction of map size
};

/// Closed-loop control law. Non-pushed variants move horizontally first and
/// then vertically; pushed variants approach horizontally while accelerating
/// toward the goal's vertical side the whole episode.
class ScriptController {
 public:
  explicit ScriptController(ScriptKind kind, ScriptParams params = {});
  // noise_x, noise_y in [-1, 1] scale the jitter.
  env::PrimitiveAction act(const env::AgentState& s, double noise_x = 0.0, double noise_y = 0.0);
  void reset() { vertical_phase_ = false; }
  ScriptKind kind() const { return kind_; }

 private:
  ScriptKind kind_;
  ScriptParams params_;
  bool vertical_phase_ = false;
};

/// One goal-reaching Base episode. Throws UsageError for a non-Base config
/// and NumericalError if the script fails to reach the goal.
env::Trajectory generate_demo(ScriptKind kind, const env::WorldConfig& config, std::uint64_t seed,
                              const ScriptParams& params = {});

struct DemoCorpus {
  ScriptKind script = ScriptKind::DownOnly;
  std::uint64_t seed = 0;
  env::WorldConfig config;
  std::vector<env::Trajectory> trajectories;
  std::size_t count() const { return trajectories.size(); }
};

/// Demo i uses seed derive_seed(seed, i), so corpora sharing a base seed
/// share their prefixes.
DemoCorpus generate_corpus(ScriptKind kind, const env::WorldConfig& config, int n,
                           std::uint64_t seed, const ScriptParams& params = {});

/// Writes <dir>/demos.jsonl and <dir>/manifest.json.
void write_corpus(const DemoCorpus& corpus, const std::filesystem::path& dir);
/// Action sequences of every episode in a demos.jsonl file, in episode order.
std::vector<std::vector<env::PrimitiveAction>> read_corpus_actions(const std::filesystem::path& jsonl);

}  // namespace famarl::scripts
