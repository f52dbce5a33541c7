#pragma once

// ContinuousWorld: a square 2-D arena with a point-mass agent driven by
// accelerations. Two tasks: Base (open arena, corner start/goal, random map
// size) and Maze (fixed start/goal, horizontal walls with one random gap each).
//
// Coordinates: x to the right, y up, map spans [0, S] x [0, S].

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace famarl::env {

enum class Task { Base, Maze };

std::string to_string(Task t);
Task task_from_string(const std::string& s);

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Vec2&) const = default;
};

double distance(Vec2 a, Vec2 b);

/// Size-relative quantities (goal radius, speed cap, gap width, corner
/// inset) are fractions of the episode's map size, since Base draws a new
/// size every episode.
struct WorldConfig {
  Task task = Task::Base;
  double map_size = 2.5;  // Maze side length
  double min_map_size = 2.5;  // Base draws uniformly from [min, max]
  double max_map_size = 5.0;
  int max_steps = 300;
  double goal_radius_frac = 0.1;
  double dt = 1.0;
  double max_speed_frac = 0.25;
  int num_walls = 4;
  double gap_width_frac = 0.2;
  double corner_inset_frac = 0.05;
  std::uint64_t seed = 0;

  void validate() const;  // throws ConfigError
};

/// Horizontal wall spanning the map at height y, open on [gap_lo, gap_hi].
struct Wall {
  double y = 0.0;
  double gap_lo = 0.0;
  double gap_hi = 0.0;
  double gap_center() const { return 0.5 * (gap_lo + gap_hi); }
  bool operator==(const Wall&) const = default;
};

struct AgentState {
  Vec2 position;
  Vec2 velocity;
  Vec2 goal;
  std::vector<Wall> walls;
  int step_count = 0;
  double map_size = 0.0;
  double goal_radius = 0.0;
  double max_speed = 0.0;
  bool done = false;

  bool operator==(const AgentState&) const = default;
};

struct PrimitiveAction {
  double ax = 0.0;
  double ay = 0.0;
  PrimitiveAction clamped() const;
  bool operator==(const PrimitiveAction&) const = default;
};

enum class DoneReason { None, Goal, Timeout };

struct StepResult {
  AgentState next_state;
  double reward = 0.0;
  bool done = false;
  DoneReason done_reason = DoneReason::None;
};

/// Initial state for one episode; deterministic in (config, episode_seed).
AgentState reset(const WorldConfig& config, std::uint64_t episode_seed);

/// Pure transition. Throws UsageError if the episode already finished.
StepResult step(const AgentState& state, PrimitiveAction action, const WorldConfig& config);

/// Agent/goal vertical placement for a Base episode: 4 combinations.
enum class CornerCase { TopToTop = 0, TopToBottom = 1, BottomToTop = 2, BottomToBottom = 3 };
CornerCase corner_case(const AgentState& s);

/// Clearance kept between the agent and a wall it is resting against.
inline constexpr double kWallClearance = 1e-6;

bool inside_bounds(const AgentState& s);
bool on_wall(const AgentState& s);

/// Fixed-length observation vector fed to policies: normalized position,
/// velocity, goal and the gap centers of up to kMaxWalls walls.
inline constexpr int kMaxWalls = 4;
inline constexpr int kObservationSize = 6 + kMaxWalls;
std::array<double, kObservationSize> observe(const AgentState& s);

/// One recorded step: the pre-action state, the action, and its outcome.
struct StepRecord {
  int t = 0;
  double x = 0, y = 0, vx = 0, vy = 0;
  double ax = 0, ay = 0;
  double reward = 0;
  bool done = false;
  bool operator==(const StepRecord&) const = default;
};

struct Trajectory {
  int episode_id = 0;
  std::uint64_t seed = 0;
  AgentState initial;
  std::vector<StepRecord> steps;
  DoneReason done_reason = DoneReason::None;
  Vec2 final_position;

  std::vector<PrimitiveAction> actions() const;
  double total_reward() const;
};

/// Environment instance: owns the current state and derives one seed per
/// episode from config.seed.
class ContinuousWorld {
 public:
  explicit ContinuousWorld(WorldConfig config);

  const AgentState& reset();
  const AgentState& reset_with_seed(std::uint64_t episode_seed);
  StepResult step(PrimitiveAction action);

  const AgentState& state() const { return state_; }
  const WorldConfig& config() const { return config_; }
  std::uint64_t episode_seed() const { return episode_seed_; }
  std::uint64_t episodes_started() const { return episodes_; }

 private:
  WorldConfig config_;
  AgentState state_;
  std::uint64_t episodes_ = 0;
  std::uint64_t episode_seed_ = 0;
};

/// Runs an action sequence open loop from `start` (stops early at episode
/// end). Used for replay and traversal visualization.
struct OpenLoopResult {
  std::vector<AgentState> states;  // states[0] = start
  std::vector<double> rewards;
  bool done = false;
  DoneReason done_reason = DoneReason::None;
};
OpenLoopResult run_open_loop(const AgentState& start, const std::vector<PrimitiveAction>& actions,
                             const WorldConfig& config);

/// Kinematics of an action sequence in an unbounded, wall-free plane with the
/// given speed cap, starting at rest at the origin. Returns visited positions
/// (first is the origin).
std::vector<Vec2> integrate_free(const std::vector<PrimitiveAction>& actions, double max_speed,
                                 double dt = 1.0);

/// JSON-lines export: {t, x, y, vx, vy, ax, ay, reward, done} per step.
void write_jsonl(std::ostream& os, const Trajectory& traj);
std::vector<StepRecord> read_jsonl_steps(std::istream& is);

}  // namespace famarl::env
