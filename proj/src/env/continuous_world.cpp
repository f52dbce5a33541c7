#include "famarl/env/continuous_world.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "famarl/errors.hpp"
#include "famarl/rng.hpp"

namespace famarl::env {

std::string to_string(Task t) { return t == Task::Base ? "base" : "maze"; }

Task task_from_string(const std::string& s) {
  if (s == "base" || s == "Base") return Task::Base;
  if (s == "maze" || s == "Maze") return Task::Maze;
  throw UsageError("unknown task '" + s + "' (expected base or maze)");
}

double distance(Vec2 a, Vec2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

void WorldConfig::validate() const {
  if (max_steps <= 0) throw ConfigError("max_steps must be > 0");
  if (goal_radius_frac <= 0) throw ConfigError("goal radius must be > 0");
  if (dt <= 0 || max_speed_frac <= 0) throw ConfigError("dt and max speed must be > 0");
  if (task == Task::Base && !(min_map_size > 0 && min_map_size <= max_map_size))
    throw ConfigError("Base map size range is empty");
  if (task == Task::Maze) {
    if (map_size <= 0) throw ConfigError("map_size must be > 0");
    if (num_walls < 0 || num_walls > kMaxWalls)
      throw ConfigError("num_walls must be in [0, " + std::to_string(kMaxWalls) + "]");
    if (gap_width_frac <= 0 || gap_width_frac >= 1) throw ConfigError("gap width must be in (0, 1)");
  }
  if (corner_inset_frac < 0 || corner_inset_frac >= 0.5) throw ConfigError("corner inset must be in [0, 0.5)");
}

PrimitiveAction PrimitiveAction::clamped() const {
  return {std::clamp(ax, -1.0, 1.0), std::clamp(ay, -1.0, 1.0)};
}

AgentState reset(const WorldConfig& config, std::uint64_t episode_seed) {
  config.validate();
  Rng rng(episode_seed);
  AgentState s;
  if (config.task == Task::Base) {
    const double size = rng.uniform(config.min_map_size, config.max_map_size);
    const bool agent_left = rng.coin();
    const bool agent_top = rng.coin();
    const bool goal_top = rng.coin();
    const double inset = config.corner_inset_frac * size;
    const double lo = inset, hi = size - inset;
    s.map_size = size;
    s.position = {agent_left ? lo : hi, agent_top ? hi : lo};
    s.goal = {agent_left ? hi : lo, goal_top ? hi : lo};
  } else {
    const double size = config.map_size;
    const double inset = config.corner_inset_frac * size;
    s.map_size = size;
    s.position = {0.5 * size, size - inset};
    s.goal = {0.5 * size, inset};
    const double half_gap = 0.5 * config.gap_width_frac * size;
    for (int k = 1; k <= config.num_walls; ++k) {
      const double c = rng.uniform(half_gap, size - half_gap);
      s.walls.push_back({size * k / (config.num_walls + 1), c - half_gap, c + half_gap});
    }
  }
  s.goal_radius = config.goal_radius_frac * s.map_size;
  s.max_speed = config.max_speed_frac * s.map_size;
  return s;
}

StepResult step(const AgentState& state, PrimitiveAction action, const WorldConfig& config) {
  if (state.done) throw UsageError("step called on a finished episode");
  const auto a = action.clamped();
  const double S = state.map_size, vmax = state.max_speed, dt = config.dt;
  Vec2 v{std::clamp(state.velocity.x + a.ax * dt, -vmax, vmax),
         std::clamp(state.velocity.y + a.ay * dt, -vmax, vmax)};
  const Vec2 p = state.position;

  // Horizontal motion. Only the map edges block it, unless the agent sits
  // in the plane of a wall (inside its gap), where the gap edges do.
  double lo_x = 0.0, hi_x = S;
  for (const auto& w : state.walls)
    if (std::abs(p.y - w.y) < 0.5 * kWallClearance) {
      lo_x = std::max(lo_x, w.gap_lo);
      hi_x = std::min(hi_x, w.gap_hi);
    }
  double nx = p.x + v.x * dt;
  if (nx < lo_x || nx > hi_x) {
    nx = std::clamp(nx, lo_x, hi_x);
    v.x = 0.0;
  }

  // Vertical motion at the new x; stop at the first wall crossed outside its gap.
  double ny = p.y + v.y * dt;
  if (ny != p.y) {
    const bool down = ny < p.y;
    const Wall* hit = nullptr;
    for (const auto& w : state.walls) {
      const bool crosses = down ? (p.y > w.y && ny <= w.y) : (p.y < w.y && ny >= w.y);
      if (!crosses || (nx >= w.gap_lo && nx <= w.gap_hi)) continue;
      if (!hit || (down ? w.y > hit->y : w.y < hit->y)) hit = &w;
    }
    if (hit) {
      ny = hit->y + (down ? kWallClearance : -kWallClearance);
      v.y = 0.0;
    }
  }
  if (ny < 0.0 || ny > S) {
    ny = std::clamp(ny, 0.0, S);
    v.y = 0.0;
  }

  StepResult r;
  r.next_state = state;
  r.next_state.position = {nx, ny};
  r.next_state.velocity = v;
  r.next_state.step_count = state.step_count + 1;
  const double d = distance(r.next_state.position, state.goal);
  r.reward = -d;
  if (d <= state.goal_radius) {
    r.done = true;
    r.done_reason = DoneReason::Goal;
  } else if (r.next_state.step_count >= config.max_steps) {
    r.done = true;
    r.done_reason = DoneReason::Timeout;
  }
  r.next_state.done = r.done;
  return r;
}

CornerCase corner_case(const AgentState& s) {
  const bool agent_top = s.position.y > 0.5 * s.map_size;
  const bool goal_top = s.goal.y > 0.5 * s.map_size;
  return static_cast<CornerCase>((agent_top ? 0 : 2) + (goal_top ? 0 : 1));
}

bool inside_bounds(const AgentState& s) {
  return s.position.x >= 0.0 && s.position.x <= s.map_size && s.position.y >= 0.0 &&
         s.position.y <= s.map_size;
}

bool on_wall(const AgentState& s) {
  for (const auto& w : s.walls)
    if (s.position.y == w.y && (s.position.x < w.gap_lo || s.position.x > w.gap_hi)) return true;
  return false;
}

std::array<double, kObservationSize> observe(const AgentState& s) {
  const double S = s.map_size;
  std::array<double, kObservationSize> o{};
  o[0] = 2.0 * s.position.x / S - 1.0;
  o[1] = 2.0 * s.position.y / S - 1.0;
  o[2] = s.velocity.x / s.max_speed;
  o[3] = s.velocity.y / s.max_speed;
  o[4] = 2.0 * s.goal.x / S - 1.0;
  o[5] = 2.0 * s.goal.y / S - 1.0;
  for (std::size_t k = 0; k < s.walls.size() && k < kMaxWalls; ++k)
    o[6 + k] = 2.0 * s.walls[k].gap_center() / S - 1.0;
  return o;
}

std::vector<PrimitiveAction> Trajectory::actions() const {
  std::vector<PrimitiveAction> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back({s.ax, s.ay});
  return out;
}

double Trajectory::total_reward() const {
  double r = 0.0;
  for (const auto& s : steps) r += s.reward;
  return r;
}

ContinuousWorld::ContinuousWorld(WorldConfig config) : config_(config) {
  config_.validate();
  reset();
}

const AgentState& ContinuousWorld::reset() {
  return reset_with_seed(derive_seed(config_.seed, episodes_));
}

const AgentState& ContinuousWorld::reset_with_seed(std::uint64_t episode_seed) {
  ++episodes_;
  episode_seed_ = episode_seed;
  state_ = env::reset(config_, episode_seed);
  return state_;
}

StepResult ContinuousWorld::step(PrimitiveAction action) {
  auto r = env::step(state_, action, config_);
  state_ = r.next_state;
  return r;
}

OpenLoopResult run_open_loop(const AgentState& start, const std::vector<PrimitiveAction>& actions,
                             const WorldConfig& config) {
  OpenLoopResult out;
  out.states.push_back(start);
  AgentState s = start;
  for (const auto& a : actions) {
    if (s.done) break;
    auto r = step(s, a, config);
    out.rewards.push_back(r.reward);
    s = r.next_state;
    out.states.push_back(s);
    if (r.done) {
      out.done = true;
      out.done_reason = r.done_reason;
      break;
    }
  }
  return out;
}

std::vector<Vec2> integrate_free(const std::vector<PrimitiveAction>& actions, double max_speed,
                                 double dt) {
  std::vector<Vec2> out{{0.0, 0.0}};
  Vec2 p, v;
  for (const auto& raw : actions) {
    const auto a = raw.clamped();
    v.x = std::clamp(v.x + a.ax * dt, -max_speed, max_speed);
    v.y = std::clamp(v.y + a.ay * dt, -max_speed, max_speed);
    p.x += v.x * dt;
    p.y += v.y * dt;
    out.push_back(p);
  }
  return out;
}

void write_jsonl(std::ostream& os, const Trajectory& traj) {
  for (const auto& s : traj.steps) {
    nlohmann::ordered_json j;
    j["episode"] = traj.episode_id;
    j["t"] = s.t;
    j["x"] = s.x;
    j["y"] = s.y;
    j["vx"] = s.vx;
    j["vy"] = s.vy;
    j["ax"] = s.ax;
    j["ay"] = s.ay;
    j["reward"] = s.reward;
    j["done"] = s.done;
    os << j.dump() << '\n';
  }
}

std::vector<StepRecord> read_jsonl_steps(std::istream& is) {
  std::vector<StepRecord> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    StepRecord s;
    s.t = j.at("t").get<int>();
    s.x = j.at("x").get<double>();
    s.y = j.at("y").get<double>();
    s.vx = j.at("vx").get<double>();
    s.vy = j.at("vy").get<double>();
    s.ax = j.at("ax").get<double>();
    s.ay = j.at("ay").get<double>();
    s.reward = j.at("reward").get<double>();
    s.done = j.at("done").get<bool>();
    out.push_back(s);
  }
  return out;
}

}  // namespace famarl::env
