#include "famarl/scripts/expert.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include <json.hpp>

#include "famarl/errors.hpp"
#include "famarl/rng.hpp"

namespace famarl::scripts {

namespace {
constexpr ScriptKind kAllKinds[] = {ScriptKind::DownOnly, ScriptKind::DownAndUp,
                                    ScriptKind::PushedDownOnly, ScriptKind::PushedDownAndUp};
}

std::string to_string(ScriptKind k) {
  switch (k) {
    case ScriptKind::DownOnly: return "down-only";
    case ScriptKind::DownAndUp: return "down-and-up";
    case ScriptKind::PushedDownOnly: return "pushed-down-only";
    case ScriptKind::PushedDownAndUp: return "pushed-down-and-up";
  }
  return "unknown";
}

ScriptKind script_from_string(const std::string& s) {
  static const std::map<std::string, ScriptKind> aliases = {
      {"DownOnly", ScriptKind::DownOnly},
      {"DownAndUp", ScriptKind::DownAndUp},
      {"Down&Up", ScriptKind::DownAndUp},
      {"PushedDownOnly", ScriptKind::PushedDownOnly},
      {"PushedDownAndUp", ScriptKind::PushedDownAndUp},
      {"PushedDown&Up", ScriptKind::PushedDownAndUp},
  };
  for (auto k : kAllKinds)
    if (to_string(k) == s) return k;
  if (auto it = aliases.find(s); it != aliases.end()) return it->second;
  throw UsageError("unknown script '" + s +
                   "' (expected one of: down-only, down-and-up, pushed-down-only, "
                   "pushed-down-and-up)");
}

bool restricts_goal_to_bottom(ScriptKind k) {
  return k == ScriptKind::DownOnly || k == ScriptKind::PushedDownOnly;
}

bool is_pushed(ScriptKind k) {
  return k == ScriptKind::PushedDownOnly || k == ScriptKind::PushedDownAndUp;
}

ScriptController::ScriptController(ScriptKind kind, ScriptParams params)
    : kind_(kind), params_(params) {}

env::PrimitiveAction ScriptController::act(const env::AgentState& s, double noise_x,
                                           double noise_y) {
  const double S = s.map_size;
  const double ex = s.goal.x - s.position.x;
  const double ey = s.goal.y - s.position.y;
  const auto& p = params_;
  env::PrimitiveAction a;
  a.ax = p.kp * ex - p.kd * s.velocity.x;
  if (is_pushed(kind_)) {
    a.ay = s.goal.y < 0.5 * S ? -p.push : p.push;
  } else {
    if (!vertical_phase_ && std::abs(ex) < p.phase_tol * S &&
        std::abs(s.velocity.x) < 0.5 * p.phase_tol * S)
      vertical_phase_ = true;
    a.ay = vertical_phase_ ? p.kp * ey - p.kd * s.velocity.y : -p.kd * s.velocity.y;
  }
  a.ax += p.jitter * noise_x;
  a.ay += p.jitter * noise_y;
  a = a.clamped();
  if (kind_ == ScriptKind::DownOnly) a.ay = std::min(a.ay, 0.0);
  return a;
}

env::Trajectory generate_demo(ScriptKind kind, const env::WorldConfig& config, std::uint64_t seed,
                              const ScriptParams& params) {
  if (config.task != env::Task::Base) throw UsageError("expert scripts run on the Base task only");
  env::AgentState s = env::reset(config, seed);
  if (restricts_goal_to_bottom(kind)) s.goal.y = config.corner_inset_frac * s.map_size;
  Rng noise(derive_seed(seed, 0x6a17));
  ScriptController ctl(kind, params);

  env::Trajectory traj;
  traj.seed = seed;
  traj.initial = s;
  while (!s.done) {
    const double nx = noise.uniform(-1.0, 1.0);
    const double ny = noise.uniform(-1.0, 1.0);
    const auto a = ctl.act(s, nx, ny);
    const auto r = env::step(s, a, config);
    traj.steps.push_back({s.step_count, s.position.x, s.position.y, s.velocity.x, s.velocity.y,
                          a.ax, a.ay, r.reward, r.done});
    s = r.next_state;
    traj.done_reason = r.done_reason;
  }
  traj.final_position = s.position;
  if (traj.done_reason != env::DoneReason::Goal)
    throw NumericalError("script " + to_string(kind) + " failed to reach the goal (seed " +
                         std::to_string(seed) + ")");
  return traj;
}

DemoCorpus generate_corpus(ScriptKind kind, const env::WorldConfig& config, int n,
                           std::uint64_t seed, const ScriptParams& params) {
  if (n < 1) throw UsageError("corpus size must be >= 1");
  DemoCorpus c;
  c.script = kind;
  c.seed = seed;
  c.config = config;
  for (int i = 0; i < n; ++i) {
    auto t = generate_demo(kind, config, derive_seed(seed, static_cast<std::uint64_t>(i)), params);
    t.episode_id = i;
    c.trajectories.push_back(std::move(t));
  }
  return c;
}

void write_corpus(const DemoCorpus& corpus, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(dir / "demos.jsonl", std::ios::binary);
    if (!f) throw UsageError("cannot write " + (dir / "demos.jsonl").string());
    for (const auto& t : corpus.trajectories) env::write_jsonl(f, t);
  }
  nlohmann::ordered_json m;
  m["script"] = to_string(corpus.script);
  m["count"] = corpus.count();
  m["seed"] = corpus.seed;
  nlohmann::ordered_json episodes = nlohmann::ordered_json::array();
  for (const auto& t : corpus.trajectories)
    episodes.push_back({{"episode", t.episode_id},
                        {"seed", t.seed},
                        {"length", t.steps.size()},
                        {"map_size", t.initial.map_size}});
  m["episodes"] = std::move(episodes);
  std::ofstream f(dir / "manifest.json", std::ios::binary);
  f << m.dump(2) << '\n';
}

std::vector<std::vector<env::PrimitiveAction>> read_corpus_actions(
    const std::filesystem::path& jsonl) {
  std::ifstream f(jsonl);
  if (!f) throw UsageError("cannot read corpus " + jsonl.string());
  std::map<int, std::vector<env::PrimitiveAction>> by_episode;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    by_episode[j.value("episode", 0)].push_back({j.at("ax").get<double>(), j.at("ay").get<double>()});
  }
  std::vector<std::vector<env::PrimitiveAction>> out;
  for (auto& [id, acts] : by_episode) out.push_back(std::move(acts));
  return out;
}

}  // namespace famarl::scripts
