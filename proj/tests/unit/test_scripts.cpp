#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "famarl/errors.hpp"
#include "famarl/scripts/expert.hpp"

using namespace famarl;
using namespace famarl::scripts;
using env::WorldConfig;

namespace {
std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}
}  // namespace

TEST_CASE("every variant reaches its goal") {
  WorldConfig c;
  for (auto kind : {ScriptKind::DownOnly, ScriptKind::DownAndUp, ScriptKind::PushedDownOnly,
                    ScriptKind::PushedDownAndUp}) {
    const auto corpus = generate_corpus(kind, c, 100, 17);
    REQUIRE(corpus.count() == 100);
    for (const auto& t : corpus.trajectories) {
      CHECK(t.done_reason == env::DoneReason::Goal);
      CHECK(env::distance(t.final_position, t.initial.goal) <= t.initial.goal_radius);
      CHECK(t.steps.back().done);
      if (restricts_goal_to_bottom(kind)) CHECK(t.initial.goal.y < 0.5 * t.initial.map_size);
    }
  }
}

TEST_CASE("DownOnly never accelerates upward") {
  const auto corpus = generate_corpus(ScriptKind::DownOnly, WorldConfig{}, 100, 3);
  for (const auto& t : corpus.trajectories)
    for (const auto& s : t.steps) CHECK(s.ay <= 0.0);
}

TEST_CASE("PushedDownOnly accelerates downward at every step") {
  const auto corpus = generate_corpus(ScriptKind::PushedDownOnly, WorldConfig{}, 100, 4);
  for (const auto& t : corpus.trajectories)
    for (const auto& s : t.steps) CHECK(s.ay < 0.0);
}

TEST_CASE("PushedDownAndUp pushes toward the goal's side") {
  const auto corpus = generate_corpus(ScriptKind::PushedDownAndUp, WorldConfig{}, 100, 8);
  int up_goals = 0;
  for (const auto& t : corpus.trajectories) {
    const bool goal_up = t.initial.goal.y > 0.5 * t.initial.map_size;
    up_goals += goal_up;
    for (const auto& s : t.steps) CHECK((goal_up ? s.ay > 0.0 : s.ay < 0.0));
  }
  CHECK(up_goals > 20);
  CHECK(up_goals < 80);
}

TEST_CASE("DownAndUp contains both upward and downward travel") {
  const auto corpus = generate_corpus(ScriptKind::DownAndUp, WorldConfig{}, 100, 5);
  int up = 0, down = 0;
  for (const auto& t : corpus.trajectories) {
    const double dy = t.final_position.y - t.initial.position.y;
    up += dy > 0.5;
    down += dy < -0.5;
  }
  CHECK(up > 10);
  CHECK(down > 10);
}

TEST_CASE("non-pushed variants move horizontally before vertically") {
  const auto t = generate_demo(ScriptKind::DownAndUp, WorldConfig{}, 12);
  // Vertical travel during the first third of the episode stays small.
  const auto third = t.steps.size() / 3;
  CHECK(std::abs(t.steps[third].y - t.steps[0].y) < 0.1 * t.initial.map_size);
}

TEST_CASE("corpus seeds: singleton, prefix sharing, reproducibility") {
  WorldConfig c;
  CHECK(generate_corpus(ScriptKind::DownOnly, c, 1, 9).count() == 1);
  const auto small = generate_corpus(ScriptKind::PushedDownOnly, c, 20, 9);
  const auto big = generate_corpus(ScriptKind::PushedDownOnly, c, 100, 9);
  for (int i = 0; i < 20; ++i) {
    CHECK(small.trajectories[i].steps == big.trajectories[i].steps);
    CHECK(small.trajectories[i].seed == big.trajectories[i].seed);
  }
  CHECK_THROWS_AS(generate_corpus(ScriptKind::DownOnly, c, 0, 9), UsageError);
}

TEST_CASE("corpus files are byte-identical across reruns and read back") {
  WorldConfig c;
  const auto dir = std::filesystem::temp_directory_path() / "famarl_test_corpus";
  std::filesystem::remove_all(dir);
  write_corpus(generate_corpus(ScriptKind::DownAndUp, c, 10, 1), dir / "a");
  write_corpus(generate_corpus(ScriptKind::DownAndUp, c, 10, 1), dir / "b");
  CHECK(slurp(dir / "a" / "demos.jsonl") == slurp(dir / "b" / "demos.jsonl"));
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
  const auto acts = read_corpus_actions(dir / "a" / "demos.jsonl");
  const auto corpus = generate_corpus(ScriptKind::DownAndUp, c, 10, 1);
  REQUIRE(acts.size() == 10);
  for (std::size_t i = 0; i < acts.size(); ++i) CHECK(acts[i] == corpus.trajectories[i].actions());
  std::filesystem::remove_all(dir);
}

TEST_CASE("script names") {
  CHECK(script_from_string("pushed-down-only") == ScriptKind::PushedDownOnly);
  CHECK(script_from_string("Down&Up") == ScriptKind::DownAndUp);
  try {
    script_from_string("sideways");
    FAIL("expected UsageError");
  } catch (const UsageError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("pushed-down-and-up") != std::string::npos);
  }
  WorldConfig maze;
  maze.task = env::Task::Maze;
  CHECK_THROWS_AS(generate_demo(ScriptKind::DownOnly, maze, 1), UsageError);
}
