#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "famarl/cli/commands.hpp"
#include "famarl/errors.hpp"
#include "famarl/nn/checkpoint.hpp"

using namespace famarl;
using namespace famarl::cli;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

RunConfig small(const std::filesystem::path& out) {
  RunConfig c;
  c.out = out.string();
  c.seed = 3;
  c.demos = 12;
  c.segmentation.epochs = 20;
  c.favae.epochs = 6;
  c.favae.batch_size = 8;
  c.favae.conv1_channels = 4;
  c.favae.conv2_channels = 6;
  c.favae.hidden = 8;
  c.ppo.total_steps = 600;
  c.ppo.horizon = 300;
  c.ppo.epochs = 1;
  c.ppo.hidden = 8;
  c.eval_episodes = 5;
  return c;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("run config round trips through text") {
  RunConfig c;
  CHECK(RunConfig::parse(c.to_text()) == c);
  c.seed = 1234567890123ULL;
  c.favae.beta = 0.1;
  c.set("favae.c_last", "1.25, 0.3333333333333333, 7");
  c.set("policy.agent", "figar");
  c.set("env.task", "base");
  c.set("traverse.values", "-2.5,0,2.5");
  c.ppo.actor_lr = 1.0 / 3.0;
  const auto back = RunConfig::parse(c.to_text());
  CHECK(back == c);
  CHECK(back.favae.c_last == std::vector<double>{1.25, 1.0 / 3.0, 7.0});
  CHECK(back.calibrated);
  CHECK(back.ppo.actor_lr == 1.0 / 3.0);
  CHECK(back.agent == policy::AgentKind::Figar);
  CHECK(back.get("favae.c_last") == c.get("favae.c_last"));
  CHECK(RunConfig{}.get("favae.c_last") == "auto");
  CHECK(RunConfig::parse("# comment\n\nseed = 9  # trailing\n").seed == 9);
  const auto keys = RunConfig::keys();
  CHECK(keys.size() == std::set<std::string>(keys.begin(), keys.end()).size());
}

TEST_CASE("run config defaults") {
  const RunConfig c;
  CHECK(c.get("segmentation.window_size") == "4");
  CHECK(c.get("segmentation.neighborhood") == "10");
  CHECK(c.get("segmentation.margin") == "0.05");
  CHECK(c.get("favae.beta") == "50");
  CHECK(c.get("traverse.values") == "-3,-1,1,3");
  CHECK(c.get("env.task") == "maze");
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("run config errors") {
  RunConfig c;
  CHECK_THROWS_AS(c.set("nope", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("seed", "x1"), ConfigError);
  CHECK_THROWS_AS(c.set("favae.beta", "1.0.0"), ConfigError);
  CHECK_THROWS_AS(c.set("scripts.kind", "sideways"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("seed 3\n"), ConfigError);
  c.demos = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
}

TEST_CASE("pipeline: artifacts, resolved configs and determinism") {
  TempDir tmp("famarl_test_cli");
  const auto run = [&](const std::string& name) {
    auto c = small(tmp.path / name / "demos");
    gen_demos(c);
    const auto demos = tmp.path / name / "demos";
    c.out = (tmp.path / name / "seg").string();
    segment(c, demos);
    const auto seg = tmp.path / name / "seg";
    c.out = (tmp.path / name / "favae").string();
    const auto resolved = train_favae(c, demos, seg);
    CHECK(resolved.calibrated);
    CHECK(resolved.favae.c_last.size() == 3);
    const auto fav = tmp.path / name / "favae";
    c.out = (tmp.path / name / "policy").string();
    train_policy(c, fav / "favae.ck");
    return resolved;
  };
  const auto a = run("a");
  run("b");
  for (const char* f : {"demos/demos.jsonl", "demos/manifest.json", "seg/segments.jsonl",
                        "seg/distances/episode_0.csv", "favae/favae_log.csv", "policy/curve.csv"})
    CHECK_MESSAGE(slurp(tmp.path / "a" / f) == slurp(tmp.path / "b" / f), f);
  for (const char* f : {"favae/favae.ck", "policy/policy.ck"})
    CHECK(nn::file_digest(tmp.path / "a" / f) == nn::file_digest(tmp.path / "b" / f));

  const auto resolved = RunConfig::load(tmp.path / "a" / "favae" / "train-favae.config");
  CHECK(resolved.favae.c_last == a.favae.c_last);
  CHECK(resolved.get("favae.beta") == "50");
  CHECK(RunConfig::load(tmp.path / "a" / "seg" / "segment.config").get("segmentation.margin") == "0.05");
  for (const char* f : {"demos/gen-demos.config", "policy/train-policy.config"})
    CHECK(std::filesystem::exists(tmp.path / "a" / f));

  std::ifstream curve(tmp.path / "a" / "policy" / "curve.csv");
  std::string header;
  std::getline(curve, header);
  CHECK(header == "update,cumulative_steps,mean_return,mean_macro_length,policy_entropy");

  auto c = small(tmp.path / "a" / "trav");
  const auto files = traverse(c, tmp.path / "a" / "favae", tmp.path / "a" / "demos", tmp.path / "a" / "seg");
  CHECK(files.size() == c.traverse_values.size());
  for (const auto& f : files) CHECK(!slurp(f).empty());
  c.traverse_index = 9;
  CHECK_THROWS_AS(traverse(c, tmp.path / "a" / "favae", tmp.path / "a" / "demos", tmp.path / "a" / "seg"),
                  UsageError);

  c = small(tmp.path / "a" / "eval");
  const auto m = evaluate(c, tmp.path / "a" / "policy", tmp.path / "a" / "favae", std::nullopt);
  CHECK(m.at("success_rate").get<double>() >= 0.0);
  CHECK(m.at("success_rate").get<double>() <= 1.0);
  CHECK(m == evaluate(c, tmp.path / "a" / "policy", tmp.path / "a" / "favae", std::nullopt));
  CHECK_THROWS_AS(evaluate(c, tmp.path / "a" / "policy", std::nullopt, std::nullopt), UsageError);

  const auto chk = check(c, tmp.path / "a" / "demos", tmp.path / "a" / "seg");
  CHECK(chk.at("passed").get<bool>());
  CHECK(chk.at("suites").size() == 6);
}

TEST_CASE("command preconditions") {
  TempDir tmp("famarl_test_cli_pre");
  std::filesystem::create_directories(tmp.path);
  auto c = small(tmp.path / "out");
  std::ofstream(tmp.path / "empty.jsonl").close();
  CHECK_THROWS_AS(segment(c, tmp.path / "empty.jsonl"), UsageError);
  CHECK_THROWS_AS(segment(c, tmp.path / "missing.jsonl"), UsageError);
  c.agent = policy::AgentKind::Famarl;
  CHECK_THROWS_AS(train_policy(c, std::nullopt), UsageError);
  CHECK_THROWS_AS(evaluate(c, std::nullopt, std::nullopt, std::nullopt), UsageError);
}

TEST_CASE("scripted experts evaluate to full success on Base") {
  TempDir tmp("famarl_test_cli_script");
  auto c = small(tmp.path);
  c.env.task = env::Task::Base;
  c.eval_episodes = 40;
  for (auto k : {scripts::ScriptKind::PushedDownOnly, scripts::ScriptKind::DownAndUp}) {
    const auto m = evaluate(c, std::nullopt, std::nullopt, k);
    CHECK(m.at("success_rate").get<double>() == 1.0);
    CHECK(m.at("script").get<std::string>() == scripts::to_string(k));
  }
  CHECK(std::filesystem::exists(tmp.path / "metrics.json"));
}
