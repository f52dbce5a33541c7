#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "famarl/cli/commands.hpp"
#include "famarl/errors.hpp"

using namespace famarl;

namespace {

constexpr int kUsage = 2;
constexpr int kNumerical = 3;

std::string join(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"famarl: macro actions from demonstrations, learned with a ladder VAE and used by PPO"};
  app.require_subcommand(1);
  app.fallthrough();

  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, config_path;
  std::vector<std::string> overrides;
  app.add_option("--seed", seed, "global seed");
  app.add_option("--out", out, "output directory");
  app.add_option("--config", config_path, "key = value config file");
  app.add_option("--set", overrides, "override one config key (key=value)");

  std::string corpus, segments, model, favae_path, policy_path, script, task, c_last, values;
  std::optional<int> n, ladder, index, base, episodes, epochs;
  std::optional<long long> steps;
  std::optional<double> beta;
  std::string agent;

  auto* gen = app.add_subcommand("gen-demos", "generate scripted Base demonstrations");
  gen->add_option("--script", script, "down-only, down-and-up, pushed-down-only or pushed-down-and-up");
  gen->add_option("--n", n, "number of demonstrations");

  auto* seg = app.add_subcommand("segment", "segment a demo corpus into macro-action candidates");
  seg->add_option("--corpus", corpus, "demos.jsonl or its directory")->required();

  auto* cal = app.add_subcommand("calibrate-c", "calibrate per-ladder capacities with a low-beta run");
  cal->add_option("--corpus", corpus)->required();
  cal->add_option("--segments", segments, "segments.jsonl or its directory")->required();

  auto* fav = app.add_subcommand("train-favae", "train the ladder VAE on segments");
  fav->add_option("--corpus", corpus)->required();
  fav->add_option("--segments", segments)->required();
  fav->add_option("--beta", beta);
  fav->add_option("--c-last", c_last, "comma-separated capacities, or auto");
  fav->add_option("--epochs", epochs);

  auto* trav = app.add_subcommand("traverse", "decode a latent traversal of one segment");
  trav->add_option("--model", model)->required();
  trav->add_option("--corpus", corpus)->required();
  trav->add_option("--segments", segments)->required();
  trav->add_option("--ladder", ladder);
  trav->add_option("--index", index);
  trav->add_option("--base", base, "segment index used as the base");
  trav->add_option("--values", values, "comma-separated latent values");

  auto* pol = app.add_subcommand("train-policy", "train famarl, ppo or figar");
  pol->add_option("--agent", agent, "famarl, ppo or figar");
  pol->add_option("--favae", favae_path, "FAVAE checkpoint (famarl)");
  pol->add_option("--task", task, "base or maze");
  pol->add_option("--steps", steps, "primitive step budget");

  auto* ev = app.add_subcommand("evaluate", "deterministic evaluation of a policy or a script");
  ev->add_option("--policy", policy_path);
  ev->add_option("--favae", favae_path);
  ev->add_option("--script", script);
  ev->add_option("--task", task);
  ev->add_option("--episodes", episodes);

  auto* chk = app.add_subcommand("check", "run the invariant suites");
  chk->add_option("--corpus", corpus);
  chk->add_option("--segments", segments);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    auto cfg = config_path ? cli::RunConfig::load(*config_path) : cli::RunConfig{};
    for (const auto& kv : overrides) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
      cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (seed) cfg.seed = *seed;
    if (out) cfg.out = *out;
    if (!task.empty()) cfg.set("env.task", task);
    const auto opt_path = [](const std::string& s) {
      return s.empty() ? std::nullopt : std::optional<std::filesystem::path>(s);
    };

    if (*gen) {
      if (!script.empty()) cfg.script = scripts::script_from_string(script);
      if (n) cfg.demos = *n;
      if (cfg.demos < 1) throw UsageError("--n must be >= 1");
      cli::gen_demos(cfg);
      std::cout << "wrote " << cfg.demos << " " << scripts::to_string(cfg.script) << " demos to " << cfg.out << "\n";
    } else if (*seg) {
      cli::segment(cfg, corpus);
      std::cout << "wrote segments to " << cfg.out << "\n";
    } else if (*cal) {
      std::cout << "C_last = " << join(cli::calibrate_c(cfg, corpus, segments)) << "\n";
    } else if (*fav) {
      if (beta) cfg.favae.beta = *beta;
      if (epochs) cfg.favae.epochs = *epochs;
      if (!c_last.empty()) cfg.set("favae.c_last", c_last);
      const auto resolved = cli::train_favae(cfg, corpus, segments);
      std::cout << "trained FAVAE (C_last = " << join(resolved.favae.c_last) << ") in " << cfg.out << "\n";
    } else if (*trav) {
      if (ladder) cfg.traverse_ladder = *ladder;
      if (index) cfg.traverse_index = *index;
      if (base) cfg.traverse_base = *base;
      if (!values.empty()) cfg.set("traverse.values", values);
      const auto files = cli::traverse(cfg, model, corpus, segments);
      std::cout << "wrote " << files.size() << " traversal files to " << cfg.out << "\n";
    } else if (*pol) {
      if (!agent.empty()) cfg.agent = policy::agent_from_string(agent);
      if (steps) cfg.ppo.total_steps = *steps;
      cli::train_policy(cfg, opt_path(favae_path));
      std::cout << "trained " << policy::to_string(cfg.agent) << " policy in " << cfg.out << "\n";
    } else if (*ev) {
      if (episodes) cfg.eval_episodes = *episodes;
      std::optional<scripts::ScriptKind> kind;
      if (!script.empty()) kind = scripts::script_from_string(script);
      std::cout << cli::evaluate(cfg, opt_path(policy_path), opt_path(favae_path), kind).dump(2) << "\n";
    } else if (*chk) {
      const auto r = cli::check(cfg, opt_path(corpus), opt_path(segments));
      std::cout << r.dump(2) << "\n";
      if (!r.at("passed").get<bool>()) return kNumerical;
    }
    return 0;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  }
}
