#include "famarl/cli/commands.hpp"

#include <cmath>
#include <fstream>

#include "famarl/errors.hpp"
#include "famarl/nn/network.hpp"
#include "famarl/rng.hpp"

namespace famarl::cli {

namespace {

path out_dir(const RunConfig& cfg) {
  path d(cfg.out);
  std::filesystem::create_directories(d);
  return d;
}

void write_resolved(const RunConfig& cfg, const std::string& command) {
  cfg.save(out_dir(cfg) / (command + ".config"));
}

void write_json(const nlohmann::ordered_json& j, const path& p) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw UsageError("cannot write " + p.string());
  f << j.dump(2) << '\n';
}

path resolve(const path& p, const char* default_name) {
  return std::filesystem::is_directory(p) ? p / default_name : p;
}

env::WorldConfig demo_env(const RunConfig& cfg) {
  auto e = cfg.env;
  e.task = env::Task::Base;
  return e;
}

double traversal_speed(const RunConfig& cfg) { return cfg.env.max_speed_frac * cfg.env.map_size; }

nlohmann::ordered_json eval_json(const policy::EvalResult& r) {
  return {{"episodes", r.episodes},
          {"mean_return", r.mean_return},
          {"std_return", r.std_return},
          {"success_rate", r.success_rate},
          {"mean_length", r.mean_length}};
}

// Invariant suites for `check`.

bool check_gradients(Rng& rng, double& worst) {
  worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    nn::NetworkSpec spec;
    spec.seed = static_cast<std::uint64_t>(rng.uniform_int(0, 1 << 30));
    if (trial % 2 == 0) {
      spec = nn::mlp({5, 7, 3}, trial % 4 == 0 ? nn::BlockKind::Tanh : nn::BlockKind::ReLU, spec.seed);
    } else {
      spec.layers = {nn::BlockSpec::conv1d(2, 3, 7, 3, 2), nn::BlockSpec::tanh(9),
                     nn::BlockSpec::conv_transpose1d(3, 2, 3, 3, 2)};
    }
    auto params = nn::init_params(spec);
    std::vector<double> x(spec.input_width()), g(spec.output_width());
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : g) v = rng.uniform(-1, 1);
    const auto analytic = nn::backward(spec, params, x, g);
    const auto loss = [&] {
      const auto y = nn::forward(spec, params, x);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * g[i];
      return s;
    };
    for (std::size_t t = 0; t < params.tensors.size(); ++t)
      for (std::size_t i = 0; i < params.tensors[t].values.size(); ++i) {
        double& v = params.tensors[t].values[i];
        const double v0 = v, h = 1e-5;
        v = v0 + h;
        const double fp = loss();
        v = v0 - h;
        const double fm = loss();
        v = v0;
        const double fd = (fp - fm) / (2 * h);
        const double a = analytic.params.tensors[t].values[i];
        worst = std::max(worst, std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-3}));
      }
  }
  return worst < 1e-3;
}

bool check_env_fuzz(const env::WorldConfig& base_cfg, Rng& rng) {
  auto cfg = base_cfg;
  cfg.task = env::Task::Maze;
  cfg.max_steps = 1000;
  auto s = env::reset(cfg, 1);
  for (int i = 0; i < 100000; ++i) {
    if (s.done) s = env::reset(cfg, static_cast<std::uint64_t>(i));
    const auto r = env::step(s, {rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5)}, cfg);
    const auto& n = r.next_state;
    if (!env::inside_bounds(n)) return false;
    for (const auto& w : s.walls) {
      const bool crossed = (s.position.y - w.y) * (n.position.y - w.y) < 0;
      if (crossed && (n.position.x < w.gap_lo || n.position.x > w.gap_hi)) return false;
    }
    if (r.reward > 0) return false;
    s = n;
  }
  return true;
}

bool check_clip_grid() {
  for (double e : {0.1, 0.2, 0.3})
    for (double r = 0.05; r < 3.0; r += 0.05)
      for (double a = -2.0; a <= 2.0; a += 0.5) {
        const double expect = a >= 0 ? (r > 1 + e ? (1 + e) * a : r * a) : (r < 1 - e ? (1 - e) * a : r * a);
        if (std::abs(policy::ppo_clip_objective(r, a, e) - expect) > 1e-12) return false;
        if (policy::ppo_clip_objective(1.0, a, e) != a) return false;
      }
  return true;
}

bool check_reward_conservation(const RunConfig& cfg) {
  auto env_cfg = cfg.env;
  env_cfg.task = env::Task::Maze;
  policy::PpoHyper h = cfg.ppo;
  const auto m = policy::PolicyModel::create(policy::AgentKind::Figar, 2, h, cfg.seed);
  policy::RolloutRunner runner(env_cfg, cfg.seed);
  Rng rng(cfg.seed);
  const auto ts = runner.collect(m, policy::Executor(policy::AgentKind::Figar), 1 << 30, rng, 1000);
  return ts.size() == 1000 && policy::replay_matches(ts, env_cfg);
}

bool check_schedule(const RunConfig& cfg) {
  auto f = cfg.favae;
  f.c_last.assign(f.latent_dims.size(), 0.0);
  for (std::size_t l = 0; l < f.c_last.size(); ++l) f.c_last[l] = 1.5 * static_cast<double>(l + 1);
  for (int e = 0; e <= f.epochs; ++e)
    for (int l = 0; l < static_cast<int>(f.c_last.size()); ++l) {
      const double expect = std::min(static_cast<double>(e) / f.anneal(), 1.0) * f.c_last[l];
      if (f.scheduled_c(l, e) != expect) return false;
    }
  return true;
}

}  // namespace

void gen_demos(const RunConfig& cfg) {
  cfg.validate();
  const auto corpus = scripts::generate_corpus(cfg.script, demo_env(cfg), cfg.demos, cfg.seed, cfg.script_params);
  scripts::write_corpus(corpus, out_dir(cfg));
  write_resolved(cfg, "gen-demos");
}

void segment(const RunConfig& cfg, const path& corpus) {
  cfg.validate();
  const auto episodes = scripts::read_corpus_actions(resolve(corpus, "demos.jsonl"));
  if (episodes.empty()) throw UsageError("corpus " + corpus.string() + " holds no episodes");
  const auto r = segmentation::segment_corpus(episodes, cfg.segmentation, derive_seed(cfg.seed, 20));
  segmentation::write_segmentation(r, out_dir(cfg));
  write_resolved(cfg, "segment");
}

SegmentSet load_segment_set(const RunConfig& cfg, const path& corpus, const path& segments, int L) {
  const auto episodes = scripts::read_corpus_actions(resolve(corpus, "demos.jsonl"));
  const auto bounds = segmentation::read_segment_manifest(resolve(segments, "segments.jsonl"));
  if (bounds.empty()) throw UsageError("segment manifest " + segments.string() + " is empty");
  SegmentSet s;
  std::vector<int> lengths;
  for (const auto& m : segmentation::load_segments(bounds, episodes)) {
    s.segments.push_back(m.actions);
    lengths.push_back(m.length());
  }
  s.L = L > 0 ? L : favae::choose_length(lengths, cfg.length_quantile);
  s.segments = favae::split_to_fit(s.segments, s.L);
  return s;
}

std::vector<double> calibrate_c(const RunConfig& cfg, const path& corpus, const path& segments) {
  cfg.validate();
  const auto set = load_segment_set(cfg, corpus, segments);
  const auto c = favae::calibrate_capacity(set.segments, set.L, cfg.favae, derive_seed(cfg.seed, 30));
  write_json({{"c_last", c}, {"L", set.L}, {"segments", set.segments.size()}}, out_dir(cfg) / "calibration.json");
  auto resolved = cfg;
  resolved.favae.c_last = c;
  resolved.calibrated = true;
  write_resolved(resolved, "calibrate-c");
  return c;
}

RunConfig train_favae(RunConfig cfg, const path& corpus, const path& segments) {
  cfg.validate();
  const auto set = load_segment_set(cfg, corpus, segments);
  if (!cfg.calibrated) {
    cfg.favae.c_last = favae::calibrate_capacity(set.segments, set.L, cfg.favae, derive_seed(cfg.seed, 30));
    cfg.calibrated = true;
  }
  const auto dir = out_dir(cfg);
  const auto model =
      favae::train_favae(set.segments, set.L, cfg.favae, {derive_seed(cfg.seed, 31), dir / "favae_last_good.ck"});
  model.save(dir / "favae.ck");
  favae::write_training_log(model.log, dir / "favae_log.csv");
  write_resolved(cfg, "train-favae");
  return cfg;
}

std::vector<path> traverse(const RunConfig& cfg, const path& model_path, const path& corpus, const path& segments) {
  cfg.validate();
  const auto model = favae::FavaeModel::load(resolve(model_path, "favae.ck"));
  const auto set = load_segment_set(cfg, corpus, segments, model.L());
  if (cfg.traverse_base < 0 || cfg.traverse_base >= static_cast<int>(set.segments.size()))
    throw UsageError("traverse.base " + std::to_string(cfg.traverse_base) + " out of range (" +
                     std::to_string(set.segments.size()) + " segments)");
  const auto r = favae::latent_traversal(model, set.segments[cfg.traverse_base], cfg.traverse_ladder,
                                         cfg.traverse_index, cfg.traverse_values);
  const auto dir = out_dir(cfg);
  std::vector<path> written;
  for (std::size_t k = 0; k < r.values.size(); ++k) {
    const favae::TraversalResult one{r.ladder, r.index, {r.values[k]}, {r.sequences[k]}};
    const auto p = dir / ("traversal_" + std::to_string(k) + ".jsonl");
    std::ofstream f(p, std::ios::binary);
    if (!f) throw UsageError("cannot write " + p.string());
    favae::write_traversal_jsonl(f, one, traversal_speed(cfg));
    written.push_back(p);
  }
  write_resolved(cfg, "traverse");
  return written;
}

void train_policy(const RunConfig& cfg, const std::optional<path>& favae_model) {
  cfg.validate();
  std::optional<favae::FavaeModel> fv;
  if (cfg.agent == policy::AgentKind::Famarl) {
    if (!favae_model) throw UsageError("--agent famarl requires --favae <checkpoint>");
    fv = favae::FavaeModel::load(resolve(*favae_model, "favae.ck"));
  }
  const auto r = policy::train(cfg.agent, cfg.env, cfg.ppo, derive_seed(cfg.seed, 40), fv ? &*fv : nullptr);
  const auto dir = out_dir(cfg);
  r.model.to_checkpoint().write(dir / "policy.ck");
  policy::write_curve(r.curve, dir / "curve.csv");
  write_resolved(cfg, "train-policy");
}

nlohmann::json evaluate(const RunConfig& cfg, const std::optional<path>& policy_model,
                        const std::optional<path>& favae_model, std::optional<scripts::ScriptKind> script) {
  cfg.validate();
  const auto seed = derive_seed(cfg.seed, 50);
  nlohmann::ordered_json j;
  if (script) {
    j = eval_json(policy::evaluate_script(*script, cfg.env, cfg.eval_episodes, seed));
    j["script"] = scripts::to_string(*script);
  } else {
    if (!policy_model) throw UsageError("evaluate needs --policy <checkpoint> or --script <kind>");
    const auto m = policy::PolicyModel::from_checkpoint(nn::Checkpoint::read(resolve(*policy_model, "policy.ck")));
    std::optional<favae::FavaeModel> fv;
    if (m.kind == policy::AgentKind::Famarl) {
      if (!favae_model) throw UsageError("a famarl policy needs --favae <checkpoint>");
      fv = favae::FavaeModel::load(resolve(*favae_model, "favae.ck"));
      if (fv->latent_size() != m.action_dim) throw UsageError("FAVAE latent size does not match the policy");
    }
    j = eval_json(policy::evaluate(m, policy::Executor(m.kind, fv ? &*fv : nullptr), cfg.env, cfg.eval_episodes, seed));
    j["agent"] = policy::to_string(m.kind);
  }
  j["task"] = env::to_string(cfg.env.task);
  write_json(j, out_dir(cfg) / "metrics.json");
  write_resolved(cfg, "evaluate");
  return j;
}

nlohmann::json check(const RunConfig& cfg, const std::optional<path>& corpus, const std::optional<path>& segments) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, 60));
  nlohmann::ordered_json suites = nlohmann::ordered_json::array();
  bool all = true;
  const auto record = [&](const std::string& name, bool ok, nlohmann::ordered_json detail = {}) {
    nlohmann::ordered_json s{{"suite", name}, {"passed", ok}};
    if (!detail.is_null()) s["detail"] = std::move(detail);
    suites.push_back(std::move(s));
    all = all && ok;
  };
  double worst = 0.0;
  const bool grads = check_gradients(rng, worst);
  record("gradients", grads, {{"max_relative_error", worst}});
  record("env_fuzz", check_env_fuzz(cfg.env, rng));
  record("clip_objective", check_clip_grid());
  record("reward_conservation", check_reward_conservation(cfg));
  record("capacity_schedule", check_schedule(cfg));
  if (corpus && segments) {
    const auto episodes = scripts::read_corpus_actions(resolve(*corpus, "demos.jsonl"));
    const auto bounds = segmentation::read_segment_manifest(resolve(*segments, "segments.jsonl"));
    int bad = 0;
    for (std::size_t e = 0; e < episodes.size(); ++e) {
      std::vector<segmentation::SegmentBounds> mine;
      for (const auto& b : bounds)
        if (b.episode == static_cast<int>(e)) mine.push_back(b);
      const auto segs = segmentation::load_segments(mine, episodes);
      if (!segmentation::tiles_episode(segs, episodes[e])) ++bad;
    }
    record("tiling", bad == 0, {{"episodes", episodes.size()}, {"failing", bad}});
  }
  nlohmann::ordered_json j{{"passed", all}, {"suites", std::move(suites)}};
  write_json(j, out_dir(cfg) / "check.json");
  write_resolved(cfg, "check");
  return j;
}

}  // namespace famarl::cli
