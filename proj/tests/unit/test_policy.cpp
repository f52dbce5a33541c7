#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "famarl/errors.hpp"
#include "famarl/policy/policy.hpp"
#include "famarl/rng.hpp"
#include "gradcheck.hpp"

using namespace famarl;
using namespace famarl::policy;

namespace {

env::WorldConfig maze() {
  env::WorldConfig c;
  c.task = env::Task::Maze;
  return c;
}

env::WorldConfig base() { return env::WorldConfig{}; }

PpoHyper small_hyper() {
  PpoHyper h;
  h.hidden = 8;
  h.horizon = 400;
  h.total_steps = 1200;
  h.epochs = 2;
  h.minibatch = 32;
  return h;
}

favae::FavaeModel tiny_favae() {
  favae::LadderConfig c;
  c.conv1_channels = 4;
  c.conv2_channels = 6;
  c.hidden = 8;
  c.latent_dims = {2, 2, 2};
  return favae::FavaeModel(7, c, 5);
}

void randomize(nn::ParamSet& p, Rng& rng, double scale) {
  p.for_each([&](double& v) { v = rng.uniform(-scale, scale); });
}

// Independent statement of the clipped surrogate by cases.
double clip_oracle(double r, double a, double e) {
  if (a >= 0) return r > 1 + e ? (1 + e) * a : r * a;
  return r < 1 - e ? (1 - e) * a : r * a;
}

}  // namespace

TEST_CASE("agent names round trip") {
  for (auto k : {AgentKind::Famarl, AgentKind::Ppo, AgentKind::Figar}) CHECK(agent_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(agent_from_string("a3c"), UsageError);
}

TEST_CASE("advantages: closed forms") {
  SUBCASE("single terminal transition with zero critic") {
    const auto a = estimate_advantages({2.5}, {0.0}, {7.0}, {true}, 0.99, 0.95);
    CHECK(a.advantage[0] == doctest::Approx(2.5));
    CHECK(a.returns[0] == doctest::Approx(2.5));
  }
  SUBCASE("gamma zero gives r - V") {
    const std::vector<double> r{1, -2, 3}, v{0.5, 0.25, -1}, nv{9, 9, 9};
    const auto a = estimate_advantages(r, v, nv, {false, false, false}, 0.0, 0.95);
    for (int i = 0; i < 3; ++i) CHECK(a.advantage[i] == doctest::Approx(r[i] - v[i]));
  }
  SUBCASE("lambda one with zero critic gives discounted returns") {
    const std::vector<double> r{1, 2, 3, 4};
    const double g = 0.9;
    const auto a = estimate_advantages(r, {0, 0, 0, 0}, {0, 0, 0, 0}, {false, false, false, true}, g, 1.0);
    CHECK(a.advantage[0] == doctest::Approx(1 + g * 2 + g * g * 3 + g * g * g * 4));
    CHECK(a.advantage[2] == doctest::Approx(3 + g * 4));
  }
  SUBCASE("terminal flags stop propagation and cuts bootstrap") {
    const auto a = estimate_advantages({1, 1}, {0, 0}, {0, 10}, {true, false}, 0.5, 1.0);
    CHECK(a.advantage[0] == doctest::Approx(1.0));
    CHECK(a.advantage[1] == doctest::Approx(1 + 0.5 * 10));
  }
  CHECK_THROWS_AS(estimate_advantages({1}, {0, 0}, {0}, {true}, 0.9, 0.9), UsageError);
}

TEST_CASE("advantage normalization is a positive affine map") {
  std::vector<double> a{3, -1, 7, 0.5, 2};
  const auto before = a;
  normalize_advantages(a);
  double m = 0, v = 0;
  for (double x : a) m += x / 5;
  for (double x : a) v += (x - m) * (x - m) / 5;
  CHECK(m == doctest::Approx(0).epsilon(1e-12));
  CHECK(v == doctest::Approx(1.0).epsilon(1e-6));
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) CHECK((before[i] < before[j]) == (a[i] < a[j]));
}

TEST_CASE("clip objective") {
  CHECK(ppo_clip_objective(1.0, 0.7, 0.2) == doctest::Approx(0.7));
  CHECK(ppo_clip_objective(1.5, 1.0, 0.2) == doctest::Approx(1.2));
  CHECK(ppo_clip_objective(0.5, -1.0, 0.2) == doctest::Approx(-0.8));
  for (double e : {0.05, 0.2, 0.5})
    for (double r = 0.1; r < 2.5; r += 0.05)
      for (double a = -2; a <= 2; a += 0.25) {
        CHECK(ppo_clip_objective(r, a, e) == doctest::Approx(clip_oracle(r, a, e)));
        CHECK(ppo_clip_objective(1.0, a, e) == a);
      }
}

TEST_CASE("categorical head and log-probabilities") {
  const auto m = PolicyModel::create(AgentKind::Figar, 2, PpoHyper{}, 3);
  CHECK(m.actor.output_width() == 4 + 20);
  Rng rng(1);
  for (int t = 0; t < 20; ++t) {
    std::array<double, env::kObservationSize> obs{};
    for (auto& o : obs) o = rng.uniform(-1, 1);
    const auto d = distribution(m, obs);
    double s = 0;
    for (double p : d.probs) s += p;
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    // Gaussian density at the mean: -sum(log_std) - D/2 log(2 pi).
    const double lp = log_prob(d, d.mean, 3);
    double expect = std::log(d.probs[3]);
    for (double ls : d.log_std) expect += -ls - 0.5 * std::log(2 * M_PI);
    CHECK(lp == doctest::Approx(expect));
  }
  const auto ppo = PolicyModel::create(AgentKind::Ppo, 2, PpoHyper{}, 3);
  CHECK(ppo.actor.output_width() == 4);
  CHECK(distribution(ppo, std::array<double, env::kObservationSize>{}).probs.empty());
}

TEST_CASE("famarl means are bounded") {
  PpoHyper h;
  auto m = PolicyModel::create(AgentKind::Famarl, 6, h, 1);
  Rng rng(2);
  randomize(m.actor.params(), rng, 3.0);
  auto& t = m.actor.params().tensors;
  auto& w = t[t.size() - 2].values;
  for (std::size_t i = w.size() / 2; i < w.size(); ++i) w[i] = 0.0;  // log-std rows
  for (int i = 0; i < 6; ++i) t.back().values[i] = 50.0;
  for (int i = 6; i < 12; ++i) t.back().values[i] = 0.0;
  const auto d = distribution(m, std::array<double, env::kObservationSize>{});
  for (double mu : d.mean) CHECK(std::abs(mu) <= h.latent_bound);
}

TEST_CASE("log-std outside its bounds aborts") {
  auto m = PolicyModel::create(AgentKind::Ppo, 2, PpoHyper{}, 1);
  m.actor.params().tensors.back().values[2] = 5.0;
  CHECK_THROWS_AS(distribution(m, std::array<double, env::kObservationSize>{}), NumericalError);
}

TEST_CASE("ppo loss matches finite differences") {
  Rng rng(11);
  double worst = 0.0;
  int trials = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const AgentKind kind = trial % 3 == 0 ? AgentKind::Famarl : trial % 3 == 1 ? AgentKind::Ppo : AgentKind::Figar;
    PpoHyper h;
    h.hidden = 6;
    h.max_repeat = 4;
    h.entropy_coef = 0.05;
    h.init_log_std = -0.5;
    auto m = PolicyModel::create(kind, kind == AgentKind::Famarl ? 3 : 2, h, 100 + trial);
    randomize(m.actor.params(), rng, 0.4);
    randomize(m.critic.params(), rng, 0.4);
    std::vector<PpoSample> batch(4);
    for (auto& s : batch) {
      for (auto& o : s.obs) o = rng.uniform(-1, 1);
      const auto d = distribution(m, s.obs);
      s.u.resize(m.action_dim);
      for (std::size_t j = 0; j < s.u.size(); ++j) s.u[j] = d.mean[j] + rng.normal() * std::exp(d.log_std[j]);
      s.k = d.probs.empty() ? 0 : static_cast<int>(rng.uniform_int(0, m.repeats - 1));
      s.logprob_old = log_prob(d, s.u, s.k) + rng.normal() * 0.3;
      s.advantage = rng.normal();
      s.ret = rng.normal();
    }
    // Keep away from the clip kinks.
    bool near_kink = false;
    for (const auto& s : batch) {
      const double r = std::exp(log_prob(distribution(m, s.obs), s.u, s.k) - s.logprob_old);
      near_kink |= std::abs(r - (1 - h.clip)) < 1e-3 || std::abs(r - (1 + h.clip)) < 1e-3;
    }
    if (near_kink) continue;
    ++trials;
    auto ga = m.actor.params().zeros_like();
    auto gc = m.critic.params().zeros_like();
    ppo_loss(m, batch, &ga, &gc);
    const auto f = [&] { return ppo_loss(m, batch).total; };
    for (auto* net : {&m.actor, &m.critic}) {
      auto& grad = net == &m.actor ? ga : gc;
      for (std::size_t ti = 0; ti < grad.tensors.size(); ++ti)
        for (std::size_t vi = 0; vi < grad.tensors[ti].values.size(); vi += 3) {
          const double fd = testing::fd_scalar(net->params().tensors[ti].values[vi], f);
          worst = std::max(worst, testing::rel_error(grad.tensors[ti].values[vi], fd));
        }
    }
  }
  CHECK(trials >= 90);
  CHECK(worst < 1e-3);
}

TEST_CASE("ppo loss components") {
  PpoHyper h;
  h.hidden = 4;
  auto m = PolicyModel::create(AgentKind::Ppo, 2, h, 9);
  PpoSample s;
  const auto d = distribution(m, s.obs);
  s.u = d.mean;
  s.logprob_old = log_prob(d, s.u, 0);
  s.advantage = 2.0;
  s.ret = value(m, s.obs) + 1.0;
  const auto L = ppo_loss(m, {s});
  CHECK(L.policy == doctest::Approx(-2.0));
  CHECK(L.value == doctest::Approx(1.0));
  CHECK(L.entropy == doctest::Approx(entropy(d)));
  CHECK(L.clip_fraction == 0.0);
  CHECK(L.total == doctest::Approx(L.policy + h.value_coef * L.value - h.entropy_coef * L.entropy));
}

TEST_CASE("macro execution") {
  const auto cfg = base();
  const auto s0 = env::reset(cfg, 4);
  SUBCASE("length one equals a primitive step") {
    const env::PrimitiveAction a{0.3, -0.2};
    const auto t = execute_macro(s0, {a}, cfg);
    const auto r = env::step(s0, a, cfg);
    CHECK(t.length == 1);
    CHECK(t.r_tot == r.reward);
    CHECK(t.done == r.done);
    CHECK(t.next_obs == env::observe(r.next_state));
    CHECK(t.obs == env::observe(s0));
  }
  SUBCASE("truncated at episode end") {
    auto s = s0;
    s.position = {s.goal.x + 0.5 * s.goal_radius + 0.01, s.goal.y};
    const ActionSeq acts(5, {-0.01, 0.0});
    const auto t = execute_macro(s, acts, cfg);
    const auto r = env::step(s, acts[0], cfg);
    REQUIRE(r.done);
    CHECK(t.length == 1);
    CHECK(t.done);
    CHECK(t.done_reason == env::DoneReason::Goal);
    CHECK(t.r_tot == r.reward);
    CHECK(t.actions.size() == 1);
  }
  SUBCASE("rewards summed in order") {
    const ActionSeq acts{{0.1, 0.1}, {0.2, -0.3}, {-0.5, 0.4}};
    const auto t = execute_macro(s0, acts, cfg);
    auto s = s0;
    double sum = 0;
    for (const auto& a : acts) {
      const auto r = env::step(s, a, cfg);
      sum += r.reward;
      s = r.next_state;
    }
    CHECK(t.r_tot == sum);
    CHECK(t.length == 3);
  }
  CHECK_THROWS_AS(execute_macro(s0, {}, cfg), UsageError);
}

TEST_CASE("executor") {
  const Executor ppo(AgentKind::Ppo), figar(AgentKind::Figar);
  const std::vector<double> u{2.0, -0.5};
  CHECK(ppo(u, 7) == ActionSeq{{1.0, -0.5}});
  CHECK(figar(u, 3).size() == 4);
  CHECK_THROWS_AS(Executor(AgentKind::Famarl), UsageError);
  const auto fv = tiny_favae();
  const Executor fam(AgentKind::Famarl, &fv);
  const std::vector<double> z(6, 0.5);
  CHECK(fam(z, 0) == fv.decode_and_trim(z));
}

TEST_CASE("rollouts: replay, timescale and step accounting") {
  const auto fv = tiny_favae();
  for (auto kind : {AgentKind::Ppo, AgentKind::Figar, AgentKind::Famarl}) {
    CAPTURE(to_string(kind));
    const auto cfg = maze();
    const auto m = PolicyModel::create(kind, kind == AgentKind::Famarl ? fv.latent_size() : 2, PpoHyper{}, 2);
    const Executor exec(kind, kind == AgentKind::Famarl ? &fv : nullptr);
    RolloutRunner runner(cfg, 8);
    Rng rng(3);
    const auto ts = runner.collect(m, exec, 1000, rng);
    long long steps = 0;
    for (const auto& t : ts) {
      steps += t.length;
      CHECK(t.length >= 1);
      CHECK(static_cast<int>(t.actions.size()) == t.length);
    }
    CHECK(steps >= 1000);
    CHECK(replay_matches(ts, cfg));
    for (std::size_t i = 0; i + 1 < ts.size(); ++i)
      if (!ts[i].done) {
        CHECK(ts[i + 1].start_step == ts[i].start_step + ts[i].length);
        CHECK(ts[i + 1].obs == ts[i].next_obs);
      } else {
        CHECK(ts[i + 1].start_step == 0);
      }

    // Replaying the logged action choices from the episode seed reproduces r_tot.
    auto s = env::reset(cfg, ts[0].episode_seed);
    for (const auto& t : ts) {
      if (t.episode_seed != ts[0].episode_seed) break;
      const auto again = execute_macro(s, exec(t.u, t.k), cfg);
      CHECK(again.r_tot == t.r_tot);
      CHECK(again.start_state == t.start_state);
      for (const auto& a : again.actions) s = env::step(s, a, cfg).next_state;
    }
  }
  auto bad = ActionSeq{{0, 0}};
  auto ts = std::vector<MacroTransition>{execute_macro(env::reset(maze(), 1), bad, maze())};
  ts[0].r_tot += 1e-12;
  CHECK_FALSE(replay_matches(ts, maze()));
}

TEST_CASE("figar with one repetition reduces to primitive ppo") {
  PpoHyper h = small_hyper();
  h.max_repeat = 1;
  const auto a = train(AgentKind::Ppo, maze(), h, 5);
  const auto b = train(AgentKind::Figar, maze(), h, 5);
  REQUIRE(a.curve.size() == b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    CHECK(a.curve[i].mean_return == b.curve[i].mean_return);
    CHECK(a.curve[i].cumulative_steps == b.curve[i].cumulative_steps);
  }
  CHECK(a.model.actor.params() == b.model.actor.params());
}

TEST_CASE("training: curve contract and determinism") {
  const auto fv = tiny_favae();
  for (auto kind : {AgentKind::Ppo, AgentKind::Figar, AgentKind::Famarl}) {
    CAPTURE(to_string(kind));
    const auto* f = kind == AgentKind::Famarl ? &fv : nullptr;
    const auto h = small_hyper();
    const auto a = train(kind, maze(), h, 7, f);
    const auto b = train(kind, maze(), h, 7, f);
    REQUIRE(!a.curve.empty());
    CHECK(a.curve.back().cumulative_steps >= h.total_steps);
    for (std::size_t i = 0; i < a.curve.size(); ++i) {
      CHECK(a.curve[i].update == static_cast<int>(i));
      if (i) CHECK(a.curve[i].cumulative_steps > a.curve[i - 1].cumulative_steps);
      CHECK(a.curve[i].mean_macro_length >= 1.0);
      CHECK(a.curve[i].mean_return == b.curve[i].mean_return);
      CHECK(a.curve[i].policy_entropy == b.curve[i].policy_entropy);
    }
    CHECK(a.model.to_checkpoint().serialize() == b.model.to_checkpoint().serialize());
    if (kind == AgentKind::Ppo) CHECK(a.curve.back().mean_macro_length == 1.0);
  }
  CHECK_THROWS_AS(train(AgentKind::Famarl, maze(), small_hyper(), 1), UsageError);
}

TEST_CASE("curve csv") {
  const auto dir = std::filesystem::temp_directory_path() / "famarl_test_policy";
  std::filesystem::create_directories(dir);
  write_curve({{0, 10, -1.5, 2.0, 0.3}, {1, 20, -1.0, 2.5, 0.2}}, dir / "curve.csv");
  std::ifstream f(dir / "curve.csv");
  std::string header, row;
  std::getline(f, header);
  std::getline(f, row);
  CHECK(header == "update,cumulative_steps,mean_return,mean_macro_length,policy_entropy");
  CHECK(row == "0,10,-1.5,2,0.3");
  std::filesystem::remove_all(dir);
}

TEST_CASE("policy checkpoint round trip") {
  const auto m = PolicyModel::create(AgentKind::Figar, 2, PpoHyper{}, 4);
  const auto back = PolicyModel::from_checkpoint(nn::Checkpoint::deserialize(m.to_checkpoint().serialize()));
  CHECK(back.kind == m.kind);
  CHECK(back.repeats == m.repeats);
  CHECK(back.actor.params() == m.actor.params());
  CHECK(back.critic.params() == m.critic.params());
  CHECK(back.hyper.max_repeat == m.hyper.max_repeat);
  nn::Checkpoint other;
  other.metadata["kind"] = "favae";
  CHECK_THROWS_AS(PolicyModel::from_checkpoint(other), UsageError);
}

TEST_CASE("evaluation") {
  const auto m = PolicyModel::create(AgentKind::Ppo, 2, PpoHyper{}, 21);
  const Executor exec(AgentKind::Ppo);
  const auto a = evaluate(m, exec, maze(), 20, 3);
  const auto b = evaluate(m, exec, maze(), 20, 3);
  CHECK(a.mean_return == b.mean_return);
  CHECK(a.std_return == b.std_return);
  CHECK(a.success_rate == b.success_rate);
  CHECK(a.success_rate <= 0.05);
  CHECK(a.mean_length == doctest::Approx(300));
  CHECK_THROWS_AS(evaluate(m, exec, maze(), 0, 3), UsageError);
  for (auto k : {scripts::ScriptKind::DownOnly, scripts::ScriptKind::DownAndUp, scripts::ScriptKind::PushedDownOnly,
                 scripts::ScriptKind::PushedDownAndUp}) {
    const auto r = evaluate_script(k, base(), 50, 9);
    CHECK(r.success_rate == 1.0);
    CHECK(r.mean_length < 300);
  }
}

TEST_CASE("hyperparameter validation") {
  PpoHyper h;
  h.clip = 1.0;
  CHECK_THROWS_AS(h.validate(), ConfigError);
  h = {};
  h.init_log_std = 3.0;
  CHECK_THROWS_AS(h.validate(), ConfigError);
  h = {};
  h.max_repeat = 0;
  CHECK_THROWS_AS(h.validate(), ConfigError);
  CHECK_NOTHROW(PpoHyper{}.validate());
}
