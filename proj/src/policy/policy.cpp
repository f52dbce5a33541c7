#include "famarl/policy/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "famarl/errors.hpp"
#include "famarl/nn/optim.hpp"

namespace famarl::policy {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;  // log(2 pi)

std::size_t categorical_width(const PolicyModel& m) { return m.repeats > 1 ? m.repeats : 0; }

int sample_categorical(const Vector& p, double u) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<int>(i);
  }
  return static_cast<int>(p.size()) - 1;
}

int argmax(const Vector& p) {
  return static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
}

Vector softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  Vector p(logits.size());
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] = std::exp(logits[i] - mx);
  for (auto& v : p) v /= s;
  return p;
}

ActionDist head(const PolicyModel& m, const Vector& out) {
  const std::size_t D = m.action_dim;
  ActionDist d;
  d.mean.resize(D);
  d.log_std.resize(D);
  for (std::size_t j = 0; j < D; ++j) {
    d.mean[j] = m.kind == AgentKind::Famarl ? m.hyper.latent_bound * std::tanh(out[j]) : out[j];
    d.log_std[j] = out[D + j] + m.hyper.init_log_std;
    if (!std::isfinite(d.mean[j]) || !std::isfinite(d.log_std[j]))
      throw NumericalError("policy produced a non-finite output");
    if (d.log_std[j] < m.hyper.min_log_std || d.log_std[j] > m.hyper.max_log_std)
      throw NumericalError("policy log-std " + std::to_string(d.log_std[j]) + " left [" +
                           std::to_string(m.hyper.min_log_std) + ", " + std::to_string(m.hyper.max_log_std) +
                           "]");
  }
  if (categorical_width(m)) d.probs = softmax(std::span<const double>(out).subspan(2 * D));
  return d;
}

nlohmann::json hyper_to_json(const PpoHyper& h) {
  return {{"gamma", h.gamma},
          {"lambda", h.lambda},
          {"clip", h.clip},
          {"epochs", h.epochs},
          {"minibatch", h.minibatch},
          {"entropy_coef", h.entropy_coef},
          {"value_coef", h.value_coef},
          {"horizon", h.horizon},
          {"total_steps", h.total_steps},
          {"actor_lr", h.actor_lr},
          {"critic_lr", h.critic_lr},
          {"max_grad_norm", h.max_grad_norm},
          {"reward_scale", h.reward_scale},
          {"hidden", h.hidden},
          {"init_log_std", h.init_log_std},
          {"min_log_std", h.min_log_std},
          {"max_log_std", h.max_log_std},
          {"latent_bound", h.latent_bound},
          {"max_repeat", h.max_repeat}};
}

PpoHyper hyper_from_json(const nlohmann::json& j) {
  PpoHyper h;
  h.gamma = j.at("gamma");
  h.lambda = j.at("lambda");
  h.clip = j.at("clip");
  h.epochs = j.at("epochs");
  h.minibatch = j.at("minibatch");
  h.entropy_coef = j.at("entropy_coef");
  h.value_coef = j.at("value_coef");
  h.horizon = j.at("horizon");
  h.total_steps = j.at("total_steps");
  h.actor_lr = j.at("actor_lr");
  h.critic_lr = j.at("critic_lr");
  h.max_grad_norm = j.at("max_grad_norm");
  h.reward_scale = j.at("reward_scale");
  h.hidden = j.at("hidden");
  h.init_log_std = j.at("init_log_std");
  h.min_log_std = j.at("min_log_std");
  h.max_log_std = j.at("max_log_std");
  h.latent_bound = j.at("latent_bound");
  h.max_repeat = j.at("max_repeat");
  return h;
}

MacroTransition run_macro(const env::AgentState& start, const ActionSeq& actions, const env::WorldConfig& cfg,
                          env::AgentState& end) {
  if (actions.empty()) throw UsageError("macro action is empty");
  if (start.done) throw UsageError("macro started on a finished episode");
  MacroTransition t;
  t.obs = env::observe(start);
  t.start_state = start;
  t.start_step = start.step_count;
  end = start;
  for (const auto& a : actions) {
    const auto r = env::step(end, a, cfg);
    end = r.next_state;
    t.r_tot += r.reward;
    t.actions.push_back(a);
    ++t.length;
    if (r.done) {
      t.done = true;
      t.done_reason = r.done_reason;
      break;
    }
  }
  t.next_obs = env::observe(end);
  return t;
}

EvalResult summarize(EvalResult r, const std::vector<double>& returns) {
  const double n = r.episodes;
  r.success_rate /= n;
  r.mean_length /= n;
  r.mean_return = std::accumulate(returns.begin(), returns.end(), 0.0) / n;
  for (double x : returns) r.std_return += (x - r.mean_return) * (x - r.mean_return) / n;
  r.std_return = std::sqrt(r.std_return);
  return r;
}

}  // namespace

std::string to_string(AgentKind k) {
  switch (k) {
    case AgentKind::Famarl: return "famarl";
    case AgentKind::Ppo: return "ppo";
    case AgentKind::Figar: return "figar";
  }
  return "?";
}

AgentKind agent_from_string(const std::string& s) {
  if (s == "famarl") return AgentKind::Famarl;
  if (s == "ppo") return AgentKind::Ppo;
  if (s == "figar") return AgentKind::Figar;
  throw UsageError("unknown agent '" + s + "' (expected famarl, ppo or figar)");
}

void PpoHyper::validate() const {
  if (!(gamma >= 0 && gamma <= 1) || !(lambda >= 0 && lambda <= 1))
    throw ConfigError("gamma and lambda must be in [0, 1]");
  if (!(clip > 0 && clip < 1)) throw ConfigError("clip must be in (0, 1)");
  if (epochs < 1 || minibatch < 1 || horizon < 1 || total_steps < 1 || hidden < 1)
    throw ConfigError("epochs, minibatch, horizon, total_steps and hidden must be >= 1");
  if (!(actor_lr > 0) || !(critic_lr > 0) || !(max_grad_norm > 0) || !(reward_scale > 0))
    throw ConfigError("learning rates, max_grad_norm and reward_scale must be > 0");
  if (entropy_coef < 0 || value_coef < 0) throw ConfigError("loss coefficients must be >= 0");
  if (!(min_log_std < max_log_std) || init_log_std < min_log_std || init_log_std > max_log_std)
    throw ConfigError("init_log_std must lie in [min_log_std, max_log_std]");
  if (!(latent_bound > 0)) throw ConfigError("latent_bound must be > 0");
  if (max_repeat < 1) throw ConfigError("max_repeat must be >= 1");
}

PolicyModel PolicyModel::create(AgentKind kind, std::size_t action_dim, const PpoHyper& hyper,
                                std::uint64_t seed) {
  hyper.validate();
  if (action_dim < 1) throw ConfigError("action_dim must be >= 1");
  PolicyModel m;
  m.kind = kind;
  m.action_dim = action_dim;
  m.repeats = kind == AgentKind::Figar ? hyper.max_repeat : 1;
  m.hyper = hyper;
  const auto H = static_cast<std::size_t>(hyper.hidden);
  const std::size_t out = 2 * action_dim + categorical_width(m);
  m.actor = nn::Network(nn::mlp({env::kObservationSize, H, H, out}, nn::BlockKind::Tanh, derive_seed(seed, 1)));
  auto& tensors = m.actor.params().tensors;
  for (auto& v : tensors[tensors.size() - 2].values) v *= 0.01;
  m.critic = nn::Network(nn::mlp({env::kObservationSize, H, H, 1}, nn::BlockKind::Tanh, derive_seed(seed, 2)));
  return m;
}

nn::Checkpoint PolicyModel::to_checkpoint() const {
  nn::Checkpoint ck;
  ck.metadata = {{"kind", "policy"},
                 {"agent", to_string(kind)},
                 {"action_dim", action_dim},
                 {"repeats", repeats},
                 {"hyper", hyper_to_json(hyper)}};
  ck.networks["actor"] = actor;
  ck.networks["critic"] = critic;
  return ck;
}

PolicyModel PolicyModel::from_checkpoint(const nn::Checkpoint& ck) {
  if (ck.metadata.value("kind", "") != "policy") throw UsageError("checkpoint does not hold a policy");
  PolicyModel m;
  m.kind = agent_from_string(ck.metadata.at("agent"));
  m.action_dim = ck.metadata.at("action_dim");
  m.repeats = ck.metadata.at("repeats");
  m.hyper = hyper_from_json(ck.metadata.at("hyper"));
  m.actor = ck.networks.at("actor");
  m.critic = ck.networks.at("critic");
  if (m.actor.output_width() != 2 * m.action_dim + categorical_width(m))
    throw ConfigError("actor output width does not match action_dim");
  return m;
}

ActionDist distribution(const PolicyModel& m, std::span<const double> obs) {
  return head(m, m.actor.forward(obs));
}

double log_prob(const ActionDist& d, std::span<const double> u, int k) {
  double lp = 0.0;
  for (std::size_t j = 0; j < d.mean.size(); ++j) {
    const double z = (u[j] - d.mean[j]) * std::exp(-d.log_std[j]);
    lp += -0.5 * z * z - d.log_std[j] - 0.5 * kLog2Pi;
  }
  if (!d.probs.empty()) lp += std::log(std::max(d.probs.at(static_cast<std::size_t>(k)), 1e-300));
  return lp;
}

double entropy(const ActionDist& d) {
  double h = 0.0;
  for (double ls : d.log_std) h += ls + 0.5 * (kLog2Pi + 1.0);
  for (double p : d.probs)
    if (p > 0) h -= p * std::log(p);
  return h;
}

double value(const PolicyModel& m, std::span<const double> obs) { return m.critic.forward(obs)[0]; }

Executor::Executor(AgentKind kind, const favae::FavaeModel* favae) : kind_(kind), favae_(favae) {
  if (kind == AgentKind::Famarl && !favae) throw UsageError("the famarl agent needs a FAVAE model");
}

ActionSeq Executor::operator()(std::span<const double> u, int k) const {
  if (kind_ == AgentKind::Famarl) return favae_->decode_and_trim(u);
  const env::PrimitiveAction a{u[0], u[1]};
  return ActionSeq(kind_ == AgentKind::Figar ? static_cast<std::size_t>(k) + 1 : 1, a.clamped());
}

MacroTransition execute_macro(const env::AgentState& start, const ActionSeq& actions,
                              const env::WorldConfig& cfg) {
  env::AgentState end;
  return run_macro(start, actions, cfg, end);
}

RolloutRunner::RolloutRunner(env::WorldConfig cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  new_episode();
}

void RolloutRunner::new_episode() {
  episode_seed_ = derive_seed(seed_, episodes_++);
  state_ = env::reset(cfg_, episode_seed_);
  running_return_ = 0.0;
}

std::vector<MacroTransition> RolloutRunner::collect(const PolicyModel& m, const Executor& exec, long long min_steps,
                                                    Rng& rng, int max_transitions) {
  std::vector<MacroTransition> out;
  long long steps = 0;
  while (steps < min_steps && (max_transitions <= 0 || static_cast<int>(out.size()) < max_transitions)) {
    const auto obs = env::observe(state_);
    const auto d = distribution(m, obs);
    Vector u(d.mean.size());
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = d.mean[j] + std::exp(d.log_std[j]) * rng.normal();
    const int k = d.probs.size() > 1 ? sample_categorical(d.probs, rng.uniform()) : 0;
    env::AgentState end;
    auto t = run_macro(state_, exec(u, k), cfg_, end);
    t.u = std::move(u);
    t.k = k;
    t.logprob = log_prob(d, t.u, k);
    t.episode_seed = episode_seed_;
    steps += t.length;
    running_return_ += t.r_tot;
    if (t.done) {
      finished_.push_back(running_return_);
      new_episode();
    } else {
      state_ = end;
    }
    out.push_back(std::move(t));
  }
  return out;
}

std::vector<double> RolloutRunner::take_finished_returns() {
  std::vector<double> r;
  r.swap(finished_);
  return r;
}

Advantages estimate_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                               const std::vector<double>& next_values, const std::vector<bool>& dones,
                               double gamma, double lambda) {
  const std::size_t n = rewards.size();
  if (values.size() != n || next_values.size() != n || dones.size() != n)
    throw UsageError("advantage inputs differ in length");
  Advantages a;
  a.advantage.assign(n, 0.0);
  a.returns.assign(n, 0.0);
  double next_adv = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double live = dones[i] ? 0.0 : 1.0;
    const double delta = rewards[i] + gamma * live * next_values[i] - values[i];
    next_adv = delta + gamma * lambda * live * next_adv;
    a.advantage[i] = next_adv;
    a.returns[i] = next_adv + values[i];
  }
  return a;
}

void normalize_advantages(std::vector<double>& adv) {
  if (adv.empty()) return;
  const double n = static_cast<double>(adv.size());
  double mean = 0.0, var = 0.0;
  for (double a : adv) mean += a / n;
  for (double a : adv) var += (a - mean) * (a - mean) / n;
  const double sd = std::sqrt(var) + 1e-8;
  for (double& a : adv) a = (a - mean) / sd;
}

double ppo_clip_objective(double ratio, double adv, double eps) {
  return std::min(ratio * adv, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv);
}

PpoLoss ppo_loss(const PolicyModel& m, const std::vector<PpoSample>& batch, nn::ParamSet* actor_grad,
                 nn::ParamSet* critic_grad) {
  PpoLoss L;
  if (batch.empty()) return L;
  const double n = static_cast<double>(batch.size());
  const double eps = m.hyper.clip;
  const std::size_t D = m.action_dim;
  for (const auto& s : batch) {
    nn::Trace ta, tc;
    const auto out = m.actor.forward(s.obs, ta);
    const auto d = head(m, out);
    const double lp = log_prob(d, s.u, s.k);
    const double ratio = std::exp(lp - s.logprob_old);
    const double unclipped = ratio * s.advantage;
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * s.advantage;
    const double h = entropy(d);
    L.policy -= std::min(unclipped, clipped) / n;
    L.entropy += h / n;
    if (std::abs(ratio - 1.0) > eps) L.clip_fraction += 1.0 / n;

    const double v = m.critic.forward(s.obs, tc)[0];
    L.value += (v - s.ret) * (v - s.ret) / n;

    if (actor_grad) {
      const double g_lp = unclipped <= clipped ? -ratio * s.advantage / n : 0.0;
      const double g_h = -m.hyper.entropy_coef / n;
      Vector g(out.size(), 0.0);
      for (std::size_t j = 0; j < D; ++j) {
        const double inv = std::exp(-d.log_std[j]);
        const double z = (s.u[j] - d.mean[j]) * inv;
        double dmean = g_lp * z * inv;
        if (m.kind == AgentKind::Famarl) {
          const double th = std::tanh(out[j]);
          dmean *= m.hyper.latent_bound * (1.0 - th * th);
        }
        g[j] = dmean;
        g[D + j] = g_lp * (z * z - 1.0) + g_h;
      }
      if (!d.probs.empty()) {
        double h_cat = 0.0;
        for (double p : d.probs)
          if (p > 0) h_cat -= p * std::log(p);
        for (std::size_t i = 0; i < d.probs.size(); ++i) {
          const double p = d.probs[i];
          const double dlp = (static_cast<int>(i) == s.k ? 1.0 : 0.0) - p;
          const double dh = p > 0 ? -p * (std::log(p) + h_cat) : 0.0;
          g[2 * D + i] = g_lp * dlp + g_h * dh;
        }
      }
      m.actor.backward(ta, g, *actor_grad);
    }
    if (critic_grad) {
      const double gv = m.hyper.value_coef * 2.0 * (v - s.ret) / n;
      m.critic.backward(tc, std::span<const double>(&gv, 1), *critic_grad);
    }
  }
  L.total = L.policy + m.hyper.value_coef * L.value - m.hyper.entropy_coef * L.entropy;
  return L;
}

TrainResult train(AgentKind kind, const env::WorldConfig& cfg, const PpoHyper& hyper, std::uint64_t seed,
                  const favae::FavaeModel* favae) {
  hyper.validate();
  const Executor exec(kind, favae);
  const std::size_t dim = kind == AgentKind::Famarl ? favae->latent_size() : 2;
  TrainResult res{PolicyModel::create(kind, dim, hyper, derive_seed(seed, 1)), {}, {}};
  auto& model = res.model;
  RolloutRunner runner(cfg, derive_seed(seed, 2));
  Rng rng(derive_seed(seed, 3));
  auto actor_opt = nn::OptimizerState::for_params(model.actor.params(), {.learning_rate = hyper.actor_lr});
  auto critic_opt = nn::OptimizerState::for_params(model.critic.params(), {.learning_rate = hyper.critic_lr});

  long long cumulative = 0;
  double last_return = 0.0;
  for (int update = 0; cumulative < hyper.total_steps; ++update) {
    const long long want = std::min<long long>(hyper.horizon, hyper.total_steps - cumulative);
    auto batch = runner.collect(model, exec, want, rng);
    const std::size_t n = batch.size();
    long long batch_steps = 0;
    std::vector<double> rewards(n), values(n), next_values(n);
    std::vector<bool> dones(n);
    double ent = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& t = batch[i];
      batch_steps += t.length;
      rewards[i] = t.r_tot * hyper.reward_scale;
      values[i] = value(model, t.obs);
      next_values[i] = t.done ? 0.0 : value(model, t.next_obs);
      dones[i] = t.done;
      ent += entropy(distribution(model, t.obs)) / static_cast<double>(n);
    }
    cumulative += batch_steps;
    const auto adv = estimate_advantages(rewards, values, next_values, dones, hyper.gamma, hyper.lambda);

    auto normalized = adv.advantage;
    normalize_advantages(normalized);
    std::vector<PpoSample> samples(n);
    for (std::size_t i = 0; i < n; ++i)
      samples[i] = {batch[i].obs, batch[i].u, batch[i].k, batch[i].logprob, normalized[i], adv.returns[i]};

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    auto actor_grad = model.actor.params().zeros_like();
    auto critic_grad = model.critic.params().zeros_like();
    const auto mb = static_cast<std::size_t>(hyper.minibatch);
    for (int epoch = 0; epoch < hyper.epochs; ++epoch) {
      for (std::size_t i = n; i > 1; --i)
        std::swap(order[i - 1], order[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1))]);
      for (std::size_t start = 0; start < n; start += mb) {
        std::vector<PpoSample> chunk;
        for (std::size_t i = start; i < std::min(n, start + mb); ++i) chunk.push_back(samples[order[i]]);
        actor_grad.set_zero();
        critic_grad.set_zero();
        ppo_loss(model, chunk, &actor_grad, &critic_grad);
        if (!actor_grad.all_finite() || !critic_grad.all_finite())
          throw NumericalError("non-finite policy gradient at update " + std::to_string(update));
        nn::clip_grad_norm(actor_grad, hyper.max_grad_norm);
        nn::clip_grad_norm(critic_grad, hyper.max_grad_norm);
        nn::adam_step(model.actor.params(), actor_grad, actor_opt);
        nn::adam_step(model.critic.params(), critic_grad, critic_opt);
      }
    }

    const auto returns = runner.take_finished_returns();
    if (!returns.empty())
      last_return = std::accumulate(returns.begin(), returns.end(), 0.0) / static_cast<double>(returns.size());
    res.curve.push_back({update, cumulative, last_return,
                         n ? static_cast<double>(batch_steps) / static_cast<double>(n) : 0.0, ent});
    res.last_batch = std::move(batch);
  }
  return res;
}

EvalResult evaluate(const PolicyModel& m, const Executor& exec, const env::WorldConfig& cfg, int episodes,
                    std::uint64_t seed) {
  if (episodes < 1) throw UsageError("episodes must be >= 1");
  std::vector<double> returns;
  EvalResult r;
  r.episodes = episodes;
  for (int i = 0; i < episodes; ++i) {
    auto s = env::reset(cfg, derive_seed(seed, static_cast<std::uint64_t>(i)));
    double ret = 0.0;
    env::DoneReason reason = env::DoneReason::None;
    while (!s.done) {
      const auto d = distribution(m, env::observe(s));
      env::AgentState end;
      const auto t = run_macro(s, exec(d.mean, d.probs.empty() ? 0 : argmax(d.probs)), cfg, end);
      ret += t.r_tot;
      reason = t.done_reason;
      s = end;
    }
    returns.push_back(ret);
    r.success_rate += reason == env::DoneReason::Goal ? 1.0 : 0.0;
    r.mean_length += s.step_count;
  }
  return summarize(r, returns);
}

EvalResult evaluate_script(scripts::ScriptKind kind, const env::WorldConfig& cfg, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw UsageError("episodes must be >= 1");
  std::vector<double> returns;
  EvalResult r;
  r.episodes = episodes;
  for (int i = 0; i < episodes; ++i) {
    auto s = env::reset(cfg, derive_seed(seed, static_cast<std::uint64_t>(i)));
    if (cfg.task == env::Task::Base && scripts::restricts_goal_to_bottom(kind))
      s.goal.y = cfg.corner_inset_frac * s.map_size;
    scripts::ScriptController ctl(kind);
    double ret = 0.0;
    env::DoneReason reason = env::DoneReason::None;
    while (!s.done) {
      const auto st = env::step(s, ctl.act(s), cfg);
      ret += st.reward;
      reason = st.done_reason;
      s = st.next_state;
    }
    returns.push_back(ret);
    r.success_rate += reason == env::DoneReason::Goal ? 1.0 : 0.0;
    r.mean_length += s.step_count;
  }
  return summarize(r, returns);
}

bool replay_matches(const std::vector<MacroTransition>& transitions, const env::WorldConfig& cfg) {
  for (const auto& t : transitions) {
    const auto again = execute_macro(t.start_state, t.actions, cfg);
    if (again.r_tot != t.r_tot || again.length != t.length || again.done != t.done) return false;
  }
  return true;
}

void write_curve(const std::vector<CurveRow>& curve, const std::filesystem::path& csv) {
  std::ofstream f(csv);
  if (!f) throw UsageError("cannot write " + csv.string());
  f << "update,cumulative_steps,mean_return,mean_macro_length,policy_entropy\n" << std::setprecision(12);
  for (const auto& r : curve)
    f << r.update << ',' << r.cumulative_steps << ',' << r.mean_return << ',' << r.mean_macro_length << ','
      << r.policy_entropy << '\n';
}

}  // namespace famarl::policy
