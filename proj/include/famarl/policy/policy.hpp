#pragma once

// PPO over three action spaces sharing one rollout/update loop: FAVAE latent
// codes decoded into open-loop macro actions (famarl), primitive actions
// (ppo), and a primitive action with a repetition count (figar).

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "famarl/env/continuous_world.hpp"
#include "famarl/favae/favae.hpp"
#include "famarl/nn/checkpoint.hpp"
#include "famarl/nn/network.hpp"
#include "famarl/rng.hpp"
#include "famarl/scripts/expert.hpp"

namespace famarl::policy {

using nn::Vector;
using ActionSeq = std::vector<env::PrimitiveAction>;

enum class AgentKind { Famarl, Ppo, Figar };
std::string to_string(AgentKind k);
AgentKind agent_from_string(const std::string& s);

struct PpoHyper {
  double gamma = 0.99;
  double lambda = 0.95;
  double clip = 0.2;
  int epochs = 10;
  int minibatch = 64;
  double entropy_coef = 1e-3;
  double value_coef = 0.5;
  int horizon = 2048;  // primitive steps collected per update
  long long total_steps = 200000;
  double actor_lr = 3e-4;
  double critic_lr = 1e-3;
  double max_grad_norm = 0.5;
  double reward_scale = 0.05;
  int hidden = 64;
  double init_log_std = 0.0;
  double min_log_std = -10.0;
  double max_log_std = 2.0;
  double latent_bound = 3.0;  // famarl means are latent_bound * tanh(.)
  int max_repeat = 20;        // figar

  void validate() const;
};

struct PolicyModel {
  AgentKind kind = AgentKind::Ppo;
  std::size_t action_dim = 2;  // Gaussian part
  int repeats = 1;             // categorical part (figar only)
  PpoHyper hyper;
  nn::Network actor;
  nn::Network critic;

  static PolicyModel create(AgentKind kind, std::size_t action_dim, const PpoHyper& hyper,
                            std::uint64_t seed);
  nn::Checkpoint to_checkpoint() const;
  static PolicyModel from_checkpoint(const nn::Checkpoint& ck);
};

struct ActionDist {
  Vector mean, log_std;
  Vector probs;  // repetition distribution (figar), empty otherwise
};

ActionDist distribution(const PolicyModel& m, std::span<const double> obs);
/// Log-density of (u, k) under d; k is ignored without a categorical head.
double log_prob(const ActionDist& d, std::span<const double> u, int k);
double entropy(const ActionDist& d);
double value(const PolicyModel& m, std::span<const double> obs);

/// Turns the policy's raw action into the primitive sequence executed open loop.
class Executor {
 public:
  explicit Executor(AgentKind kind, const favae::FavaeModel* favae = nullptr);
  ActionSeq operator()(std::span<const double> u, int k) const;
  AgentKind kind() const { return kind_; }

 private:
  AgentKind kind_;
  const favae::FavaeModel* favae_;
};

struct MacroTransition {
  std::array<double, env::kObservationSize> obs{};
  std::array<double, env::kObservationSize> next_obs{};
  Vector u;
  int k = 0;
  double logprob = 0.0;
  double r_tot = 0.0;  // unscaled sum of executed primitive rewards
  int length = 0;      // executed primitive steps
  bool done = false;
  env::DoneReason done_reason = env::DoneReason::None;
  int start_step = 0;
  std::uint64_t episode_seed = 0;
  env::AgentState start_state;
  ActionSeq actions;  // the executed prefix
};

/// Steps `actions` open loop from `start`, stopping at episode end.
/// Accumulates rewards in execution order.
MacroTransition execute_macro(const env::AgentState& start, const ActionSeq& actions, const env::WorldConfig& cfg);

/// Owns the environment across updates so episodes continue between
/// collection phases.
class RolloutRunner {
 public:
  RolloutRunner(env::WorldConfig cfg, std::uint64_t seed);

  /// Samples decisions until at least `min_steps` primitive steps are spent
  /// (or `max_transitions` decisions, when positive).
  std::vector<MacroTransition> collect(const PolicyModel& m, const Executor& exec, long long min_steps,
                                       Rng& rng, int max_transitions = 0);
  /// Returns of episodes completed since the last call.
  std::vector<double> take_finished_returns();
  const env::WorldConfig& config() const { return cfg_; }

 private:
  void new_episode();

  env::WorldConfig cfg_;
  std::uint64_t seed_;
  std::uint64_t episodes_ = 0;
  std::uint64_t episode_seed_ = 0;
  env::AgentState state_;
  double running_return_ = 0.0;
  std::vector<double> finished_;
};

struct Advantages {
  std::vector<double> advantage;
  std::vector<double> returns;
};

/// GAE over the decision index; next_values are used as bootstrap at
/// non-terminal cuts.
Advantages estimate_advantages(const std::vector<double>& rewards, const std::vector<double>& values,
                               const std::vector<double>& next_values, const std::vector<bool>& dones,
                               double gamma, double lambda);

/// Zero mean, unit variance in place (no-op rescale for constant input).
void normalize_advantages(std::vector<double>& adv);

/// min(ratio * adv, clip(ratio, 1 - eps, 1 + eps) * adv).
double ppo_clip_objective(double ratio, double adv, double eps);

struct PpoSample {
  std::array<double, env::kObservationSize> obs{};
  Vector u;
  int k = 0;
  double logprob_old = 0.0;
  double advantage = 0.0;
  double ret = 0.0;
};

struct PpoLoss {
  double total = 0.0;
  double policy = 0.0;   // -mean clipped objective
  double value = 0.0;    // mean squared error
  double entropy = 0.0;  // mean
  double clip_fraction = 0.0;
};

/// total = policy + value_coef * value - entropy_coef * entropy. When grads
/// are given they receive d total / d params.
PpoLoss ppo_loss(const PolicyModel& m, const std::vector<PpoSample>& batch, nn::ParamSet* actor_grad = nullptr,
                 nn::ParamSet* critic_grad = nullptr);

struct CurveRow {
  int update = 0;
  long long cumulative_steps = 0;
  double mean_return = 0.0;
  double mean_macro_length = 0.0;
  double policy_entropy = 0.0;
};

struct TrainResult {
  PolicyModel model;
  std::vector<CurveRow> curve;
  std::vector<MacroTransition> last_batch;
};

/// PPO loop shared by all agents: collect `horizon` steps, 'epochs' passes of
/// clipped updates, repeat until total_steps is spent. Throws
/// NumericalError if log-std leaves its bounds or values become non-finite.
TrainResult train(AgentKind kind, const env::WorldConfig& cfg, const PpoHyper& hyper, std::uint64_t seed,
                  const favae::FavaeModel* favae = nullptr);

struct EvalResult {
  int episodes = 0;
  double mean_return = 0.0;
  double std_return = 0.0;
  double success_rate = 0.0;
  double mean_length = 0.0;
};

/// Deterministic: Gaussian means and the most likely repetition count.
/// Episode i resets with derive_seed(seed, i).
EvalResult evaluate(const PolicyModel& m, const Executor& exec, const env::WorldConfig& cfg, int episodes,
                    std::uint64_t seed);
/// The scripted expert under its own goal distribution, without jitter.
EvalResult evaluate_script(scripts::ScriptKind kind, const env::WorldConfig& cfg, int episodes, std::uint64_t seed);

/// Replays each transition from its logged start state; true when every
/// recomputed reward sum equals r_tot bit for bit.
bool replay_matches(const std::vector<MacroTransition>& transitions, const env::WorldConfig& cfg);

void write_curve(const std::vector<CurveRow>& curve, const std::filesystem::path& csv);

}  // namespace famarl::policy
