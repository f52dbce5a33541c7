#pragma once

#include <cstdint>

#include "famarl/nn/network.hpp"

namespace famarl::nn {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct OptimizerState {
  AdamConfig config;
  ParamSet first_moment;
  ParamSet second_moment;
  std::uint64_t step = 0;

  static OptimizerState for_params(const ParamSet& params, AdamConfig config = {});
};

/// Bias-corrected Adam update, in place. Increments state.step.
void adam_step(ParamSet& params, const ParamSet& grads, OptimizerState& state);

/// Scales `grads` so their global L2 norm is at most max_norm; returns the
/// norm before scaling.
double clip_grad_norm(ParamSet& grads, double max_norm);

}  // namespace famarl::nn
