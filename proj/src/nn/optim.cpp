#include "famarl/nn/optim.hpp"

#include <cmath>

#include "famarl/errors.hpp"

namespace famarl::nn {

OptimizerState OptimizerState::for_params(const ParamSet& params, AdamConfig config) {
  OptimizerState s;
  s.config = config;
  s.first_moment = params.zeros_like();
  s.second_moment = params.zeros_like();
  return s;
}

void adam_step(ParamSet& params, const ParamSet& grads, OptimizerState& state) {
  const auto n = params.tensors.size();
  if (grads.tensors.size() != n || state.first_moment.tensors.size() != n ||
      state.second_moment.tensors.size() != n)
    throw ConfigError("adam_step: tensor count mismatch");
  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double corr1 = 1.0 - std::pow(c.beta1, t);
  const double corr2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < n; ++i) {
    auto& p = params.tensors[i].values;
    const auto& g = grads.tensors[i].values;
    auto& m = state.first_moment.tensors[i].values;
    auto& v = state.second_moment.tensors[i].values;
    if (g.size() != p.size() || m.size() != p.size() || v.size() != p.size())
      throw ConfigError("adam_step: shape mismatch in tensor " + params.tensors[i].name);
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / corr1;
      const double vhat = v[j] / corr2;
      p[j] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

double clip_grad_norm(ParamSet& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& t : grads.tensors)
    for (double v : t.values) sq += v * v;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    grads.for_each([s](double& v) { v *= s; });
  }
  return norm;
}

}  // namespace famarl::nn
