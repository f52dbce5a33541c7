#include "famarl/nn/network.hpp"

#include <algorithm>
#include <cmath>

#include "famarl/errors.hpp"
#include "famarl/rng.hpp"

namespace famarl::nn {

std::string to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::Dense: return "dense";
    case BlockKind::Conv1d: return "conv1d";
    case BlockKind::ConvTranspose1d: return "conv_transpose1d";
    case BlockKind::ReLU: return "relu";
    case BlockKind::Tanh: return "tanh";
    case BlockKind::Softmax: return "softmax";
  }
  return "unknown";
}

BlockKind block_kind_from_string(const std::string& name) {
  for (auto k : {BlockKind::Dense, BlockKind::Conv1d, BlockKind::ConvTranspose1d,
                 BlockKind::ReLU, BlockKind::Tanh, BlockKind::Softmax})
    if (to_string(k) == name) return k;
  throw ConfigError("unsupported block kind: " + name);
}

BlockSpec BlockSpec::dense(std::size_t in, std::size_t out) {
  BlockSpec b;
  b.kind = BlockKind::Dense;
  b.in_width = in;
  b.out_width = out;
  return b;
}

BlockSpec BlockSpec::conv1d(std::size_t in_channels, std::size_t out_channels,
                            std::size_t in_length, std::size_t kernel,
                            std::size_t stride) {
  if (kernel == 0 || stride == 0 || in_length < kernel)
    throw ConfigError("conv1d: input length must be >= kernel, stride >= 1");
  BlockSpec b;
  b.kind = BlockKind::Conv1d;
  b.in_channels = in_channels;
  b.out_channels = out_channels;
  b.kernel = kernel;
  b.stride = stride;
  b.in_width = in_channels * in_length;
  b.out_width = out_channels * ((in_length - kernel) / stride + 1);
  return b;
}

BlockSpec BlockSpec::conv_transpose1d(std::size_t in_channels,
                                      std::size_t out_channels,
                                      std::size_t in_length, std::size_t kernel,
                                      std::size_t stride) {
  if (kernel == 0 || stride == 0 || in_length == 0)
    throw ConfigError("conv_transpose1d: kernel, stride and length must be >= 1");
  BlockSpec b;
  b.kind = BlockKind::ConvTranspose1d;
  b.in_channels = in_channels;
  b.out_channels = out_channels;
  b.kernel = kernel;
  b.stride = stride;
  b.in_width = in_channels * in_length;
  b.out_width = out_channels * ((in_length - 1) * stride + kernel);
  return b;
}

namespace {
BlockSpec elementwise(BlockKind kind, std::size_t width) {
  BlockSpec b;
  b.kind = kind;
  b.in_width = width;
  b.out_width = width;
  return b;
}
}  // namespace

BlockSpec BlockSpec::relu(std::size_t width) { return elementwise(BlockKind::ReLU, width); }
BlockSpec BlockSpec::tanh(std::size_t width) { return elementwise(BlockKind::Tanh, width); }
BlockSpec BlockSpec::softmax(std::size_t width) { return elementwise(BlockKind::Softmax, width); }

bool BlockSpec::has_params() const {
  return kind == BlockKind::Dense || kind == BlockKind::Conv1d ||
         kind == BlockKind::ConvTranspose1d;
}

std::vector<std::size_t> BlockSpec::weight_shape() const {
  switch (kind) {
    case BlockKind::Dense: return {out_width, in_width};
    case BlockKind::Conv1d: return {out_channels, in_channels, kernel};
    case BlockKind::ConvTranspose1d: return {in_channels, out_channels, kernel};
    default: return {};
  }
}

std::size_t BlockSpec::fan_in() const {
  switch (kind) {
    case BlockKind::Dense: return in_width;
    case BlockKind::Conv1d: return in_channels * kernel;
    // Each output receives at most ceil(kernel/stride) taps per input channel.
    case BlockKind::ConvTranspose1d:
      return in_channels * ((kernel + stride - 1) / stride);
    default: return 0;
  }
}

std::size_t NetworkSpec::input_width() const {
  return layers.empty() ? 0 : layers.front().in_width;
}

std::size_t NetworkSpec::output_width() const {
  return layers.empty() ? 0 : layers.back().out_width;
}

void NetworkSpec::validate() const {
  if (layers.empty()) throw ConfigError("network has no layers");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& b = layers[i];
    if (b.in_width == 0 || b.out_width == 0)
      throw ConfigError("layer " + std::to_string(i) + ": zero width");
    switch (b.kind) {
      case BlockKind::Dense: break;
      case BlockKind::Conv1d:
      case BlockKind::ConvTranspose1d: {
        if (b.in_channels == 0 || b.out_channels == 0 || b.kernel == 0 ||
            b.stride == 0 || b.in_width % b.in_channels != 0 ||
            b.out_width % b.out_channels != 0)
          throw ConfigError("layer " + std::to_string(i) + ": malformed conv block");
        const auto lin = b.in_length();
        const auto lout = b.kind == BlockKind::Conv1d
                              ? (lin < b.kernel ? 0 : (lin - b.kernel) / b.stride + 1)
                              : (lin - 1) * b.stride + b.kernel;
        if (lout != b.out_length())
          throw ConfigError("layer " + std::to_string(i) + ": conv output length mismatch");
        break;
      }
      case BlockKind::ReLU:
      case BlockKind::Tanh:
      case BlockKind::Softmax:
        if (b.in_width != b.out_width)
          throw ConfigError("layer " + std::to_string(i) + ": elementwise width mismatch");
        break;
    }
    if (i + 1 < layers.size() && b.out_width != layers[i + 1].in_width)
      throw ConfigError("layer " + std::to_string(i) + " output width " +
                        std::to_string(b.out_width) + " != layer " +
                        std::to_string(i + 1) + " input width " +
                        std::to_string(layers[i + 1].in_width));
  }
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.values.size();
  return n;
}

ParamSet ParamSet::zeros_like() const {
  ParamSet out = *this;
  out.set_zero();
  return out;
}

void ParamSet::set_zero() {
  for (auto& t : tensors) std::fill(t.values.begin(), t.values.end(), 0.0);
}

bool ParamSet::all_finite() const {
  for (const auto& t : tensors)
    for (double v : t.values)
      if (!std::isfinite(v)) return false;
  return true;
}

ParamSet init_params(const NetworkSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  ParamSet ps;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const auto& b = spec.layers[i];
    if (!b.has_params()) continue;
    Tensor w{"layer" + std::to_string(i) + ".weight", b.weight_shape(), {}};
    std::size_t n = 1;
    for (auto d : w.shape) n *= d;
    const double bound = 1.0 / std::sqrt(static_cast<double>(b.fan_in()));
    w.values.resize(n);
    for (auto& v : w.values) v = rng.uniform(-bound, bound);
    const std::size_t nb = b.kind == BlockKind::Dense ? b.out_width : b.out_channels;
    Tensor bias{"layer" + std::to_string(i) + ".bias", {nb}, Vector(nb, 0.0)};
    ps.tensors.push_back(std::move(w));
    ps.tensors.push_back(std::move(bias));
  }
  return ps;
}

namespace {

// Index of the weight tensor for every layer (bias follows it), or -1.
std::vector<int> param_index(const NetworkSpec& spec, const ParamSet& params) {
  std::vector<int> idx(spec.layers.size(), -1);
  int next = 0;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (!spec.layers[i].has_params()) continue;
    idx[i] = next;
    next += 2;
  }
  if (static_cast<std::size_t>(next) != params.tensors.size())
    throw ConfigError("parameter set does not match network spec");
  return idx;
}

void check_params(const NetworkSpec& spec, const ParamSet& params,
                  const std::vector<int>& idx) {
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    if (idx[i] < 0) continue;
    const auto& b = spec.layers[i];
    const auto& w = params.tensors[idx[i]];
    const auto& bias = params.tensors[idx[i] + 1];
    std::size_t n = 1;
    for (auto d : b.weight_shape()) n *= d;
    const std::size_t nb = b.kind == BlockKind::Dense ? b.out_width : b.out_channels;
    if (w.values.size() != n || bias.values.size() != nb)
      throw ConfigError("layer " + std::to_string(i) + ": parameter shape mismatch");
  }
}

void layer_forward(const BlockSpec& b, const Tensor* w, const Tensor* bias,
                   std::span<const double> x, Vector& y) {
  y.assign(b.out_width, 0.0);
  switch (b.kind) {
    case BlockKind::Dense: {
      const double* W = w->values.data();
      for (std::size_t o = 0; o < b.out_width; ++o) {
        double acc = bias->values[o];
        const double* row = W + o * b.in_width;
        for (std::size_t i = 0; i < b.in_width; ++i) acc += row[i] * x[i];
        y[o] = acc;
      }
      break;
    }
    case BlockKind::Conv1d: {
      const std::size_t lin = b.in_length(), lout = b.out_length();
      const std::size_t K = b.kernel, S = b.stride, Cin = b.in_channels;
      for (std::size_t co = 0; co < b.out_channels; ++co) {
        double* out = y.data() + co * lout;
        for (std::size_t t = 0; t < lout; ++t) out[t] = bias->values[co];
        for (std::size_t ci = 0; ci < Cin; ++ci) {
          const double* in = x.data() + ci * lin;
          const double* ker = w->values.data() + (co * Cin + ci) * K;
          for (std::size_t t = 0; t < lout; ++t) {
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) acc += ker[k] * in[t * S + k];
            out[t] += acc;
          }
        }
      }
      break;
    }
    case BlockKind::ConvTranspose1d: {
      const std::size_t lin = b.in_length(), lout = b.out_length();
      const std::size_t K = b.kernel, S = b.stride, Cout = b.out_channels;
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t t = 0; t < lout; ++t) y[co * lout + t] = bias->values[co];
      for (std::size_t ci = 0; ci < b.in_channels; ++ci) {
        const double* in = x.data() + ci * lin;
        for (std::size_t co = 0; co < Cout; ++co) {
          const double* ker = w->values.data() + (ci * Cout + co) * K;
          double* out = y.data() + co * lout;
          for (std::size_t t = 0; t < lin; ++t) {
            const double v = in[t];
            for (std::size_t k = 0; k < K; ++k) out[t * S + k] += v * ker[k];
          }
        }
      }
      break;
    }
    case BlockKind::ReLU:
      for (std::size_t i = 0; i < b.in_width; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
      break;
    case BlockKind::Tanh:
      for (std::size_t i = 0; i < b.in_width; ++i) y[i] = std::tanh(x[i]);
      break;
    case BlockKind::Softmax: {
      const double m = *std::max_element(x.begin(), x.end());
      double sum = 0.0;
      for (std::size_t i = 0; i < b.in_width; ++i) sum += (y[i] = std::exp(x[i] - m));
      for (auto& v : y) v /= sum;
      break;
    }
  }
}

// Given dL/dy, accumulates parameter gradients and writes dL/dx.
void layer_backward(const BlockSpec& b, const Tensor* w, std::span<const double> x,
                    std::span<const double> y, std::span<const double> gy,
                    Tensor* gw, Tensor* gb, Vector& gx) {
  gx.assign(b.in_width, 0.0);
  switch (b.kind) {
    case BlockKind::Dense: {
      const double* W = w->values.data();
      double* GW = gw->values.data();
      for (std::size_t o = 0; o < b.out_width; ++o) {
        const double g = gy[o];
        if (g == 0.0) continue;
        gb->values[o] += g;
        const double* row = W + o * b.in_width;
        double* grow = GW + o * b.in_width;
        for (std::size_t i = 0; i < b.in_width; ++i) {
          grow[i] += g * x[i];
          gx[i] += g * row[i];
        }
      }
      break;
    }
    case BlockKind::Conv1d: {
      const std::size_t lin = b.in_length(), lout = b.out_length();
      const std::size_t K = b.kernel, S = b.stride, Cin = b.in_channels;
      for (std::size_t co = 0; co < b.out_channels; ++co) {
        const double* g = gy.data() + co * lout;
        for (std::size_t t = 0; t < lout; ++t) gb->values[co] += g[t];
        for (std::size_t ci = 0; ci < Cin; ++ci) {
          const double* in = x.data() + ci * lin;
          double* gin = gx.data() + ci * lin;
          const std::size_t off = (co * Cin + ci) * K;
          const double* ker = w->values.data() + off;
          double* gker = gw->values.data() + off;
          for (std::size_t t = 0; t < lout; ++t) {
            const double gt = g[t];
            for (std::size_t k = 0; k < K; ++k) {
              gker[k] += gt * in[t * S + k];
              gin[t * S + k] += gt * ker[k];
            }
          }
        }
      }
      break;
    }
    case BlockKind::ConvTranspose1d: {
      const std::size_t lin = b.in_length(), lout = b.out_length();
      const std::size_t K = b.kernel, S = b.stride, Cout = b.out_channels;
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t t = 0; t < lout; ++t) gb->values[co] += gy[co * lout + t];
      for (std::size_t ci = 0; ci < b.in_channels; ++ci) {
        const double* in = x.data() + ci * lin;
        double* gin = gx.data() + ci * lin;
        for (std::size_t co = 0; co < Cout; ++co) {
          const std::size_t off = (ci * Cout + co) * K;
          const double* ker = w->values.data() + off;
          double* gker = gw->values.data() + off;
          const double* g = gy.data() + co * lout;
          for (std::size_t t = 0; t < lin; ++t) {
            double acc = 0.0;
            for (std::size_t k = 0; k < K; ++k) {
              gker[k] += in[t] * g[t * S + k];
              acc += ker[k] * g[t * S + k];
            }
            gin[t] += acc;
          }
        }
      }
      break;
    }
    case BlockKind::ReLU:
      for (std::size_t i = 0; i < b.in_width; ++i) gx[i] = x[i] > 0.0 ? gy[i] : 0.0;
      break;
    case BlockKind::Tanh:
      for (std::size_t i = 0; i < b.in_width; ++i) gx[i] = gy[i] * (1.0 - y[i] * y[i]);
      break;
    case BlockKind::Softmax: {
      double dot = 0.0;
      for (std::size_t i = 0; i < b.in_width; ++i) dot += gy[i] * y[i];
      for (std::size_t i = 0; i < b.in_width; ++i) gx[i] = y[i] * (gy[i] - dot);
      break;
    }
  }
}

bool finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace

Vector forward(const NetworkSpec& spec, const ParamSet& params,
               std::span<const double> input, Trace& trace) {
  if (spec.layers.empty()) throw ConfigError("network has no layers");
  if (input.size() != spec.input_width())
    throw ConfigError("input width " + std::to_string(input.size()) +
                      " != network input width " + std::to_string(spec.input_width()));
  const auto idx = param_index(spec, params);
  check_params(spec, params, idx);
  trace.activations.resize(spec.layers.size() + 1);
  trace.activations[0].assign(input.begin(), input.end());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Tensor* w = idx[i] >= 0 ? &params.tensors[idx[i]] : nullptr;
    const Tensor* b = idx[i] >= 0 ? &params.tensors[idx[i] + 1] : nullptr;
    layer_forward(spec.layers[i], w, b, trace.activations[i], trace.activations[i + 1]);
  }
  return trace.activations.back();
}

Vector forward(const NetworkSpec& spec, const ParamSet& params,
               std::span<const double> input) {
  Trace trace;
  return forward(spec, params, input, trace);
}

Vector backward(const NetworkSpec& spec, const ParamSet& params,
                const Trace& trace, std::span<const double> output_grad,
                ParamSet& param_grads) {
  if (trace.activations.size() != spec.layers.size() + 1)
    throw ConfigError("trace does not match network spec");
  if (output_grad.size() != spec.output_width())
    throw ConfigError("output gradient width mismatch");
  const auto idx = param_index(spec, params);
  if (param_grads.tensors.size() != params.tensors.size())
    throw ConfigError("gradient set does not match parameter set");
  Vector gy(output_grad.begin(), output_grad.end());
  Vector gx;
  for (std::size_t i = spec.layers.size(); i-- > 0;) {
    const bool has = idx[i] >= 0;
    layer_backward(spec.layers[i], has ? &params.tensors[idx[i]] : nullptr,
                   trace.activations[i], trace.activations[i + 1], gy,
                   has ? &param_grads.tensors[idx[i]] : nullptr,
                   has ? &param_grads.tensors[idx[i] + 1] : nullptr, gx);
    if (!finite(gx) || !finite(trace.activations[i + 1]))
      throw NumericalError("non-finite value in backward pass at layer " +
                           std::to_string(i) + " (" + to_string(spec.layers[i].kind) + ")");
    gy.swap(gx);
  }
  return gy;
}

Gradients backward(const NetworkSpec& spec, const ParamSet& params,
                   std::span<const double> input,
                   std::span<const double> output_grad) {
  Trace trace;
  forward(spec, params, input, trace);
  Gradients g{params.zeros_like(), {}};
  g.input = backward(spec, params, trace, output_grad, g.params);
  return g;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)), params_(init_params(spec_)) {}

Network::Network(NetworkSpec spec, ParamSet params)
    : spec_(std::move(spec)), params_(std::move(params)) {
  spec_.validate();
  check_params(spec_, params_, param_index(spec_, params_));
}

NetworkSpec mlp(const std::vector<std::size_t>& widths, BlockKind hidden,
                std::uint64_t seed) {
  if (widths.size() < 2) throw ConfigError("mlp needs at least input and output width");
  NetworkSpec spec;
  spec.seed = seed;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    spec.layers.push_back(BlockSpec::dense(widths[i], widths[i + 1]));
    if (i + 2 < widths.size()) {
      BlockSpec act;
      act.kind = hidden;
      act.in_width = act.out_width = widths[i + 1];
      spec.layers.push_back(act);
    }
  }
  spec.validate();
  return spec;
}

Vector reparameterize(std::span<const double> mu, std::span<const double> logvar,
                      std::span<const double> noise) {
  if (mu.size() != logvar.size() || mu.size() != noise.size())
    throw ConfigError("reparameterize: length mismatch");
  Vector z(mu.size());
  for (std::size_t i = 0; i < mu.size(); ++i)
    z[i] = mu[i] + std::exp(0.5 * logvar[i]) * noise[i];
  return z;
}

}  // namespace famarl::nn
