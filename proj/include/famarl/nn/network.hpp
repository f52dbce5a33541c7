#pragma once

// Small deterministic feed-forward substrate: a network is an ordered list of
// blocks, each mapping a flat input vector to a flat output vector. Conv
// blocks interpret their vectors as channel-major (channels x length).

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace famarl::nn {

using Vector = std::vector<double>;

enum class BlockKind { Dense, Conv1d, ConvTranspose1d, ReLU, Tanh, Softmax };

std::string to_string(BlockKind kind);
BlockKind block_kind_from_string(const std::string& name);

struct BlockSpec {
  BlockKind kind = BlockKind::Dense;
  std::size_t in_width = 0;
  std::size_t out_width = 0;
  // Conv blocks only.
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;
  std::size_t stride = 1;

  static BlockSpec dense(std::size_t in, std::size_t out);
  static BlockSpec conv1d(std::size_t in_channels, std::size_t out_channels,
                          std::size_t in_length, std::size_t kernel,
                          std::size_t stride);
  static BlockSpec conv_transpose1d(std::size_t in_channels,
                                    std::size_t out_channels,
                                    std::size_t in_length, std::size_t kernel,
                                    std::size_t stride);
  static BlockSpec relu(std::size_t width);
  static BlockSpec tanh(std::size_t width);
  static BlockSpec softmax(std::size_t width);

  bool has_params() const;
  std::size_t in_length() const { return in_channels ? in_width / in_channels : 0; }
  std::size_t out_length() const { return out_channels ? out_width / out_channels : 0; }
  std::vector<std::size_t> weight_shape() const;
  std::size_t fan_in() const;

  bool operator==(const BlockSpec&) const = default;
};

struct NetworkSpec {
  std::vector<BlockSpec> layers;
  std::uint64_t seed = 0;

  std::size_t input_width() const;
  std::size_t output_width() const;
  // Throws ConfigError on incompatible adjacent widths or malformed blocks.
  void validate() const;

  bool operator==(const NetworkSpec&) const = default;
};

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  Vector values;

  bool operator==(const Tensor&) const = default;
};

/// Flat list of named parameter tensors: "layer<i>.weight" and "layer<i>.bias"
/// for every parameterized block, in layer order.
struct ParamSet {
  std::vector<Tensor> tensors;

  std::size_t scalar_count() const;
  ParamSet zeros_like() const;
  void set_zero();
  bool all_finite() const;
  // Visits every scalar in tensor order.
  template <typename F>
  void for_each(F&& f) {
    for (auto& t : tensors)
      for (auto& v : t.values) f(v);
  }

  bool operator==(const ParamSet&) const = default;
};

/// Fan-in scaled uniform initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
/// biases zero. Deterministic in spec.seed.
ParamSet init_params(const NetworkSpec& spec);

/// Activations recorded during a forward pass; activations[i] is the input
/// of layer i and activations.back() is the network output.
struct Trace {
  std::vector<Vector> activations;
};

Vector forward(const NetworkSpec& spec, const ParamSet& params,
               std::span<const double> input);
Vector forward(const NetworkSpec& spec, const ParamSet& params,
               std::span<const double> input, Trace& trace);

/// Reverse pass over a recorded trace. Parameter gradients are accumulated
/// into `param_grads` (shaped like `params`); returns dL/dinput.
Vector backward(const NetworkSpec& spec, const ParamSet& params,
                const Trace& trace, std::span<const double> output_grad,
                ParamSet& param_grads);

struct Gradients {
  ParamSet params;
  Vector input;
};

/// Stateless form: recomputes the forward pass, returns fresh gradients.
Gradients backward(const NetworkSpec& spec, const ParamSet& params,
                   std::span<const double> input,
                   std::span<const double> output_grad);

/// A spec with its parameters.
class Network {
 public:
  Network() = default;
  explicit Network(NetworkSpec spec);
  Network(NetworkSpec spec, ParamSet params);

  const NetworkSpec& spec() const { return spec_; }
  const ParamSet& params() const { return params_; }
  ParamSet& params() { return params_; }
  std::size_t input_width() const { return spec_.input_width(); }
  std::size_t output_width() const { return spec_.output_width(); }

  Vector forward(std::span<const double> input) const {
    return nn::forward(spec_, params_, input);
  }
  Vector forward(std::span<const double> input, Trace& trace) const {
    return nn::forward(spec_, params_, input, trace);
  }
  Vector backward(const Trace& trace, std::span<const double> output_grad,
                  ParamSet& grads) const {
    return nn::backward(spec_, params_, trace, output_grad, grads);
  }

 private:
  NetworkSpec spec_;
  ParamSet params_;
};

/// Convenience builder for dense stacks: widths {in, h1, ..., out} with the
/// given hidden nonlinearity; the final layer is linear.
NetworkSpec mlp(const std::vector<std::size_t>& widths, BlockKind hidden,
                std::uint64_t seed);

/// z = mu + exp(logvar / 2) * noise.
Vector reparameterize(std::span<const double> mu, std::span<const double> logvar,
                      std::span<const double> noise);

}  // namespace famarl::nn
