#pragma once

// Ladder sequence VAE over fixed-length padded action segments. Inputs are
// channel-major (channels x L) with channels ax, ay, action_on, action_off.
// Each of the three ladders attaches a Gaussian latent at a different encoder
// depth; the loss holds each ladder's KL near a scheduled capacity C.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "famarl/env/continuous_world.hpp"
#include "famarl/nn/checkpoint.hpp"
#include "famarl/nn/network.hpp"
#include "famarl/segmentation/segmentation.hpp"

namespace famarl::favae {

using nn::Vector;
using segmentation::ActionSeq;

constexpr std::size_t kActionDim = 2;
constexpr std::size_t kChannels = kActionDim + 2;
constexpr int kNumLadders = 3;

struct PaddedSegment {
  int L = 0;
  int length = 0;
  Vector x;  // kChannels * L, channel-major

  double action(int t, std::size_t d) const { return x[d * L + t]; }
  double on(int t) const { return x[kActionDim * L + t]; }
  double off(int t) const { return x[(kActionDim + 1) * L + t]; }
  ActionSeq actions() const;
};

/// Zero-pads to L and fills the on/off indicator channels. Throws UsageError
/// if the segment is empty or longer than L. `scale` divides each action
/// component (the model's input normalization).
PaddedSegment pad_segment(const ActionSeq& seg, int L, std::array<double, kActionDim> scale = {1.0, 1.0});

/// Length rule shared by decoding and the oracle inverse: the first timestep
/// whose off indicator beats on (2-way softmax), clamped to at least 1.
int trimmed_length(std::span<const double> on, std::span<const double> off);

/// Inverse of pad_segment using the stored indicator channels.
ActionSeq trim(const PaddedSegment& p, std::array<double, kActionDim> scale = {1.0, 1.0});

/// Rounded-up quantile of the lengths, then raised to the next value of the
/// form 4k+3 (so two stride-2 convolutions invert exactly).
int choose_length(std::vector<int> lengths, double quantile = 0.95);
/// Splits segments longer than L in half, recursively.
std::vector<ActionSeq> split_to_fit(const std::vector<ActionSeq>& segments, int L);

enum class ReconReduction { Sum, Mean };

struct LadderConfig {
  std::vector<int> latent_dims{4, 4, 4};
  double beta = 50.0;
  std::vector<double> c_last{0.0, 0.0, 0.0};
  int epochs = 300;
  int anneal_epochs = -1;  // < 0: 80% of epochs
  int batch_size = 32;
  double learning_rate = 1e-3;
  // After the anneal the rate decays geometrically to this fraction.
  double final_lr_fraction = 1e-4;
  ReconReduction recon = ReconReduction::Sum;
  int conv1_channels = 32;
  int conv2_channels = 64;
  int hidden = 64;

  void validate() const;
  int anneal() const;
  /// min(epoch / anneal, 1) * c_last[ladder].
  double scheduled_c(int ladder, int epoch) const;
  std::vector<double> scheduled_c(int epoch) const;
  int total_latent() const;
};

struct LadderCode {
  Vector mu, logvar, z;
};
using LatentCode = std::vector<LadderCode>;

struct LossTerms {
  double total = 0.0;
  double recon = 0.0;
  std::vector<double> kl;  // per ladder, batch mean, summed over dims
};

struct LossGrad {
  std::vector<Vector> recon;                    // dL/drecon per sample
  std::vector<std::vector<Vector>> mu, logvar;  // [sample][ladder]
};

/// total = recon + beta * sum_l |KL_l - C_l|. Recon is the batch mean of the
/// per-sample squared error (summed or averaged over elements per
/// cfg.recon). When `grad` is non-null it receives the partial derivatives.
LossTerms favae_loss(const std::vector<Vector>& x, const std::vector<Vector>& recon,
                     const std::vector<LatentCode>& codes, const LadderConfig& cfg,
                     const std::vector<double>& capacity, LossGrad* grad = nullptr);

double gaussian_kl(std::span<const double> mu, std::span<const double> logvar);

struct EpochLog {
  int epoch = 0;
  double total = 0.0;
  double recon = 0.0;
  std::vector<double> kl;
  std::vector<double> capacity;
};

class FavaeModel {
 public:
  FavaeModel() = default;
  FavaeModel(int L, LadderConfig cfg, std::uint64_t seed);

  int L() const { return L_; }
  const LadderConfig& config() const { return cfg_; }
  LadderConfig& config() { return cfg_; }
  std::array<double, kActionDim> action_scale() const { return scale_; }
  void set_action_scale(std::array<double, kActionDim> s) { scale_ = s; }
  std::size_t latent_size() const { return static_cast<std::size_t>(cfg_.total_latent()); }

  /// Posterior parameters; z is set to mu.
  LatentCode encode(const Vector& x) const;
  /// Raw decoder output (kChannels * L) from per-ladder latents.
  Vector decode(const std::vector<Vector>& z) const;
  Vector decode_flat(std::span<const double> z) const;
  std::vector<Vector> split_latent(std::span<const double> z) const;
  /// Decode, cut at the first timestep where off wins, strip indicator
  /// channels, undo the input scaling and clamp each component to [-1, 1].
  ActionSeq decode_and_trim(std::span<const double> z) const;
  ActionSeq decode_and_trim(const LatentCode& code) const;
  ActionSeq reconstruct(const PaddedSegment& p) const;

  std::map<std::string, nn::Network>& networks() { return nets_; }
  const std::map<std::string, nn::Network>& networks() const { return nets_; }

  std::vector<EpochLog> log;

  nn::Checkpoint to_checkpoint() const;
  static FavaeModel from_checkpoint(const nn::Checkpoint& ck);
  void save(const std::filesystem::path& path) const { to_checkpoint().write(path); }
  static FavaeModel load(const std::filesystem::path& path) {
    return from_checkpoint(nn::Checkpoint::read(path));
  }

  // Training-time pass with sampled noise; exposed for gradient checks.
  struct Cache;
  Vector forward(const Vector& x, const std::vector<Vector>& noise, Cache& cache) const;
  /// Accumulates parameter gradients (keyed like networks()).
  void backward(const Cache& cache, const Vector& d_out, const std::vector<Vector>& d_mu,
                const std::vector<Vector>& d_logvar, std::map<std::string, nn::ParamSet>& grads) const;

 private:
  const nn::Network& net(const char* name) const { return nets_.at(name); }

  int L_ = 0;
  LadderConfig cfg_;
  std::array<double, kActionDim> scale_{1.0, 1.0};
  std::map<std::string, nn::Network> nets_;
};

struct FavaeModel::Cache {
  nn::Trace enc1, enc2, enc3, head1, head2, head3, dec3, dec2, dec1, inject1, out;
  LatentCode code;
  std::vector<Vector> noise;
};

/// Per-channel RMS of the real (unpadded) action rows; 1 where a channel is
/// identically zero.
std::array<double, kActionDim> action_rms(const std::vector<ActionSeq>& segments);

struct TrainOptions {
  std::uint64_t seed = 0;
  // On divergence the last finite model is written here before throwing.
  std::optional<std::filesystem::path> last_good_path;
};

/// Trains on segments that already fit in L (see split_to_fit). The capacity
/// ramps per cfg.scheduled_c. Throws NumericalError on divergence.
FavaeModel train_favae(const std::vector<ActionSeq>& segments, int L, const LadderConfig& cfg,
                       const TrainOptions& opts);

/// Throwaway run at beta 0.1 and zero capacity; returns the final per-ladder
/// KL over the corpus.
std::vector<double> calibrate_capacity(const std::vector<ActionSeq>& segments, int L,
                                       const LadderConfig& cfg, std::uint64_t seed);

/// Mean per-ladder KL and mean reconstruction terms over a corpus (z = mu).
LossTerms evaluate_corpus(const FavaeModel& model, const std::vector<ActionSeq>& segments,
                          const std::vector<double>& capacity);

struct TraversalResult {
  int ladder = 0;
  int index = 0;
  std::vector<double> values;
  std::vector<ActionSeq> sequences;
};

/// Encodes `base` to its posterior mean, overrides one coordinate with each
/// value in turn and decodes. Throws UsageError for an invalid coordinate.
TraversalResult latent_traversal(const FavaeModel& model, const ActionSeq& base, int ladder, int index,
                                 const std::vector<double>& values);

/// Traversal statistics over several bases, on trajectories integrated from
/// rest in a free plane: mean final vertical position per value, and the
/// mean endpoint shift from each base's own reconstruction relative to the
/// mean reconstruction endpoint norm. kl is the mean posterior KL of the
/// coordinate.
struct TraversalEffect {
  std::vector<double> mean_final_y;
  double relative_endpoint_shift = 0.0;
  double kl = 0.0;
  bool strictly_monotone() const;
};
TraversalEffect traversal_effect(const FavaeModel& model, const std::vector<ActionSeq>& bases, int ladder, int index,
                                 const std::vector<double>& values, double max_speed);

/// Largest relative rise of the `window`-epoch moving average of the total
/// loss over epochs after the anneal, and whether the last average is not
/// above the first.
struct LossTrend {
  double max_relative_rise = 0.0;
  bool end_not_above_start = true;
  int points = 0;
};
LossTrend post_anneal_trend(const std::vector<EpochLog>& log, int anneal_epochs, int window = 10);

void write_training_log(const std::vector<EpochLog>& log, const std::filesystem::path& csv);
/// Inverse of write_training_log; values round-trip exactly.
std::vector<EpochLog> read_training_log(const std::filesystem::path& csv);
/// One line per decoded step: ladder, index, value, t, x, y, ax, ay.
void write_traversal_jsonl(std::ostream& os, const TraversalResult& r, double max_speed);

}  // namespace famarl::favae
