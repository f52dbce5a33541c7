#pragma once

// Unsupervised segmentation of action sequences: train an autoencoder on
// sliding windows, measure how far the codes of adjacent windows move, and
// cut the sequence at sharp peaks of that distance curve.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "famarl/env/continuous_world.hpp"
#include "famarl/nn/network.hpp"

namespace famarl::segmentation {

using ActionSeq = std::vector<env::PrimitiveAction>;
/// Flattened window, time-major: a0.x, a0.y, a1.x, a1.y, ...
using Window = std::vector<double>;

struct WindowConfig {
  int window_size = 4;
  int stride = 1;
  int peak_neighborhood = 10;  // total points compared, split evenly per side
  double peak_margin = 0.05;
  int min_segment_length = 2;
  // Window autoencoder.
  int hidden = 16;
  int code_size = 4;
  int epochs = 200;
  int batch_size = 64;
  double learning_rate = 1e-3;

  void validate() const;
};

/// Windows of `cfg.window_size` steps every `cfg.stride` steps. Throws
/// UsageError if the sequence is shorter than one window.
std::vector<Window> slice_windows(const ActionSeq& actions, const WindowConfig& cfg);

class WindowEncoder {
 public:
  WindowEncoder() = default;
  explicit WindowEncoder(nn::Network net) : net_(std::move(net)) {}
  nn::Vector encode(const Window& w) const { return net_.forward(w); }
  const nn::Network& network() const { return net_; }

 private:
  nn::Network net_;
};

struct WindowAutoencoder {
  WindowEncoder encoder;
  nn::Network decoder;
  std::vector<double> loss_curve;  // full-corpus MSE after each epoch
};

/// MSE autoencoder on flattened windows. Deterministic in seed; throws
/// NumericalError if the loss becomes non-finite.
WindowAutoencoder train_window_ae(const std::vector<Window>& windows, const WindowConfig& cfg,
                                  std::uint64_t seed);

/// d[i] = |q(w[i+1]) - q(w[i])|_2, length windows.size() - 1.
std::vector<double> distance_series(const WindowEncoder& encoder, const std::vector<Window>& windows);

/// Index j is a peak when d[j] exceeds every other value within
/// peak_neighborhood/2 points on each side by at least peak_margin (and
/// strictly). Returns ascending indices.
std::vector<int> find_peaks(std::span<const double> d, const WindowConfig& cfg);

struct MacroSegment {
  ActionSeq actions;
  int episode = 0;
  int start = 0;  // inclusive
  int end = 0;    // exclusive
  int length() const { return end - start; }
};

/// Splits an episode at cut = peak + 1 + window_size/2 (the centre of the
/// later window). Segments shorter than min_segment_length are merged into
/// their predecessor (or successor for the first one).
std::vector<MacroSegment> segment_episode(const ActionSeq& actions, std::span<const int> peaks,
                                          const WindowConfig& cfg, int episode_id = 0);

struct SegmentationResult {
  std::vector<MacroSegment> segments;
  std::vector<std::vector<double>> distances;  // per episode
  std::vector<std::vector<int>> peaks;         // per episode
  std::vector<int> skipped_episodes;           // shorter than one window
  WindowAutoencoder autoencoder;
};

/// Full pipeline over a corpus: one autoencoder trained on the windows of all
/// episodes, then per-episode distances, peaks and segments.
SegmentationResult segment_corpus(const std::vector<ActionSeq>& episodes, const WindowConfig& cfg,
                                  std::uint64_t seed);

/// True when the episode's segments are contiguous, cover [0, len) and
/// reproduce its actions exactly.
bool tiles_episode(const std::vector<MacroSegment>& segments, const ActionSeq& actions);

/// <dir>/segments.jsonl ({episode, start, end} per line) and
/// <dir>/distances/episode_<id>.csv (index,distance,is_peak).
void write_segmentation(const SegmentationResult& result, const std::filesystem::path& dir);

struct SegmentBounds {
  int episode = 0;
  int start = 0;
  int end = 0;
};
std::vector<SegmentBounds> read_segment_manifest(const std::filesystem::path& jsonl);
/// Materializes segments from a manifest and the corpus actions.
std::vector<MacroSegment> load_segments(const std::vector<SegmentBounds>& bounds,
                                        const std::vector<ActionSeq>& episodes);

}  // namespace famarl::segmentation
