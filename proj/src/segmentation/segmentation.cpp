#include "famarl/segmentation/segmentation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include <json.hpp>

#include "famarl/errors.hpp"
#include "famarl/nn/optim.hpp"
#include "famarl/rng.hpp"

namespace famarl::segmentation {

void WindowConfig::validate() const {
  if (window_size < 2) throw ConfigError("window_size must be >= 2");
  if (stride < 1) throw ConfigError("stride must be >= 1");
  if (peak_margin < 0) throw ConfigError("peak_margin must be >= 0");
  if (peak_neighborhood < 2) throw ConfigError("peak_neighborhood must be >= 2");
  if (min_segment_length < 1) throw ConfigError("min_segment_length must be >= 1");
  if (hidden < 1 || code_size < 1 || epochs < 1 || batch_size < 1)
    throw ConfigError("window autoencoder sizes must be positive");
}

std::vector<Window> slice_windows(const ActionSeq& actions, const WindowConfig& cfg) {
  cfg.validate();
  const auto w = static_cast<std::size_t>(cfg.window_size);
  if (actions.size() < w)
    throw UsageError("sequence of length " + std::to_string(actions.size()) +
                     " is shorter than the window size " + std::to_string(w));
  std::vector<Window> out;
  for (std::size_t s = 0; s + w <= actions.size(); s += static_cast<std::size_t>(cfg.stride)) {
    Window win;
    win.reserve(2 * w);
    for (std::size_t t = s; t < s + w; ++t) {
      win.push_back(actions[t].ax);
      win.push_back(actions[t].ay);
    }
    out.push_back(std::move(win));
  }
  return out;
}

WindowAutoencoder train_window_ae(const std::vector<Window>& windows, const WindowConfig& cfg,
                                  std::uint64_t seed) {
  cfg.validate();
  if (windows.empty()) throw UsageError("train_window_ae needs at least one window");
  const auto in = windows.front().size();
  const auto hid = static_cast<std::size_t>(cfg.hidden);
  const auto code = static_cast<std::size_t>(cfg.code_size);
  nn::Network enc(nn::mlp({in, hid, code}, nn::BlockKind::Tanh, derive_seed(seed, 1)));
  nn::Network dec(nn::mlp({code, hid, in}, nn::BlockKind::Tanh, derive_seed(seed, 2)));
  nn::AdamConfig adam{.learning_rate = cfg.learning_rate};
  auto enc_state = nn::OptimizerState::for_params(enc.params(), adam);
  auto dec_state = nn::OptimizerState::for_params(dec.params(), adam);
  auto enc_grad = enc.params().zeros_like();
  auto dec_grad = dec.params().zeros_like();

  Rng rng(derive_seed(seed, 3));
  std::vector<std::size_t> order(windows.size());
  std::iota(order.begin(), order.end(), 0);
  WindowAutoencoder out;
  nn::Trace enc_trace, dec_trace;
  nn::Vector grad_out(in);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    const double lr = cfg.learning_rate * (1.0 - 0.9 * epoch / static_cast<double>(cfg.epochs));
    enc_state.config.learning_rate = lr;
    dec_state.config.learning_rate = lr;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_size));
      const double scale = 1.0 / static_cast<double>((b1 - b0) * in);
      enc_grad.set_zero();
      dec_grad.set_zero();
      double loss = 0.0;
      for (std::size_t k = b0; k < b1; ++k) {
        const auto& x = windows[order[k]];
        const auto z = enc.forward(x, enc_trace);
        const auto y = dec.forward(z, dec_trace);
        for (std::size_t i = 0; i < in; ++i) {
          const double e = y[i] - x[i];
          loss += e * e * scale;
          grad_out[i] = 2.0 * e * scale;
        }
        const auto gz = dec.backward(dec_trace, grad_out, dec_grad);
        enc.backward(enc_trace, gz, enc_grad);
      }
      if (!std::isfinite(loss))
        throw NumericalError("window autoencoder diverged at epoch " + std::to_string(epoch));
      nn::adam_step(enc.params(), enc_grad, enc_state);
      nn::adam_step(dec.params(), dec_grad, dec_state);
    }
    double full = 0.0;
    for (const auto& x : windows) {
      const auto y = dec.forward(enc.forward(x));
      for (std::size_t i = 0; i < in; ++i) full += (y[i] - x[i]) * (y[i] - x[i]);
    }
    out.loss_curve.push_back(full / static_cast<double>(windows.size() * in));
  }
  out.encoder = WindowEncoder(std::move(enc));
  out.decoder = std::move(dec);
  return out;
}

std::vector<double> distance_series(const WindowEncoder& encoder, const std::vector<Window>& windows) {
  std::vector<double> d;
  if (windows.size() < 2) return d;
  auto prev = encoder.encode(windows[0]);
  for (std::size_t j = 1; j < windows.size(); ++j) {
    auto cur = encoder.encode(windows[j]);
    double s = 0.0;
    for (std::size_t i = 0; i < cur.size(); ++i) s += (cur[i] - prev[i]) * (cur[i] - prev[i]);
    d.push_back(std::sqrt(s));
    prev = std::move(cur);
  }
  return d;
}

std::vector<int> find_peaks(std::span<const double> d, const WindowConfig& cfg) {
  const int n = static_cast<int>(d.size());
  const int half = cfg.peak_neighborhood / 2;
  std::vector<int> peaks;
  // Equal values can never both pass the strict test, so ties resolve to
  // "no peak" rather than to either index.
  for (int j = 0; j < n; ++j) {
    bool any = false, peak = true;
    for (int k = std::max(0, j - half); k <= std::min(n - 1, j + half) && peak; ++k) {
      if (k == j) continue;
      any = true;
      peak = d[j] > d[k] && d[j] - d[k] >= cfg.peak_margin;
    }
    if (any && peak) peaks.push_back(j);
  }
  return peaks;
}

std::vector<MacroSegment> segment_episode(const ActionSeq& actions, std::span<const int> peaks,
                                          const WindowConfig& cfg, int episode_id) {
  const int m = static_cast<int>(actions.size());
  std::vector<int> cuts;
  for (int p : peaks) {
    const int c = p + 1 + cfg.window_size / 2;
    if (c > 0 && c < m) cuts.push_back(c);
  }
  std::sort(cuts.begin(), cuts.end());
  cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());

  std::vector<std::pair<int, int>> spans;
  int start = 0;
  for (int c : cuts) {
    spans.emplace_back(start, c);
    start = c;
  }
  spans.emplace_back(start, m);
  // Merge short spans into their predecessor; a short first span joins the next.
  std::vector<std::pair<int, int>> merged;
  for (const auto& s : spans) {
    if (!merged.empty() && s.second - s.first < cfg.min_segment_length)
      merged.back().second = s.second;
    else if (!merged.empty() && merged.back().second - merged.back().first < cfg.min_segment_length)
      merged.back().second = s.second;
    else
      merged.push_back(s);
  }

  std::vector<MacroSegment> out;
  for (const auto& [a, b] : merged) {
    MacroSegment seg;
    seg.episode = episode_id;
    seg.start = a;
    seg.end = b;
    seg.actions.assign(actions.begin() + a, actions.begin() + b);
    out.push_back(std::move(seg));
  }
  return out;
}

SegmentationResult segment_corpus(const std::vector<ActionSeq>& episodes, const WindowConfig& cfg,
                                  std::uint64_t seed) {
  cfg.validate();
  if (episodes.empty()) throw UsageError("cannot segment an empty corpus");
  SegmentationResult r;
  std::vector<std::vector<Window>> per_episode(episodes.size());
  std::vector<Window> all;
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    if (episodes[e].size() < static_cast<std::size_t>(cfg.window_size)) {
      std::clog << "segment: episode " << e << " has " << episodes[e].size()
                << " steps (< window size); kept whole\n";
      r.skipped_episodes.push_back(static_cast<int>(e));
      continue;
    }
    per_episode[e] = slice_windows(episodes[e], cfg);
    all.insert(all.end(), per_episode[e].begin(), per_episode[e].end());
  }
  if (!all.empty()) r.autoencoder = train_window_ae(all, cfg, seed);
  for (std::size_t e = 0; e < episodes.size(); ++e) {
    std::vector<double> d;
    std::vector<int> p;
    if (!per_episode[e].empty()) {
      d = distance_series(r.autoencoder.encoder, per_episode[e]);
      p = find_peaks(d, cfg);
    }
    auto segs = segment_episode(episodes[e], p, cfg, static_cast<int>(e));
    r.segments.insert(r.segments.end(), segs.begin(), segs.end());
    r.distances.push_back(std::move(d));
    r.peaks.push_back(std::move(p));
  }
  return r;
}

bool tiles_episode(const std::vector<MacroSegment>& segments, const ActionSeq& actions) {
  int pos = 0;
  ActionSeq joined;
  for (const auto& s : segments) {
    if (s.start != pos || s.end <= s.start || s.length() != static_cast<int>(s.actions.size()))
      return false;
    joined.insert(joined.end(), s.actions.begin(), s.actions.end());
    pos = s.end;
  }
  return pos == static_cast<int>(actions.size()) && joined == actions;
}

void write_segmentation(const SegmentationResult& result, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "distances");
  {
    std::ofstream f(dir / "segments.jsonl", std::ios::binary);
    for (const auto& s : result.segments) {
      nlohmann::ordered_json j;
      j["episode"] = s.episode;
      j["start"] = s.start;
      j["end"] = s.end;
      f << j.dump() << '\n';
    }
  }
  for (std::size_t e = 0; e < result.distances.size(); ++e) {
    std::ofstream f(dir / "distances" / ("episode_" + std::to_string(e) + ".csv"), std::ios::binary);
    f << "index,distance,is_peak\n";
    const auto& d = result.distances[e];
    const auto& p = result.peaks[e];
    for (std::size_t i = 0; i < d.size(); ++i) {
      const bool peak = std::binary_search(p.begin(), p.end(), static_cast<int>(i));
      f << i << ',' << nlohmann::json(d[i]).dump() << ',' << (peak ? 1 : 0) << '\n';
    }
  }
}

std::vector<SegmentBounds> read_segment_manifest(const std::filesystem::path& jsonl) {
  std::ifstream f(jsonl);
  if (!f) throw UsageError("cannot read segment manifest " + jsonl.string());
  std::vector<SegmentBounds> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    out.push_back({j.at("episode").get<int>(), j.at("start").get<int>(), j.at("end").get<int>()});
  }
  return out;
}

std::vector<MacroSegment> load_segments(const std::vector<SegmentBounds>& bounds,
                                        const std::vector<ActionSeq>& episodes) {
  std::vector<MacroSegment> out;
  for (const auto& b : bounds) {
    if (b.episode < 0 || static_cast<std::size_t>(b.episode) >= episodes.size())
      throw UsageError("segment refers to unknown episode " + std::to_string(b.episode));
    const auto& acts = episodes[b.episode];
    if (b.start < 0 || b.end > static_cast<int>(acts.size()) || b.start >= b.end)
      throw UsageError("segment bounds out of range in episode " + std::to_string(b.episode));
    out.push_back({ActionSeq(acts.begin() + b.start, acts.begin() + b.end), b.episode, b.start, b.end});
  }
  return out;
}

}  // namespace famarl::segmentation
